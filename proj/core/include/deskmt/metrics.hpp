#pragma once

#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace deskmt::metrics {

/// Version token written into score signatures.
inline constexpr std::string_view kToolVersion = "deskmt-0.1.0";

/// chrF configuration. Defaults correspond to the signature
/// nrefs:1|case:mixed|eff:yes|nc:6|nw:0|space:no.
struct ChrfParams {
    int char_order = 6;
    int word_order = 0;
    double beta = 2.0;
    bool remove_whitespace = true;
    bool lowercase = false;
    /// eff:yes averages precision and recall over the orders where both
    /// hypothesis and reference have n-grams. eff:no uses epsilon smoothing
    /// over all char_order orders.
    bool effective_order = true;

    /// Throws InvalidArgument on char_order < 1, beta <= 0, or word_order != 0.
    void validate() const;

    /// e.g. "nrefs:1|case:mixed|eff:yes|nc:6|nw:0|space:no|version:deskmt-0.1.0"
    std::string signature() const;

    nlohmann::ordered_json to_json() const;
    static ChrfParams from_json(const nlohmann::json& j);
};

struct OrderStats {
    long long hyp = 0;
    long long ref = 0;
    long long match = 0;

    bool operator==(const OrderStats&) const = default;
};

/// Per-order n-gram counts for one or more segments; index 0 is order 1.
struct NgramStats {
    std::vector<OrderStats> orders;

    NgramStats& operator+=(const NgramStats& other);
    bool operator==(const NgramStats&) const = default;
};

using NgramProfile = std::vector<std::unordered_map<std::u32string, int>>;

/// Character n-gram multisets for orders 1..char_order.
NgramProfile ngram_profile(std::string_view text, const ChrfParams& params);

NgramStats segment_stats(std::string_view hyp, std::string_view ref, const ChrfParams& params);

/// Score in [0, 100] from aggregated counts.
double chrf_from_stats(const NgramStats& stats, const ChrfParams& params);

double sentence_chrf(std::string_view hyp, std::string_view ref, const ChrfParams& params = {});

struct ScoreReport {
    double score = 0.0;
    ChrfParams params;
    std::string signature;
    std::size_t segments = 0;

    /// Score at 4 decimals.
    nlohmann::ordered_json to_json() const;
};

/// Sums n-gram statistics over all segments, then applies the F formula once.
/// `jobs` bounds the number of worker threads; the result does not depend on it.
ScoreReport corpus_chrf(const std::vector<std::string>& hyps, const std::vector<std::string>& refs,
                        const ChrfParams& params = {}, unsigned jobs = 1);

/// Unweighted mean of the included languages' scores.
double macro_mean(const std::map<std::string, double>& scores, const std::set<std::string>& include);

/// Mean over every key.
double macro_mean(const std::map<std::string, double>& scores);

}  // namespace deskmt::metrics
