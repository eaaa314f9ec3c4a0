#pragma once

#include "deskmt/codec.hpp"
#include "deskmt/corpus.hpp"
#include "deskmt/model.hpp"

#include <cstddef>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace deskmt::decode {

/// How member distributions are combined at each step.
enum class Combine {
    /// Mean of log-probabilities, renormalized (geometric mean of probabilities).
    mean_logprob,
    /// Log of the mean of probabilities.
    mean_prob,
};

std::string to_string(Combine c);
Combine parse_combine(const std::string& text);

struct SearchOptions {
    int beam_size = 5;
    /// Upper bound on generated tokens, counting </s>.
    int max_len = 200;
    /// </s> is not allowed before this many tokens have been generated.
    int min_length = 1;

    /// Throws InvalidArgument.
    void validate() const;
};

/// Checkpoint paths plus decoding settings, as read from an ensemble JSON file.
struct EnsembleSpec {
    std::vector<std::filesystem::path> members;
    Combine combine = Combine::mean_logprob;
    SearchOptions search;

    void validate() const;
    nlohmann::ordered_json to_json() const;
    static EnsembleSpec from_json(const nlohmann::json& j);
    static EnsembleSpec load(const std::filesystem::path& path);
};

/// Loaded, vocabulary-compatible member checkpoints.
class Ensemble {
public:
    /// Throws IncompatibleMembers when members disagree on the vocabulary
    /// fingerprint, InvalidArgument when there are none.
    explicit Ensemble(std::vector<std::shared_ptr<const model::Checkpoint>> members,
                      Combine combine = Combine::mean_logprob);
    static Ensemble load(const EnsembleSpec& spec);

    const codec::Vocabulary& vocab() const { return members_.front()->vocab; }
    std::size_t size() const { return members_.size(); }
    const std::vector<std::shared_ptr<const model::Checkpoint>>& members() const { return members_; }
    Combine combine() const { return combine_; }
    std::vector<std::string> member_ids() const;
    /// Longest sequence every member can attend over.
    std::size_t max_positions() const;

private:
    std::vector<std::shared_ptr<const model::Checkpoint>> members_;
    Combine combine_;
};

/// Combines K per-member log-probability vectors into one normalized vector.
/// Throws IncompatibleMembers when the vectors differ in length, InvalidArgument when K = 0.
std::vector<double> ensemble_step_logprobs(const std::vector<std::vector<double>>& member_logprobs,
                                           Combine combine = Combine::mean_logprob);

/// Next-token log-probabilities for a set of equal-length prefixes.
class StepScorer {
public:
    virtual ~StepScorer() = default;
    virtual std::size_t vocab_size() const = 0;
    virtual std::vector<std::vector<double>> next(const std::vector<std::vector<int>>& prefixes) = 0;
};

/// Ensemble scorer conditioned on one encoded source.
class EnsembleScorer : public StepScorer {
public:
    EnsembleScorer(const Ensemble& ensemble, std::span<const int> source);
    std::size_t vocab_size() const override;
    std::vector<std::vector<double>> next(const std::vector<std::vector<int>>& prefixes) override;

private:
    const Ensemble& ensemble_;
    std::vector<model::Transformer::Memory> memories_;
};

/// Token conventions for a search. Defaults follow codec::Vocabulary.
struct SearchTokens {
    int bos = codec::Vocabulary::kBos;
    int eos = codec::Vocabulary::kEos;
    /// Never generated.
    std::vector<int> banned = {codec::Vocabulary::kPad, codec::Vocabulary::kBos, codec::Vocabulary::kUnk};

    /// Bans every special symbol other than </s>, and every language tag.
    static SearchTokens for_vocab(const codec::Vocabulary& vocab);
};

struct Hypothesis {
    /// Generated ids without <s> and </s>.
    std::vector<int> ids;
    /// Cumulative log-probability, including </s> when generated.
    double score = 0.0;
    /// False when the search hit max_len before </s>.
    bool finished = false;
};

/// Beam search over cumulative log-probability (no length normalization).
/// Equal scores are ordered by the lexicographically smallest token sequence.
Hypothesis beam_search(StepScorer& scorer, const SearchOptions& options, const SearchTokens& tokens = {});

/// Highest-probability token at each step, lowest id on ties.
Hypothesis greedy_search(StepScorer& scorer, const SearchOptions& options, const SearchTokens& tokens = {});

/// Search with the ensemble on one already-encoded source.
Hypothesis beam_search(const Ensemble& ensemble, std::span<const int> source, const SearchOptions& options);

struct SegmentError {
    std::size_t index = 0;
    std::string message;
};

/// One hypothesis per source line, in order. A failing segment yields an empty
/// placeholder and an entry in `errors`; the batch always completes. Outputs
/// for czn are passed through czn_restore. `jobs` bounds worker threads.
std::vector<std::string> translate_corpus(const Ensemble& ensemble, const SearchOptions& options,
                                          const std::vector<std::string>& sources,
                                          const corpus::LanguageCode& target, unsigned jobs = 1,
                                          std::vector<SegmentError>* errors = nullptr);

std::vector<std::string> translate_corpus(const EnsembleSpec& spec, const std::vector<std::string>& sources,
                                          const corpus::LanguageCode& target, unsigned jobs = 1,
                                          std::vector<SegmentError>* errors = nullptr);

}  // namespace deskmt::decode
