#include "deskmt/metrics.hpp"

#include "deskmt/error.hpp"
#include "deskmt/report.hpp"
#include "deskmt/unicode.hpp"

#include <algorithm>
#include <thread>

#include <unicode/uchar.h>

namespace deskmt::metrics {

namespace {

// Whitespace as Python's str.split() sees it: White_Space plus the
// information separators U+001C..U+001F.
bool splits_on(char32_t c) {
    return unicode::is_space(c) || (c >= 0x1C && c <= 0x1F);
}

std::u32string prepare(std::string_view text, const ChrfParams& params) {
    std::u32string cps = unicode::decode(text);
    if (params.lowercase) {
        for (char32_t& c : cps) {
            c = static_cast<char32_t>(u_tolower(static_cast<UChar32>(c)));
        }
    }
    if (params.remove_whitespace) {
        std::erase_if(cps, splits_on);
    }
    return cps;
}

NgramProfile profile_of(const std::u32string& cps, int order) {
    NgramProfile profile(static_cast<std::size_t>(order));
    for (int n = 1; n <= order; ++n) {
        auto& counts = profile[static_cast<std::size_t>(n - 1)];
        if (cps.size() < static_cast<std::size_t>(n)) {
            continue;
        }
        for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= cps.size(); ++i) {
            counts[cps.substr(i, static_cast<std::size_t>(n))] += 1;
        }
    }
    return profile;
}

}  // namespace

void ChrfParams::validate() const {
    if (char_order < 1) {
        throw InvalidArgument("chrF char_order must be >= 1");
    }
    if (!(beta > 0.0)) {
        throw InvalidArgument("chrF beta must be positive");
    }
    if (word_order != 0) {
        throw InvalidArgument("chrF word n-grams are not supported (word_order must be 0)");
    }
}

std::string ChrfParams::signature() const {
    std::string sig = "nrefs:1";
    sig += "|case:";
    sig += lowercase ? "lc" : "mixed";
    sig += "|eff:";
    sig += effective_order ? "yes" : "no";
    sig += "|nc:" + std::to_string(char_order);
    sig += "|nw:" + std::to_string(word_order);
    sig += "|space:";
    sig += remove_whitespace ? "no" : "yes";
    sig += "|version:";
    sig += kToolVersion;
    return sig;
}

nlohmann::ordered_json ChrfParams::to_json() const {
    nlohmann::ordered_json j;
    j["char_order"] = char_order;
    j["word_order"] = word_order;
    j["beta"] = beta;
    j["remove_whitespace"] = remove_whitespace;
    j["lowercase"] = lowercase;
    j["effective_order"] = effective_order;
    return j;
}

ChrfParams ChrfParams::from_json(const nlohmann::json& j) {
    ChrfParams p;
    p.char_order = j.value("char_order", p.char_order);
    p.word_order = j.value("word_order", p.word_order);
    p.beta = j.value("beta", p.beta);
    p.remove_whitespace = j.value("remove_whitespace", p.remove_whitespace);
    p.lowercase = j.value("lowercase", p.lowercase);
    p.effective_order = j.value("effective_order", p.effective_order);
    p.validate();
    return p;
}

NgramStats& NgramStats::operator+=(const NgramStats& other) {
    if (orders.size() < other.orders.size()) {
        orders.resize(other.orders.size());
    }
    for (std::size_t i = 0; i < other.orders.size(); ++i) {
        orders[i].hyp += other.orders[i].hyp;
        orders[i].ref += other.orders[i].ref;
        orders[i].match += other.orders[i].match;
    }
    return *this;
}

NgramProfile ngram_profile(std::string_view text, const ChrfParams& params) {
    return profile_of(prepare(text, params), params.char_order);
}

NgramStats segment_stats(std::string_view hyp, std::string_view ref, const ChrfParams& params) {
    const NgramProfile h = ngram_profile(hyp, params);
    const NgramProfile r = ngram_profile(ref, params);
    NgramStats stats;
    stats.orders.resize(static_cast<std::size_t>(params.char_order));
    for (std::size_t n = 0; n < stats.orders.size(); ++n) {
        auto& o = stats.orders[n];
        for (const auto& [gram, count] : h[n]) {
            o.hyp += count;
            if (const auto it = r[n].find(gram); it != r[n].end()) {
                o.match += std::min(count, it->second);
            }
        }
        for (const auto& [gram, count] : r[n]) {
            o.ref += count;
        }
    }
    return stats;
}

double chrf_from_stats(const NgramStats& stats, const ChrfParams& params) {
    constexpr double eps = 1e-16;
    const double factor = params.beta * params.beta;
    const int order = params.char_order;

    double smoothed = 0.0;
    double avg_prec = 0.0;
    double avg_rec = 0.0;
    int effective = 0;
    for (int n = 0; n < order; ++n) {
        const OrderStats o = static_cast<std::size_t>(n) < stats.orders.size() ? stats.orders[static_cast<std::size_t>(n)]
                                                                              : OrderStats{};
        const double prec = o.hyp > 0 ? static_cast<double>(o.match) / static_cast<double>(o.hyp) : eps;
        const double rec = o.ref > 0 ? static_cast<double>(o.match) / static_cast<double>(o.ref) : eps;
        const double denom = factor * prec + rec;
        smoothed += denom > 0.0 ? (1.0 + factor) * prec * rec / denom : eps;
        if (o.hyp > 0 && o.ref > 0) {
            avg_prec += prec;
            avg_rec += rec;
            ++effective;
        }
    }

    if (!params.effective_order) {
        return 100.0 * smoothed / order;
    }
    if (effective == 0) {
        return 0.0;
    }
    avg_prec /= effective;
    avg_rec /= effective;
    if (avg_prec + avg_rec == 0.0) {
        return 0.0;
    }
    return 100.0 * (1.0 + factor) * avg_prec * avg_rec / (factor * avg_prec + avg_rec);
}

double sentence_chrf(std::string_view hyp, std::string_view ref, const ChrfParams& params) {
    params.validate();
    return chrf_from_stats(segment_stats(hyp, ref, params), params);
}

nlohmann::ordered_json ScoreReport::to_json() const {
    nlohmann::ordered_json j;
    j["name"] = "chrF2";
    j["score"] = report::round_to(score, 4);
    j["signature"] = signature;
    j["segments"] = segments;
    j["params"] = params.to_json();
    return j;
}

ScoreReport corpus_chrf(const std::vector<std::string>& hyps, const std::vector<std::string>& refs,
                        const ChrfParams& params, unsigned jobs) {
    params.validate();
    if (hyps.size() != refs.size()) {
        throw LengthMismatch(std::to_string(hyps.size()) + " hypotheses vs " + std::to_string(refs.size()) +
                             " references");
    }
    const std::size_t n = hyps.size();
    const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(jobs, n));
    std::vector<NgramStats> partial(workers);
    auto work = [&](std::size_t w) {
        partial[w].orders.resize(static_cast<std::size_t>(params.char_order));
        for (std::size_t i = w; i < n; i += workers) {
            partial[w] += segment_stats(hyps[i], refs[i], params);
        }
    };
    if (workers == 1) {
        work(0);
    } else {
        std::vector<std::jthread> threads;
        threads.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) {
            threads.emplace_back(work, w);
        }
    }
    NgramStats total;
    total.orders.resize(static_cast<std::size_t>(params.char_order));
    for (const auto& p : partial) {
        total += p;
    }
    ScoreReport report;
    report.score = chrf_from_stats(total, params);
    report.params = params;
    report.signature = params.signature();
    report.segments = n;
    return report;
}

double macro_mean(const std::map<std::string, double>& scores, const std::set<std::string>& include) {
    if (include.empty()) {
        throw EmptySet("macro_mean over no languages");
    }
    double sum = 0.0;
    for (const auto& lang : include) {
        const auto it = scores.find(lang);
        if (it == scores.end()) {
            throw InvalidArgument("no score for language '" + lang + "'");
        }
        sum += it->second;
    }
    return sum / static_cast<double>(include.size());
}

double macro_mean(const std::map<std::string, double>& scores) {
    std::set<std::string> all;
    for (const auto& [lang, s] : scores) {
        all.insert(lang);
    }
    return macro_mean(scores, all);
}

}  // namespace deskmt::metrics
