#include "deskmt/decode.hpp"

#include "deskmt/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <mutex>
#include <thread>

namespace deskmt::decode {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double logsumexp(std::span<const double> xs) {
    double top = kNegInf;
    for (double x : xs) top = std::max(top, x);
    if (top == kNegInf) return kNegInf;
    double s = 0.0;
    for (double x : xs) s += std::exp(x - top);
    return top + std::log(s);
}

struct Beam {
    std::vector<int> tokens;  // without <s>
    double score = 0.0;
};

// Higher score first; equal scores resolved by the smaller token sequence.
bool better(double sa, const std::vector<int>& a, double sb, const std::vector<int>& b) {
    if (sa != sb) return sa > sb;
    return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

std::vector<double> masked(std::vector<double> lp, const SearchTokens& tokens, bool eos_allowed) {
    for (int b : tokens.banned) {
        if (b >= 0 && static_cast<std::size_t>(b) < lp.size()) lp[static_cast<std::size_t>(b)] = kNegInf;
    }
    if (!eos_allowed && tokens.eos >= 0 && static_cast<std::size_t>(tokens.eos) < lp.size()) {
        lp[static_cast<std::size_t>(tokens.eos)] = kNegInf;
    }
    return lp;
}

std::vector<std::vector<int>> prefixes_of(const std::vector<Beam>& beams, int bos) {
    std::vector<std::vector<int>> out;
    out.reserve(beams.size());
    for (const auto& b : beams) {
        std::vector<int> p;
        p.reserve(b.tokens.size() + 1);
        p.push_back(bos);
        p.insert(p.end(), b.tokens.begin(), b.tokens.end());
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace

std::string to_string(Combine c) {
    return c == Combine::mean_prob ? "mean_prob" : "mean_logprob";
}

Combine parse_combine(const std::string& text) {
    if (text == "mean_logprob") return Combine::mean_logprob;
    if (text == "mean_prob") return Combine::mean_prob;
    throw InvalidArgument("unknown combination rule '" + text + "'");
}

void SearchOptions::validate() const {
    if (beam_size < 1) throw InvalidArgument("beam_size must be >= 1");
    if (max_len < 1) throw InvalidArgument("max_len must be >= 1");
    if (min_length < 0 || min_length >= max_len) throw InvalidArgument("min_length must lie in [0, max_len)");
}

void EnsembleSpec::validate() const {
    if (members.empty()) throw InvalidArgument("an ensemble needs at least one member");
    search.validate();
}

nlohmann::ordered_json EnsembleSpec::to_json() const {
    nlohmann::ordered_json m = nlohmann::ordered_json::array();
    for (const auto& p : members) m.push_back(p.string());
    return {{"members", std::move(m)},
            {"combine", to_string(combine)},
            {"beam_size", search.beam_size},
            {"max_len", search.max_len},
            {"min_length", search.min_length},
            {"length_policy", "none"}};
}

EnsembleSpec EnsembleSpec::from_json(const nlohmann::json& j) {
    EnsembleSpec s;
    for (const auto& m : j.at("members")) s.members.emplace_back(m.get<std::string>());
    s.combine = parse_combine(j.value("combine", std::string("mean_logprob")));
    s.search.beam_size = j.value("beam_size", s.search.beam_size);
    s.search.max_len = j.value("max_len", s.search.max_len);
    s.search.min_length = j.value("min_length", s.search.min_length);
    if (j.value("length_policy", std::string("none")) != "none") {
        throw InvalidArgument("only length_policy \"none\" is supported");
    }
    s.validate();
    return s;
}

EnsembleSpec EnsembleSpec::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    EnsembleSpec s = from_json(nlohmann::json::parse(in));
    for (auto& m : s.members) {
        if (m.is_relative()) m = path.parent_path() / m;
    }
    return s;
}

Ensemble::Ensemble(std::vector<std::shared_ptr<const model::Checkpoint>> members, Combine combine)
    : members_(std::move(members)), combine_(combine) {
    if (members_.empty()) throw InvalidArgument("an ensemble needs at least one member");
    const std::string fp = members_.front()->vocab.fingerprint();
    for (const auto& m : members_) {
        if (!m) throw InvalidArgument("null ensemble member");
        if (m->vocab.fingerprint() != fp) {
            throw IncompatibleMembers("member vocabulary " + m->vocab.fingerprint() + " != " + fp);
        }
    }
}

Ensemble Ensemble::load(const EnsembleSpec& spec) {
    spec.validate();
    std::vector<std::shared_ptr<const model::Checkpoint>> members;
    std::optional<std::string> fingerprint;
    for (const auto& path : spec.members) {
        auto ck = std::make_shared<const model::Checkpoint>(model::Checkpoint::load(path));
        if (fingerprint && ck->vocab.fingerprint() != *fingerprint) {
            throw IncompatibleMembers(path.string() + " uses vocabulary " + ck->vocab.fingerprint());
        }
        fingerprint = ck->vocab.fingerprint();
        members.push_back(std::move(ck));
    }
    return Ensemble(std::move(members), spec.combine);
}

std::vector<std::string> Ensemble::member_ids() const {
    std::vector<std::string> ids;
    for (const auto& m : members_) ids.push_back(m->id());
    return ids;
}

std::size_t Ensemble::max_positions() const {
    std::size_t n = std::numeric_limits<std::size_t>::max();
    for (const auto& m : members_) n = std::min(n, static_cast<std::size_t>(m->shape.max_positions));
    return n;
}

std::vector<double> ensemble_step_logprobs(const std::vector<std::vector<double>>& member_logprobs, Combine combine) {
    if (member_logprobs.empty()) throw InvalidArgument("no member distributions to combine");
    const std::size_t v = member_logprobs.front().size();
    for (const auto& lp : member_logprobs) {
        if (lp.size() != v) throw IncompatibleMembers("member distributions differ in vocabulary size");
    }
    const auto k = static_cast<double>(member_logprobs.size());
    std::vector<double> out(v);
    if (combine == Combine::mean_logprob) {
        for (std::size_t i = 0; i < v; ++i) {
            double s = 0.0;
            for (const auto& lp : member_logprobs) s += lp[i];
            out[i] = s / k;
        }
    } else {
        std::vector<double> column(member_logprobs.size());
        for (std::size_t i = 0; i < v; ++i) {
            for (std::size_t m = 0; m < member_logprobs.size(); ++m) column[m] = member_logprobs[m][i];
            out[i] = logsumexp(column) - std::log(k);
        }
    }
    const double z = logsumexp(out);
    for (double& x : out) x -= z;
    return out;
}

EnsembleScorer::EnsembleScorer(const Ensemble& ensemble, std::span<const int> source) : ensemble_(ensemble) {
    for (const auto& m : ensemble_.members()) memories_.push_back(m->state.model.encode(source));
}

std::size_t EnsembleScorer::vocab_size() const {
    return ensemble_.vocab().size();
}

std::vector<std::vector<double>> EnsembleScorer::next(const std::vector<std::vector<int>>& prefixes) {
    std::vector<std::vector<std::vector<double>>> per_member;
    for (std::size_t m = 0; m < ensemble_.size(); ++m) {
        per_member.push_back(ensemble_.members()[m]->state.model.next_logprobs(memories_[m], prefixes));
    }
    std::vector<std::vector<double>> out(prefixes.size());
    std::vector<std::vector<double>> column(ensemble_.size());
    for (std::size_t p = 0; p < prefixes.size(); ++p) {
        for (std::size_t m = 0; m < ensemble_.size(); ++m) column[m] = std::move(per_member[m][p]);
        out[p] = ensemble_step_logprobs(column, ensemble_.combine());
    }
    return out;
}

SearchTokens SearchTokens::for_vocab(const codec::Vocabulary& vocab) {
    SearchTokens t;
    t.banned = {codec::Vocabulary::kPad, codec::Vocabulary::kBos, codec::Vocabulary::kUnk};
    for (int id : vocab.tag_ids()) t.banned.push_back(id);
    return t;
}

Hypothesis beam_search(StepScorer& scorer, const SearchOptions& options, const SearchTokens& tokens) {
    options.validate();
    const auto beam = static_cast<std::size_t>(options.beam_size);
    std::vector<Beam> alive = {Beam{}};
    std::vector<Hypothesis> finished;

    struct Candidate {
        double score;
        std::size_t parent;
        int token;
        std::vector<int> seq;
    };

    for (int t = 0; t < options.max_len && !alive.empty(); ++t) {
        const auto rows = scorer.next(prefixes_of(alive, tokens.bos));
        const bool eos_allowed = t >= options.min_length;
        const bool last = t + 1 == options.max_len;

        std::vector<Candidate> cands;
        for (std::size_t i = 0; i < alive.size(); ++i) {
            const auto lp = masked(rows[i], tokens, eos_allowed);
            std::vector<int> order;
            for (std::size_t v = 0; v < lp.size(); ++v) {
                if (lp[v] != kNegInf) order.push_back(static_cast<int>(v));
            }
            // A row can contribute at most `beam` finished and `beam` alive candidates.
            const std::size_t keep = std::min(order.size(), 2 * beam);
            std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                              [&](int a, int b) {
                                  const auto ua = static_cast<std::size_t>(a);
                                  const auto ub = static_cast<std::size_t>(b);
                                  return lp[ua] != lp[ub] ? lp[ua] > lp[ub] : a < b;
                              });
            for (std::size_t r = 0; r < keep; ++r) {
                const int v = order[r];
                std::vector<int> seq = alive[i].tokens;
                seq.push_back(v);
                cands.push_back({alive[i].score + lp[static_cast<std::size_t>(v)], i, v, std::move(seq)});
            }
        }
        std::sort(cands.begin(), cands.end(),
                  [](const Candidate& a, const Candidate& b) { return better(a.score, a.seq, b.score, b.seq); });

        std::vector<Beam> next;
        for (std::size_t r = 0; r < cands.size() && next.size() < beam; ++r) {
            auto& c = cands[r];
            if (c.token == tokens.eos) {
                if (r < beam) {
                    c.seq.pop_back();
                    finished.push_back({std::move(c.seq), c.score, true});
                }
                continue;
            }
            if (last) {
                finished.push_back({std::move(c.seq), c.score, false});
                continue;
            }
            next.push_back({std::move(c.seq), c.score});
        }
        alive = std::move(next);

        if (!finished.empty() && !alive.empty()) {
            double best_finished = kNegInf;
            for (const auto& h : finished) best_finished = std::max(best_finished, h.score);
            double best_alive = kNegInf;
            for (const auto& b : alive) best_alive = std::max(best_alive, b.score);
            // Scores never increase, so no alive beam can overtake.
            if (best_finished >= best_alive) break;
        }
    }
    if (finished.empty()) return {};
    return *std::min_element(finished.begin(), finished.end(), [](const Hypothesis& a, const Hypothesis& b) {
        return better(a.score, a.ids, b.score, b.ids);
    });
}

Hypothesis greedy_search(StepScorer& scorer, const SearchOptions& options, const SearchTokens& tokens) {
    options.validate();
    Hypothesis h;
    for (int t = 0; t < options.max_len; ++t) {
        std::vector<int> prefix = {tokens.bos};
        prefix.insert(prefix.end(), h.ids.begin(), h.ids.end());
        const auto lp = masked(scorer.next({prefix}).front(), tokens, t >= options.min_length);
        std::size_t best = 0;
        for (std::size_t v = 1; v < lp.size(); ++v) {
            if (lp[v] > lp[best]) best = v;
        }
        if (lp[best] == kNegInf) return h;
        h.score += lp[best];
        if (static_cast<int>(best) == tokens.eos) {
            h.finished = true;
            return h;
        }
        h.ids.push_back(static_cast<int>(best));
    }
    return h;
}

Hypothesis beam_search(const Ensemble& ensemble, std::span<const int> source, const SearchOptions& options) {
    if (source.size() > ensemble.max_positions()) {
        throw ShapeMismatch("source of " + std::to_string(source.size()) + " tokens exceeds max_positions");
    }
    EnsembleScorer scorer(ensemble, source);
    SearchOptions capped = options;
    capped.max_len = std::min(options.max_len, static_cast<int>(ensemble.max_positions()));
    capped.min_length = std::min(capped.min_length, capped.max_len - 1);
    return beam_search(scorer, capped, SearchTokens::for_vocab(ensemble.vocab()));
}

std::vector<std::string> translate_corpus(const Ensemble& ensemble, const SearchOptions& options,
                                          const std::vector<std::string>& sources,
                                          const corpus::LanguageCode& target, unsigned jobs,
                                          std::vector<SegmentError>* errors) {
    options.validate();
    const auto& vocab = ensemble.vocab();
    (void)vocab.tag_id(target);
    const bool restore = target.str() == "czn";
    std::vector<std::string> out(sources.size());
    std::vector<SegmentError> failures;
    std::mutex mu;

    auto work = [&](std::size_t start, std::size_t stride) {
        for (std::size_t i = start; i < sources.size(); i += stride) {
            try {
                const auto src = codec::encode_source(sources[i], target, vocab);
                const auto hyp = beam_search(ensemble, src, options);
                std::string text = codec::decode_ids(hyp.ids, vocab);
                out[i] = restore ? corpus::czn_restore(text) : std::move(text);
            } catch (const std::exception& e) {
                std::lock_guard lock(mu);
                failures.push_back({i, e.what()});
            }
        }
    };
    const std::size_t n_threads = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(sources.size(), 1));
    if (n_threads == 1) {
        work(0, 1);
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(work, t, n_threads);
    }
    std::sort(failures.begin(), failures.end(), [](const auto& a, const auto& b) { return a.index < b.index; });
    if (errors) errors->insert(errors->end(), failures.begin(), failures.end());
    return out;
}

std::vector<std::string> translate_corpus(const EnsembleSpec& spec, const std::vector<std::string>& sources,
                                          const corpus::LanguageCode& target, unsigned jobs,
                                          std::vector<SegmentError>* errors) {
    return translate_corpus(Ensemble::load(spec), spec.search, sources, target, jobs, errors);
}

}  // namespace deskmt::decode
