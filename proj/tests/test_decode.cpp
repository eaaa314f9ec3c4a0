#include "deskmt/decode.hpp"
#include "deskmt/error.hpp"
#include "support.hpp"

#include <cmath>
#include <fstream>
#include <map>

#include <gtest/gtest.h>

using namespace deskmt;
using namespace deskmt::decode;
using testsupport::pair_of;

namespace {

/// Fixed random next-token distribution per prefix.
class ToyScorer : public StepScorer {
public:
    ToyScorer(std::size_t vocab, std::uint64_t seed) : vocab_(vocab), seed_(seed) {}

    std::size_t vocab_size() const override { return vocab_; }

    std::vector<std::vector<double>> next(const std::vector<std::vector<int>>& prefixes) override {
        std::vector<std::vector<double>> out;
        for (const auto& p : prefixes) out.push_back(logprobs(p));
        return out;
    }

    std::vector<double> logprobs(const std::vector<int>& prefix) {
        auto it = table_.find(prefix);
        if (it != table_.end()) return it->second;
        std::uint64_t h = seed_;
        for (int t : prefix) h = h * 1000003u + static_cast<std::uint64_t>(t) + 7;
        Rng rng(h);
        std::vector<double> logits(vocab_);
        double z = 0.0;
        for (auto& l : logits) {
            l = 3.0 * rng.normal();
            z += std::exp(l);
        }
        for (auto& l : logits) l -= std::log(z);
        return table_[prefix] = logits;
    }

private:
    std::size_t vocab_;
    std::uint64_t seed_;
    std::map<std::vector<int>, std::vector<double>> table_;
};

constexpr int kBos = 3;
constexpr int kEos = 2;

SearchTokens toy_tokens() {
    SearchTokens t;
    t.bos = kBos;
    t.eos = kEos;
    t.banned = {};
    return t;
}

/// Best complete sequence over every path of at most `max_len` tokens.
Hypothesis exhaustive(ToyScorer& s, int max_len) {
    Hypothesis best;
    best.score = -1e300;
    std::function<void(std::vector<int>&, double)> walk = [&](std::vector<int>& ids, double score) {
        std::vector<int> prefix = {kBos};
        prefix.insert(prefix.end(), ids.begin(), ids.end());
        const auto lp = s.logprobs(prefix);
        const bool last = static_cast<int>(ids.size()) + 1 == max_len;
        for (int v = 0; v < 3; ++v) {
            const double sc = score + lp[static_cast<std::size_t>(v)];
            if (v == kEos || last) {
                std::vector<int> out = ids;
                if (v != kEos) out.push_back(v);
                if (sc > best.score || (sc == best.score && out < best.ids)) best = {out, sc, v == kEos};
                continue;
            }
            ids.push_back(v);
            walk(ids, sc);
            ids.pop_back();
        }
    };
    std::vector<int> ids;
    walk(ids, 0.0);
    return best;
}

model::TransformerShape small_shape() {
    model::TransformerShape s;
    s.model_dim = 16;
    s.ff_dim = 32;
    s.heads = 2;
    s.max_positions = 40;
    return s;
}

struct Trained {
    std::shared_ptr<const model::Checkpoint> ckpt;
    std::vector<std::string> sources;
};

/// Small model fit on es->czn pairs whose targets end in tone digits.
const Trained& trained() {
    static const Trained t = [] {
        Rng rng(4);
        corpus::Corpus c(pair_of("es", "czn"));
        std::vector<std::string> sources;
        for (int i = 0; i < 12; ++i) {
            const auto w = testsupport::pseudo_word(rng, 2);
            sources.push_back(w);
            c.add(w, w + std::to_string(2 + i % 3), "anlp23");
        }
        std::vector<corpus::Corpus> cs = {c};
        const auto vocab = codec::build_vocab(cs);
        auto cfg = model::TrainConfig::desk_profile();
        cfg.dropout = 0.0;
        cfg.warmup_steps = 30;
        cfg.max_lr = 0.01;
        auto ck = model::init_random(small_shape(), vocab, 9, cfg);
        testsupport::fit(ck, cs, 300, 12);
        return Trained{std::make_shared<const model::Checkpoint>(std::move(ck)), sources};
    }();
    return t;
}

}  // namespace

TEST(Search, BeamMatchesExhaustiveOnToyModel) {
    for (std::uint64_t seed = 1; seed <= 40; ++seed) {
        ToyScorer s(3, seed);
        const auto oracle = exhaustive(s, 4);
        SearchOptions opt;
        opt.beam_size = 8;
        opt.max_len = 4;
        opt.min_length = 0;
        const auto h = beam_search(s, opt, toy_tokens());
        EXPECT_EQ(h.ids, oracle.ids) << seed;
        EXPECT_NEAR(h.score, oracle.score, 1e-12) << seed;
        EXPECT_EQ(h.finished, oracle.finished) << seed;
    }
}

TEST(Search, NarrowBeamNeverBeatsExhaustive) {
    for (std::uint64_t seed = 1; seed <= 40; ++seed) {
        ToyScorer s(3, seed);
        const auto oracle = exhaustive(s, 4);
        for (int beam : {1, 2, 3}) {
            SearchOptions opt;
            opt.beam_size = beam;
            opt.max_len = 4;
            opt.min_length = 0;
            EXPECT_LE(beam_search(s, opt, toy_tokens()).score, oracle.score + 1e-12);
        }
    }
}

TEST(Search, BeamOneEqualsGreedy) {
    for (std::uint64_t seed = 1; seed <= 40; ++seed) {
        ToyScorer s(5, seed);
        SearchOptions opt;
        opt.beam_size = 1;
        opt.max_len = 7;
        SearchTokens tok = toy_tokens();
        tok.banned = {kBos};
        const auto b = beam_search(s, opt, tok);
        const auto g = greedy_search(s, opt, tok);
        EXPECT_EQ(b.ids, g.ids) << seed;
        EXPECT_NEAR(b.score, g.score, 1e-12);
        EXPECT_EQ(b.finished, g.finished);
    }
}

TEST(Search, MinLengthAndBannedTokens) {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        ToyScorer s(5, seed);
        SearchOptions opt;
        opt.beam_size = 3;
        opt.max_len = 8;
        opt.min_length = 3;
        SearchTokens tok = toy_tokens();
        tok.banned = {0, kBos};
        const auto h = beam_search(s, opt, tok);
        EXPECT_GE(h.ids.size(), 3u);
        for (int id : h.ids) {
            EXPECT_NE(id, 0);
            EXPECT_NE(id, kEos);
        }
    }
}

TEST(Search, OptionValidation) {
    SearchOptions o;
    o.beam_size = 0;
    EXPECT_THROW(o.validate(), InvalidArgument);
    o = {};
    o.max_len = 0;
    EXPECT_THROW(o.validate(), InvalidArgument);
    o = {};
    o.min_length = -1;
    EXPECT_THROW(o.validate(), InvalidArgument);
}

TEST(Combine, HandAverage) {
    const std::vector<std::vector<double>> members = {
        {std::log(0.5), std::log(0.3), std::log(0.2)},
        {std::log(0.1), std::log(0.6), std::log(0.3)},
    };
    const auto mp = ensemble_step_logprobs(members, Combine::mean_prob);
    EXPECT_NEAR(std::exp(mp[0]), 0.3, 1e-12);
    EXPECT_NEAR(std::exp(mp[1]), 0.45, 1e-12);
    EXPECT_NEAR(std::exp(mp[2]), 0.25, 1e-12);
    const auto ml = ensemble_step_logprobs(members, Combine::mean_logprob);
    const double g0 = std::sqrt(0.05), g1 = std::sqrt(0.18), g2 = std::sqrt(0.06);
    const double z = g0 + g1 + g2;
    EXPECT_NEAR(std::exp(ml[0]), g0 / z, 1e-12);
    EXPECT_NEAR(std::exp(ml[1]), g1 / z, 1e-12);
    EXPECT_NEAR(std::exp(ml[2]), g2 / z, 1e-12);
}

TEST(Combine, IdenticalMembersAndErrors) {
    const std::vector<double> row = {std::log(0.7), std::log(0.2), std::log(0.1)};
    for (auto c : {Combine::mean_logprob, Combine::mean_prob}) {
        const auto out = ensemble_step_logprobs({row, row, row}, c);
        for (std::size_t i = 0; i < row.size(); ++i) EXPECT_NEAR(out[i], row[i], 1e-12);
    }
    EXPECT_THROW(ensemble_step_logprobs({}), InvalidArgument);
    EXPECT_THROW(ensemble_step_logprobs({row, {0.0}}), IncompatibleMembers);
    EXPECT_EQ(parse_combine("mean_prob"), Combine::mean_prob);
    EXPECT_EQ(to_string(Combine::mean_logprob), "mean_logprob");
    EXPECT_THROW(parse_combine("max"), InvalidArgument);
}

TEST(Ensemble, ReplicatedMemberGivesIdenticalOutputs) {
    const auto& t = trained();
    Rng rng(12);
    std::vector<std::string> sources = t.sources;
    while (sources.size() < 20) sources.push_back(testsupport::pseudo_word(rng, 2));
    SearchOptions opt;
    opt.max_len = 20;
    const auto one = translate_corpus(Ensemble({t.ckpt}), opt, sources, corpus::LanguageCode("czn"));
    const auto two = translate_corpus(Ensemble({t.ckpt, t.ckpt}), opt, sources, corpus::LanguageCode("czn"));
    const auto three = translate_corpus(Ensemble({t.ckpt, t.ckpt, t.ckpt}, Combine::mean_prob), opt, sources,
                                        corpus::LanguageCode("czn"));
    EXPECT_EQ(one, two);
    EXPECT_EQ(one, three);
}

TEST(Translate, CznOutputsAreRestoredAndOrdered) {
    const auto& t = trained();
    SearchOptions opt;
    opt.max_len = 20;
    std::vector<SegmentError> errors;
    const auto out = translate_corpus(Ensemble({t.ckpt}), opt, t.sources, corpus::LanguageCode("czn"), 3, &errors);
    ASSERT_EQ(out.size(), t.sources.size());
    EXPECT_TRUE(errors.empty());
    int superscripted = 0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const auto cps = unicode::decode(out[i]);
        ASSERT_FALSE(cps.empty());
        if (corpus::ToneTable::default_table().forward().contains(cps.back())) ++superscripted;
        EXPECT_EQ(corpus::czn_restore(corpus::czn_normalize(out[i])), out[i]);
    }
    EXPECT_GE(superscripted, static_cast<int>(out.size()) - 1);
    EXPECT_EQ(out, translate_corpus(Ensemble({t.ckpt}), opt, t.sources, corpus::LanguageCode("czn"), 1));
}

TEST(Translate, FailingSegmentLeavesPlaceholder) {
    const auto& t = trained();
    SearchOptions opt;
    opt.max_len = 10;
    std::vector<std::string> sources = {t.sources[0], std::string(100, 'a'), t.sources[1]};
    std::vector<SegmentError> errors;
    const auto out = translate_corpus(Ensemble({t.ckpt}), opt, sources, corpus::LanguageCode("czn"), 2, &errors);
    ASSERT_EQ(out.size(), 3u);
    EXPECT_EQ(out[1], "");
    ASSERT_EQ(errors.size(), 1u);
    EXPECT_EQ(errors[0].index, 1u);
    EXPECT_FALSE(out[0].empty());
}

TEST(Ensemble, IncompatibleVocabularies) {
    const auto& t = trained();
    auto other = std::make_shared<model::Checkpoint>(*t.ckpt);
    other->vocab = codec::extend_with_tags(other->vocab, {"shp"});
    EXPECT_THROW(Ensemble({t.ckpt, other}), IncompatibleMembers);
    EXPECT_THROW(Ensemble({}), InvalidArgument);
}

TEST(EnsembleSpec, JsonAndRelativePaths) {
    const auto dir = testsupport::scratch_dir("spec");
    trained().ckpt->save(dir / "m.ckpt");
    EnsembleSpec spec;
    spec.members = {"m.ckpt", "m.ckpt"};
    spec.combine = Combine::mean_prob;
    spec.search.beam_size = 3;
    {
        std::ofstream out(dir / "ens.json");
        out << spec.to_json().dump(2);
    }
    const auto loaded = EnsembleSpec::load(dir / "ens.json");
    ASSERT_EQ(loaded.members.size(), 2u);
    EXPECT_EQ(loaded.members[0], dir / "m.ckpt");
    EXPECT_EQ(loaded.combine, Combine::mean_prob);
    EXPECT_EQ(loaded.search.beam_size, 3);
    const auto ens = Ensemble::load(loaded);
    EXPECT_EQ(ens.size(), 2u);
    EXPECT_EQ(ens.member_ids()[0], trained().ckpt->id());
    EXPECT_EQ(translate_corpus(loaded, {trained().sources[0]}, corpus::LanguageCode("czn")).size(), 1u);
    EXPECT_THROW(EnsembleSpec::from_json(nlohmann::json{{"members", nlohmann::json::array()}}), InvalidArgument);
}
