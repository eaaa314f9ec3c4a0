#include "deskmt/error.hpp"
#include "deskmt/pipeline.hpp"
#include "support.hpp"

#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

using namespace deskmt;
using namespace deskmt::pipeline;
using testsupport::Cipher;
using testsupport::pair_of;

namespace fs = std::filesystem;

namespace {

Snapshot snap(long long step, std::map<std::string, double> chrf) {
    Snapshot s;
    s.step = step;
    double sum = 0;
    for (const auto& [k, v] : chrf) sum += v;
    s.mean = sum / static_cast<double>(chrf.size());
    s.chrf = std::move(chrf);
    s.checkpoint = "checkpoints/step-" + std::to_string(step) + ".ckpt";
    return s;
}

RunRecord record(const std::string& id, std::vector<Snapshot> snaps) {
    RunRecord r;
    r.run_id = id;
    r.snapshots = std::move(snaps);
    r.dir = "/runs/" + id;
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

RunConfig tiny_run() {
    Rng rng(21);
    RunConfig c;
    c.run_id = "tiny";
    c.shape.model_dim = 16;
    c.shape.ff_dim = 32;
    c.shape.heads = 2;
    c.shape.max_positions = 40;
    c.train.max_updates = 40;
    c.train.valid_freq = 20;
    c.train.batch_size = 8;
    c.train.warmup_steps = 10;
    c.eval_search = {1, 30, 1};
    const auto a = Cipher::random(rng);
    const auto b = Cipher::variant(a, 4, rng);
    c.corpora.push_back(testsupport::cipher_corpus(pair_of("es", "gn"), a, testsupport::sentences(rng, 40)));
    c.corpora.push_back(testsupport::cipher_corpus(pair_of("es", "aym"), b, testsupport::sentences(rng, 20), "helsinki"));
    c.dev.push_back(DevSet::from_corpus(testsupport::cipher_corpus(pair_of("es", "gn"), a, testsupport::sentences(rng, 5))));
    c.dev.push_back(DevSet::from_corpus(testsupport::cipher_corpus(pair_of("es", "aym"), b, testsupport::sentences(rng, 5))));
    return c;
}

}  // namespace

TEST(Selection, BestMeanEarliestTie) {
    const auto r = record("a", {snap(100, {{"gn", 20}, {"aym", 30}}), snap(200, {{"gn", 30}, {"aym", 20}}),
                                snap(300, {{"gn", 10}, {"aym", 20}})});
    const auto rep = select_best_mean(r);
    EXPECT_EQ(rep.strategy, "best_mean");
    ASSERT_NE(rep.find("gn"), nullptr);
    EXPECT_EQ(rep.find("gn")->step, 100);
    EXPECT_EQ(rep.find("aym")->step, 100);
    EXPECT_EQ(rep.find("gn")->checkpoints, std::vector<std::string>{"/runs/a/checkpoints/step-100.ckpt"});
    EXPECT_NEAR(rep.mean(), 25.0, 1e-12);
    EXPECT_EQ(rep.find("quy"), nullptr);
}

TEST(Selection, AcrossRunsTieGoesToEarlierRun) {
    const std::vector<RunRecord> runs = {record("a", {snap(100, {{"gn", 20}})}), record("b", {snap(50, {{"gn", 20}})}),
                                         record("c", {snap(10, {{"gn", 19}})})};
    const auto rep = select_best_mean(runs);
    EXPECT_EQ(rep.find("gn")->run_id, "a");
    EXPECT_EQ(rep.find("gn")->step, 100);
    EXPECT_TRUE(select_best_mean(std::span<const RunRecord>{}).choices.empty());
}

TEST(Selection, PerLanguageDominatesBestMean) {
    Rng rng(8);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<RunRecord> runs;
        for (int r = 0; r < 3; ++r) {
            std::vector<Snapshot> snaps;
            for (int s = 1; s <= 4; ++s) {
                snaps.push_back(snap(s * 100, {{"gn", std::floor(rng.uniform(0, 50))},
                                               {"aym", std::floor(rng.uniform(0, 50))},
                                               {"shp", std::floor(rng.uniform(0, 50))}}));
            }
            runs.push_back(record("r" + std::to_string(r), snaps));
        }
        const auto mean = select_best_mean(runs);
        const auto per = select_best_per_language(runs);
        for (const auto& c : mean.choices) {
            ASSERT_NE(per.find(c.language), nullptr);
            EXPECT_GE(per.find(c.language)->score, c.score);
        }
        EXPECT_GE(per.mean(), mean.mean());
        for (const auto& lang : per.differs_from_best_mean) {
            const auto* a = per.find(lang);
            const auto* b = mean.find(lang);
            EXPECT_TRUE(a->run_id != b->run_id || a->step != b->step);
        }
    }
}

TEST(Selection, PickEnsemblesAdoptsStrictImprovementsOnly) {
    const auto base = select_best_mean(record("a", {snap(100, {{"gn", 20}, {"aym", 30}, {"shp", 10}})}));
    EnsembleCandidate e1{"ens1", nullptr, {}};
    EnsembleCandidate e2{"ens2", nullptr, {}};
    const CandidateScores scored = {{e1, {{"gn", 20.0}, {"aym", 31.0}, {"shp", 9.0}}},
                                    {e2, {{"gn", 19.0}, {"aym", 32.0}, {"shp", 10.0}}}};
    const auto rep = pick_ensembles(scored, base);
    EXPECT_EQ(rep.strategy, "ensemble");
    EXPECT_EQ(rep.adopted, std::vector<std::string>{"aym"});
    EXPECT_EQ(rep.find("aym")->candidate, "ens2");
    EXPECT_EQ(rep.find("aym")->score, 32.0);
    EXPECT_EQ(rep.find("gn")->score, 20.0);
    EXPECT_EQ(rep.find("gn")->run_id, "a");
    EXPECT_EQ(rep.find("shp")->score, 10.0);
    for (const auto& c : base.choices) EXPECT_GE(rep.find(c.language)->score, c.score);
}

TEST(Toggles, ParseAndApply) {
    EXPECT_EQ(Toggle::parse("include_source:bibles=false").str(), "exclude_source:bibles");
    EXPECT_EQ(Toggle::parse("freeze:last_k_decoder_layers:1").str(), "freeze:last_k_decoder_layers:1");
    EXPECT_THROW(Toggle::parse("bogus"), InvalidArgument);
    EXPECT_THROW(Toggle::parse("single_language"), InvalidArgument);

    auto base = tiny_run();
    base.init_from = "/x.ckpt";
    const auto r = apply_toggles(base, {Toggle::parse("random_init")});
    EXPECT_FALSE(r.init_from.has_value());
    const auto single = apply_toggles(base, {Toggle::parse("single_language:aym")});
    ASSERT_EQ(single.corpora.size(), 1u);
    EXPECT_EQ(single.corpora[0].pair().target.str(), "aym");
    ASSERT_EQ(single.dev.size(), 1u);
    const auto ex = apply_toggles(base, {Toggle::parse("exclude_source:helsinki")});
    ASSERT_EQ(ex.corpora.size(), 1u);
    EXPECT_EQ(ex.corpora[0].pair().target.str(), "gn");
    const auto fr = apply_toggles(base, {Toggle::parse("freeze:decoder_only")});
    EXPECT_EQ(fr.train.freeze_scope.kind, model::FreezeScope::Kind::decoder_only);
    EXPECT_THROW(apply_toggles(base, {Toggle::parse("single_language:shp")}), InvalidArgument);
}

TEST(TrainRun, WritesRecordAndResumesIdentically) {
    const auto cfg = tiny_run();
    const auto full_dir = testsupport::scratch_dir("run-full");
    const auto full = train_run(cfg, full_dir);
    ASSERT_EQ(full.snapshots.size(), 2u);
    EXPECT_EQ(full.snapshots[0].step, 20);
    EXPECT_EQ(full.snapshots[1].step, 40);
    EXPECT_EQ(full.snapshots[1].chrf.size(), 2u);
    EXPECT_TRUE(fs::exists(full_dir / "checkpoints" / "step-40.ckpt"));
    EXPECT_TRUE(fs::exists(full_dir / "reports" / "run.json"));
    EXPECT_EQ(full.manifest.total(), 60u);

    const auto loaded = RunRecord::load(full_dir);
    EXPECT_EQ(loaded.snapshots, full.snapshots);
    EXPECT_EQ(loaded.manifest, full.manifest);

    const auto dir = testsupport::scratch_dir("run-resume");
    auto interrupted = cfg;
    interrupted.stop_after = 30;
    const auto partial = train_run(interrupted, dir);
    EXPECT_EQ(partial.snapshots.size(), 1u);
    const auto resumed = train_run(cfg, dir);
    EXPECT_EQ(resumed.snapshots, full.snapshots);
    EXPECT_EQ(slurp(dir / "checkpoints" / "step-40.ckpt"), slurp(full_dir / "checkpoints" / "step-40.ckpt"));

    auto other = cfg;
    other.train.max_lr = 0.001;
    EXPECT_THROW(train_run(other, dir), InvalidArgument);
}

TEST(TrainRun, InitFromExtendsVocabulary) {
    const auto base = tiny_run();
    const auto dir = testsupport::scratch_dir("run-init");
    auto first = base;
    first.corpora.pop_back();
    first.dev.pop_back();
    first.train.max_updates = 20;
    const auto rec = train_run(first, dir / "a");
    auto second = base;
    second.init_from = dir / "a" / rec.snapshots.back().checkpoint;
    second.run_id = "second";
    const auto rec2 = train_run(second, dir / "b");
    ASSERT_FALSE(rec2.snapshots.empty());
    const auto ck = model::Checkpoint::load(dir / "b" / rec2.snapshots.back().checkpoint);
    EXPECT_TRUE(ck.vocab.has_tag(corpus::LanguageCode("aym")));
    EXPECT_EQ(ck.state.step, 40);
}

TEST(Evaluate, ScoresEveryDevKey) {
    const auto cfg = tiny_run();
    std::vector<corpus::Corpus> all = cfg.corpora;
    const auto vocab = codec::build_vocab(all);
    auto ck = std::make_shared<const model::Checkpoint>(model::init_random(cfg.shape, vocab, 1));
    const decode::Ensemble ens({ck});
    const auto scores = evaluate(ens, {1, 10, 1}, cfg.dev, 2);
    EXPECT_EQ(scores.size(), 2u);
    EXPECT_TRUE(scores.contains("gn"));
    for (const auto& [k, v] : scores) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 100.0);
    }
}

TEST(Backtranslation, CountsAndProvenance) {
    Rng rng(31);
    const auto cipher = Cipher::random(rng);
    const auto inv = cipher.inverse();
    auto reverse_pairs = testsupport::cipher_corpus(pair_of("gn", "es"), inv, {});
    const auto src = testsupport::sentences(rng, 30);
    for (const auto& s : src) reverse_pairs.add(cipher.apply(s), s, "anlp23");
    std::vector<corpus::Corpus> cs = {reverse_pairs};
    model::TransformerShape shape;
    shape.model_dim = 16;
    shape.ff_dim = 32;
    shape.heads = 2;
    shape.max_positions = 40;
    auto ck = model::init_random(shape, codec::build_vocab(cs), 3, model::TrainConfig::desk_profile());
    testsupport::fit(ck, cs, 60, 8);
    const decode::Ensemble reverse({std::make_shared<const model::Checkpoint>(std::move(ck))});

    const auto base = testsupport::cipher_corpus(pair_of("es", "gn"), cipher, testsupport::sentences(rng, 15));
    std::vector<std::string> mono;
    for (const auto& s : testsupport::sentences(rng, 25)) mono.push_back(cipher.apply(s));
    const auto res = backtranslate_expand(mono, reverse, {1, 30, 1}, base, 2);
    EXPECT_EQ(res.synthetic + res.errors.size(), 25u);
    EXPECT_EQ(res.merged.size(), 15u + res.synthetic);
    EXPECT_EQ(res.manifest.count(pair_of("es", "gn"), "anlp23"), 15u);
    EXPECT_EQ(res.manifest.count(pair_of("es", "gn"), "backtrans"), res.synthetic);
    EXPECT_EQ(res.reverse_checkpoint, reverse.member_ids()[0]);
    for (std::size_t i = 0; i < 15; ++i) EXPECT_EQ(res.merged[i], base[i]);
    std::size_t k = 0;
    for (std::size_t i = 15; i < res.merged.size(); ++i) {
        EXPECT_EQ(res.merged[i].provenance, "backtrans");
        while (k < mono.size() && mono[k] != res.merged[i].target) ++k;
        EXPECT_LT(k, mono.size());
    }
    const auto none = backtranslate_expand({}, reverse, {1, 30, 1}, base);
    EXPECT_EQ(none.merged.size(), 15u);
    EXPECT_EQ(none.synthetic, 0u);
}

TEST(ZeroShot, ReportShape) {
    const auto cfg = tiny_run();
    std::vector<corpus::Corpus> all = cfg.corpora;
    const auto vocab = codec::build_vocab(all);
    auto ck = std::make_shared<const model::Checkpoint>(model::init_random(cfg.shape, vocab, 1));
    const decode::Ensemble ens({ck});
    const std::map<std::string, std::vector<std::string>> multi = {
        {"es", {"la casa", "el agua"}}, {"gn", {"aaa", "bbb"}}, {"aym", {"ccc", "ddd"}}};
    const auto manifest = corpus::manifest_of(all);
    const auto rep = zero_shot_eval(ens, "m", multi,
                                    {pair_of("es", "gn"), pair_of("gn", "aym"), pair_of("aym", "gn")}, {1, 10, 1},
                                    &manifest);
    const auto j = rep.to_json();
    EXPECT_EQ(j["columns"].dump(), R"(["model","es-gn","gn-aym","aym-gn"])");
    ASSERT_EQ(j["rows"].size(), 1u);
    EXPECT_EQ(j["rows"][0].size(), 4u);
    EXPECT_EQ(j["rows"][0][0], "m");
    EXPECT_TRUE(rep.directions[0].trained);
    EXPECT_FALSE(rep.directions[1].trained);
    EXPECT_EQ(rep.directions[1].hypotheses.size(), 2u);
    EXPECT_EQ(rep.directions[1].empty_baseline, 0.0);

    EXPECT_THROW(zero_shot_eval(ens, "m", multi, {pair_of("es", "shp")}, {1, 10, 1}), MissingTag);
    auto ragged = multi;
    ragged["gn"].push_back("x");
    EXPECT_THROW(zero_shot_eval(ens, "m", ragged, {pair_of("es", "gn")}, {1, 10, 1}), AlignmentMismatch);
}

TEST(Ablation, MatchedSteps) {
    auto base = tiny_run();
    base.train.max_updates = 20;
    base.train.valid_freq = 10;
    const auto dir = testsupport::scratch_dir("ablate");
    const auto rep = ablation_run(base,
                                  {{"multi", {}}, {"aym_only", {Toggle::parse("single_language:aym")}}}, dir, 99.0);
    ASSERT_EQ(rep.runs.size(), 2u);
    EXPECT_EQ(rep.matched_steps, (std::vector<long long>{10, 20}));
    EXPECT_TRUE(fs::exists(dir / "reports" / "ablation.json"));
    EXPECT_TRUE(fs::exists(dir / "aym_only" / "snapshots.jsonl"));
    EXPECT_EQ(rep.runs[1].snapshots[0].chrf.size(), 1u);
    const auto j = rep.to_json();
    EXPECT_EQ(j["threshold"], 99.0);
}
