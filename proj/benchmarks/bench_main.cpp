#include "deskmt/decode.hpp"
#include "deskmt/metrics.hpp"
#include "deskmt/model.hpp"
#include "support.hpp"

#include <benchmark/benchmark.h>

using namespace deskmt;
using testsupport::pair_of;

namespace {

std::pair<std::vector<std::string>, std::vector<std::string>> text_pairs(std::size_t n) {
    Rng rng(1);
    const auto cipher = testsupport::Cipher::random(rng);
    std::vector<std::string> hyps, refs;
    for (const auto& s : testsupport::sentences(rng, n, 4, 12)) {
        refs.push_back(cipher.apply(s));
        auto h = refs.back();
        h[rng.below(h.size())] = 'x';
        hyps.push_back(h);
    }
    return {hyps, refs};
}

void BM_CorpusChrf(benchmark::State& state) {
    const auto [hyps, refs] = text_pairs(static_cast<std::size_t>(state.range(0)));
    for (auto _ : state) {
        benchmark::DoNotOptimize(metrics::corpus_chrf(hyps, refs).score);
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_CorpusChrf)->Arg(100)->Arg(1000);

std::shared_ptr<const model::Checkpoint> bench_model(int dim) {
    Rng rng(2);
    std::vector<corpus::Corpus> cs = {testsupport::cipher_corpus(pair_of("es", "gn"), testsupport::Cipher::random(rng),
                                                                 testsupport::sentences(rng, 50))};
    model::TransformerShape shape;
    shape.model_dim = dim;
    shape.ff_dim = 2 * dim;
    shape.heads = 4;
    return std::make_shared<const model::Checkpoint>(model::init_random(shape, codec::build_vocab(cs), 3));
}

void BM_TrainStep(benchmark::State& state) {
    Rng rng(3);
    auto ck = *bench_model(static_cast<int>(state.range(0)));
    std::vector<codec::EncodedPair> enc;
    for (const auto& s : testsupport::sentences(rng, 16)) {
        enc.push_back(codec::encode_pair({s, s, pair_of("es", "gn"), "anlp23"}, ck.vocab));
    }
    const auto batch = model::Transformer::make_batch(enc);
    for (auto _ : state) {
        benchmark::DoNotOptimize(model::train_step(ck.state, std::span(&batch, 1), ck.config).loss);
    }
}
BENCHMARK(BM_TrainStep)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_BeamSearch(benchmark::State& state) {
    const auto m = bench_model(64);
    std::vector<std::shared_ptr<const model::Checkpoint>> members(static_cast<std::size_t>(state.range(1)), m);
    const decode::Ensemble ens(members);
    const auto src = codec::encode_source("la casa grande de piedra", corpus::LanguageCode("gn"), m->vocab);
    decode::SearchOptions opt;
    opt.beam_size = static_cast<int>(state.range(0));
    opt.max_len = 30;
    for (auto _ : state) {
        benchmark::DoNotOptimize(decode::beam_search(ens, src, opt).score);
    }
}
BENCHMARK(BM_BeamSearch)->Args({1, 1})->Args({5, 1})->Args({5, 3})->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
