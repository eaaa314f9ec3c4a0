#pragma once

#include "deskmt/corpus.hpp"
#include "deskmt/rng.hpp"

#include <cstddef>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

namespace deskmt::sampler {

/// p_l = n_l^(1/T) / sum_k n_k^(1/T) over the language pairs of a manifest.
struct PairDistribution {
    double temperature = 1.0;
    std::vector<corpus::LanguagePair> pairs;
    std::vector<std::size_t> sizes;
    std::vector<double> probs;

    /// 0 for pairs not in the distribution.
    double probability(const corpus::LanguagePair& pair) const;
    /// Index of the pair chosen by one uniform draw.
    std::size_t draw(Rng& rng) const;

    nlohmann::ordered_json to_json() const;
};

/// Throws EmptyManifest, ZeroSize, or InvalidArgument for T <= 0.
PairDistribution pair_distribution(const corpus::Manifest& manifest, double temperature);

struct Batch {
    corpus::LanguagePair pair;
    std::vector<corpus::SentencePair> examples;
};

/// Draws one language pair, then `batch_size` examples of it uniformly with
/// replacement. Throws MissingCorpus when the drawn pair has no nonempty corpus.
Batch draw_batch(Rng& rng, std::span<const corpus::Corpus> corpora, const PairDistribution& dist,
                 std::size_t batch_size);

}  // namespace deskmt::sampler
