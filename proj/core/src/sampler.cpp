#include "deskmt/sampler.hpp"

#include "deskmt/error.hpp"

#include <algorithm>
#include <cmath>

namespace deskmt::sampler {

double PairDistribution::probability(const corpus::LanguagePair& pair) const {
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        if (pairs[i] == pair) {
            return probs[i];
        }
    }
    return 0.0;
}

std::size_t PairDistribution::draw(Rng& rng) const {
    const double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        acc += probs[i];
        if (u < acc) {
            return i;
        }
    }
    // Rounding can leave the cumulative sum just under 1.
    for (std::size_t i = probs.size(); i-- > 0;) {
        if (probs[i] > 0.0) {
            return i;
        }
    }
    return 0;
}

nlohmann::ordered_json PairDistribution::to_json() const {
    nlohmann::ordered_json entries = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        entries.push_back({{"pair", pairs[i].label()}, {"size", sizes[i]}, {"probability", probs[i]}});
    }
    return {{"temperature", temperature}, {"pairs", std::move(entries)}};
}

PairDistribution pair_distribution(const corpus::Manifest& manifest, double temperature) {
    if (!(temperature > 0.0) || !std::isfinite(temperature)) {
        throw InvalidArgument("temperature must be positive and finite");
    }
    PairDistribution d;
    d.temperature = temperature;
    d.pairs = manifest.pairs();
    if (d.pairs.empty()) {
        throw EmptyManifest("no language pairs to sample from");
    }
    for (const auto& p : d.pairs) {
        const std::size_t n = manifest.total(p);
        if (n == 0) {
            throw ZeroSize("language pair " + p.label() + " has no examples");
        }
        d.sizes.push_back(n);
    }
    std::vector<double> w(d.sizes.size());
    if (temperature == 1.0) {
        std::transform(d.sizes.begin(), d.sizes.end(), w.begin(), [](std::size_t n) { return static_cast<double>(n); });
    } else {
        // Log space relative to the largest pair, so n^(1/T) cannot overflow for small T.
        const double top = std::log(static_cast<double>(*std::max_element(d.sizes.begin(), d.sizes.end())));
        for (std::size_t i = 0; i < w.size(); ++i) {
            w[i] = std::exp((std::log(static_cast<double>(d.sizes[i])) - top) / temperature);
        }
    }
    double total = 0.0;
    for (double x : w) {
        total += x;
    }
    d.probs.resize(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
        d.probs[i] = w[i] / total;
    }
    return d;
}

Batch draw_batch(Rng& rng, std::span<const corpus::Corpus> corpora, const PairDistribution& dist,
                 std::size_t batch_size) {
    if (dist.pairs.empty()) {
        throw EmptyManifest("empty pair distribution");
    }
    const std::size_t idx = dist.draw(rng);
    const auto& pair = dist.pairs[idx];
    const auto it = std::find_if(corpora.begin(), corpora.end(),
                                 [&](const corpus::Corpus& c) { return c.pair() == pair && !c.empty(); });
    if (it == corpora.end()) {
        throw MissingCorpus("no nonempty corpus for " + pair.label());
    }
    Batch b{pair, {}};
    b.examples.reserve(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) {
        b.examples.push_back((*it)[rng.below(it->size())]);
    }
    return b;
}

}  // namespace deskmt::sampler
