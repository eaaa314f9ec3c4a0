#pragma once

#include "deskmt/codec.hpp"
#include "deskmt/corpus.hpp"
#include "deskmt/model.hpp"
#include "deskmt/rng.hpp"
#include "deskmt/unicode.hpp"

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

namespace testsupport {

using deskmt::corpus::Corpus;
using deskmt::corpus::LanguageCode;
using deskmt::corpus::LanguagePair;

inline LanguagePair pair_of(const std::string& src, const std::string& tgt) {
    return LanguagePair{LanguageCode(src), LanguageCode(tgt)};
}

/// Spanish-like word made of consonant-vowel syllables.
inline std::string pseudo_word(deskmt::Rng& rng, int max_syllables = 2) {
    static const std::string consonants = "bcdfglmnprstv";
    static const std::string vowels = "aeiou";
    std::string w;
    const auto n = 1 + rng.below(static_cast<std::uint64_t>(max_syllables));
    for (std::uint64_t i = 0; i < n; ++i) {
        w += consonants[rng.below(consonants.size())];
        w += vowels[rng.below(vowels.size())];
    }
    return w;
}

inline std::string pseudo_sentence(deskmt::Rng& rng, int min_words = 2, int max_words = 4) {
    const auto n = static_cast<int>(min_words + rng.below(static_cast<std::uint64_t>(max_words - min_words + 1)));
    std::string s;
    for (int i = 0; i < n; ++i) {
        if (i > 0) s += ' ';
        s += pseudo_word(rng);
    }
    return s;
}

/// Letter substitution over a-z.
struct Cipher {
    std::string table;  // table[c - 'a'] is the image of c

    static Cipher random(deskmt::Rng& rng) {
        std::string t = "abcdefghijklmnopqrstuvwxyz";
        for (std::size_t i = t.size() - 1; i > 0; --i) {
            std::swap(t[i], t[rng.below(i + 1)]);
        }
        return {t};
    }

    /// Copy of `base` with `changes` letters drawn from `alphabet` remapped among themselves.
    static Cipher variant(const Cipher& base, std::size_t changes, deskmt::Rng& rng,
                          std::string letters = "bcdfglmnprstvaeiou") {
        for (std::size_t i = letters.size() - 1; i > 0; --i) {
            std::swap(letters[i], letters[rng.below(i + 1)]);
        }
        Cipher c = base;
        // Rotate the images of the chosen letters so each chosen letter changes.
        for (std::size_t i = 0; i < changes; ++i) {
            const auto a = letters[i] - 'a';
            const auto b = letters[(i + 1) % changes] - 'a';
            c.table[static_cast<std::size_t>(a)] = base.table[static_cast<std::size_t>(b)];
        }
        return c;
    }

    std::string apply(const std::string& s) const {
        std::string out = s;
        for (char& ch : out) {
            if (ch >= 'a' && ch <= 'z') ch = table[static_cast<std::size_t>(ch - 'a')];
        }
        return out;
    }

    Cipher inverse() const {
        Cipher inv{std::string(26, '?')};
        for (std::size_t i = 0; i < 26; ++i) {
            inv.table[static_cast<std::size_t>(table[i] - 'a')] = static_cast<char>('a' + i);
        }
        return inv;
    }
};

inline Corpus cipher_corpus(const LanguagePair& pair, const Cipher& cipher, const std::vector<std::string>& sources,
                            const std::string& provenance = "anlp23") {
    Corpus c(pair);
    for (const auto& s : sources) {
        c.add(s, cipher.apply(s), provenance);
    }
    return c;
}

inline std::vector<std::string> sentences(deskmt::Rng& rng, std::size_t n, int min_words = 2, int max_words = 4) {
    std::vector<std::string> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back(pseudo_sentence(rng, min_words, max_words));
    }
    return out;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("deskmt-test-" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

/// Plain training loop over one mixed pool of pairs, for tests that need a model that has learned something.
inline void fit(deskmt::model::Checkpoint& ck, const std::vector<Corpus>& corpora, int steps, std::size_t batch = 16) {
    std::vector<deskmt::codec::EncodedPair> enc;
    for (const auto& c : corpora) {
        for (const auto& sp : c.pairs()) enc.push_back(deskmt::codec::encode_pair(sp, ck.vocab));
    }
    for (int step = 0; step < steps; ++step) {
        std::vector<deskmt::codec::EncodedPair> sample;
        for (std::size_t k = 0; k < batch; ++k) sample.push_back(enc[ck.state.rng.below(enc.size())]);
        const auto b = deskmt::model::Transformer::make_batch(sample);
        deskmt::model::train_step(ck.state, std::span(&b, 1), ck.config);
    }
}

}  // namespace testsupport
