#include "deskmt/codec.hpp"
#include "deskmt/error.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

using namespace deskmt;
using namespace deskmt::codec;
using testsupport::pair_of;

namespace {

std::vector<corpus::Corpus> sample() {
    corpus::Corpus gn(pair_of("es", "gn"));
    gn.add("casa", "óga", "anlp23");
    gn.add("agua", "y", "anlp23");
    corpus::Corpus aym(pair_of("es", "aym"));
    aym.add("casa", "uta", "anlp23");
    return {gn, aym};
}

}  // namespace

TEST(Vocab, LayoutSpecialsTagsThenCharsByFrequency) {
    const auto v = build_vocab(sample());
    EXPECT_EQ(v.symbol(Vocabulary::kPad), "<pad>");
    EXPECT_EQ(v.symbol(Vocabulary::kBos), "<s>");
    EXPECT_EQ(v.symbol(Vocabulary::kEos), "</s>");
    EXPECT_EQ(v.symbol(Vocabulary::kUnk), "<unk>");
    EXPECT_EQ(v.symbol(4), "__aym__");
    EXPECT_EQ(v.symbol(5), "__es__");
    EXPECT_EQ(v.symbol(6), "__gn__");
    EXPECT_EQ(v.symbol(7), "a");
    EXPECT_TRUE(v.is_tag(5));
    EXPECT_FALSE(v.is_char(5));
    EXPECT_TRUE(v.is_char(7));
    EXPECT_EQ(v.tag_ids(), (std::vector<TokenId>{4, 5, 6}));
    EXPECT_EQ(v.char_id(U'z'), Vocabulary::kUnk);
    EXPECT_THROW(v.symbol(1000), InvalidId);
    EXPECT_THROW(v.tag_id(corpus::LanguageCode("shp")), MissingTag);
}

TEST(Vocab, MinCountAndErrors) {
    const auto all = build_vocab(sample());
    const auto pruned = build_vocab(sample(), 3);
    EXPECT_LT(pruned.size(), all.size());
    EXPECT_EQ(pruned.char_id(U'ó'), Vocabulary::kUnk);
    EXPECT_NE(pruned.char_id(U'a'), Vocabulary::kUnk);
    EXPECT_THROW(build_vocab(sample(), 0), InvalidArgument);
    std::vector<corpus::Corpus> empty = {corpus::Corpus(pair_of("es", "gn"))};
    EXPECT_THROW(build_vocab(empty), EmptyCorpus);
}

TEST(Vocab, ExtendKeepsExistingIds) {
    const auto v = build_vocab(sample());
    const auto w = extend_with_tags(v, {"shp", "gn"});
    EXPECT_EQ(w.size(), v.size() + 1);
    for (std::size_t i = 0; i < v.size(); ++i) {
        EXPECT_EQ(w.symbol(static_cast<TokenId>(i)), v.symbol(static_cast<TokenId>(i)));
    }
    EXPECT_EQ(w.tag_id(corpus::LanguageCode("shp")), static_cast<TokenId>(v.size()));
    EXPECT_NE(w.fingerprint(), v.fingerprint());
}

TEST(Vocab, JsonAndFileRoundTrip) {
    const auto v = extend_with_tags(build_vocab(sample()), {"shp"});
    const auto back = Vocabulary::from_json(v.to_json());
    EXPECT_EQ(back, v);
    EXPECT_EQ(back.fingerprint(), v.fingerprint());
    EXPECT_EQ(back.tag_id(corpus::LanguageCode("shp")), v.tag_id(corpus::LanguageCode("shp")));
    const auto dir = testsupport::scratch_dir("vocab");
    v.save(dir / "v.json");
    EXPECT_EQ(Vocabulary::load(dir / "v.json"), v);
    EXPECT_EQ(build_vocab(sample()).fingerprint(), build_vocab(sample()).fingerprint());
}

TEST(Encode, PairLayout) {
    const auto v = build_vocab(sample());
    const corpus::SentencePair sp{"casa", "óga", pair_of("es", "gn"), "anlp23"};
    const auto e = encode_pair(sp, v);
    ASSERT_EQ(e.source.size(), 6u);
    EXPECT_EQ(e.source.front(), v.tag_id(corpus::LanguageCode("gn")));
    EXPECT_EQ(e.source.back(), Vocabulary::kEos);
    ASSERT_EQ(e.target.size(), 5u);
    EXPECT_EQ(e.target.front(), Vocabulary::kBos);
    EXPECT_EQ(e.target.back(), Vocabulary::kEos);
    EXPECT_EQ(decode_ids(e.target, v), "óga");
    EXPECT_EQ(decode_ids(e.source, v), "casa");
}

TEST(Encode, RoundTripOverInventory) {
    const auto v = build_vocab(sample());
    Rng rng(3);
    const std::u32string inv = U"casguóyt";
    for (int i = 0; i < 100; ++i) {
        std::u32string s;
        for (std::uint64_t k = 0, n = rng.below(10); k < n; ++k) s.push_back(inv[rng.below(inv.size())]);
        const auto text = unicode::encode(s);
        const auto ids = encode_source(text, corpus::LanguageCode("aym"), v);
        EXPECT_EQ(decode_ids(ids, v), text);
    }
}

TEST(Encode, MissingTagAndUnknownChars) {
    const auto v = build_vocab(sample());
    const corpus::SentencePair sp{"x", "y", pair_of("es", "shp"), "anlp23"};
    EXPECT_THROW(encode_pair(sp, v), MissingTag);
    const auto ids = encode_source("zz", corpus::LanguageCode("gn"), v);
    EXPECT_EQ(ids[1], Vocabulary::kUnk);
    EXPECT_EQ(decode_ids(ids, v), "");
    const std::vector<TokenId> bad = {-1};
    EXPECT_THROW(decode_ids(bad, v), InvalidId);
}
