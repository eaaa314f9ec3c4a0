#include "deskmt/corpus.hpp"
#include "deskmt/error.hpp"
#include "deskmt/unicode.hpp"
#include "support.hpp"

#include <fstream>

#include <gtest/gtest.h>

using namespace deskmt;
using namespace deskmt::corpus;
using testsupport::pair_of;

namespace {

void write_file(const std::filesystem::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary);
    out << content;
}

}  // namespace

TEST(Unicode, RoundTripAndValidity) {
    const std::string s = "ñandú ka⁴² «x»";
    EXPECT_EQ(unicode::encode(unicode::decode(s)), s);
    EXPECT_EQ(unicode::decode(s).size(), 14u);
    EXPECT_FALSE(unicode::is_valid("\xff\xfe"));
    EXPECT_THROW(unicode::decode("a\xc3"), EncodingError);
    EXPECT_EQ(unicode::trim("  a b \t"), "a b");
}

TEST(Unicode, NfcComposes) {
    EXPECT_EQ(unicode::nfc("n\xcc\x83"), "ñ");
    EXPECT_EQ(unicode::nfc("ñ"), "ñ");
}

TEST(Languages, Registry) {
    EXPECT_EQ(task_languages().size(), 11u);
    EXPECT_TRUE(is_registered("es"));
    EXPECT_TRUE(is_registered("shp"));
    EXPECT_THROW(LanguageCode("klingon"), InvalidArgument);
    EXPECT_THROW(register_language("Bad-Code"), InvalidArgument);
    register_language("xx1");
    EXPECT_EQ(LanguageCode("xx1").str(), "xx1");
    EXPECT_EQ(LanguagePair::parse("es-gn").label(), "es-gn");
    EXPECT_THROW(LanguagePair::parse("esgn"), InvalidArgument);
}

TEST(Corpus, AddChecksPair) {
    Corpus c(pair_of("es", "gn"));
    c.add("hola", "mba'éichapa", "anlp23");
    EXPECT_EQ(c.size(), 1u);
    SentencePair other{"a", "b", pair_of("es", "aym"), "anlp23"};
    EXPECT_THROW(c.add(other), PairMismatch);
}

TEST(Manifest, AymTotalsFromProvenanceCounts) {
    Manifest m;
    const auto p = pair_of("es", "aym");
    m.add(p, std::string(provenance::anlp23), 15586);
    m.add(p, std::string(provenance::helsinki), 149225);
    m.add(p, std::string(provenance::nllb), 8809);
    EXPECT_EQ(m.total(p), 173620u);
    EXPECT_EQ(m.total(), 173620u);
    EXPECT_EQ(m.count(p, "helsinki"), 149225u);
    EXPECT_EQ(m.count(p, "bibles"), 0u);
    EXPECT_EQ(m.without_provenance("nllb").total(p), 173620u - 8809u);
    EXPECT_EQ(Manifest::from_json(m.to_json()), m);
}

TEST(Manifest, TotalsAreSumsAcrossPairs) {
    Manifest m;
    m.add(pair_of("es", "gn"), "anlp23", 26032);
    m.add(pair_of("es", "gn"), "helsinki", 1713);
    m.add(pair_of("es", "gn"), "nllb", 6193);
    m.add(pair_of("es", "czn"), "anlp23", 3118);
    EXPECT_EQ(m.total(pair_of("es", "gn")), 33938u);
    EXPECT_EQ(m.total(), 33938u + 3118u);
    EXPECT_EQ(m.pairs().size(), 2u);
    EXPECT_EQ(m.only_pair(pair_of("es", "czn")).total(), 3118u);
}

TEST(LoadParallel, AlignsAndNormalizes) {
    const auto dir = testsupport::scratch_dir("load");
    write_file(dir / "a.es", "uno\nn\xcc\x83\n");
    write_file(dir / "a.gn", "peteĩ\nmokõi\n");
    const auto c = load_parallel(dir / "a.es", dir / "a.gn", pair_of("es", "gn"), "anlp23");
    ASSERT_EQ(c.size(), 2u);
    EXPECT_EQ(c[1].source, "ñ");
    EXPECT_EQ(c[1].provenance, "anlp23");

    write_file(dir / "b.gn", "peteĩ\n");
    EXPECT_THROW(load_parallel(dir / "a.es", dir / "b.gn", pair_of("es", "gn"), "anlp23"), AlignmentMismatch);
    write_file(dir / "c.gn", "x\n\xff\n");
    EXPECT_THROW(load_parallel(dir / "a.es", dir / "c.gn", pair_of("es", "gn"), "anlp23"), EncodingError);
    EXPECT_THROW(load_parallel(dir / "missing", dir / "a.gn", pair_of("es", "gn"), "anlp23"), IoError);

    write_parallel(c, dir / "o.es", dir / "o.gn");
    EXPECT_EQ(load_parallel(dir / "o.es", dir / "o.gn", pair_of("es", "gn"), "anlp23").pairs(), c.pairs());
}

TEST(Detokenize, AttachesPunctuation) {
    EXPECT_EQ(detokenize("Hola , mundo ."), "Hola, mundo.");
    EXPECT_EQ(detokenize("¿ Qué tal ?"), "¿Qué tal?");
    EXPECT_EQ(detokenize("dijo \" sí \" ayer"), "dijo \"sí\" ayer");
    EXPECT_EQ(detokenize("( a )  b"), "(a) b");
    EXPECT_EQ(detokenize("  "), "");
    EXPECT_EQ(detokenize("ya está listo"), "ya está listo");
}

TEST(Punct, MapsOnlyOutOfInventory) {
    const auto table = parse_char_table("# comment\n«\t\"\n»\t\"\n");
    EXPECT_EQ(table.size(), 2u);
    const std::unordered_set<char32_t> inv = {U'a', U'b', U' ', U'"'};
    const auto [text, rep] = map_unsupported_punct("«ab» ¶", inv, table);
    EXPECT_EQ(text, "\"ab\" ¶");
    EXPECT_EQ(rep.replaced.at(U'«'), 1u);
    EXPECT_EQ(rep.unmapped.at(U'¶'), 1u);
    const auto [same, none] = map_unsupported_punct("ab", inv, table);
    EXPECT_EQ(same, "ab");
    EXPECT_TRUE(none.empty());
    EXPECT_THROW(parse_char_table("ab\tc\n"), InvalidArgument);
}

TEST(Czn, NormalizesWordFinalRunsOnly) {
    EXPECT_EQ(czn_normalize("ka⁴² tsa² nì"), "ka42 tsa2 nì");
    EXPECT_EQ(czn_restore("4ka2"), "4ka²");
    EXPECT_EQ(czn_restore("ka42 tsa2 nì"), "ka⁴² tsa² nì");
    EXPECT_EQ(czn_normalize("³a"), "³a");
    EXPECT_EQ(czn_normalize("kaᴬᴮ"), "kaAB");
}

TEST(Czn, RoundTripProperty) {
    Rng rng(11);
    const auto& fwd = ToneTable::default_table().forward();
    std::vector<char32_t> sups;
    for (const auto& [s, _] : fwd) sups.push_back(s);
    for (int i = 0; i < 500; ++i) {
        std::u32string word = unicode::decode(testsupport::pseudo_word(rng, 3));
        const auto n = 1 + rng.below(3);
        for (std::uint64_t k = 0; k < n; ++k) word.push_back(sups[rng.below(sups.size())]);
        const auto w = unicode::encode(word);
        EXPECT_EQ(czn_restore(czn_normalize(w)), w);
        const auto std_form = czn_normalize(w);
        EXPECT_EQ(czn_normalize(czn_restore(std_form)), std_form);
    }
}

TEST(Czn, TableMustBeInjective) {
    EXPECT_THROW(ToneTable(CharTable{{U'²', U'2'}, {U'³', U'2'}}), InvalidArgument);
    ToneTable custom(CharTable{{U'ᵃ', U'a'}});
    EXPECT_EQ(czn_restore("kaa", custom), "kᵃᵃ");
    EXPECT_EQ(czn_restore("kab", custom), "kab");
}

TEST(Audit, DuplicatesAndOverlaps) {
    Corpus a(pair_of("es", "gn"));
    a.add("x", "y", "anlp23");
    a.add("x", "y", "anlp23");
    a.add("p", "q", "anlp23");
    Corpus b(pair_of("es", "gn"));
    b.add("p", "q", "helsinki");
    b.add("r", "s", "helsinki");
    const std::vector<Corpus> cs = {a, b};
    const auto rep = audit(cs);
    ASSERT_EQ(rep.duplicates.size(), 2u);
    EXPECT_EQ(rep.duplicates[0].duplicates, 1u);
    EXPECT_EQ(rep.duplicates[1].duplicates, 0u);
    EXPECT_EQ(rep.overlap(0, 1), 1u);
    EXPECT_EQ(rep.overlap(1, 0), 1u);
    EXPECT_EQ(rep.overlap(0, 0), 2u);
}

TEST(Merge, DedupAndManifest) {
    Corpus a(pair_of("es", "gn"));
    a.add("x", "y", "anlp23");
    a.add("p", "q", "anlp23");
    Corpus b(pair_of("es", "gn"));
    b.add("p", "q", "helsinki");
    b.add("r", "s", "helsinki");
    const std::vector<Corpus> cs = {a, b};
    const auto [all, m_all] = merge(cs, false);
    EXPECT_EQ(all.size(), 4u);
    EXPECT_EQ(m_all.total(), 4u);
    const auto [dd, m_dd] = merge(cs, true);
    EXPECT_EQ(dd.size(), 3u);
    EXPECT_EQ(m_dd.count(pair_of("es", "gn"), "helsinki"), 1u);
    EXPECT_EQ(m_dd.count(pair_of("es", "gn"), "anlp23"), 2u);
    Corpus c(pair_of("es", "aym"));
    c.add("a", "b", "anlp23");
    const std::vector<Corpus> mixed = {a, c};
    EXPECT_THROW(merge(mixed, false), PairMismatch);
}
