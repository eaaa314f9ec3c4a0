#pragma once

#include <compare>
#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace deskmt::corpus {

/// Registers a language code so LanguageCode accepts it. Codes are lowercase
/// ASCII letters, digits, or underscore. The twelve task languages (es plus
/// the eleven targets) are registered at startup.
void register_language(std::string_view code);
bool is_registered(std::string_view code);
std::vector<std::string> registered_languages();

/// The eleven target languages, in the order the task lists them.
std::span<const std::string_view> task_languages();

class LanguageCode {
public:
    explicit LanguageCode(std::string_view code);

    const std::string& str() const { return code_; }

    auto operator<=>(const LanguageCode&) const = default;

private:
    std::string code_;
};

struct LanguagePair {
    LanguageCode source;
    LanguageCode target;

    /// "es-gn"
    std::string label() const { return source.str() + "-" + target.str(); }
    static LanguagePair parse(std::string_view label);

    auto operator<=>(const LanguagePair&) const = default;
};

namespace provenance {
inline constexpr std::string_view anlp23 = "anlp23";
inline constexpr std::string_view helsinki = "helsinki";
inline constexpr std::string_view repucs = "repucs";
inline constexpr std::string_view nllb = "nllb";
inline constexpr std::string_view bibles = "bibles";
inline constexpr std::string_view backtrans = "backtrans";
}  // namespace provenance

struct SentencePair {
    std::string source;
    std::string target;
    LanguagePair pair;
    std::string provenance;

    bool operator==(const SentencePair&) const = default;
};

/// Ordered sentence pairs sharing one language pair.
class Corpus {
public:
    explicit Corpus(LanguagePair pair) : pair_(std::move(pair)) {}

    const LanguagePair& pair() const { return pair_; }
    const std::vector<SentencePair>& pairs() const { return pairs_; }
    std::size_t size() const { return pairs_.size(); }
    bool empty() const { return pairs_.empty(); }
    const SentencePair& operator[](std::size_t i) const { return pairs_[i]; }

    /// Throws PairMismatch if the pair differs from the corpus pair and
    /// InvalidArgument if either side is blank or provenance is unset.
    void add(SentencePair sp);
    void add(std::string source, std::string target, std::string provenance);

private:
    LanguagePair pair_;
    std::vector<SentencePair> pairs_;
};

/// Per (language pair, provenance) counts; totals are derived, never stored.
class Manifest {
public:
    void add(const LanguagePair& pair, const std::string& provenance, std::size_t count);
    void add(const Corpus& corpus);

    std::size_t count(const LanguagePair& pair, const std::string& provenance) const;
    std::size_t total(const LanguagePair& pair) const;
    std::size_t total() const;
    std::vector<LanguagePair> pairs() const;
    const std::map<LanguagePair, std::map<std::string, std::size_t>>& counts() const { return counts_; }

    Manifest without_provenance(const std::string& provenance) const;
    Manifest only_pair(const LanguagePair& pair) const;

    nlohmann::ordered_json to_json() const;
    static Manifest from_json(const nlohmann::json& j);

    bool operator==(const Manifest&) const = default;

private:
    std::map<LanguagePair, std::map<std::string, std::size_t>> counts_;
};

Manifest manifest_of(std::span<const Corpus> corpora);

struct AuditReport {
    struct Duplicates {
        std::size_t corpus;
        std::string label;
        std::size_t duplicates;
    };
    struct Overlap {
        std::size_t a;
        std::size_t b;
        std::size_t count;
    };
    std::vector<Duplicates> duplicates;
    std::vector<Overlap> overlaps;

    /// Symmetric lookup; overlap(i, i) is the number of distinct pairs in i.
    std::size_t overlap(std::size_t a, std::size_t b) const;

    nlohmann::ordered_json to_json() const;
};

/// Reads two aligned UTF-8 files, one segment per line, applying NFC.
Corpus load_parallel(const std::filesystem::path& src_path, const std::filesystem::path& tgt_path,
                     const LanguagePair& pair, const std::string& provenance);

void write_parallel(const Corpus& corpus, const std::filesystem::path& src_path,
                    const std::filesystem::path& tgt_path);

/// Reads a UTF-8 file as NFC lines (no blank-line check).
std::vector<std::string> read_lines(const std::filesystem::path& path);
void write_lines(const std::vector<std::string>& lines, const std::filesystem::path& path);

// Text processing

/// Moses-style punctuation attachment on whitespace-separated tokens.
///
/// A token made only of closing punctuation (. , ; : ! ? ) ] } ») joins the
/// previous token; a token made only of opening punctuation (¿ ¡ ( [ { «)
/// joins the next one; standalone straight double quotes alternate between
/// opening and closing. Whitespace runs collapse to a single space and the
/// result is trimmed.
std::string detokenize(std::string_view text);

using CharTable = std::map<char32_t, char32_t>;

/// Two-column TSV (from-char, to-char), one mapping per line; '#' starts a comment line.
CharTable load_char_table(const std::filesystem::path& path);
CharTable parse_char_table(std::string_view tsv);

struct PunctReport {
    std::map<char32_t, std::size_t> replaced;
    std::map<char32_t, std::size_t> unmapped;

    bool empty() const { return replaced.empty() && unmapped.empty(); }
    nlohmann::ordered_json to_json() const;
};

/// Replaces out-of-inventory characters that have a mapping; characters with
/// no mapping are left in place and counted as unmapped.
std::pair<std::string, PunctReport> map_unsupported_punct(std::string_view text,
                                                          const std::unordered_set<char32_t>& inventory,
                                                          const CharTable& mapping);

/// Superscript tone marks and their standard counterparts.
class ToneTable {
public:
    /// Throws InvalidArgument unless the table is injective.
    explicit ToneTable(CharTable superscript_to_standard);

    static const ToneTable& default_table();

    const CharTable& forward() const { return forward_; }
    const CharTable& reverse() const { return reverse_; }

private:
    CharTable forward_;
    CharTable reverse_;
};

/// Replaces each word-final run of superscript tone characters with the standard forms.
std::string czn_normalize(std::string_view text, const ToneTable& table = ToneTable::default_table());

/// Inverse of czn_normalize: superscripts each word-final run of standard forms.
std::string czn_restore(std::string_view text, const ToneTable& table = ToneTable::default_table());

/// Duplicates and pairwise overlaps by exact (source, target) equality.
AuditReport audit(std::span<const Corpus> corpora);

/// Concatenates corpora in order; with dedup, drops any pair already seen.
std::pair<Corpus, Manifest> merge(std::span<const Corpus> corpora, bool dedup);

}  // namespace deskmt::corpus
