#pragma once

#include "deskmt/corpus.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace deskmt::codec {

using TokenId = std::int32_t;

/// Character vocabulary with special symbols and per-language tag symbols.
///
/// Layout: <pad>=0, <s>=1, </s>=2, <unk>=3, then the language tags present
/// at build time (sorted by code), then characters by descending frequency
/// with code point as tiebreak. Tags added later are appended, so existing
/// ids never move.
class Vocabulary {
public:
    static constexpr TokenId kPad = 0;
    static constexpr TokenId kBos = 1;
    static constexpr TokenId kEos = 2;
    static constexpr TokenId kUnk = 3;

    std::size_t size() const { return symbols_.size(); }
    const std::string& symbol(TokenId id) const;
    const std::vector<std::string>& symbols() const { return symbols_; }

    bool is_special(TokenId id) const { return id >= 0 && id <= kUnk; }
    bool is_tag(TokenId id) const;
    bool is_char(TokenId id) const { return id >= 0 && static_cast<std::size_t>(id) < size() && !is_special(id) && !is_tag(id); }

    bool has_tag(const corpus::LanguageCode& lang) const;
    /// Throws MissingTag.
    TokenId tag_id(const corpus::LanguageCode& lang) const;
    std::vector<TokenId> tag_ids() const;

    /// Id of a character, or kUnk.
    TokenId char_id(char32_t c) const;
    std::unordered_set<char32_t> characters() const;

    /// "__gn__"
    static std::string tag_symbol(const corpus::LanguageCode& lang);

    /// FNV-1a over the canonical JSON form, as 16 hex digits.
    std::string fingerprint() const;

    nlohmann::ordered_json to_json() const;
    static Vocabulary from_json(const nlohmann::json& j);
    void save(const std::filesystem::path& path) const;
    static Vocabulary load(const std::filesystem::path& path);

    bool operator==(const Vocabulary& other) const { return symbols_ == other.symbols_; }

    friend Vocabulary build_vocab(std::span<const corpus::Corpus>, int, const std::set<std::string>&);
    friend Vocabulary extend_with_tags(const Vocabulary&, const std::set<std::string>&);

private:
    void push_tag(const std::string& code);
    void push_char(char32_t c);

    std::vector<std::string> symbols_;
    std::unordered_map<char32_t, TokenId> chars_;
    std::map<std::string, TokenId> tags_;
};

/// Characters from both sides of every corpus with frequency >= min_count.
/// Tags cover every language appearing in the corpora plus `extra_tags`.
/// Throws EmptyCorpus when there are no sentence pairs, InvalidArgument when min_count < 1.
Vocabulary build_vocab(std::span<const corpus::Corpus> corpora, int min_count = 1,
                       const std::set<std::string>& extra_tags = {});

/// Appends tags not yet present.
Vocabulary extend_with_tags(const Vocabulary& vocab, const std::set<std::string>& tags);

struct EncodedPair {
    std::vector<TokenId> source;
    std::vector<TokenId> target;
};

/// source = [tag(target language)] + chars + [</s>]; target = [<s>] + chars + [</s>].
EncodedPair encode_pair(const corpus::SentencePair& pair, const Vocabulary& vocab);

/// Source side only, for inference.
std::vector<TokenId> encode_source(std::string_view text, const corpus::LanguageCode& target_language,
                                   const Vocabulary& vocab);

/// Drops specials and tags, concatenates characters. Throws InvalidId.
std::string decode_ids(std::span<const TokenId> ids, const Vocabulary& vocab);

}  // namespace deskmt::codec
