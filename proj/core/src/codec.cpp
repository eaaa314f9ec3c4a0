#include "deskmt/codec.hpp"

#include "deskmt/error.hpp"
#include "deskmt/unicode.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace deskmt::codec {

namespace {

constexpr const char* kSpecialNames[] = {"<pad>", "<s>", "</s>", "<unk>"};

bool looks_like_tag(const std::string& s) {
    return s.size() > 4 && s.starts_with("__") && s.ends_with("__");
}

std::string tag_code(const std::string& symbol) {
    return symbol.substr(2, symbol.size() - 4);
}

}  // namespace

const std::string& Vocabulary::symbol(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= symbols_.size()) {
        throw InvalidId("token id " + std::to_string(id) + " outside vocabulary of size " + std::to_string(size()));
    }
    return symbols_[static_cast<std::size_t>(id)];
}

bool Vocabulary::is_tag(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= symbols_.size() || is_special(id)) {
        return false;
    }
    const auto& s = symbols_[static_cast<std::size_t>(id)];
    return looks_like_tag(s) && tags_.contains(tag_code(s)) && tags_.at(tag_code(s)) == id;
}

bool Vocabulary::has_tag(const corpus::LanguageCode& lang) const {
    return tags_.contains(lang.str());
}

TokenId Vocabulary::tag_id(const corpus::LanguageCode& lang) const {
    const auto it = tags_.find(lang.str());
    if (it == tags_.end()) {
        throw MissingTag("vocabulary has no tag " + tag_symbol(lang));
    }
    return it->second;
}

std::vector<TokenId> Vocabulary::tag_ids() const {
    std::vector<TokenId> ids;
    for (const auto& [code, id] : tags_) {
        ids.push_back(id);
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

TokenId Vocabulary::char_id(char32_t c) const {
    const auto it = chars_.find(c);
    return it == chars_.end() ? kUnk : it->second;
}

std::unordered_set<char32_t> Vocabulary::characters() const {
    std::unordered_set<char32_t> out;
    for (const auto& [c, id] : chars_) {
        out.insert(c);
    }
    return out;
}

std::string Vocabulary::tag_symbol(const corpus::LanguageCode& lang) {
    return "__" + lang.str() + "__";
}

std::string Vocabulary::fingerprint() const {
    const std::string canonical = to_json().dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : canonical) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

nlohmann::ordered_json Vocabulary::to_json() const {
    nlohmann::ordered_json j;
    j["symbols"] = symbols_;
    j["specials"] = {{"pad", kPad}, {"bos", kBos}, {"eos", kEos}, {"unk", kUnk}};
    nlohmann::ordered_json tags = nlohmann::ordered_json::object();
    for (const auto& [code, id] : tags_) {
        tags[code] = id;
    }
    j["tags"] = std::move(tags);
    return j;
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
    const auto symbols = j.at("symbols").get<std::vector<std::string>>();
    if (symbols.size() < 4) {
        throw InvalidArgument("vocabulary JSON lacks the special symbols");
    }
    for (int i = 0; i < 4; ++i) {
        if (symbols[static_cast<std::size_t>(i)] != kSpecialNames[i]) {
            throw InvalidArgument("vocabulary JSON has unexpected special symbol order");
        }
    }
    Vocabulary v;
    v.symbols_.assign(symbols.begin(), symbols.begin() + 4);
    for (std::size_t i = 4; i < symbols.size(); ++i) {
        const auto& s = symbols[i];
        if (looks_like_tag(s)) {
            v.push_tag(tag_code(s));
            continue;
        }
        const std::u32string cps = unicode::decode(s);
        if (cps.size() != 1) {
            throw InvalidArgument("vocabulary symbol '" + s + "' is neither a tag nor a single character");
        }
        v.push_char(cps[0]);
    }
    return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << to_json().dump(2) << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    return from_json(nlohmann::json::parse(in));
}

void Vocabulary::push_tag(const std::string& code) {
    if (tags_.contains(code)) {
        throw InvalidArgument("duplicate tag __" + code + "__");
    }
    tags_[code] = static_cast<TokenId>(symbols_.size());
    symbols_.push_back("__" + code + "__");
}

void Vocabulary::push_char(char32_t c) {
    if (chars_.contains(c)) {
        throw InvalidArgument("duplicate character in vocabulary");
    }
    chars_[c] = static_cast<TokenId>(symbols_.size());
    symbols_.push_back(unicode::encode(c));
}

Vocabulary build_vocab(std::span<const corpus::Corpus> corpora, int min_count, const std::set<std::string>& extra_tags) {
    if (min_count < 1) {
        throw InvalidArgument("min_count must be >= 1");
    }
    std::map<char32_t, long long> freq;
    std::set<std::string> tags = extra_tags;
    std::size_t pairs = 0;
    for (const auto& c : corpora) {
        tags.insert(c.pair().source.str());
        tags.insert(c.pair().target.str());
        for (const auto& sp : c.pairs()) {
            ++pairs;
            for (char32_t ch : unicode::decode(sp.source)) {
                ++freq[ch];
            }
            for (char32_t ch : unicode::decode(sp.target)) {
                ++freq[ch];
            }
        }
    }
    if (pairs == 0) {
        throw EmptyCorpus("cannot build a vocabulary from no sentence pairs");
    }
    std::vector<std::pair<char32_t, long long>> chars;
    for (const auto& [ch, n] : freq) {
        if (n >= min_count) {
            chars.emplace_back(ch, n);
        }
    }
    std::stable_sort(chars.begin(), chars.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second > b.second : a.first < b.first;
    });

    Vocabulary v;
    for (const char* name : kSpecialNames) {
        v.symbols_.emplace_back(name);
    }
    for (const auto& code : tags) {
        v.push_tag(code);
    }
    for (const auto& [ch, n] : chars) {
        v.push_char(ch);
    }
    return v;
}

Vocabulary extend_with_tags(const Vocabulary& vocab, const std::set<std::string>& tags) {
    Vocabulary v = vocab;
    for (const auto& code : tags) {
        corpus::LanguageCode checked(code);
        if (!v.tags_.contains(checked.str())) {
            v.push_tag(checked.str());
        }
    }
    return v;
}

std::vector<TokenId> encode_source(std::string_view text, const corpus::LanguageCode& target_language,
                                   const Vocabulary& vocab) {
    std::vector<TokenId> ids;
    const std::u32string cps = unicode::decode(text);
    ids.reserve(cps.size() + 2);
    ids.push_back(vocab.tag_id(target_language));
    for (char32_t c : cps) {
        ids.push_back(vocab.char_id(c));
    }
    ids.push_back(Vocabulary::kEos);
    return ids;
}

EncodedPair encode_pair(const corpus::SentencePair& pair, const Vocabulary& vocab) {
    // The source tag is not emitted but must exist so the pair can be reversed.
    (void)vocab.tag_id(pair.pair.source);
    EncodedPair out;
    out.source = encode_source(pair.source, pair.pair.target, vocab);
    const std::u32string cps = unicode::decode(pair.target);
    out.target.reserve(cps.size() + 2);
    out.target.push_back(Vocabulary::kBos);
    for (char32_t c : cps) {
        out.target.push_back(vocab.char_id(c));
    }
    out.target.push_back(Vocabulary::kEos);
    return out;
}

std::string decode_ids(std::span<const TokenId> ids, const Vocabulary& vocab) {
    std::string out;
    for (TokenId id : ids) {
        const std::string& s = vocab.symbol(id);
        if (vocab.is_char(id)) {
            out += s;
        }
    }
    return out;
}

}  // namespace deskmt::codec
