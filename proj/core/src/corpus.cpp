#include "deskmt/corpus.hpp"

#include "deskmt/error.hpp"
#include "deskmt/unicode.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>

namespace deskmt::corpus {

namespace {

constexpr std::array<std::string_view, 11> kTaskLanguages = {"aym", "bzd", "cni", "czn", "gn", "hch",
                                                             "nah", "oto", "quy", "shp", "tar"};

struct Registry {
    std::mutex mutex;
    std::set<std::string, std::less<>> codes;

    Registry() {
        codes.emplace("es");
        for (auto code : kTaskLanguages) {
            codes.emplace(code);
        }
    }
};

Registry& registry() {
    static Registry r;
    return r;
}

bool well_formed_code(std::string_view code) {
    if (code.empty()) {
        return false;
    }
    return std::all_of(code.begin(), code.end(), [](char c) {
        return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_';
    });
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> split_lines(const std::string& text) {
    std::vector<std::string> lines;
    std::size_t start = 0;
    while (start < text.size()) {
        const std::size_t nl = text.find('\n', start);
        if (nl == std::string::npos) {
            lines.push_back(text.substr(start));
            break;
        }
        lines.push_back(text.substr(start, nl - start));
        start = nl + 1;
    }
    return lines;
}

bool is_blank(std::string_view s) {
    return unicode::trim(s).empty();
}

constexpr std::u32string_view kClosing = U".,;:!?)]}»";
constexpr std::u32string_view kOpening = U"¿¡([{«";

bool all_of_set(std::u32string_view token, std::u32string_view set) {
    return !token.empty() && std::all_of(token.begin(), token.end(), [&](char32_t c) {
        return set.find(c) != std::u32string_view::npos;
    });
}

std::string key_of(const SentencePair& sp) {
    std::string key;
    key.reserve(sp.source.size() + sp.target.size() + 1);
    key += sp.source;
    key += '\t';
    key += sp.target;
    return key;
}

std::string transform_word_final_runs(std::string_view text, const CharTable& table) {
    const std::u32string cps = unicode::decode(text);
    std::u32string out = cps;
    std::size_t i = 0;
    while (i < cps.size()) {
        if (unicode::is_space(cps[i])) {
            ++i;
            continue;
        }
        std::size_t end = i;
        while (end < cps.size() && !unicode::is_space(cps[end])) {
            ++end;
        }
        std::size_t run = end;
        while (run > i && table.contains(cps[run - 1])) {
            --run;
        }
        for (std::size_t k = run; k < end; ++k) {
            out[k] = table.at(cps[k]);
        }
        i = end;
    }
    return unicode::encode(out);
}

}  // namespace

void register_language(std::string_view code) {
    if (!well_formed_code(code)) {
        throw InvalidArgument("malformed language code '" + std::string(code) + "'");
    }
    auto& r = registry();
    std::lock_guard lock(r.mutex);
    r.codes.emplace(code);
}

bool is_registered(std::string_view code) {
    auto& r = registry();
    std::lock_guard lock(r.mutex);
    return r.codes.find(code) != r.codes.end();
}

std::vector<std::string> registered_languages() {
    auto& r = registry();
    std::lock_guard lock(r.mutex);
    return {r.codes.begin(), r.codes.end()};
}

std::span<const std::string_view> task_languages() {
    return kTaskLanguages;
}

LanguageCode::LanguageCode(std::string_view code) : code_(code) {
    if (!well_formed_code(code)) {
        throw InvalidArgument("malformed language code '" + code_ + "'");
    }
    if (!is_registered(code)) {
        throw InvalidArgument("unregistered language code '" + code_ + "'");
    }
}

LanguagePair LanguagePair::parse(std::string_view label) {
    const auto dash = label.find('-');
    if (dash == std::string_view::npos || label.find('-', dash + 1) != std::string_view::npos) {
        throw InvalidArgument("language pair must look like 'es-gn', got '" + std::string(label) + "'");
    }
    return {LanguageCode(label.substr(0, dash)), LanguageCode(label.substr(dash + 1))};
}

void Corpus::add(SentencePair sp) {
    if (sp.pair != pair_) {
        throw PairMismatch("pair " + sp.pair.label() + " added to corpus " + pair_.label());
    }
    if (sp.provenance.empty()) {
        throw InvalidArgument("sentence pair without provenance");
    }
    if (is_blank(sp.source) || is_blank(sp.target)) {
        throw InvalidArgument("blank segment in sentence pair");
    }
    pairs_.push_back(std::move(sp));
}

void Corpus::add(std::string source, std::string target, std::string provenance) {
    add(SentencePair{std::move(source), std::move(target), pair_, std::move(provenance)});
}

void Manifest::add(const LanguagePair& pair, const std::string& provenance, std::size_t count) {
    counts_[pair][provenance] += count;
}

void Manifest::add(const Corpus& corpus) {
    // Materialize the pair entry even for an empty corpus.
    auto& per = counts_[corpus.pair()];
    for (const auto& sp : corpus.pairs()) {
        per[sp.provenance] += 1;
    }
}

std::size_t Manifest::count(const LanguagePair& pair, const std::string& provenance) const {
    const auto it = counts_.find(pair);
    if (it == counts_.end()) {
        return 0;
    }
    const auto jt = it->second.find(provenance);
    return jt == it->second.end() ? 0 : jt->second;
}

std::size_t Manifest::total(const LanguagePair& pair) const {
    const auto it = counts_.find(pair);
    if (it == counts_.end()) {
        return 0;
    }
    std::size_t sum = 0;
    for (const auto& [prov, n] : it->second) {
        sum += n;
    }
    return sum;
}

std::size_t Manifest::total() const {
    std::size_t sum = 0;
    for (const auto& [pair, per] : counts_) {
        sum += total(pair);
    }
    return sum;
}

std::vector<LanguagePair> Manifest::pairs() const {
    std::vector<LanguagePair> out;
    out.reserve(counts_.size());
    for (const auto& [pair, per] : counts_) {
        out.push_back(pair);
    }
    return out;
}

Manifest Manifest::without_provenance(const std::string& provenance) const {
    Manifest m;
    for (const auto& [pair, per] : counts_) {
        auto& dst = m.counts_[pair];
        for (const auto& [prov, n] : per) {
            if (prov != provenance) {
                dst[prov] = n;
            }
        }
    }
    return m;
}

Manifest Manifest::only_pair(const LanguagePair& pair) const {
    Manifest m;
    if (const auto it = counts_.find(pair); it != counts_.end()) {
        m.counts_[pair] = it->second;
    }
    return m;
}

nlohmann::ordered_json Manifest::to_json() const {
    nlohmann::ordered_json entries = nlohmann::ordered_json::array();
    nlohmann::ordered_json totals = nlohmann::ordered_json::array();
    for (const auto& [pair, per] : counts_) {
        for (const auto& [prov, n] : per) {
            entries.push_back({{"language", pair.target.str()},
                               {"source_language", pair.source.str()},
                               {"provenance", prov},
                               {"count", n}});
        }
        totals.push_back(
            {{"language", pair.target.str()}, {"source_language", pair.source.str()}, {"count", total(pair)}});
    }
    nlohmann::ordered_json j;
    j["entries"] = std::move(entries);
    j["totals"] = std::move(totals);
    j["total"] = total();
    return j;
}

Manifest Manifest::from_json(const nlohmann::json& j) {
    Manifest m;
    for (const auto& e : j.at("entries")) {
        const LanguagePair pair{LanguageCode(e.at("source_language").get<std::string>()),
                                LanguageCode(e.at("language").get<std::string>())};
        m.add(pair, e.at("provenance").get<std::string>(), e.at("count").get<std::size_t>());
    }
    if (j.contains("totals")) {
        for (const auto& t : j.at("totals")) {
            const LanguagePair pair{LanguageCode(t.at("source_language").get<std::string>()),
                                    LanguageCode(t.at("language").get<std::string>())};
            if (m.total(pair) != t.at("count").get<std::size_t>()) {
                throw InvalidArgument("manifest total for " + pair.label() + " does not match its entries");
            }
        }
    }
    return m;
}

Manifest manifest_of(std::span<const Corpus> corpora) {
    Manifest m;
    for (const auto& c : corpora) {
        m.add(c);
    }
    return m;
}

std::size_t AuditReport::overlap(std::size_t a, std::size_t b) const {
    if (a > b) {
        std::swap(a, b);
    }
    for (const auto& o : overlaps) {
        if (o.a == a && o.b == b) {
            return o.count;
        }
    }
    return 0;
}

nlohmann::ordered_json AuditReport::to_json() const {
    nlohmann::ordered_json dups = nlohmann::ordered_json::array();
    for (const auto& d : duplicates) {
        dups.push_back({{"corpus", d.corpus}, {"label", d.label}, {"duplicates", d.duplicates}});
    }
    nlohmann::ordered_json ovs = nlohmann::ordered_json::array();
    for (const auto& o : overlaps) {
        ovs.push_back({{"a", o.a}, {"b", o.b}, {"count", o.count}});
    }
    nlohmann::ordered_json j;
    j["duplicates"] = std::move(dups);
    j["overlaps"] = std::move(ovs);
    return j;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
    std::vector<std::string> lines = split_lines(read_file(path));
    for (std::size_t i = 0; i < lines.size(); ++i) {
        try {
            lines[i] = unicode::nfc(lines[i]);
        } catch (const EncodingError& e) {
            throw EncodingError(path.string() + ":" + std::to_string(i + 1) + ": " + e.what());
        }
    }
    return lines;
}

void write_lines(const std::vector<std::string>& lines, const std::filesystem::path& path) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    for (const auto& line : lines) {
        out << line << '\n';
    }
}

Corpus load_parallel(const std::filesystem::path& src_path, const std::filesystem::path& tgt_path,
                     const LanguagePair& pair, const std::string& provenance) {
    auto src = read_lines(src_path);
    auto tgt = read_lines(tgt_path);
    if (src.size() != tgt.size()) {
        throw AlignmentMismatch(src_path.string() + " has " + std::to_string(src.size()) + " lines, " +
                                tgt_path.string() + " has " + std::to_string(tgt.size()));
    }
    Corpus corpus(pair);
    for (std::size_t i = 0; i < src.size(); ++i) {
        if (is_blank(src[i]) || is_blank(tgt[i])) {
            throw InvalidArgument("blank segment at line " + std::to_string(i + 1) + " of " + src_path.string());
        }
        corpus.add(std::move(src[i]), std::move(tgt[i]), provenance);
    }
    return corpus;
}

void write_parallel(const Corpus& corpus, const std::filesystem::path& src_path,
                    const std::filesystem::path& tgt_path) {
    std::vector<std::string> src;
    std::vector<std::string> tgt;
    src.reserve(corpus.size());
    tgt.reserve(corpus.size());
    for (const auto& sp : corpus.pairs()) {
        src.push_back(sp.source);
        tgt.push_back(sp.target);
    }
    write_lines(src, src_path);
    write_lines(tgt, tgt_path);
}

std::string detokenize(std::string_view text) {
    const std::u32string cps = unicode::decode(text);
    std::vector<std::u32string> tokens;
    std::u32string current;
    for (char32_t c : cps) {
        if (unicode::is_space(c)) {
            if (!current.empty()) {
                tokens.push_back(std::move(current));
                current.clear();
            }
        } else {
            current.push_back(c);
        }
    }
    if (!current.empty()) {
        tokens.push_back(std::move(current));
    }

    // attach[i]: whether token i glues to its left / right neighbour.
    std::vector<bool> glue_left(tokens.size(), false);
    std::vector<bool> glue_right(tokens.size(), false);
    bool quote_open = false;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const auto& tok = tokens[i];
        if (tok == U"\"") {
            if (quote_open) {
                glue_left[i] = true;
            } else {
                glue_right[i] = true;
            }
            quote_open = !quote_open;
        } else if (all_of_set(tok, kClosing)) {
            glue_left[i] = true;
        } else if (all_of_set(tok, kOpening)) {
            glue_right[i] = true;
        }
    }

    std::u32string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i > 0 && !glue_left[i] && !glue_right[i - 1]) {
            out.push_back(U' ');
        }
        out += tokens[i];
    }
    return unicode::encode(out);
}

CharTable parse_char_table(std::string_view tsv) {
    CharTable table;
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start <= tsv.size()) {
        std::size_t nl = tsv.find('\n', start);
        if (nl == std::string_view::npos) {
            nl = tsv.size();
        }
        std::string_view line = tsv.substr(start, nl - start);
        start = nl + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.remove_suffix(1);
        }
        if (line.empty() || line.front() == '#') {
            continue;
        }
        const auto tab = line.find('\t');
        if (tab == std::string_view::npos) {
            throw InvalidArgument("char table line " + std::to_string(line_no) + " lacks a tab");
        }
        const std::u32string from = unicode::decode(line.substr(0, tab));
        const std::u32string to = unicode::decode(line.substr(tab + 1));
        if (from.size() != 1 || to.size() != 1) {
            throw InvalidArgument("char table line " + std::to_string(line_no) + " must map one character to one");
        }
        table[from[0]] = to[0];
    }
    return table;
}

CharTable load_char_table(const std::filesystem::path& path) {
    return parse_char_table(read_file(path));
}

nlohmann::ordered_json PunctReport::to_json() const {
    auto dump = [](const std::map<char32_t, std::size_t>& m) {
        nlohmann::ordered_json j = nlohmann::ordered_json::object();
        for (const auto& [c, n] : m) {
            j[unicode::encode(c)] = n;
        }
        return j;
    };
    nlohmann::ordered_json j;
    j["replaced"] = dump(replaced);
    j["unmapped"] = dump(unmapped);
    return j;
}

std::pair<std::string, PunctReport> map_unsupported_punct(std::string_view text,
                                                          const std::unordered_set<char32_t>& inventory,
                                                          const CharTable& mapping) {
    std::u32string cps = unicode::decode(text);
    PunctReport report;
    for (char32_t& c : cps) {
        if (inventory.contains(c)) {
            continue;
        }
        if (const auto it = mapping.find(c); it != mapping.end()) {
            report.replaced[c] += 1;
            c = it->second;
        } else {
            report.unmapped[c] += 1;
        }
    }
    return {unicode::encode(cps), std::move(report)};
}

ToneTable::ToneTable(CharTable superscript_to_standard) : forward_(std::move(superscript_to_standard)) {
    for (const auto& [sup, std_char] : forward_) {
        if (!reverse_.emplace(std_char, sup).second) {
            throw InvalidArgument("tone table is not injective: two entries map to U+" +
                                  std::to_string(static_cast<uint32_t>(std_char)));
        }
        if (forward_.contains(std_char)) {
            throw InvalidArgument("tone table maps onto one of its own superscript characters");
        }
    }
}

const ToneTable& ToneTable::default_table() {
    static const ToneTable table([] {
        CharTable t;
        t[U'⁰'] = U'0';
        for (char32_t d = 4; d <= 9; ++d) {
            t[U'⁰' + d] = U'0' + d;
        }
        t[U'¹'] = U'1';
        t[U'²'] = U'2';
        t[U'³'] = U'3';
        // Modifier capital letters and their base letters.
        const std::pair<char32_t, char32_t> letters[] = {
            {U'ᴬ', U'A'},      {U'ᴭ', U'Æ'}, {U'ᴮ', U'B'}, {U'ᴯ', U'Ƀ'},
            {U'ᴰ', U'D'},      {U'ᴱ', U'E'},      {U'ᴲ', U'Ǝ'}, {U'ᴳ', U'G'},
            {U'ᴴ', U'H'},      {U'ᴵ', U'I'},      {U'ᴶ', U'J'}, {U'ᴷ', U'K'},
            {U'ᴸ', U'L'},      {U'ᴹ', U'M'},      {U'ᴺ', U'N'}, {U'ᴻ', U'ᴎ'},
            {U'ᴼ', U'O'},      {U'ᴽ', U'Ȣ'}, {U'ᴾ', U'P'}, {U'ᴿ', U'R'},
            {U'ᵀ', U'T'},      {U'ᵁ', U'U'},      {U'ᵂ', U'W'},
        };
        for (const auto& [sup, base] : letters) {
            t[sup] = base;
        }
        return t;
    }());
    return table;
}

std::string czn_normalize(std::string_view text, const ToneTable& table) {
    return transform_word_final_runs(text, table.forward());
}

std::string czn_restore(std::string_view text, const ToneTable& table) {
    return transform_word_final_runs(text, table.reverse());
}

AuditReport audit(std::span<const Corpus> corpora) {
    AuditReport report;
    std::vector<std::set<std::string>> distinct(corpora.size());
    for (std::size_t i = 0; i < corpora.size(); ++i) {
        for (const auto& sp : corpora[i].pairs()) {
            distinct[i].insert(key_of(SentencePair{unicode::nfc(sp.source), unicode::nfc(sp.target), sp.pair, sp.provenance}));
        }
        std::string label = corpora[i].pair().label();
        if (!corpora[i].empty()) {
            label += "/" + corpora[i][0].provenance;
        }
        report.duplicates.push_back({i, std::move(label), corpora[i].size() - distinct[i].size()});
    }
    for (std::size_t a = 0; a < corpora.size(); ++a) {
        report.overlaps.push_back({a, a, distinct[a].size()});
        for (std::size_t b = a + 1; b < corpora.size(); ++b) {
            const auto& small = distinct[a].size() <= distinct[b].size() ? distinct[a] : distinct[b];
            const auto& large = distinct[a].size() <= distinct[b].size() ? distinct[b] : distinct[a];
            std::size_t shared = 0;
            for (const auto& key : small) {
                shared += large.contains(key) ? 1 : 0;
            }
            report.overlaps.push_back({a, b, shared});
        }
    }
    return report;
}

std::pair<Corpus, Manifest> merge(std::span<const Corpus> corpora, bool dedup) {
    if (corpora.empty()) {
        throw InvalidArgument("merge needs at least one corpus");
    }
    const LanguagePair pair = corpora.front().pair();
    for (const auto& c : corpora) {
        if (c.pair() != pair) {
            throw PairMismatch("cannot merge " + c.pair().label() + " into " + pair.label());
        }
    }
    Corpus merged(pair);
    std::set<std::string> seen;
    for (const auto& c : corpora) {
        for (const auto& sp : c.pairs()) {
            if (dedup && !seen.insert(key_of(sp)).second) {
                continue;
            }
            merged.add(sp);
        }
    }
    Manifest manifest;
    manifest.add(merged);
    return {std::move(merged), std::move(manifest)};
}

}  // namespace deskmt::corpus
