#include "deskmt/pipeline.hpp"

#include "deskmt/error.hpp"
#include "deskmt/metrics.hpp"
#include "deskmt/report.hpp"
#include "deskmt/sampler.hpp"

#include <algorithm>
#include <fstream>
#include <regex>
#include <sstream>

namespace deskmt::pipeline {

namespace fs = std::filesystem;
using corpus::Corpus;
using corpus::LanguageCode;
using corpus::LanguagePair;

namespace {

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

nlohmann::ordered_json rounded_scores(const std::map<std::string, double>& scores, int decimals) {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& [k, v] : scores) j[k] = report::round_to(v, decimals);
    return j;
}

// One corpus per language pair, provenance order preserved.
std::vector<Corpus> group_by_pair(const std::vector<Corpus>& corpora) {
    std::map<LanguagePair, std::vector<Corpus>> groups;
    for (const auto& c : corpora) {
        if (!c.empty()) groups[c.pair()].push_back(c);
    }
    std::vector<Corpus> out;
    for (auto& [pair, list] : groups) out.push_back(corpus::merge(list, false).first);
    return out;
}

std::optional<std::pair<long long, fs::path>> latest_checkpoint(const fs::path& dir) {
    if (!fs::exists(dir)) return std::nullopt;
    static const std::regex pattern(R"(step-(\d+)\.ckpt)");
    std::optional<std::pair<long long, fs::path>> best;
    for (const auto& entry : fs::directory_iterator(dir)) {
        std::smatch m;
        const std::string name = entry.path().filename().string();
        if (std::regex_match(name, m, pattern)) {
            const long long step = std::stoll(m[1].str());
            if (!best || step > best->first) best = {step, entry.path()};
        }
    }
    return best;
}

std::vector<Snapshot> read_snapshots(const fs::path& path) {
    std::vector<Snapshot> out;
    if (!fs::exists(path)) return out;
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) out.push_back(Snapshot::from_json(nlohmann::json::parse(line)));
    }
    return out;
}

std::string snapshot_lines(const std::vector<Snapshot>& snaps) {
    std::string text;
    for (const auto& s : snaps) text += s.to_json().dump() + "\n";
    return text;
}

double dev_loss(const model::Checkpoint& ck, std::span<const DevSet> dev, double label_smoothing) {
    double total = 0.0;
    std::size_t tokens = 0;
    for (const auto& d : dev) {
        std::vector<codec::EncodedPair> enc;
        for (std::size_t i = 0; i < d.sources.size(); ++i) {
            enc.push_back(codec::encode_pair({d.sources[i], d.references[i], d.pair, "dev"}, ck.vocab));
        }
        for (std::size_t start = 0; start < enc.size(); start += 32) {
            const std::size_t n = std::min<std::size_t>(32, enc.size() - start);
            const auto batch = model::Transformer::make_batch(std::span(enc).subspan(start, n));
            std::size_t count = 0;
            for (int t : batch.tgt_out) count += t != codec::Vocabulary::kPad ? 1 : 0;
            total += ck.state.model.loss(batch, label_smoothing) * static_cast<double>(count);
            tokens += count;
        }
    }
    return tokens == 0 ? 0.0 : total / static_cast<double>(tokens);
}

std::shared_ptr<const model::Checkpoint> borrow(const model::Checkpoint& ck) {
    return std::shared_ptr<const model::Checkpoint>(&ck, [](const model::Checkpoint*) {});
}

nlohmann::ordered_json choice_json(const Choice& c) {
    nlohmann::ordered_json j;
    j["run_id"] = c.run_id;
    j["step"] = c.step;
    j["checkpoints"] = c.checkpoints;
    if (!c.candidate.empty()) j["candidate"] = c.candidate;
    j["score"] = report::score_precision(c.score);
    return j;
}

}  // namespace

// ---------------------------------------------------------------- dev sets

DevSet DevSet::from_corpus(const Corpus& c) {
    DevSet d{c.pair(), {}, {}};
    for (const auto& sp : c.pairs()) {
        d.sources.push_back(sp.source);
        d.references.push_back(sp.target);
    }
    return d;
}

std::map<std::string, double> evaluate(const decode::Ensemble& ensemble, const decode::SearchOptions& search,
                                       std::span<const DevSet> dev, unsigned jobs) {
    std::map<std::string, double> scores;
    for (const auto& d : dev) {
        const auto hyps = decode::translate_corpus(ensemble, search, d.sources, d.pair.target, jobs);
        scores[d.key()] = metrics::corpus_chrf(hyps, d.references, {}, jobs).score;
    }
    return scores;
}

// ---------------------------------------------------------------- records

nlohmann::ordered_json Snapshot::to_json() const {
    nlohmann::ordered_json j;
    j["step"] = step;
    nlohmann::ordered_json scores = nlohmann::ordered_json::object();
    for (const auto& [k, v] : chrf) scores[k] = v;
    j["chrf"] = std::move(scores);
    j["mean"] = mean;
    j["dev_loss"] = dev_loss;
    j["train_loss"] = train_loss;
    j["checkpoint"] = checkpoint;
    return j;
}

Snapshot Snapshot::from_json(const nlohmann::json& j) {
    Snapshot s;
    s.step = j.at("step").get<long long>();
    s.chrf = j.at("chrf").get<std::map<std::string, double>>();
    s.mean = j.at("mean").get<double>();
    s.dev_loss = j.value("dev_loss", 0.0);
    s.train_loss = j.value("train_loss", 0.0);
    s.checkpoint = j.value("checkpoint", std::string());
    return s;
}

nlohmann::ordered_json RunRecord::to_json() const {
    nlohmann::ordered_json snaps = nlohmann::ordered_json::array();
    for (const auto& s : snapshots) {
        auto j = s.to_json();
        j["chrf"] = rounded_scores(s.chrf, 4);
        j["mean"] = report::score_precision(s.mean);
        snaps.push_back(std::move(j));
    }
    return {{"run_id", run_id}, {"config", config}, {"manifest", manifest.to_json()}, {"snapshots", std::move(snaps)}};
}

RunRecord RunRecord::load(const fs::path& dir) {
    RunRecord r;
    r.dir = dir;
    r.config = nlohmann::ordered_json::parse(read_text(dir / "config.json"));
    r.run_id = r.config.value("run_id", dir.filename().string());
    r.manifest = corpus::Manifest::from_json(nlohmann::json::parse(read_text(dir / "manifest.json")));
    r.snapshots = read_snapshots(dir / "snapshots.jsonl");
    return r;
}

RunConfig RunConfig::load(const fs::path& path) {
    const auto j = nlohmann::json::parse(read_text(path));
    const fs::path base = path.parent_path();
    auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };

    RunConfig c;
    c.run_id = j.value("run_id", path.stem().string());
    auto train = (j.value("profile", std::string("desk")) == "desk" ? model::TrainConfig::desk_profile()
                                                                   : model::TrainConfig{})
                     .to_json();
    if (j.contains("train")) {
        for (const auto& [k, v] : j.at("train").items()) train[k] = v;
    }
    c.train = model::TrainConfig::from_json(train);
    if (j.contains("shape")) c.shape = model::TransformerShape::from_json(j.at("shape"));
    if (j.contains("init_from")) c.init_from = resolve(j.at("init_from").get<std::string>());
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        c.eval_search.beam_size = e.value("beam_size", c.train.beam_size);
        c.eval_search.max_len = e.value("max_len", c.eval_search.max_len);
    } else {
        c.eval_search.beam_size = c.train.beam_size;
    }
    const auto excluded = j.value("exclude_provenance", std::vector<std::string>{});
    const auto& data = j.at("data");
    for (const auto& e : data.at("train")) {
        const LanguagePair pair{LanguageCode(e.at("source_language").get<std::string>()),
                                LanguageCode(e.at("target_language").get<std::string>())};
        const std::string prov = e.value("provenance", std::string(corpus::provenance::anlp23));
        if (std::find(excluded.begin(), excluded.end(), prov) != excluded.end()) continue;
        c.corpora.push_back(corpus::load_parallel(resolve(e.at("src")), resolve(e.at("tgt")), pair, prov));
    }
    for (const auto& e : data.value("dev", nlohmann::json::array())) {
        const LanguagePair pair{LanguageCode(e.at("source_language").get<std::string>()),
                                LanguageCode(e.at("target_language").get<std::string>())};
        c.dev.push_back(DevSet::from_corpus(corpus::load_parallel(resolve(e.at("src")), resolve(e.at("tgt")), pair, "dev")));
    }
    return c;
}

// ---------------------------------------------------------------- training

RunRecord train_run(const RunConfig& config, const fs::path& dir) {
    config.train.validate();
    config.eval_search.validate();
    const auto grouped = group_by_pair(config.corpora);
    if (grouped.empty()) throw EmptyCorpus("training run has no sentence pairs");
    if (config.dev.empty()) throw InvalidArgument("training run needs at least one dev set");
    for (const auto& d : config.dev) {
        if (d.sources.size() != d.references.size() || d.sources.empty()) {
            throw AlignmentMismatch("dev set " + d.pair.label() + " is empty or misaligned");
        }
    }
    const auto manifest = corpus::manifest_of(config.corpora);
    const auto dist = sampler::pair_distribution(manifest, config.train.pair_temperature);
    const auto& tc = config.train;

    // Fresh initial state; replaced below when resuming.
    std::optional<model::Checkpoint> ck;
    if (config.init_from) {
        auto pre = model::Checkpoint::load(*config.init_from);
        std::set<std::string> tags;
        for (const auto& c : grouped) {
            tags.insert(c.pair().source.str());
            tags.insert(c.pair().target.str());
        }
        const auto vocab = codec::extend_with_tags(pre.vocab, tags);
        auto ext = vocab.size() == pre.vocab.size() ? std::move(pre)
                                                    : model::extend_embeddings(pre, vocab, {0.01, tc.seed});
        ext.config = tc;
        ext.state.step = 0;
        ext.state.adam = model::AdamState::zeros_like(ext.state.model.params());
        ext.state.rng = Rng(tc.seed);
        ext.meta = nlohmann::ordered_json::object();
        ck = std::move(ext);
    } else {
        ck = model::init_random(config.shape, codec::build_vocab(grouped), tc.seed, tc);
    }
    for (const auto& d : config.dev) (void)ck->vocab.tag_id(d.pair.target);

    nlohmann::ordered_json echo;
    echo["run_id"] = config.run_id;
    echo["train"] = tc.to_json();
    echo["shape"] = ck->shape.to_json();
    echo["init_from"] = config.init_from ? nlohmann::ordered_json(config.init_from->string()) : nlohmann::ordered_json();
    echo["eval"] = {{"beam_size", config.eval_search.beam_size}, {"max_len", config.eval_search.max_len}};
    echo["sampling"] = dist.to_json();
    const model::TrainConfig published;
    echo["metadata"] = {
        {"validation", "every valid_freq updates and after the final update; sampled training has no epochs"},
        {"overrides", tc.overrides()},
        {"step_scale",
         {{"warmup_steps", static_cast<double>(tc.warmup_steps) / static_cast<double>(published.warmup_steps)},
          {"max_updates", static_cast<double>(tc.max_updates) / static_cast<double>(published.max_updates)}}},
        {"threads", 1},
        {"vocab_fingerprint", ck->vocab.fingerprint()},
        {"vocab_size", ck->vocab.size()}};
    const std::string config_text = report::emit(echo);

    fs::create_directories(dir / "checkpoints");
    fs::create_directories(dir / "reports");
    const fs::path config_path = dir / "config.json";
    const fs::path snap_path = dir / "snapshots.jsonl";
    std::vector<Snapshot> snapshots;
    if (fs::exists(config_path) && read_text(config_path) != config_text) {
        throw InvalidArgument(dir.string() + " already holds a run with a different configuration");
    }
    if (const auto latest = latest_checkpoint(dir / "checkpoints")) {
        ck = model::Checkpoint::load(latest->second, ck->vocab.fingerprint());
        for (const auto& s : read_snapshots(snap_path)) {
            if (s.step <= ck->state.step) snapshots.push_back(s);
        }
    }
    write_text(config_path, config_text);
    write_text(dir / "manifest.json", report::emit(manifest.to_json()));
    write_text(snap_path, snapshot_lines(snapshots));

    RunRecord record{config.run_id, echo, manifest, snapshots, dir};

    double loss_sum = 0.0;
    long long loss_count = 0;
    while (ck->state.step < tc.max_updates) {
        if (config.stop_after && ck->state.step >= *config.stop_after) {
            record.snapshots = snapshots;
            return record;
        }
        std::vector<model::Transformer::Batch> batches;
        for (int k = 0; k < tc.update_freq; ++k) {
            const auto drawn = sampler::draw_batch(ck->state.rng, grouped, dist, static_cast<std::size_t>(tc.batch_size));
            std::vector<codec::EncodedPair> enc;
            enc.reserve(drawn.examples.size());
            for (const auto& sp : drawn.examples) enc.push_back(codec::encode_pair(sp, ck->vocab));
            batches.push_back(model::Transformer::make_batch(enc));
        }
        try {
            const auto metrics = model::train_step(ck->state, batches, tc);
            loss_sum += metrics.loss;
            ++loss_count;
        } catch (const NonFiniteLoss&) {
            // train_step leaves parameters untouched when it throws.
            ck->save(dir / "checkpoints" / ("nonfinite-step-" + std::to_string(ck->state.step) + ".ckpt"));
            throw;
        }

        const long long step = ck->state.step;
        if (step % tc.valid_freq == 0 || step == tc.max_updates) {
            decode::Ensemble self({borrow(*ck)});
            Snapshot s;
            s.step = step;
            s.chrf = evaluate(self, config.eval_search, config.dev, config.jobs);
            s.mean = metrics::macro_mean(s.chrf);
            s.dev_loss = dev_loss(*ck, config.dev, tc.label_smoothing);
            s.train_loss = loss_count > 0 ? loss_sum / static_cast<double>(loss_count) : 0.0;
            s.checkpoint = "checkpoints/step-" + std::to_string(step) + ".ckpt";
            ck->meta = {{"run_id", config.run_id}, {"step", step}};
            ck->save(dir / s.checkpoint);
            snapshots.push_back(s);
            std::ofstream(snap_path, std::ios::app | std::ios::binary) << s.to_json().dump() << "\n";
            loss_sum = 0.0;
            loss_count = 0;
        }
    }
    record.snapshots = snapshots;
    write_text(dir / "reports" / "run.json", report::emit(record.to_json()));
    return record;
}

// ---------------------------------------------------------------- selection

const Choice* SelectionReport::find(const std::string& language) const {
    for (const auto& c : choices) {
        if (c.language == language) return &c;
    }
    return nullptr;
}

double SelectionReport::mean() const {
    if (choices.empty()) return 0.0;
    std::map<std::string, double> scores;
    for (const auto& c : choices) scores[c.language] = c.score;
    return metrics::macro_mean(scores);
}

nlohmann::ordered_json SelectionReport::to_json() const {
    nlohmann::ordered_json j;
    j["strategy"] = strategy;
    nlohmann::ordered_json map = nlohmann::ordered_json::object();
    for (const auto& c : choices) map[c.language] = choice_json(c);
    j["choices"] = std::move(map);
    j["mean"] = report::score_precision(mean());
    j["differs_from_best_mean"] = differs_from_best_mean;
    if (strategy == "ensemble") j["adopted"] = adopted;
    return j;
}

SelectionReport select_best_mean(const RunRecord& run) {
    return select_best_mean(std::span(&run, 1));
}

SelectionReport select_best_mean(std::span<const RunRecord> runs) {
    SelectionReport r;
    r.strategy = "best_mean";
    const RunRecord* best_run = nullptr;
    const Snapshot* best = nullptr;
    for (const auto& run : runs) {
        for (const auto& s : run.snapshots) {
            if (best == nullptr || s.mean > best->mean) {
                best = &s;
                best_run = &run;
            }
        }
    }
    if (best == nullptr) return r;
    for (const auto& [lang, score] : best->chrf) {
        r.choices.push_back({lang, best_run->run_id, best->step, {(best_run->dir / best->checkpoint).string()}, "", score});
    }
    return r;
}

SelectionReport select_best_per_language(std::span<const RunRecord> runs) {
    SelectionReport r;
    r.strategy = "best_per_language";
    const auto mean_choice = select_best_mean(runs);
    std::set<std::string> languages;
    for (const auto& run : runs) {
        for (const auto& s : run.snapshots) {
            for (const auto& [lang, v] : s.chrf) languages.insert(lang);
        }
    }
    for (const auto& lang : languages) {
        const RunRecord* best_run = nullptr;
        const Snapshot* best = nullptr;
        for (const auto& run : runs) {
            for (const auto& s : run.snapshots) {
                const auto it = s.chrf.find(lang);
                if (it != s.chrf.end() && (best == nullptr || it->second > best->chrf.at(lang))) {
                    best = &s;
                    best_run = &run;
                }
            }
        }
        r.choices.push_back(
            {lang, best_run->run_id, best->step, {(best_run->dir / best->checkpoint).string()}, "", best->chrf.at(lang)});
        const Choice* m = mean_choice.find(lang);
        if (m == nullptr || m->run_id != best_run->run_id || m->step != best->step) {
            r.differs_from_best_mean.push_back(lang);
        }
    }
    return r;
}

SelectionReport pick_ensembles(const CandidateScores& scored, const SelectionReport& baseline) {
    SelectionReport r = baseline;
    r.strategy = "ensemble";
    r.adopted.clear();
    for (auto& choice : r.choices) {
        const std::pair<EnsembleCandidate, std::map<std::string, double>>* best = nullptr;
        for (const auto& entry : scored) {
            const auto it = entry.second.find(choice.language);
            if (it != entry.second.end() && (best == nullptr || it->second > best->second.at(choice.language))) {
                best = &entry;
            }
        }
        if (best != nullptr && best->second.at(choice.language) > choice.score) {
            choice.candidate = best->first.name;
            choice.run_id.clear();
            choice.step = 0;
            choice.checkpoints = best->first.ensemble ? best->first.ensemble->member_ids() : std::vector<std::string>{};
            choice.score = best->second.at(choice.language);
            r.adopted.push_back(choice.language);
        }
    }
    return r;
}

SelectionReport pick_ensembles(const std::vector<EnsembleCandidate>& candidates, const SelectionReport& baseline,
                               std::span<const DevSet> dev, unsigned jobs) {
    CandidateScores scored;
    for (const auto& c : candidates) {
        if (!c.ensemble) throw InvalidArgument("candidate " + c.name + " has no ensemble");
        scored.emplace_back(c, evaluate(*c.ensemble, c.search, dev, jobs));
    }
    return pick_ensembles(scored, baseline);
}

// ---------------------------------------------------------------- backtranslation

nlohmann::ordered_json BacktranslationResult::to_json() const {
    nlohmann::ordered_json errs = nlohmann::ordered_json::array();
    for (const auto& e : errors) errs.push_back({{"index", e.index}, {"message", e.message}});
    return {{"pair", merged.pair().label()},
            {"reverse_checkpoint", reverse_checkpoint},
            {"synthetic", synthetic},
            {"merged", merged.size()},
            {"manifest", manifest.to_json()},
            {"errors", std::move(errs)}};
}

BacktranslationResult backtranslate_expand(const std::vector<std::string>& mono, const decode::Ensemble& reverse,
                                           const decode::SearchOptions& search, const Corpus& base, unsigned jobs) {
    std::vector<decode::SegmentError> errors;
    const auto hyps = decode::translate_corpus(reverse, search, mono, base.pair().source, jobs, &errors);
    std::set<std::size_t> failed;
    for (const auto& e : errors) failed.insert(e.index);

    BacktranslationResult r{Corpus(base.pair()), {}, 0, {}, errors};
    for (const auto& sp : base.pairs()) r.merged.add(sp);
    for (std::size_t i = 0; i < mono.size(); ++i) {
        if (failed.contains(i)) continue;
        try {
            r.merged.add(hyps[i], mono[i], std::string(corpus::provenance::backtrans));
            ++r.synthetic;
        } catch (const InvalidArgument& e) {
            r.errors.push_back({i, e.what()});
        }
    }
    std::sort(r.errors.begin(), r.errors.end(), [](const auto& a, const auto& b) { return a.index < b.index; });
    const auto ids = reverse.member_ids();
    for (std::size_t i = 0; i < ids.size(); ++i) r.reverse_checkpoint += (i ? "+" : "") + ids[i];
    r.manifest = corpus::manifest_of(std::span(&r.merged, 1));
    return r;
}

// ---------------------------------------------------------------- zero-shot

nlohmann::ordered_json ZeroShotReport::to_json() const {
    nlohmann::ordered_json columns = {"model"};
    nlohmann::ordered_json row = {model};
    nlohmann::ordered_json dirs = nlohmann::ordered_json::array();
    for (const auto& d : directions) {
        columns.push_back(d.direction.label());
        row.push_back(report::table_precision(d.chrf));
        dirs.push_back({{"direction", d.direction.label()},
                        {"chrf", report::score_precision(d.chrf)},
                        {"empty_baseline", report::score_precision(d.empty_baseline)},
                        {"trained", d.trained},
                        {"segments", d.hypotheses.size()}});
    }
    return {{"columns", std::move(columns)}, {"rows", nlohmann::ordered_json::array({row})}, {"directions", std::move(dirs)}};
}

ZeroShotReport zero_shot_eval(const decode::Ensemble& model, const std::string& model_label,
                              const std::map<std::string, std::vector<std::string>>& multiparallel,
                              const std::vector<LanguagePair>& directions, const decode::SearchOptions& search,
                              const corpus::Manifest* trained, unsigned jobs) {
    std::optional<std::size_t> rows;
    for (const auto& [lang, col] : multiparallel) {
        if (rows && *rows != col.size()) throw AlignmentMismatch("multiparallel column " + lang + " has a different length");
        rows = col.size();
    }
    ZeroShotReport r{model_label, {}};
    for (const auto& dir : directions) {
        (void)model.vocab().tag_id(dir.target);
        const auto src = multiparallel.find(dir.source.str());
        const auto ref = multiparallel.find(dir.target.str());
        if (src == multiparallel.end() || ref == multiparallel.end()) {
            throw InvalidArgument("no multiparallel column for " + dir.label());
        }
        DirectionScore d{dir, 0.0, 0.0, false, {}};
        d.hypotheses = decode::translate_corpus(model, search, src->second, dir.target, jobs);
        d.chrf = metrics::corpus_chrf(d.hypotheses, ref->second, {}, jobs).score;
        d.empty_baseline = metrics::corpus_chrf(std::vector<std::string>(ref->second.size()), ref->second).score;
        d.trained = trained != nullptr && trained->total(dir) > 0;
        r.directions.push_back(std::move(d));
    }
    return r;
}

// ---------------------------------------------------------------- ablations

Toggle Toggle::parse(const std::string& text) {
    const auto colon = text.find(':');
    const std::string head = text.substr(0, colon);
    const std::string value = colon == std::string::npos ? "" : text.substr(colon + 1);
    if (head == "random_init" && value.empty()) return {Kind::random_init, ""};
    if (head == "single_language" && !value.empty()) return {Kind::single_language, LanguageCode(value).str()};
    if (head == "exclude_source" && !value.empty()) return {Kind::exclude_source, value};
    if (head == "include_source" && value.size() > 6 && value.ends_with("=false")) {
        return {Kind::exclude_source, value.substr(0, value.size() - 6)};
    }
    if (head == "freeze" && !value.empty()) return {Kind::freeze, model::FreezeScope::parse(value).str()};
    throw InvalidArgument("unknown ablation toggle '" + text + "'");
}

std::string Toggle::str() const {
    switch (kind) {
        case Kind::random_init:
            return "random_init";
        case Kind::single_language:
            return "single_language:" + value;
        case Kind::exclude_source:
            return "exclude_source:" + value;
        case Kind::freeze:
            return "freeze:" + value;
    }
    return "";
}

RunConfig apply_toggles(const RunConfig& base, const std::vector<Toggle>& toggles) {
    RunConfig c = base;
    for (const auto& t : toggles) {
        switch (t.kind) {
            case Toggle::Kind::random_init:
                c.init_from.reset();
                break;
            case Toggle::Kind::single_language: {
                std::erase_if(c.corpora, [&](const Corpus& x) { return x.pair().target.str() != t.value; });
                std::erase_if(c.dev, [&](const DevSet& d) { return d.key() != t.value; });
                if (c.corpora.empty() || c.dev.empty()) {
                    throw InvalidArgument("no training or dev data for language " + t.value);
                }
                break;
            }
            case Toggle::Kind::exclude_source: {
                std::vector<Corpus> kept;
                for (const auto& x : c.corpora) {
                    Corpus filtered(x.pair());
                    for (const auto& sp : x.pairs()) {
                        if (sp.provenance != t.value) filtered.add(sp);
                    }
                    if (!filtered.empty()) kept.push_back(std::move(filtered));
                }
                if (kept.empty()) throw InvalidArgument("excluding " + t.value + " leaves no training data");
                c.corpora = std::move(kept);
                break;
            }
            case Toggle::Kind::freeze:
                c.train.freeze_scope = model::FreezeScope::parse(t.value);
                break;
        }
    }
    return c;
}

std::optional<long long> AblationReport::updates_to_threshold(std::size_t i, const std::string& language) const {
    for (const auto& s : runs.at(i).snapshots) {
        const auto it = s.chrf.find(language);
        if (it != s.chrf.end() && it->second >= threshold) return s.step;
    }
    return std::nullopt;
}

nlohmann::ordered_json AblationReport::to_json() const {
    std::set<std::string> languages;
    for (const auto& run : runs) {
        for (const auto& s : run.snapshots) {
            for (const auto& [l, v] : s.chrf) languages.insert(l);
        }
    }
    nlohmann::ordered_json variants = nlohmann::ordered_json::array();
    nlohmann::ordered_json table_rows = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < runs.size(); ++i) {
        nlohmann::ordered_json at_steps = nlohmann::ordered_json::object();
        const Snapshot* last = nullptr;
        for (long long step : matched_steps) {
            for (const auto& s : runs[i].snapshots) {
                if (s.step != step) continue;
                auto scores = rounded_scores(s.chrf, 1);
                scores["mean"] = report::table_precision(s.mean);
                at_steps[std::to_string(step)] = std::move(scores);
                last = &s;
            }
        }
        nlohmann::ordered_json reach = nlohmann::ordered_json::object();
        for (const auto& l : languages) {
            const auto u = updates_to_threshold(i, l);
            reach[l] = u ? nlohmann::ordered_json(*u) : nlohmann::ordered_json();
        }
        variants.push_back({{"name", names[i]},
                            {"run_id", runs[i].run_id},
                            {"train_pairs", runs[i].manifest.total()},
                            {"scores", std::move(at_steps)},
                            {"updates_to_threshold", std::move(reach)}});
        nlohmann::ordered_json row = {names[i]};
        for (const auto& l : languages) {
            row.push_back(last && last->chrf.contains(l) ? nlohmann::ordered_json(report::table_precision(last->chrf.at(l)))
                                                         : nlohmann::ordered_json());
        }
        row.push_back(last ? nlohmann::ordered_json(report::table_precision(last->mean)) : nlohmann::ordered_json());
        table_rows.push_back(std::move(row));
    }
    nlohmann::ordered_json columns = {"variant"};
    for (const auto& l : languages) columns.push_back(l);
    columns.push_back("mean");
    return {{"threshold", threshold},
            {"matched_steps", matched_steps},
            {"table",
             {{"step", matched_steps.empty() ? nlohmann::ordered_json() : nlohmann::ordered_json(matched_steps.back())},
              {"columns", std::move(columns)},
              {"rows", std::move(table_rows)}}},
            {"variants", std::move(variants)}};
}

AblationReport ablation_run(const RunConfig& base, const std::vector<AblationVariant>& variants, const fs::path& dir,
                            double threshold) {
    AblationReport r;
    r.threshold = threshold;
    std::set<std::string> names;
    for (const auto& v : variants) {
        if (v.name.empty() || !names.insert(v.name).second) {
            throw InvalidArgument("ablation variant names must be nonempty and unique");
        }
    }
    for (const auto& v : variants) {
        RunConfig c = apply_toggles(base, v.toggles);
        c.run_id = v.name;
        r.runs.push_back(train_run(c, dir / v.name));
        r.names.push_back(v.name);
    }
    if (!r.runs.empty()) {
        for (const auto& s : r.runs.front().snapshots) {
            const bool everywhere = std::all_of(r.runs.begin(), r.runs.end(), [&](const RunRecord& run) {
                return std::any_of(run.snapshots.begin(), run.snapshots.end(),
                                   [&](const Snapshot& t) { return t.step == s.step; });
            });
            if (everywhere) r.matched_steps.push_back(s.step);
        }
    }
    write_text(dir / "reports" / "ablation.json", report::emit(r.to_json()));
    return r;
}

}  // namespace deskmt::pipeline
