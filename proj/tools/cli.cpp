#include "cli.hpp"

#include "deskmt/codec.hpp"
#include "deskmt/corpus.hpp"
#include "deskmt/decode.hpp"
#include "deskmt/error.hpp"
#include "deskmt/metrics.hpp"
#include "deskmt/model.hpp"
#include "deskmt/pipeline.hpp"
#include "deskmt/report.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>

namespace deskmt::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

const std::vector<std::string> kSubcommands = {"ingest",    "normalize", "audit",         "merge",  "vocab",
                                               "train",     "translate", "score",         "backtranslate",
                                               "select",    "zeroshot",  "ablate"};

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    unsigned jobs = 1;
    std::string out;
};

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
}

// "es-gn:anlp23:train.es:train.gn"
struct CorpusArg {
    corpus::LanguagePair pair;
    std::string provenance;
    fs::path src;
    fs::path tgt;
};

CorpusArg parse_corpus_arg(const std::string& text) {
    std::vector<std::string> parts;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ':')) parts.push_back(item);
    if (parts.size() != 4) throw InvalidArgument("corpus spec must be PAIR:PROVENANCE:SRC:TGT, got '" + text + "'");
    return {corpus::LanguagePair::parse(parts[0]), parts[1], parts[2], parts[3]};
}

std::vector<corpus::Corpus> load_corpora(const std::vector<std::string>& specs) {
    std::vector<corpus::Corpus> out;
    for (const auto& s : specs) {
        const auto a = parse_corpus_arg(s);
        out.push_back(corpus::load_parallel(a.src, a.tgt, a.pair, a.provenance));
    }
    return out;
}

// Appends `--key value` for JSON keys under the subcommand that are not already on the command line.
std::vector<std::string> with_config_defaults(std::vector<std::string> args, const std::string& config,
                                              const std::string& sub) {
    if (config.empty() || sub.empty() || sub == "train" || sub == "ablate") return args;
    const auto j = nlohmann::json::parse(read_file(config));
    if (!j.contains(sub)) return args;
    for (const auto& [key, value] : j.at(sub).items()) {
        const std::string flag = "--" + key;
        if (std::find(args.begin(), args.end(), flag) != args.end()) continue;
        if (value.is_boolean()) {
            if (value.get<bool>()) args.push_back(flag);
        } else if (value.is_array()) {
            for (const auto& v : value) {
                args.push_back(flag);
                args.push_back(v.is_string() ? v.get<std::string>() : v.dump());
            }
        } else {
            args.push_back(flag);
            args.push_back(value.is_string() ? value.get<std::string>() : value.dump());
        }
    }
    return args;
}

std::shared_ptr<const decode::Ensemble> load_ensemble(const std::string& spec_path,
                                                      const std::vector<std::string>& checkpoints,
                                                      decode::SearchOptions& search, const std::string& combine,
                                                      int beam, int max_len) {
    decode::EnsembleSpec spec;
    if (!spec_path.empty()) {
        spec = decode::EnsembleSpec::load(spec_path);
    }
    for (const auto& c : checkpoints) spec.members.emplace_back(c);
    if (!combine.empty()) spec.combine = decode::parse_combine(combine);
    if (beam > 0) spec.search.beam_size = beam;
    if (max_len > 0) spec.search.max_len = max_len;
    spec.validate();
    search = spec.search;
    return std::make_shared<const decode::Ensemble>(decode::Ensemble::load(spec));
}

struct EnsembleFlags {
    std::string spec;
    std::vector<std::string> checkpoints;
    std::string combine;
    int beam = 0;
    int max_len = 0;

    void attach(CLI::App* app) {
        app->add_option("--ensemble", spec, "Ensemble spec JSON");
        app->add_option("--checkpoint", checkpoints, "Member checkpoint (repeatable)");
        app->add_option("--combine", combine, "mean_logprob or mean_prob");
        app->add_option("--beam", beam, "Beam size");
        app->add_option("--max-len", max_len, "Maximum output tokens");
    }

    std::shared_ptr<const decode::Ensemble> load(decode::SearchOptions& search) const {
        if (spec.empty() && checkpoints.empty()) throw InvalidArgument("need --ensemble or --checkpoint");
        return load_ensemble(spec, checkpoints, search, combine, beam, max_len);
    }
};

ordered_json errors_json(const std::vector<decode::SegmentError>& errors) {
    ordered_json j = ordered_json::array();
    for (const auto& e : errors) j.push_back({{"index", e.index}, {"message", e.message}});
    return j;
}

}  // namespace

int dispatch(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
    // Locate --config and the subcommand before full parsing so config defaults can be injected.
    std::string config_path;
    std::string sub;
    for (std::size_t i = 1; i < raw_args.size(); ++i) {
        if (raw_args[i] == "--config" && i + 1 < raw_args.size()) {
            config_path = raw_args[i + 1];
            ++i;
        } else if (raw_args[i].rfind("--config=", 0) == 0) {
            config_path = raw_args[i].substr(9);
        } else if (sub.empty() && std::find(kSubcommands.begin(), kSubcommands.end(), raw_args[i]) != kSubcommands.end()) {
            sub = raw_args[i];
        }
    }

    CLI::App app{"Desk-scale multilingual MT toolkit", "deskmt"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config, "JSON config file");
    app.add_option("--seed", g.seed, "Random seed");
    app.add_option("--jobs", g.jobs, "Worker threads for scoring and decoding")->check(CLI::PositiveNumber);
    app.add_option("--out", g.out, "Output directory");

    // ingest
    auto* ingest = app.add_subcommand("ingest", "Load an aligned corpus, NFC-normalize it, and write it with a manifest");
    std::string in_src, in_tgt, in_pair, in_prov = "anlp23";
    ingest->add_option("--src", in_src)->required();
    ingest->add_option("--tgt", in_tgt)->required();
    ingest->add_option("--pair", in_pair, "e.g. es-gn")->required();
    ingest->add_option("--provenance", in_prov);

    // normalize
    auto* normalize = app.add_subcommand("normalize", "Detokenize, map punctuation, and convert czn tone marks");
    std::string nm_input, nm_output, nm_punct, nm_vocab;
    bool nm_detok = false, nm_czn = false, nm_restore = false;
    normalize->add_option("--input", nm_input)->required();
    normalize->add_option("--output", nm_output)->required();
    normalize->add_flag("--detokenize", nm_detok);
    normalize->add_flag("--czn-normalize", nm_czn);
    normalize->add_flag("--czn-restore", nm_restore);
    normalize->add_option("--punct-map", nm_punct, "TSV of replacement characters");
    normalize->add_option("--inventory", nm_vocab, "Vocabulary JSON whose characters are supported");

    // audit
    auto* audit = app.add_subcommand("audit", "Count duplicates and cross-corpus overlaps");
    std::vector<std::string> au_corpora;
    audit->add_option("--corpus", au_corpora, "PAIR:PROVENANCE:SRC:TGT")->required();

    // merge
    auto* merge = app.add_subcommand("merge", "Concatenate corpora of one language pair");
    std::vector<std::string> mg_corpora;
    std::string mg_src, mg_tgt;
    bool mg_dedup = false;
    merge->add_option("--corpus", mg_corpora, "PAIR:PROVENANCE:SRC:TGT")->required();
    merge->add_option("--out-src", mg_src)->required();
    merge->add_option("--out-tgt", mg_tgt)->required();
    merge->add_flag("--dedup", mg_dedup);

    // vocab
    auto* vocab = app.add_subcommand("vocab", "Build a character vocabulary with language tags");
    std::vector<std::string> vc_corpora, vc_tags;
    std::string vc_output;
    int vc_min = 1;
    vocab->add_option("--corpus", vc_corpora, "PAIR:PROVENANCE:SRC:TGT")->required();
    vocab->add_option("--tag", vc_tags, "Extra language tag");
    vocab->add_option("--min-count", vc_min);
    vocab->add_option("--output", vc_output)->required();

    // train
    auto* train = app.add_subcommand("train", "Train a model from a run config (--config)");
    long long tr_stop = 0;
    train->add_option("--stop-after", tr_stop, "Stop after this many updates (resumable)");

    // translate
    auto* translate = app.add_subcommand("translate", "Beam-search translation with one or more checkpoints");
    EnsembleFlags tl_flags;
    tl_flags.attach(translate);
    std::string tl_input, tl_output, tl_target;
    translate->add_option("--input", tl_input)->required();
    translate->add_option("--output", tl_output);
    translate->add_option("--target", tl_target, "Target language code")->required();

    // score
    auto* score = app.add_subcommand("score", "Corpus chrF of a hypothesis file against a reference file");
    std::string sc_hyp, sc_ref;
    metrics::ChrfParams sc_params;
    bool sc_keep_space = false, sc_no_eff = false;
    score->add_option("--hyp", sc_hyp)->required();
    score->add_option("--ref", sc_ref)->required();
    score->add_option("--char-order", sc_params.char_order);
    score->add_option("--beta", sc_params.beta);
    score->add_flag("--lowercase", sc_params.lowercase);
    score->add_flag("--keep-whitespace", sc_keep_space);
    score->add_flag("--no-effective-order", sc_no_eff);

    // backtranslate
    auto* bt = app.add_subcommand("backtranslate", "Expand a corpus with backtranslated monolingual text");
    EnsembleFlags bt_flags;
    bt_flags.attach(bt);
    std::string bt_mono, bt_base, bt_out_src, bt_out_tgt;
    bt->add_option("--mono", bt_mono, "Monolingual target-language text")->required();
    bt->add_option("--base", bt_base, "PAIR:PROVENANCE:SRC:TGT of the base corpus")->required();
    bt->add_option("--out-src", bt_out_src)->required();
    bt->add_option("--out-tgt", bt_out_tgt)->required();

    // select
    auto* select = app.add_subcommand("select", "Choose checkpoints or ensembles from run directories");
    std::vector<std::string> sl_runs, sl_dev;
    std::string sl_strategy = "best_mean", sl_candidates;
    select->add_option("--run", sl_runs, "Run directory (repeatable)")->required();
    select->add_option("--strategy", sl_strategy)->check(CLI::IsMember({"best_mean", "best_per_language", "ensemble"}));
    select->add_option("--candidates", sl_candidates, "JSON list of ensemble specs (strategy ensemble)");
    select->add_option("--dev", sl_dev, "PAIR:PROVENANCE:SRC:TGT dev set (strategy ensemble)");

    // zeroshot
    auto* zs = app.add_subcommand("zeroshot", "Score arbitrary directions on a multiparallel dev set");
    EnsembleFlags zs_flags;
    zs_flags.attach(zs);
    std::vector<std::string> zs_columns, zs_dirs;
    std::string zs_label = "model";
    zs->add_option("--column", zs_columns, "LANG=PATH (repeatable)")->required();
    zs->add_option("--direction", zs_dirs, "SRC-TGT (repeatable)")->required();
    zs->add_option("--label", zs_label);

    // ablate
    auto* ablate = app.add_subcommand("ablate", "Run ablation variants of a run config (--config)");
    std::vector<std::string> ab_variants;
    double ab_threshold = 80.0;
    ablate->add_option("--variant", ab_variants, "NAME=toggle,toggle (repeatable; empty toggles = baseline)")->required();
    ablate->add_option("--threshold", ab_threshold);

    std::vector<std::string> args;
    try {
        args = with_config_defaults(raw_args, config_path, sub);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    }

    try {
        if (ingest->parsed()) {
            const auto pair = corpus::LanguagePair::parse(in_pair);
            const auto c = corpus::load_parallel(in_src, in_tgt, pair, in_prov);
            const fs::path dir = g.out.empty() ? fs::path(".") : fs::path(g.out);
            const std::string stem = pair.label() + "." + in_prov;
            corpus::write_parallel(c, dir / (stem + "." + pair.source.str()), dir / (stem + "." + pair.target.str()));
            const std::string text = report::emit(corpus::manifest_of(std::span(&c, 1)).to_json());
            write_file(dir / (stem + ".manifest.json"), text);
            out << text;
        } else if (normalize->parsed()) {
            if (nm_czn && nm_restore) throw InvalidArgument("choose one of --czn-normalize and --czn-restore");
            std::optional<std::unordered_set<char32_t>> inventory;
            corpus::CharTable mapping;
            if (!nm_punct.empty()) {
                if (nm_vocab.empty()) throw InvalidArgument("--punct-map needs --inventory");
                mapping = corpus::load_char_table(nm_punct);
                inventory = codec::Vocabulary::load(nm_vocab).characters();
            }
            corpus::PunctReport total;
            std::vector<std::string> lines = corpus::read_lines(nm_input);
            for (auto& line : lines) {
                if (nm_detok) line = corpus::detokenize(line);
                if (inventory) {
                    auto [text, rep] = corpus::map_unsupported_punct(line, *inventory, mapping);
                    line = std::move(text);
                    for (const auto& [c, n] : rep.replaced) total.replaced[c] += n;
                    for (const auto& [c, n] : rep.unmapped) total.unmapped[c] += n;
                }
                if (nm_czn) line = corpus::czn_normalize(line);
                if (nm_restore) line = corpus::czn_restore(line);
            }
            corpus::write_lines(lines, nm_output);
            out << report::emit({{"lines", lines.size()}, {"punctuation", total.to_json()}});
        } else if (audit->parsed()) {
            const auto corpora = load_corpora(au_corpora);
            out << report::emit(corpus::audit(corpora).to_json());
        } else if (merge->parsed()) {
            const auto corpora = load_corpora(mg_corpora);
            const auto [merged, manifest] = corpus::merge(corpora, mg_dedup);
            corpus::write_parallel(merged, mg_src, mg_tgt);
            out << report::emit(manifest.to_json());
        } else if (vocab->parsed()) {
            const auto corpora = load_corpora(vc_corpora);
            const auto v = codec::build_vocab(corpora, vc_min, std::set<std::string>(vc_tags.begin(), vc_tags.end()));
            v.save(vc_output);
            out << report::emit({{"size", v.size()}, {"tags", v.tag_ids().size()}, {"fingerprint", v.fingerprint()}});
        } else if (train->parsed()) {
            if (g.config.empty()) throw InvalidArgument("train needs --config RUN.json");
            auto rc = pipeline::RunConfig::load(g.config);
            if (g.seed) rc.train.seed = *g.seed;
            rc.jobs = g.jobs;
            if (tr_stop > 0) rc.stop_after = tr_stop;
            const fs::path dir = g.out.empty() ? fs::path("runs") / rc.run_id : fs::path(g.out);
            const auto record = pipeline::train_run(rc, dir);
            ordered_json summary = {{"run_id", record.run_id},
                                    {"dir", dir.string()},
                                    {"snapshots", record.snapshots.size()},
                                    {"best_mean", pipeline::select_best_mean(record).to_json()}};
            out << report::emit(summary);
        } else if (translate->parsed()) {
            decode::SearchOptions search;
            const auto ens = tl_flags.load(search);
            std::vector<decode::SegmentError> errors;
            const auto hyps = decode::translate_corpus(*ens, search, corpus::read_lines(tl_input),
                                                       corpus::LanguageCode(tl_target), g.jobs, &errors);
            if (tl_output.empty()) {
                for (const auto& h : hyps) out << h << "\n";
            } else {
                corpus::write_lines(hyps, tl_output);
            }
            for (const auto& e : errors) err << "segment " << e.index << ": " << e.message << "\n";
        } else if (score->parsed()) {
            sc_params.remove_whitespace = !sc_keep_space;
            sc_params.effective_order = !sc_no_eff;
            const auto rep = metrics::corpus_chrf(corpus::read_lines(sc_hyp), corpus::read_lines(sc_ref), sc_params, g.jobs);
            out << report::emit(rep.to_json());
        } else if (bt->parsed()) {
            decode::SearchOptions search;
            const auto ens = bt_flags.load(search);
            const auto base = load_corpora({bt_base}).front();
            const auto result = pipeline::backtranslate_expand(corpus::read_lines(bt_mono), *ens, search, base, g.jobs);
            corpus::write_parallel(result.merged, bt_out_src, bt_out_tgt);
            out << report::emit(result.to_json());
        } else if (select->parsed()) {
            std::vector<pipeline::RunRecord> runs;
            for (const auto& r : sl_runs) runs.push_back(pipeline::RunRecord::load(r));
            pipeline::SelectionReport rep;
            if (sl_strategy == "best_mean") {
                rep = pipeline::select_best_mean(runs);
            } else if (sl_strategy == "best_per_language") {
                rep = pipeline::select_best_per_language(runs);
            } else {
                if (sl_candidates.empty() || sl_dev.empty()) {
                    throw InvalidArgument("strategy ensemble needs --candidates and --dev");
                }
                const fs::path cand_path = sl_candidates;
                const auto list = nlohmann::json::parse(read_file(cand_path));
                std::vector<pipeline::EnsembleCandidate> candidates;
                for (const auto& c : list.at("candidates")) {
                    auto spec = decode::EnsembleSpec::from_json(c);
                    for (auto& m : spec.members) {
                        if (m.is_relative()) m = cand_path.parent_path() / m;
                    }
                    candidates.push_back({c.value("name", "ensemble-" + std::to_string(candidates.size() + 1)),
                                          std::make_shared<const decode::Ensemble>(decode::Ensemble::load(spec)),
                                          spec.search});
                }
                std::vector<pipeline::DevSet> dev;
                for (const auto& c : load_corpora(sl_dev)) dev.push_back(pipeline::DevSet::from_corpus(c));
                rep = pipeline::pick_ensembles(candidates, pipeline::select_best_per_language(runs), dev, g.jobs);
            }
            const std::string text = report::emit(rep.to_json());
            if (!g.out.empty()) write_file(fs::path(g.out) / "reports" / ("selection-" + sl_strategy + ".json"), text);
            out << text;
        } else if (zs->parsed()) {
            decode::SearchOptions search;
            const auto ens = zs_flags.load(search);
            std::map<std::string, std::vector<std::string>> columns;
            for (const auto& c : zs_columns) {
                const auto eq = c.find('=');
                if (eq == std::string::npos) throw InvalidArgument("--column needs LANG=PATH");
                columns[corpus::LanguageCode(c.substr(0, eq)).str()] = corpus::read_lines(c.substr(eq + 1));
            }
            std::vector<corpus::LanguagePair> dirs;
            for (const auto& d : zs_dirs) dirs.push_back(corpus::LanguagePair::parse(d));
            const auto rep = pipeline::zero_shot_eval(*ens, zs_label, columns, dirs, search, nullptr, g.jobs);
            const std::string text = report::emit(rep.to_json());
            if (!g.out.empty()) write_file(fs::path(g.out) / "reports" / "zeroshot.json", text);
            out << text;
        } else if (ablate->parsed()) {
            if (g.config.empty()) throw InvalidArgument("ablate needs --config RUN.json");
            auto rc = pipeline::RunConfig::load(g.config);
            if (g.seed) rc.train.seed = *g.seed;
            rc.jobs = g.jobs;
            std::vector<pipeline::AblationVariant> variants;
            for (const auto& v : ab_variants) {
                const auto eq = v.find('=');
                pipeline::AblationVariant av{v.substr(0, eq), {}};
                if (eq != std::string::npos) {
                    std::stringstream ss(v.substr(eq + 1));
                    std::string t;
                    while (std::getline(ss, t, ',')) {
                        if (!t.empty()) av.toggles.push_back(pipeline::Toggle::parse(t));
                    }
                }
                variants.push_back(std::move(av));
            }
            const fs::path dir = g.out.empty() ? fs::path("runs") / (rc.run_id + "-ablation") : fs::path(g.out);
            out << report::emit(pipeline::ablation_run(rc, variants, dir, ab_threshold).to_json());
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace deskmt::cli
