#pragma once

#include "deskmt/corpus.hpp"
#include "deskmt/decode.hpp"
#include "deskmt/model.hpp"

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace deskmt::pipeline {

/// Held-out segments for one direction, scored under the target language's key.
struct DevSet {
    corpus::LanguagePair pair;
    std::vector<std::string> sources;
    std::vector<std::string> references;

    std::string key() const { return pair.target.str(); }
    static DevSet from_corpus(const corpus::Corpus& c);
};

/// Corpus chrF per dev set key, decoding with `ensemble`.
std::map<std::string, double> evaluate(const decode::Ensemble& ensemble, const decode::SearchOptions& search,
                                       std::span<const DevSet> dev, unsigned jobs = 1);

struct Snapshot {
    long long step = 0;
    std::map<std::string, double> chrf;
    double mean = 0.0;
    double dev_loss = 0.0;
    double train_loss = 0.0;
    /// Relative to the run directory.
    std::string checkpoint;

    nlohmann::ordered_json to_json() const;
    static Snapshot from_json(const nlohmann::json& j);
    bool operator==(const Snapshot&) const = default;
};

struct RunRecord {
    std::string run_id;
    nlohmann::ordered_json config;
    corpus::Manifest manifest;
    std::vector<Snapshot> snapshots;
    std::filesystem::path dir;

    nlohmann::ordered_json to_json() const;
    /// Reads config.json, manifest.json, and snapshots.jsonl from a run directory.
    static RunRecord load(const std::filesystem::path& dir);
};

/// Everything a training run needs.
struct RunConfig {
    std::string run_id = "run";
    model::TrainConfig train = model::TrainConfig::desk_profile();
    model::TransformerShape shape;
    std::vector<corpus::Corpus> corpora;
    std::vector<DevSet> dev;
    /// Continue from this checkpoint instead of a random init.
    std::optional<std::filesystem::path> init_from;
    decode::SearchOptions eval_search{5, 200, 1};
    unsigned jobs = 1;
    /// Stops (as if killed) once this many updates have been applied.
    std::optional<long long> stop_after;

    /// Reads a run config file. Data paths are relative to the file.
    ///
    /// {"run_id", "train": TrainConfig, "shape": TransformerShape,
    ///  "data": {"train": [{"src","tgt","source_language","target_language","provenance"}],
    ///           "dev": [{"src","tgt","source_language","target_language"}]},
    ///  "init_from", "exclude_provenance": [..], "eval": {"beam_size","max_len"}}
    static RunConfig load(const std::filesystem::path& path);
};

/// Trains with temperature-sampled homogeneous batches, validating and writing
/// a checkpoint every valid_freq updates and after the last one. A directory
/// holding checkpoints from an earlier, interrupted run with the same config
/// resumes from its latest checkpoint. Rethrows NonFiniteLoss after saving the
/// last good state as checkpoints/nonfinite-step-N.ckpt.
RunRecord train_run(const RunConfig& config, const std::filesystem::path& dir);

struct Choice {
    std::string language;
    std::string run_id;
    long long step = 0;
    /// Checkpoint paths (one, or several for an ensemble).
    std::vector<std::string> checkpoints;
    std::string candidate;
    double score = 0.0;
};

struct SelectionReport {
    std::string strategy;
    std::vector<Choice> choices;
    /// Languages whose choice differs from the best-mean checkpoint.
    std::vector<std::string> differs_from_best_mean;
    /// Ensemble strategy: languages where a candidate replaced the baseline.
    std::vector<std::string> adopted;

    const Choice* find(const std::string& language) const;
    double mean() const;
    nlohmann::ordered_json to_json() const;
};

/// The snapshot with the highest mean; ties go to the earliest step.
SelectionReport select_best_mean(const RunRecord& run);
/// Across runs: highest mean, ties to the earlier run, then the earlier step.
SelectionReport select_best_mean(std::span<const RunRecord> runs);
/// Per language, the (run, snapshot) with the highest score for that language.
SelectionReport select_best_per_language(std::span<const RunRecord> runs);

struct EnsembleCandidate {
    std::string name;
    std::shared_ptr<const decode::Ensemble> ensemble;
    decode::SearchOptions search;
};

/// Candidate scores already computed, keyed by candidate name then language.
using CandidateScores = std::vector<std::pair<EnsembleCandidate, std::map<std::string, double>>>;

/// Per language, replaces the baseline with the best candidate only when it scores strictly higher.
SelectionReport pick_ensembles(const CandidateScores& scored, const SelectionReport& baseline);
SelectionReport pick_ensembles(const std::vector<EnsembleCandidate>& candidates, const SelectionReport& baseline,
                               std::span<const DevSet> dev, unsigned jobs = 1);

struct BacktranslationResult {
    corpus::Corpus merged;
    corpus::Manifest manifest;
    std::size_t synthetic = 0;
    /// Identifies the reverse model, e.g. "step-400-1a2b3c4d".
    std::string reverse_checkpoint;
    std::vector<decode::SegmentError> errors;

    nlohmann::ordered_json to_json() const;
};

/// Translates monolingual text in `base.pair().target` into `base.pair().source`
/// with the reverse model and appends (hypothesis, original) pairs with
/// provenance backtrans after the base pairs. Segments whose hypothesis is
/// blank are dropped and reported in `errors`.
BacktranslationResult backtranslate_expand(const std::vector<std::string>& mono,
                                           const decode::Ensemble& reverse,
                                           const decode::SearchOptions& search, const corpus::Corpus& base,
                                           unsigned jobs = 1);

struct DirectionScore {
    corpus::LanguagePair direction;
    double chrf = 0.0;
    /// chrF of all-empty hypotheses against the same references.
    double empty_baseline = 0.0;
    bool trained = false;
    std::vector<std::string> hypotheses;
};

struct ZeroShotReport {
    std::string model;
    std::vector<DirectionScore> directions;

    /// {"columns": ["model", <direction labels>], "rows": [[model, chrF...]], "directions": [...]}
    nlohmann::ordered_json to_json() const;
};

/// Decodes each direction's source column with the target tag and scores it
/// against the aligned target column. Throws MissingTag for untagged targets,
/// AlignmentMismatch when columns differ in length.
ZeroShotReport zero_shot_eval(const decode::Ensemble& model, const std::string& model_label,
                              const std::map<std::string, std::vector<std::string>>& multiparallel,
                              const std::vector<corpus::LanguagePair>& directions,
                              const decode::SearchOptions& search, const corpus::Manifest* trained = nullptr,
                              unsigned jobs = 1);

/// One change applied to a base run config.
struct Toggle {
    enum class Kind { random_init, single_language, exclude_source, freeze };
    Kind kind;
    std::string value;

    /// "random_init", "single_language:quy", "exclude_source:bibles"
    /// (also "include_source:bibles=false"), "freeze:decoder_only".
    static Toggle parse(const std::string& text);
    std::string str() const;
};

/// Base config with toggles applied; throws InvalidArgument when a toggle cannot apply.
RunConfig apply_toggles(const RunConfig& base, const std::vector<Toggle>& toggles);

struct AblationVariant {
    std::string name;
    std::vector<Toggle> toggles;
};

struct AblationReport {
    std::vector<RunRecord> runs;
    std::vector<std::string> names;
    /// Steps validated by every run.
    std::vector<long long> matched_steps;
    double threshold = 0.0;

    /// First validated step where `language` reached the threshold in run i.
    std::optional<long long> updates_to_threshold(std::size_t i, const std::string& language) const;
    /// Per variant: scores at every matched step (1 decimal) and updates to threshold.
    nlohmann::ordered_json to_json() const;
};

/// Runs every variant in dir/<name> and compares them at matched update counts.
AblationReport ablation_run(const RunConfig& base, const std::vector<AblationVariant>& variants,
                            const std::filesystem::path& dir, double threshold);

}  // namespace deskmt::pipeline
