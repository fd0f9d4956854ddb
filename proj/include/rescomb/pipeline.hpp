#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "rescomb/core.hpp"
#include "rescomb/eval.hpp"
#include "rescomb/fusion.hpp"

namespace rescomb {

inline constexpr const char* kToolVersion = "rescomb 1.0.0";

enum class HistorySource { OneBest, Reference };

struct SystemSpec {
    std::string id;
    std::filesystem::path nbest;
};

struct NgramSpec {
    std::string name;  // score dimension
    std::filesystem::path arpa;
};

struct LstmSpec {
    std::string name;  // score dimension
    std::optional<std::filesystem::path> forward;
    std::optional<std::filesystem::path> backward;
    HistorySource history = HistorySource::OneBest;
};

// Pipeline configuration. Relative paths resolve against base_dir (the
// directory of the config file).
struct PipelineConfig {
    std::filesystem::path base_dir;
    std::filesystem::path output_dir;
    std::uint64_t seed = 1;
    std::vector<std::string> stages;
    std::filesystem::path references;            // STM
    std::vector<std::string> dev_conversations;  // weight tuning reads only these
    std::vector<std::string> test_conversations;
    std::vector<SystemSpec> systems;
    std::vector<NgramSpec> ngrams;
    std::vector<LstmSpec> lstms;
    WeightVector init_weights;
    std::optional<std::filesystem::path> rescore_weights;  // load instead of tuning
    bool select_systems = false;
    int cn_nbest = 100;
    std::vector<std::string> cn_ngrams;  // LM subset used on CN n-best lists
    std::vector<std::string> cn_lstms;
    WeightVector cn_init_weights;
    std::optional<std::filesystem::path> cn_weights;
    std::set<std::string, std::less<>> backchannels;
    int restarts = 4;
    int max_iters = 20;

    std::filesystem::path resolve(const std::filesystem::path& p) const;
};

inline const std::vector<std::string> kStageOrder = {"rescore", "combine", "cn_rescore", "score"};

// Parses and checks a config (ConfigError on bad fields, missing files or an
// invalid stage list).
PipelineConfig parse_pipeline_config(const std::string& json_text, const std::filesystem::path& base_dir);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

// Result of a stage: files read and written plus, for tuning stages, the
// utterances whose n-best lists the optimizer read.
struct StageResult {
    std::vector<std::filesystem::path> inputs;   // resolved paths
    std::vector<std::filesystem::path> outputs;  // relative to output_dir
    std::set<std::string> tuning_access;
};

// rescore/<system>.nbest: every registered LM applied to every system.
StageResult run_rescore(const PipelineConfig& config);
// weights/<system>.json, combine/cn/<utt>.cn, combine/consensus.{txt,ctm},
// combine/selection.json when selection is on.
StageResult run_combine(const PipelineConfig& config);
// System selection on dev only; writes combine/selection.json.
StageResult run_select(const PipelineConfig& config);
// cn_rescore/cn.nbest, weights/cn_rescore.json, cn_rescore/final.txt.
StageResult run_cn_rescore(const PipelineConfig& config);
// score/wer.json, score/wer.txt for the final transcript.
StageResult run_score(const PipelineConfig& config);

// WER per system and stage on dev and test: first pass, n-gram rescoring,
// full rescoring, combination, CN rescoring. Writes report.json and
// report.txt; rows for stages that have not run are omitted.
struct ReportRow {
    std::string system;
    std::string stage;
    ErrorCounts dev;
    ErrorCounts test;
};
struct Report {
    std::vector<ReportRow> rows;
    std::string to_json() const;
    std::string to_table() const;
};
Report run_report(const PipelineConfig& config);

// Runs the configured stages in order, updating manifest.json after each.
std::vector<StageResult> run_pipeline(const PipelineConfig& config);

// Appends or replaces the manifest entry of a stage: input content hashes,
// output content hashes and the tool version.
void record_manifest(const PipelineConfig& config, const std::string& stage, const StageResult& result);

// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);
std::string sha256_hex(std::string_view bytes);

} // namespace rescomb
