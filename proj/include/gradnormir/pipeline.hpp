#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "gradnormir/detector.hpp"
#include "gradnormir/embedding_io.hpp"
#include "gradnormir/eval_harness.hpp"
#include "gradnormir/gradnorm.hpp"
#include "gradnormir/sampler.hpp"

namespace gradnormir {

inline constexpr const char* kToolVersion = "0.1.0";

struct PipelinePaths {
    std::filesystem::path corpus_embeddings;
    std::filesystem::path reference_embeddings;
    std::filesystem::path query_embeddings;
    std::filesystem::path qrels;
    std::filesystem::path scores;       // default: <output_dir>/scores.jsonl
    std::filesystem::path calibration;  // default: <output_dir>/calibration.json
    std::filesystem::path report;       // default: <output_dir>/report.json
    std::filesystem::path session_manifest;
    std::vector<std::filesystem::path> reports;  // select
    std::filesystem::path output_dir = ".";
};

struct PipelineConfig {
    std::uint64_t global_seed = 0;
    SamplerConfig sampler;
    LossConfig loss;
    double gamma = 0.5;
    ThresholdStatistic threshold_statistic = ThresholdStatistic::Mean;
    std::size_t reference_count = 3000;
    std::size_t eval_cutoff = 100;
    std::size_t workers = 1;
    std::string corpus_id;
    std::string reference_corpus_id;
    ScheduleMode schedule_mode = ScheduleMode::Threshold;
    std::size_t budget = 0;
    std::optional<double> reference_recall;
    PipelinePaths paths;

    void validate() const;

    /// Digest of the scoring section; stamped into every output.
    std::string config_digest() const { return scoring_config_digest(sampler, loss); }

    /// Canonical serialization (sorted keys, one fixed spelling per value).
    nlohmann::json canonical() const;
};

/// Applies one `key = value` setting. Unknown keys are rejected.
void set_config_value(PipelineConfig& config, const std::string& key, const std::string& value);

/// Reads a key-value config file: one `key = value` per line, `#` comments.
/// Errors carry file:line context.
void load_config_file(PipelineConfig& config, const std::filesystem::path& path);

/// Scores the documents at `positions` of `set` against `index`, using
/// `workers` threads. Output is sorted by doc_id and does not depend on the
/// worker count.
std::vector<GradNormScore> score_documents(const EmbeddingSet& set, const CosineIndex& index,
                                           const std::vector<std::size_t>& positions,
                                           const PipelineConfig& config);

// Artifact I/O -------------------------------------------------------------

std::string scores_to_jsonl(const std::vector<GradNormScore>& scores, std::uint64_t global_seed);
std::vector<GradNormScore> read_scores(const std::filesystem::path& path);

nlohmann::json calibration_to_json(const Calibration& c, std::uint64_t global_seed);
Calibration calibration_from_json(const nlohmann::json& j);
Calibration read_calibration(const std::filesystem::path& path);

CorpusReport read_report(const std::filesystem::path& path);

/// Reads a session manifest: JSONL with {"corpus_id", "ratio"} or
/// {"corpus_id", "report": <path to report.json>} per line.
std::vector<SessionReport> read_session_manifest(const std::filesystem::path& path);

// Subcommands --------------------------------------------------------------
// Each returns the path of its primary output artifact.

std::filesystem::path cmd_calibrate(const PipelineConfig& config);
std::filesystem::path cmd_score(const PipelineConfig& config);
std::filesystem::path cmd_detect(const PipelineConfig& config);
std::filesystem::path cmd_select(const PipelineConfig& config);
std::filesystem::path cmd_evaluate(const PipelineConfig& config);
std::filesystem::path cmd_simulate_stream(const PipelineConfig& config);

}  // namespace gradnormir
