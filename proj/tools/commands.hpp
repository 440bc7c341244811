#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lorica/config.hpp"

namespace lorica::cli {

/// Command-line overrides applied on top of the config file.
struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<int> threads;
};

ExperimentConfig load_with_overrides(const std::filesystem::path& config_path, const Overrides& overrides);

/// "lorica <rev>" string recorded in every manifest.
std::string provenance();

// Each command reads and writes under cfg.output_dir.

/// data/pretrain_pool.csv, data/client_<k>_{train,test}.csv, partition.json
void cmd_partition(const ExperimentConfig& cfg);

/// Needs the partition outputs. Writes rounds.jsonl, checkpoints/pretrained.ckpt,
/// checkpoints/phase1/client_<k>.ckpt.
void cmd_phase1(const ExperimentConfig& cfg);

/// Needs the phase1 checkpoints. Writes phase2_reports.jsonl and
/// checkpoints/phase2/client_<k>.ckpt.
void cmd_phase2(const ExperimentConfig& cfg);

/// Scores the latest stage's checkpoints (or `stage` when given) on each
/// client's test split and writes metrics_<stage>.json.
void cmd_evaluate(const ExperimentConfig& cfg, const std::optional<std::string>& stage);

/// Columnar summaries of one or more run directories, written to `out_dir`.
void cmd_report(const std::vector<std::filesystem::path>& run_dirs, const std::filesystem::path& out_dir);

}  // namespace lorica::cli
