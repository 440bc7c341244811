#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lorica/attacks.hpp"
#include "lorica/data.hpp"
#include "lorica/phase1.hpp"
#include "lorica/phase2.hpp"
#include "lorica/training.hpp"

namespace lorica {

struct DatasetSection {
    std::string source = "blobs";  // "blobs" or "csv"
    std::string csv_path;
    int num_classes = 4;
    int per_class = 300;
    int dim = 16;
    double spread = 0.12;
    double radius = 0.4;
    double pretrain_fraction = 0.2;  // share of the pool held back for pretraining
};

struct PartitionSection {
    int num_clients = 15;
    double dirichlet_alpha = 10.0;
    bool iid = false;  // equal-size class-stratified shards instead of Dirichlet
    double test_fraction = 0.2;
};

struct ModelSection {
    std::vector<int> hidden = {32, 32};
    int feature_dim = 16;
    int rank = 4;
    PretrainConfig pretrain;
};

struct ByzantineSection {
    ByzantineMode mode = ByzantineMode::none;
    double rho = 0.0;
    double mpaf_scale = 10.0;
    double mpaf_target_std = 0.5;
};

/// Everything one experiment needs. Parsed strictly: unknown keys are errors.
struct ExperimentConfig {
    std::uint64_t seed = 42;
    DatasetSection dataset;
    PartitionSection partition;
    ModelSection model;
    Phase1Config phase1;
    Phase2Config phase2;
    AdvPerturbation attack;  // inference-time threat used for AR
    ByzantineSection byzantine;
    std::string output_dir = "runs/default";
    int threads = 1;

    /// input, hidden..., feature
    std::vector<int> layer_dims() const;
};

ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const ExperimentConfig& cfg);

/// Throws ConfigError on out-of-range values.
void validate(const ExperimentConfig& cfg);

/// SHA-256 of the canonical serialisation, leaving out the thread count and
/// output directory.
std::string config_hash(const ExperimentConfig& cfg);

/// Copies the derived pieces (seed, byzantine spec, attack, threads) into the
/// phase configs for a run with `num_clients` clients.
Phase1Config resolve_phase1(const ExperimentConfig& cfg, int num_clients, int num_classes);
Phase2Config resolve_phase2(const ExperimentConfig& cfg);

std::string to_string(ByzantineMode mode);
std::string to_string(Aggregator a);

}  // namespace lorica
