#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "lorica/model.hpp"

namespace lorica {

struct Dataset {
    Matrix features;  // one sample per row
    std::vector<int> labels;
    int num_classes = 0;
    std::string name;

    std::size_t size() const { return labels.size(); }
    int dim() const { return static_cast<int>(features.cols()); }
    bool empty() const { return labels.empty(); }
};

/// Throws RuntimeError when features/labels disagree or a label is out of range.
void validate(const Dataset& ds);

struct PartitionSpec {
    int num_clients = 15;
    double dirichlet_alpha = 10.0;
    std::uint64_t seed = 0;
};

/// Cluster means for make_blobs: a regular simplex of the given radius
/// centred at 0.5 when dim >= C, otherwise points on a circle in the first two
/// coordinates.
Matrix blob_means(int num_classes, int dim, double radius);

/// C isotropic Gaussian clusters, `per_class` samples each, class-major order.
Dataset make_blobs(int num_classes, int per_class, int dim, double spread, std::uint64_t seed,
                   double radius = 0.4);

/// Reads `d_x` feature columns then one integer label column. A first line
/// that does not parse as numbers is treated as a header. When `num_classes`
/// is absent it is inferred as max(label) + 1.
Dataset load_csv(const std::filesystem::path& path, std::optional<int> num_classes = std::nullopt);

void write_csv(const std::filesystem::path& path, const Dataset& ds, bool header = true);

Dataset subset(const Dataset& ds, std::span<const std::size_t> indices);

/// Per-class Dirichlet(alpha) proportions across clients; every sample goes to
/// exactly one client. Draws leaving a client empty are redrawn up to
/// kMaxPartitionRetries times.
std::vector<Dataset> dirichlet_partition(const Dataset& ds, const PartitionSpec& spec);

inline constexpr int kMaxPartitionRetries = 100;

/// Class-stratified round-robin split: shard sizes differ by at most one and
/// every shard sees every class in near-equal proportion.
std::vector<Dataset> iid_partition(const Dataset& ds, int num_clients, std::uint64_t seed);

std::vector<std::size_t> class_counts(const Dataset& ds);

/// Class-stratified split; returns {kept, held_out} with round(fraction * n_c)
/// samples of each class held out.
std::pair<Dataset, Dataset> stratified_split(const Dataset& ds, double held_out_fraction,
                                             std::uint64_t seed);

/// Concatenates datasets with identical dimension and class count.
Dataset concat(std::span<const Dataset> parts, std::string name = "pooled");

/// {"clients": {"<id>": [per-class counts]}, "num_classes": C}
nlohmann::json partition_manifest(std::span<const Dataset> shards);

}  // namespace lorica
