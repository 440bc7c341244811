#pragma once

#include <cstddef>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "lorica/ball_tree.hpp"
#include "lorica/error.hpp"
#include "lorica/model.hpp"

namespace lorica {

struct GaussianBandwidth {
    double sigma_sq = 1.0;
};

/// q_i = sum_m exp(-d_{i,m} / sigma^2), normalised over clients. Distances are
/// shifted by their global minimum first, which cancels in the ratio.
Vector gaussian_weights(const std::vector<std::vector<double>>& knn_distances, GaussianBandwidth bw);

/// Median of every k-NN distance; falls back to 1 when that median is zero.
GaussianBandwidth median_bandwidth(const std::vector<std::vector<double>>& knn_distances);

/// Median with the mean of the two middle values for even counts.
double median(std::vector<double> values);

struct FilterStats {
    Vector center;  // element-wise median of the cluster
    double median_psi = 0.0;
    double mad = 0.0;
    double threshold = 0.0;
};

struct FilterResult {
    std::vector<double> q_filtered;
    std::vector<double> psi;
    std::vector<std::size_t> excluded;  // positions within the cluster
    FilterStats stats;
};

/// Keeps q_i when psi_i <= median(psi) + kappa * MAD(psi), zeroes it otherwise,
/// with psi_i the distance to the element-wise median of the cluster.
FilterResult byzantine_filter(std::span<const FlatVector> cluster_points, std::span<const double> q, double kappa);

class AggregationAborted : public RuntimeError {
public:
    AggregationAborted() : RuntimeError("every client was excluded; aggregation aborted") {}
};

/// sum q~_i |D_i| w_i / sum q~_i |D_i|. Throws AggregationAborted when the
/// denominator is zero.
FlatVector aggregate_global(std::span<const FlatVector> updates, std::span<const double> q_filtered,
                            std::span<const std::size_t> sizes);

/// Coordinate-wise trimmed mean dropping ceil(trim * n) values at each end;
/// falls back to the coordinate-wise median when nothing would remain.
FlatVector aggregate_expert(std::span<const FlatVector> members, double trim_fraction);

/// Size-weighted mean with no filtering.
FlatVector aggregate_fedavg(std::span<const FlatVector> updates, std::span<const std::size_t> sizes);

struct AggregationParams {
    int knn_k = 5;
    std::optional<double> sigma_sq;  // empty: median of the round's k-NN distances
    int tree_depth = 2;
    int leaf_size = 1;
    double kappa = 3.0;
    double trim_fraction = 0.2;
};

/// What the server receives from a client: the adapter vector and the local
/// sample count, nothing else.
struct ClientUpload {
    int client_id = 0;
    FlatVector adapters;
    std::size_t num_samples = 0;
};

struct ClusterReport {
    std::vector<int> members;  // client ids
    FilterStats stats;
};

struct AggregationReport {
    std::vector<int> client_ids;
    std::vector<double> q;
    std::vector<double> q_filtered;
    std::vector<double> psi;
    std::vector<int> cluster_of;  // cluster index per upload position
    std::vector<ClusterReport> clusters;
    std::set<int> excluded;  // client ids
    double sigma_sq = 0.0;
    bool aborted = false;
    FlatVector global;
    std::vector<FlatVector> experts;  // one per cluster
};

/// Ball-tree weighting, per-cluster filtering, weighted global aggregate and
/// trimmed-mean experts for one round. On abort, `global` is left empty.
AggregationReport lorica_aggregate(std::span<const ClientUpload> uploads, const AggregationParams& params);

/// FedAvg over the uploads, reported in the same shape (one cluster, no
/// exclusions, q proportional to sample counts).
AggregationReport fedavg_aggregate(std::span<const ClientUpload> uploads);

/// Audit record for one round; omits the parameter vectors.
nlohmann::json to_json(const AggregationReport& report);

}  // namespace lorica
