#include "lorica/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace lorica {

namespace {

void require_common_layout(std::span<const FlatVector> vs, const char* what) {
    if (vs.empty()) throw RuntimeError(std::string(what) + ": no updates");
    for (const auto& v : vs) require_same_layout(vs.front(), v, what);
}

Vector elementwise_median(std::span<const FlatVector> points) {
    const Eigen::Index dim = points.front().values.size();
    Vector center(dim);
    std::vector<double> column(points.size());
    for (Eigen::Index j = 0; j < dim; ++j) {
        for (std::size_t i = 0; i < points.size(); ++i) column[i] = points[i].values[j];
        center[j] = median(column);
    }
    return center;
}

}  // namespace

double median(std::vector<double> values) {
    if (values.empty()) throw RuntimeError("median of an empty set");
    const std::size_t n = values.size();
    const auto mid = values.begin() + static_cast<std::ptrdiff_t>(n / 2);
    std::nth_element(values.begin(), mid, values.end());
    const double upper = *mid;
    if (n % 2 == 1) return upper;
    const double lower = *std::max_element(values.begin(), mid);
    return 0.5 * (lower + upper);
}

Vector gaussian_weights(const std::vector<std::vector<double>>& knn_distances, GaussianBandwidth bw) {
    if (!(bw.sigma_sq > 0.0)) throw ConfigError("gaussian bandwidth sigma^2 must be > 0");
    const auto n = static_cast<Eigen::Index>(knn_distances.size());
    if (n == 0) return {};
    double d_min = std::numeric_limits<double>::infinity();
    for (const auto& row : knn_distances) {
        if (row.size() != knn_distances.front().size()) throw DimensionError(-1, "k-NN distance lists differ in length");
        for (double d : row) d_min = std::min(d_min, d);
    }
    Vector q = Vector::Zero(n);
    if (knn_distances.front().empty()) return Vector::Constant(n, 1.0 / static_cast<double>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        for (double d : knn_distances[static_cast<std::size_t>(i)]) {
            q[i] += std::exp(-(d - d_min) / bw.sigma_sq);
        }
    }
    return q / q.sum();
}

GaussianBandwidth median_bandwidth(const std::vector<std::vector<double>>& knn_distances) {
    std::vector<double> all;
    for (const auto& row : knn_distances) all.insert(all.end(), row.begin(), row.end());
    if (all.empty()) return {1.0};
    const double m = median(std::move(all));
    return {m > 0.0 ? m : 1.0};
}

FilterResult byzantine_filter(std::span<const FlatVector> cluster_points, std::span<const double> q, double kappa) {
    require_common_layout(cluster_points, "byzantine_filter");
    if (q.size() != cluster_points.size()) throw DimensionError(-1, "byzantine_filter: weight count mismatch");
    FilterResult out;
    out.stats.center = elementwise_median(cluster_points);
    out.psi.reserve(cluster_points.size());
    for (const auto& p : cluster_points) out.psi.push_back(l2_distance(p.values, out.stats.center));
    out.stats.median_psi = median(out.psi);
    std::vector<double> dev;
    dev.reserve(out.psi.size());
    for (double v : out.psi) dev.push_back(std::abs(v - out.stats.median_psi));
    out.stats.mad = median(std::move(dev));
    out.stats.threshold = out.stats.median_psi + kappa * out.stats.mad;
    out.q_filtered.assign(q.begin(), q.end());
    for (std::size_t i = 0; i < out.psi.size(); ++i) {
        if (!(out.psi[i] <= out.stats.threshold)) {
            out.q_filtered[i] = 0.0;
            out.excluded.push_back(i);
        }
    }
    return out;
}

FlatVector aggregate_global(std::span<const FlatVector> updates, std::span<const double> q_filtered,
                            std::span<const std::size_t> sizes) {
    require_common_layout(updates, "aggregate_global");
    if (q_filtered.size() != updates.size() || sizes.size() != updates.size()) {
        throw DimensionError(-1, "aggregate_global: weights, sizes and updates differ in count");
    }
    FlatVector out;
    out.layout = updates.front().layout;
    out.values = Vector::Zero(updates.front().values.size());
    double denom = 0.0;
    for (std::size_t i = 0; i < updates.size(); ++i) {
        const double w = q_filtered[i] * static_cast<double>(sizes[i]);
        if (w == 0.0) continue;
        out.values += w * updates[i].values;
        denom += w;
    }
    if (!(denom > 0.0)) throw AggregationAborted();
    out.values /= denom;
    return out;
}

FlatVector aggregate_expert(std::span<const FlatVector> members, double trim_fraction) {
    require_common_layout(members, "aggregate_expert");
    if (trim_fraction < 0.0 || trim_fraction >= 0.5) throw ConfigError("trim_fraction must lie in [0, 0.5)");
    const std::size_t n = members.size();
    const auto cut = static_cast<std::size_t>(std::ceil(trim_fraction * static_cast<double>(n) - 1e-12));
    FlatVector out;
    out.layout = members.front().layout;
    const Eigen::Index dim = members.front().values.size();
    out.values.resize(dim);
    std::vector<double> column(n);
    for (Eigen::Index j = 0; j < dim; ++j) {
        for (std::size_t i = 0; i < n; ++i) column[i] = members[i].values[j];
        if (n <= 2 * cut) {
            out.values[j] = median(column);
            continue;
        }
        std::sort(column.begin(), column.end());
        double s = 0.0;
        for (std::size_t i = cut; i < n - cut; ++i) s += column[i];
        out.values[j] = s / static_cast<double>(n - 2 * cut);
    }
    return out;
}

FlatVector aggregate_fedavg(std::span<const FlatVector> updates, std::span<const std::size_t> sizes) {
    const std::vector<double> ones(updates.size(), 1.0);
    return aggregate_global(updates, ones, sizes);
}

AggregationReport lorica_aggregate(std::span<const ClientUpload> uploads, const AggregationParams& params) {
    if (uploads.empty()) throw RuntimeError("lorica_aggregate: no uploads");
    const std::size_t n = uploads.size();
    std::vector<FlatVector> points;
    std::vector<std::size_t> sizes;
    AggregationReport report;
    for (const auto& u : uploads) {
        points.push_back(u.adapters);
        sizes.push_back(u.num_samples);
        report.client_ids.push_back(u.client_id);
    }
    require_common_layout(points, "lorica_aggregate");

    const BallTree tree = BallTree::build(points, params.leaf_size);
    const int k = std::min<int>(params.knn_k, static_cast<int>(n) - 1);
    std::vector<std::vector<double>> distances(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (const auto& nb : tree.knn(i, k)) distances[i].push_back(nb.distance);
    }
    const GaussianBandwidth bw = params.sigma_sq ? GaussianBandwidth{*params.sigma_sq} : median_bandwidth(distances);
    report.sigma_sq = bw.sigma_sq;
    const Vector q = gaussian_weights(distances, bw);
    report.q.assign(q.data(), q.data() + q.size());
    report.q_filtered = report.q;
    report.psi.assign(n, 0.0);
    report.cluster_of.assign(n, -1);

    const auto clusters = cluster_cut(tree, params.tree_depth);
    for (std::size_t e = 0; e < clusters.size(); ++e) {
        std::vector<FlatVector> members;
        std::vector<double> q_members;
        ClusterReport cr;
        for (auto i : clusters[e]) {
            members.push_back(points[i]);
            q_members.push_back(report.q[i]);
            report.cluster_of[i] = static_cast<int>(e);
            cr.members.push_back(uploads[i].client_id);
        }
        const FilterResult f = byzantine_filter(members, q_members, params.kappa);
        for (std::size_t m = 0; m < clusters[e].size(); ++m) {
            report.psi[clusters[e][m]] = f.psi[m];
            report.q_filtered[clusters[e][m]] = f.q_filtered[m];
        }
        for (auto m : f.excluded) report.excluded.insert(uploads[clusters[e][m]].client_id);
        cr.stats = f.stats;
        report.clusters.push_back(std::move(cr));
        report.experts.push_back(aggregate_expert(members, params.trim_fraction));
    }

    try {
        report.global = aggregate_global(points, report.q_filtered, sizes);
    } catch (const AggregationAborted&) {
        report.aborted = true;
    }
    return report;
}

AggregationReport fedavg_aggregate(std::span<const ClientUpload> uploads) {
    if (uploads.empty()) throw RuntimeError("fedavg_aggregate: no uploads");
    AggregationReport report;
    std::vector<FlatVector> points;
    std::vector<std::size_t> sizes;
    double total = 0.0;
    ClusterReport all;
    for (std::size_t i = 0; i < uploads.size(); ++i) {
        points.push_back(uploads[i].adapters);
        sizes.push_back(uploads[i].num_samples);
        total += static_cast<double>(uploads[i].num_samples);
        report.client_ids.push_back(uploads[i].client_id);
        all.members.push_back(uploads[i].client_id);
        report.cluster_of.push_back(0);
    }
    for (auto s : sizes) report.q.push_back(total > 0.0 ? static_cast<double>(s) / total : 0.0);
    report.q_filtered = report.q;
    report.psi.assign(uploads.size(), 0.0);
    report.global = aggregate_fedavg(points, sizes);
    report.clusters.push_back(std::move(all));
    report.experts.push_back(report.global);
    return report;
}

nlohmann::json to_json(const AggregationReport& report) {
    nlohmann::json clusters = nlohmann::json::array();
    for (const auto& c : report.clusters) {
        clusters.push_back({{"members", c.members},
                            {"median_psi", c.stats.median_psi},
                            {"mad", c.stats.mad},
                            {"threshold", c.stats.threshold}});
    }
    return {{"client_ids", report.client_ids},
            {"q", report.q},
            {"q_filtered", report.q_filtered},
            {"psi", report.psi},
            {"cluster_of", report.cluster_of},
            {"clusters", clusters},
            {"excluded", std::vector<int>(report.excluded.begin(), report.excluded.end())},
            {"sigma_sq", report.sigma_sq},
            {"aborted", report.aborted}};
}

}  // namespace lorica
