#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "lorica/model.hpp"

namespace lorica {

struct BallNode {
    Vector centroid;
    double radius = 0.0;
    int left = -1;
    int right = -1;
    int depth = 0;
    std::vector<std::size_t> points;  // every point in the subtree

    bool is_leaf() const { return left < 0; }
};

struct Neighbor {
    std::size_t index = 0;
    double distance = 0.0;

    bool operator==(const Neighbor&) const = default;
};

/// Binary ball tree. Each node splits its points at the median of the
/// coordinate with the largest spread; the lower half (rounded up) goes left.
class BallTree {
public:
    static BallTree build(std::vector<Vector> points, int leaf_size = 1);
    static BallTree build(std::span<const FlatVector> points, int leaf_size = 1);

    /// k nearest points other than `query_index`, ordered by (distance, index).
    std::vector<Neighbor> knn(std::size_t query_index, int k) const;

    /// k nearest points to an arbitrary query, optionally skipping one index.
    std::vector<Neighbor> knn(const Vector& query, int k, std::optional<std::size_t> exclude) const;

    const std::vector<BallNode>& nodes() const { return nodes_; }
    const BallNode& root() const { return nodes_.front(); }
    const Vector& point(std::size_t i) const { return points_[i]; }
    std::size_t size() const { return points_.size(); }
    int leaf_size() const { return leaf_size_; }
    int height() const;

    /// Number of nodes whose ball was pruned during the last knn call; for tests.
    std::size_t last_pruned() const { return last_pruned_; }

private:
    int build_node(std::vector<std::size_t> idx, int depth);

    std::vector<Vector> points_;
    std::vector<BallNode> nodes_;
    int leaf_size_ = 1;
    mutable std::size_t last_pruned_ = 0;
};

/// Euclidean distance used by the tree and by aggregation.
double l2_distance(const Vector& a, const Vector& b);

/// Clusters from cutting the tree at `depth`: each node at that depth (or a
/// shallower leaf) becomes one cluster, numbered in left-first order. Members
/// are sorted ascending.
std::vector<std::vector<std::size_t>> cluster_cut(const BallTree& tree, int depth);

}  // namespace lorica
