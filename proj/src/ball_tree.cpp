#include "lorica/ball_tree.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <queue>

#include "lorica/error.hpp"

namespace lorica {

double l2_distance(const Vector& a, const Vector& b) { return std::sqrt((a - b).squaredNorm()); }

BallTree BallTree::build(std::vector<Vector> points, int leaf_size) {
    if (points.empty()) throw RuntimeError("ball tree needs at least one point");
    if (leaf_size < 1) throw ConfigError("ball tree leaf_size must be >= 1");
    for (std::size_t i = 1; i < points.size(); ++i) {
        if (points[i].size() != points.front().size()) {
            throw DimensionError(-1, "ball tree point " + std::to_string(i) + " has dimension " +
                                         std::to_string(points[i].size()) + ", expected " +
                                         std::to_string(points.front().size()));
        }
    }
    BallTree tree;
    tree.points_ = std::move(points);
    tree.leaf_size_ = leaf_size;
    std::vector<std::size_t> all(tree.points_.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    tree.build_node(std::move(all), 0);
    return tree;
}

BallTree BallTree::build(std::span<const FlatVector> points, int leaf_size) {
    std::vector<Vector> raw;
    raw.reserve(points.size());
    for (const auto& p : points) raw.push_back(p.values);
    return build(std::move(raw), leaf_size);
}

int BallTree::build_node(std::vector<std::size_t> idx, int depth) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    const Eigen::Index dim = points_.front().size();

    Vector centroid = Vector::Zero(dim);
    for (auto i : idx) centroid += points_[i];
    centroid /= static_cast<double>(idx.size());
    double radius = 0.0;
    for (auto i : idx) radius = std::max(radius, l2_distance(points_[i], centroid));

    Eigen::Index split_dim = 0;
    double best_spread = 0.0;
    for (Eigen::Index d = 0; d < dim; ++d) {
        double lo = points_[idx.front()][d];
        double hi = lo;
        for (auto i : idx) {
            lo = std::min(lo, points_[i][d]);
            hi = std::max(hi, points_[i][d]);
        }
        if (hi - lo > best_spread) {
            best_spread = hi - lo;
            split_dim = d;
        }
    }

    {
        BallNode& node = nodes_[static_cast<std::size_t>(id)];
        node.centroid = std::move(centroid);
        node.radius = radius;
        node.depth = depth;
        node.points = idx;
    }
    if (static_cast<int>(idx.size()) <= leaf_size_ || best_spread == 0.0) return id;

    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        const double va = points_[a][split_dim];
        const double vb = points_[b][split_dim];
        return va < vb || (va == vb && a < b);
    });
    const auto half = static_cast<std::ptrdiff_t>((idx.size() + 1) / 2);
    std::vector<std::size_t> left(idx.begin(), idx.begin() + half);
    std::vector<std::size_t> right(idx.begin() + half, idx.end());
    const int l = build_node(std::move(left), depth + 1);
    const int r = build_node(std::move(right), depth + 1);
    nodes_[static_cast<std::size_t>(id)].left = l;
    nodes_[static_cast<std::size_t>(id)].right = r;
    return id;
}

int BallTree::height() const {
    int h = 0;
    for (const auto& n : nodes_) h = std::max(h, n.depth);
    return h;
}

std::vector<Neighbor> BallTree::knn(std::size_t query_index, int k) const {
    if (query_index >= points_.size()) throw RuntimeError("knn query index out of range");
    if (k < 0 || static_cast<std::size_t>(k) + 1 > points_.size()) {
        throw RuntimeError("knn: k = " + std::to_string(k) + " outside [0, N-1] with N = " +
                           std::to_string(points_.size()));
    }
    return knn(points_[query_index], k, query_index);
}

std::vector<Neighbor> BallTree::knn(const Vector& query, int k, std::optional<std::size_t> exclude) const {
    if (query.size() != points_.front().size()) throw DimensionError(-1, "knn query dimension mismatch");
    const std::size_t available = points_.size() - (exclude ? 1 : 0);
    if (k < 0 || static_cast<std::size_t>(k) > available) throw RuntimeError("knn: k out of range");
    last_pruned_ = 0;
    if (k == 0) return {};

    auto worse = [](const Neighbor& a, const Neighbor& b) {
        return a.distance < b.distance || (a.distance == b.distance && a.index < b.index);
    };
    // Max-heap on (distance, index): top is the current worst kept neighbour.
    std::priority_queue<Neighbor, std::vector<Neighbor>, decltype(worse)> heap(worse);

    std::function<void(int)> visit = [&](int id) {
        const BallNode& node = nodes_[static_cast<std::size_t>(id)];
        if (static_cast<int>(heap.size()) == k) {
            const double bound = l2_distance(query, node.centroid) - node.radius;
            const double worst = heap.top().distance;
            // Slack keeps rounding in the bound from pruning an exact tie.
            if (bound > worst + 1e-12 * (1.0 + worst)) {
                ++last_pruned_;
                return;
            }
        }
        if (node.is_leaf()) {
            for (auto i : node.points) {
                if (exclude && *exclude == i) continue;
                Neighbor cand{i, l2_distance(query, points_[i])};
                if (static_cast<int>(heap.size()) < k) {
                    heap.push(cand);
                } else if (worse(cand, heap.top())) {
                    heap.pop();
                    heap.push(cand);
                }
            }
            return;
        }
        const BallNode& l = nodes_[static_cast<std::size_t>(node.left)];
        const BallNode& r = nodes_[static_cast<std::size_t>(node.right)];
        const double dl = l2_distance(query, l.centroid) - l.radius;
        const double dr = l2_distance(query, r.centroid) - r.radius;
        if (dl <= dr) {
            visit(node.left);
            visit(node.right);
        } else {
            visit(node.right);
            visit(node.left);
        }
    };
    visit(0);

    std::vector<Neighbor> out;
    out.reserve(heap.size());
    while (!heap.empty()) {
        out.push_back(heap.top());
        heap.pop();
    }
    std::reverse(out.begin(), out.end());
    return out;
}

std::vector<std::vector<std::size_t>> cluster_cut(const BallTree& tree, int depth) {
    if (depth < 0) throw ConfigError("cluster_cut depth must be >= 0");
    std::vector<std::vector<std::size_t>> clusters;
    std::function<void(int)> walk = [&](int id) {
        const BallNode& node = tree.nodes()[static_cast<std::size_t>(id)];
        if (node.depth == depth || node.is_leaf()) {
            auto members = node.points;
            std::sort(members.begin(), members.end());
            clusters.push_back(std::move(members));
            return;
        }
        walk(node.left);
        walk(node.right);
    };
    walk(0);
    return clusters;
}

}  // namespace lorica
