#pragma once

// Independent reference implementations used as test oracles. Nothing here
// calls into the library's numerical code.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include "lorica/model.hpp"

namespace oracle {

using lorica::Matrix;

inline Matrix naive_matmul(const Matrix& a, const Matrix& b) {
    Matrix c(a.rows(), b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (Eigen::Index k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
            c(i, j) = s;
        }
    }
    return c;
}

/// Straight-line forward pass of an adapter model: loops only.
inline Matrix forward(const lorica::ClientModel& m, const Matrix& x) {
    Matrix h = x;
    for (const auto& layer : m.backbone) {
        Matrix w = layer.w_pre + naive_matmul(layer.a_fixed, layer.b_train);
        Matrix z = naive_matmul(h, w);
        if (layer.activation == lorica::Activation::relu) {
            for (Eigen::Index i = 0; i < z.rows(); ++i)
                for (Eigen::Index j = 0; j < z.cols(); ++j) z(i, j) = std::max(0.0, z(i, j));
        }
        h = z;
    }
    return naive_matmul(h, m.classifier);
}

/// Straight-line forward pass of a dense network: loops only.
inline Matrix forward(const lorica::DenseNet& net, const Matrix& x) {
    Matrix h = x;
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
        Matrix z = naive_matmul(h, net.weights[l]);
        if (net.activations[l] == lorica::Activation::relu) {
            for (Eigen::Index i = 0; i < z.rows(); ++i)
                for (Eigen::Index j = 0; j < z.cols(); ++j) z(i, j) = std::max(0.0, z(i, j));
        }
        h = z;
    }
    return naive_matmul(h, net.classifier);
}

inline double log_sum_exp(const std::vector<double>& v) {
    double m = *std::max_element(v.begin(), v.end());
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

/// Mean cross-entropy over rows, computed element by element.
inline double cross_entropy(const Matrix& logits, const std::vector<int>& y, const std::vector<double>& w = {}) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        std::vector<double> row(logits.cols());
        for (Eigen::Index j = 0; j < logits.cols(); ++j) row[j] = logits(i, j);
        const double ce = log_sum_exp(row) - row[y[i]];
        total += (w.empty() ? 1.0 : w[y[i]]) * ce;
    }
    return total / static_cast<double>(logits.rows());
}

/// Mean KL(softmax(p) || softmax(q)) over rows with the same 1e-12 floor.
inline double kl(const Matrix& p_logits, const Matrix& q_logits) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < p_logits.rows(); ++i) {
        std::vector<double> a(p_logits.cols()), b(p_logits.cols());
        for (Eigen::Index j = 0; j < p_logits.cols(); ++j) {
            a[j] = p_logits(i, j);
            b[j] = q_logits(i, j);
        }
        const double la = log_sum_exp(a), lb = log_sum_exp(b);
        for (std::size_t j = 0; j < a.size(); ++j) {
            const double p = std::max(std::exp(a[j] - la), 1e-12);
            const double q = std::max(std::exp(b[j] - lb), 1e-12);
            total += p * (std::log(p) - std::log(q));
        }
    }
    return total / static_cast<double>(p_logits.rows());
}

/// Central difference of f over every entry of `param`, step h.
inline Matrix finite_difference(Matrix& param, const std::function<double()>& f, double h = 1e-5) {
    Matrix g(param.rows(), param.cols());
    for (Eigen::Index i = 0; i < param.rows(); ++i) {
        for (Eigen::Index j = 0; j < param.cols(); ++j) {
            const double saved = param(i, j);
            param(i, j) = saved + h;
            const double up = f();
            param(i, j) = saved - h;
            const double down = f();
            param(i, j) = saved;
            g(i, j) = (up - down) / (2.0 * h);
        }
    }
    return g;
}

/// Norm-wise relative error ||a - b|| / ||b||, with a floor on the
/// denominator so all-zero gradients compare on an absolute scale.
inline double relative_error(const Matrix& a, const Matrix& b) {
    return (a - b).norm() / std::max(b.norm(), 1e-6);
}

struct BruteNeighbor {
    std::size_t index;
    double distance;
};

/// Exhaustive k-NN with (distance, index) ordering.
inline std::vector<BruteNeighbor> brute_knn(const std::vector<lorica::Vector>& pts, std::size_t q, int k) {
    std::vector<BruteNeighbor> all;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        if (i == q) continue;
        double s = 0.0;
        for (Eigen::Index d = 0; d < pts[i].size(); ++d) s += (pts[i][d] - pts[q][d]) * (pts[i][d] - pts[q][d]);
        all.push_back({i, std::sqrt(s)});
    }
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
        return a.distance != b.distance ? a.distance < b.distance : a.index < b.index;
    });
    all.resize(static_cast<std::size_t>(k));
    return all;
}

inline Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = n(rng);
    return m;
}

}  // namespace oracle
