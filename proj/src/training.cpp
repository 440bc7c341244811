#include "lorica/training.hpp"

#include <algorithm>
#include <numeric>

#include "lorica/error.hpp"
#include "lorica/losses.hpp"
#include "lorica/random.hpp"

namespace lorica {

std::vector<int> predict(const DenseNet& net, const Matrix& x) {
    const Matrix logits = forward(net, x);
    std::vector<int> out(static_cast<std::size_t>(logits.rows()));
    for (Eigen::Index b = 0; b < logits.rows(); ++b) {
        Eigen::Index arg = 0;
        logits.row(b).maxCoeff(&arg);
        out[static_cast<std::size_t>(b)] = static_cast<int>(arg);
    }
    return out;
}

double accuracy(const DenseNet& net, const Matrix& x, std::span<const int> labels) {
    if (labels.empty()) throw RuntimeError("accuracy of an empty set");
    const auto pred = predict(net, x);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) hits += pred[i] == labels[i] ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

Accuracy evaluate(const DenseNet& net, const Dataset& test, const std::optional<AdvPerturbation>& attack,
                  std::uint64_t seed) {
    if (test.empty()) throw RuntimeError("evaluate: empty test set '" + test.name + "'");
    Accuracy acc;
    acc.ba = accuracy(net, test.features, test.labels);
    if (!attack) {
        acc.ar = acc.ba;
        return acc;
    }
    const Matrix adv = pgd(net, test.features, test.labels, *attack, seed);
    acc.ar = accuracy(net, adv, test.labels);
    return acc;
}

Accuracy evaluate(const ClientModel& model, const Dataset& test, const std::optional<AdvPerturbation>& attack,
                  std::uint64_t seed) {
    return evaluate(model.effective(), test, attack, seed);
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, int batch_size, std::uint64_t seed) {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t s = 0; s < n; s += static_cast<std::size_t>(batch_size)) {
        const std::size_t e = std::min(n, s + static_cast<std::size_t>(batch_size));
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(s), order.begin() + static_cast<std::ptrdiff_t>(e));
    }
    return batches;
}

std::pair<Matrix, std::vector<int>> gather(const Dataset& ds, std::span<const std::size_t> indices) {
    Matrix x(static_cast<Eigen::Index>(indices.size()), ds.features.cols());
    std::vector<int> y;
    y.reserve(indices.size());
    for (std::size_t r = 0; r < indices.size(); ++r) {
        x.row(static_cast<Eigen::Index>(r)) = ds.features.row(static_cast<Eigen::Index>(indices[r]));
        y.push_back(ds.labels[indices[r]]);
    }
    return {std::move(x), std::move(y)};
}

void dense_sgd_step(DenseNet& net, const DenseGradients& grad, double learning_rate,
                    std::span<const std::size_t> trainable) {
    for (auto r : trainable) {
        if (r < net.weights.size()) net.weights[r] -= learning_rate * grad.weights[r];
        else net.classifier -= learning_rate * grad.classifier;
    }
}

DenseNet pretrain_backbone(const Dataset& pool, std::span<const int> dims, const PretrainConfig& cfg) {
    if (dims.empty() || dims.front() != pool.dim()) throw DimensionError(0, "pretrain dims do not start at the data dimension");
    DenseNet net = random_dense_net(dims, pool.num_classes, derive_seed(cfg.seed, {0x9e7}));
    std::vector<std::size_t> all(net.num_layers() + 1);
    std::iota(all.begin(), all.end(), std::size_t{0});
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto batches = make_batches(pool.size(), cfg.batch_size, derive_seed(cfg.seed, {0xba7c, static_cast<std::uint64_t>(epoch)}));
        for (const auto& batch : batches) {
            const auto [x, y] = gather(pool, batch);
            const ForwardTrace trace = forward_trace(net, x);
            const LogitLoss ce = cross_entropy(trace.logits, y);
            dense_sgd_step(net, backward(net, trace, ce.dlogits), cfg.learning_rate, all);
        }
    }
    return net;
}

}  // namespace lorica
