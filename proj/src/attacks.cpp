#include "lorica/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "lorica/error.hpp"
#include "lorica/losses.hpp"
#include "lorica/random.hpp"

namespace lorica {

namespace {

Matrix sign_of(const Matrix& g) {
    return g.unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

/// Clamp to the input range, then to the epsilon box around x.
Matrix project(const Matrix& candidate, const Matrix& x, const AdvPerturbation& p) {
    Matrix out = candidate.cwiseMax(p.clamp_lo).cwiseMin(p.clamp_hi);
    out = out.cwiseMax((x.array() - p.epsilon).matrix()).cwiseMin((x.array() + p.epsilon).matrix());
    return out;
}

}  // namespace

void validate(const AdvPerturbation& p) {
    if (!(p.epsilon >= 0.0)) throw ConfigError("attack epsilon must be >= 0");
    if (!(p.step_size >= 0.0)) throw ConfigError("attack step_size must be >= 0");
    if (p.iterations < 0) throw ConfigError("attack iterations must be >= 0");
    if (!(p.clamp_lo < p.clamp_hi)) throw ConfigError("attack clamp range must satisfy lo < hi");
}

Matrix input_gradient(const DenseNet& net, const Matrix& x, std::span<const int> labels) {
    const ForwardTrace trace = forward_trace(net, x);
    const LogitLoss ce = cross_entropy(trace.logits, labels);
    Matrix g = backward(net, trace, ce.dlogits).input;
    if (!g.allFinite()) throw NonFiniteError(0, "input gradient is not finite");
    return g;
}

Matrix fgsm(const DenseNet& net, const Matrix& x, std::span<const int> labels, const AdvPerturbation& p) {
    validate(p);
    if (p.epsilon == 0.0) return x;
    return project(x + p.epsilon * sign_of(input_gradient(net, x, labels)), x, p);
}

Matrix fgsm(const ClientModel& model, const Matrix& x, std::span<const int> labels, const AdvPerturbation& p) {
    return fgsm(model.effective(), x, labels, p);
}

Matrix pgd(const DenseNet& net, const Matrix& x, std::span<const int> labels, const AdvPerturbation& p,
           std::uint64_t seed) {
    validate(p);
    if (p.iterations == 0 || p.epsilon == 0.0) return x;
    Matrix adv = x;
    if (p.random_start) {
        Rng rng(seed);
        std::uniform_real_distribution<double> u(-p.epsilon, p.epsilon);
        Matrix noise(x.rows(), x.cols());
        for (Eigen::Index i = 0; i < noise.rows(); ++i)
            for (Eigen::Index j = 0; j < noise.cols(); ++j) noise(i, j) = u(rng);
        adv = project(x + noise, x, p);
    }
    for (int it = 0; it < p.iterations; ++it) {
        adv = project(adv + p.step_size * sign_of(input_gradient(net, adv, labels)), x, p);
    }
    return adv;
}

Matrix pgd(const ClientModel& model, const Matrix& x, std::span<const int> labels, const AdvPerturbation& p,
           std::uint64_t seed) {
    return pgd(model.effective(), x, labels, p, seed);
}

ByzantineSpec make_byzantine_spec(ByzantineMode mode, int num_clients, double rho, int num_classes,
                                  std::uint64_t seed, double mpaf_scale) {
    if (rho < 0.0 || rho > 1.0) throw ConfigError("byzantine rho must lie in [0, 1]");
    ByzantineSpec spec;
    spec.mode = mode;
    spec.rho = rho;
    spec.mpaf_scale = mpaf_scale;
    spec.flip_rule.resize(static_cast<std::size_t>(num_classes));
    for (int c = 0; c < num_classes; ++c) spec.flip_rule[static_cast<std::size_t>(c)] = (c + 1) % num_classes;
    if (mode == ByzantineMode::none) return spec;
    const auto count = static_cast<int>(std::lround(rho * num_clients));
    std::vector<int> ids(static_cast<std::size_t>(num_clients));
    std::iota(ids.begin(), ids.end(), 0);
    Rng rng(derive_seed(seed, {0xb12a}));
    std::shuffle(ids.begin(), ids.end(), rng);
    spec.malicious_ids.insert(ids.begin(), ids.begin() + count);
    return spec;
}

bool is_derangement(std::span<const int> rule) {
    std::vector<bool> seen(rule.size(), false);
    for (std::size_t c = 0; c < rule.size(); ++c) {
        const int t = rule[c];
        if (t < 0 || static_cast<std::size_t>(t) >= rule.size() || seen[static_cast<std::size_t>(t)]) return false;
        if (static_cast<std::size_t>(t) == c) return false;
        seen[static_cast<std::size_t>(t)] = true;
    }
    return true;
}

Dataset apply_label_flip(const Dataset& ds, const ByzantineSpec& spec) {
    if (spec.flip_rule.size() != static_cast<std::size_t>(ds.num_classes) || !is_derangement(spec.flip_rule)) {
        throw ConfigError("label flip rule must be a derangement of the dataset's classes");
    }
    Dataset out = ds;
    for (int& y : out.labels) y = spec.flip_rule[static_cast<std::size_t>(y)];
    return out;
}

FlatVector mpaf_update(const FlatVector& current_global, const FlatVector& attacker_target, double scale) {
    require_same_layout(current_global, attacker_target, "mpaf_update");
    FlatVector out;
    out.layout = current_global.layout;
    out.values = current_global.values + scale * (attacker_target.values - current_global.values);
    return out;
}

FlatVector mpaf_target(const FlatVector& like, double stddev, std::uint64_t seed) {
    FlatVector out;
    out.layout = like.layout;
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, stddev);
    out.values.resize(like.values.size());
    for (Eigen::Index i = 0; i < out.values.size(); ++i) out.values[i] = normal(rng);
    return out;
}

}  // namespace lorica
