#include "lorica/phase2.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include "lorica/error.hpp"
#include "lorica/losses.hpp"
#include "lorica/random.hpp"

namespace lorica {

namespace {

enum SeedTag : std::uint64_t { kSplit = 11, kInner = 12, kPool = 13, kFinal = 14 };

Matrix& layer_ref(DenseNet& net, std::size_t r) {
    return r < net.weights.size() ? net.weights[r] : net.classifier;
}

const Matrix& layer_ref(const DenseNet& net, std::size_t r) {
    return r < net.weights.size() ? net.weights[r] : net.classifier;
}

const Matrix& grad_ref(const DenseGradients& g, std::size_t r) {
    return r < g.weights.size() ? g.weights[r] : g.classifier;
}

}  // namespace

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

std::vector<double> GateVector::gates() const {
    std::vector<double> z;
    z.reserve(logits.size());
    for (double l : logits) z.push_back(sigmoid(l));
    return z;
}

std::vector<std::size_t> project_top_budget(const GateVector& gates) {
    std::vector<std::size_t> order(gates.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return gates.logits[a] > gates.logits[b]; });
    const auto keep = std::min<std::size_t>(static_cast<std::size_t>(std::max(gates.budget, 0)), order.size());
    std::vector<std::size_t> sel(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep));
    std::sort(sel.begin(), sel.end());
    return sel;
}

std::vector<std::size_t> selectable_layers(const DenseNet& fused, bool include_classifier) {
    std::vector<std::size_t> layers(fused.num_layers() + (include_classifier ? 1 : 0));
    std::iota(layers.begin(), layers.end(), std::size_t{0});
    return layers;
}

DenseNet gated_weights(const DenseNet& fused, std::span<const std::size_t> layers, std::span<const Matrix> deltas,
                       std::span<const double> gates) {
    DenseNet out = fused;
    for (std::size_t s = 0; s < layers.size(); ++s) layer_ref(out, layers[s]) += gates[s] * deltas[s];
    return out;
}

GateObjective gate_objective(const DenseNet& fused, std::span<const std::size_t> layers,
                             std::span<const Matrix> deltas, const GateVector& gates, const Matrix& x_clean,
                             std::span<const int> y_clean, const Matrix& x_adv, std::span<const int> y_adv,
                             double beta, double lambda3) {
    const std::vector<double> z = gates.gates();
    const DenseNet eff = gated_weights(fused, layers, deltas, z);

    const ForwardTrace clean = forward_trace(eff, x_clean);
    const LogitLoss acc = cross_entropy(clean.logits, y_clean);
    const DenseGradients g_acc = backward(eff, clean, acc.dlogits);

    const ForwardTrace adv = forward_trace(eff, x_adv);
    const LogitLoss adv_ce = cross_entropy(adv.logits, y_adv);
    const DenseGradients g_adv = backward(eff, adv, adv_ce.dlogits);

    GateObjective out;
    out.acc_loss = acc.value;
    out.rob_score = -adv_ce.value;
    out.value = phase2_objective(out.acc_loss, out.rob_score, z, beta, lambda3, gates.budget);
    const double open = std::accumulate(z.begin(), z.end(), 0.0);
    const double hinge_slope = open > gates.budget ? lambda3 : 0.0;
    out.grad_logits.resize(layers.size());
    for (std::size_t s = 0; s < layers.size(); ++s) {
        const Matrix& d = deltas[s];
        const double dj_dz = (grad_ref(g_acc, layers[s]).cwiseProduct(d)).sum() +
                             beta * (grad_ref(g_adv, layers[s]).cwiseProduct(d)).sum() + hinge_slope;
        out.grad_logits[s] = dj_dz * z[s] * (1.0 - z[s]);
    }
    return out;
}

nlohmann::json to_json(const Phase2Report& report) {
    return {{"schema", "lorica.phase2_report.v1"},
            {"client_id", report.client_id},
            {"budget", report.budget},
            {"budget_clamped", report.budget_clamped},
            {"final_gates", report.final_gates},
            {"selected", report.selected},
            {"objective_trace", report.objective_trace}};
}

Phase2Result run_phase2(const ClientModel& client, const Dataset& train, const Phase2Config& cfg) {
    if (cfg.outer_steps < 0 || cfg.inner_steps < 0 || cfg.final_epochs < 0) {
        throw ConfigError("phase2: step counts must be >= 0");
    }
    const FusedModel fused = fuse(client);
    const auto layers = selectable_layers(fused, cfg.include_classifier);

    Phase2Result result;
    result.report.client_id = client.client_id;
    int budget = cfg.budget;
    if (cfg.budget_fraction) budget = static_cast<int>(std::lround(*cfg.budget_fraction * static_cast<double>(layers.size())));
    if (budget < 0) throw ConfigError("phase2: budget must be >= 0");
    if (static_cast<std::size_t>(budget) > layers.size()) {
        std::cerr << "warning: phase2 budget " << budget << " exceeds " << layers.size()
                  << " selectable layers; using all of them\n";
        budget = static_cast<int>(layers.size());
        result.report.budget_clamped = true;
    }
    result.report.budget = budget;
    result.gates.budget = budget;
    result.gates.logits.assign(layers.size(), cfg.gate_init_logit);

    const std::uint64_t seed = derive_seed(cfg.seed, {static_cast<std::uint64_t>(client.client_id)});
    auto [fit, held] = stratified_split(train, cfg.validation_fraction, derive_seed(seed, {kSplit}));
    if (held.empty()) held = fit;
    if (fit.empty()) throw RuntimeError("phase2: client " + std::to_string(client.client_id) + " has no training data");

    std::vector<Matrix> deltas;
    for (auto r : layers) deltas.push_back(Matrix::Zero(layer_ref(fused, r).rows(), layer_ref(fused, r).cols()));

    Matrix fixed_pool;
    if (!cfg.regenerate_pool && cfg.outer_steps > 0) {
        fixed_pool = pgd(fused, held.features, held.labels, cfg.pgd, derive_seed(seed, {kPool}));
    }

    for (int outer = 0; outer < cfg.outer_steps; ++outer) {
        // Every outer iteration restarts from the fused weights.
        for (auto& d : deltas) d.setZero();
        const std::vector<double> z = result.gates.gates();

        std::vector<std::vector<std::size_t>> batches;
        int epoch = 0;
        for (int step = 0; step < cfg.inner_steps; ++step) {
            if (batches.empty()) {
                batches = make_batches(fit.size(), cfg.batch_size,
                                       derive_seed(seed, {kInner, static_cast<std::uint64_t>(outer), static_cast<std::uint64_t>(epoch++)}));
                std::reverse(batches.begin(), batches.end());
            }
            const auto [x, y] = gather(fit, batches.back());
            batches.pop_back();
            const DenseNet eff = gated_weights(fused, layers, deltas, z);
            const ForwardTrace trace = forward_trace(eff, x);
            const DenseGradients g = backward(eff, trace, cross_entropy(trace.logits, y).dlogits);
            for (std::size_t s = 0; s < layers.size(); ++s) {
                deltas[s] -= cfg.learning_rate * z[s] * grad_ref(g, layers[s]);
            }
        }

        const DenseNet eff = gated_weights(fused, layers, deltas, z);
        const Matrix x_adv = cfg.regenerate_pool ? pgd(eff, held.features, held.labels, cfg.pgd,
                                                       derive_seed(seed, {kPool, static_cast<std::uint64_t>(outer)}))
                                                 : fixed_pool;
        const GateObjective j = gate_objective(fused, layers, deltas, result.gates, held.features, held.labels, x_adv,
                                               held.labels, cfg.beta, cfg.lambda3);
        for (std::size_t s = 0; s < layers.size(); ++s) result.gates.logits[s] -= cfg.gate_learning_rate * j.grad_logits[s];
        result.report.objective_trace.push_back(j.value);
    }

    std::vector<std::size_t> chosen_slots = project_top_budget(result.gates);
    std::vector<std::size_t> trainable;
    for (auto s : chosen_slots) trainable.push_back(layers[s]);
    result.gates.selected = trainable;
    result.report.selected = trainable;
    result.report.final_gates = result.gates.gates();

    result.model = fused;
    if (!trainable.empty()) {
        for (int epoch = 0; epoch < cfg.final_epochs; ++epoch) {
            const auto batches = make_batches(train.size(), cfg.batch_size,
                                              derive_seed(seed, {kFinal, static_cast<std::uint64_t>(epoch)}));
            for (const auto& batch : batches) {
                const auto [x, y] = gather(train, batch);
                const ForwardTrace trace = forward_trace(result.model, x);
                const DenseGradients g = backward(result.model, trace, cross_entropy(trace.logits, y).dlogits);
                dense_sgd_step(result.model, g, cfg.learning_rate, trainable);
            }
        }
    }
    return result;
}

}  // namespace lorica
