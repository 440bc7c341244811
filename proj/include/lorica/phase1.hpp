#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "lorica/aggregation.hpp"
#include "lorica/attacks.hpp"
#include "lorica/data.hpp"
#include "lorica/losses.hpp"
#include "lorica/model.hpp"
#include "lorica/training.hpp"

namespace lorica {

enum class Aggregator { lorica, fedavg };

struct Phase1Config {
    int rounds = 30;       // T1
    int local_epochs = 5;  // T2
    double learning_rate = 0.005;
    int batch_size = 32;
    AggregationParams aggregation;
    LossWeights loss;
    double gamma = 0.9;
    double eps_smooth = 0.9;
    AdvPerturbation pgd;                          // training-time attack
    std::optional<AdvPerturbation> eval_attack;   // per-round AR; empty skips AR
    bool evaluate_rounds = true;
    ByzantineSpec byzantine;
    Aggregator aggregator = Aggregator::lorica;
    bool share_classifier = false;  // whole-model averaging baseline
    int threads = 1;
    std::uint64_t seed = 0;
};

/// One client's private data. Only the orchestrator's client side reads it.
struct ClientData {
    Dataset train;
    Dataset test;
};

struct LossBreakdown {
    double total = 0.0;
    double adversarial = 0.0;
    double smoothness = 0.0;
    double reference = 0.0;
    std::size_t batches = 0;
};

struct ClientRoundStats {
    int client_id = 0;
    bool malicious = false;
    LossBreakdown loss;  // averaged over the round's batches; zero for MPAF uploads
    Accuracy accuracy;   // deployed model (new global + local classifier) on the local test split
};

struct RoundReport {
    int round = 0;
    std::vector<ClientRoundStats> clients;
    double grad_norm_sq = 0.0;  // ||(w_g^t - w_g^{t+1}) / zeta||^2
    bool skipped = false;       // aggregation aborted; previous global kept
    AggregationReport aggregation;
};

nlohmann::json to_json(const RoundReport& report);

struct Phase1Result {
    std::vector<ClientModel> clients;     // final global adapters + local classifiers
    FlatVector global;                    // adapter vector (plus classifier block when shared)
    std::vector<FlatVector> global_history;  // w_g^0 ... w_g^T
    std::vector<RoundReport> rounds;
};

/// Per-client mutable training state.
struct LocalState {
    ClientModel model;
    ClassWeights weights;
};

/// One pass of minibatch SGD over `train` on the three-term loss with PGD
/// examples generated per batch. Class weights advance once at epoch start.
LossBreakdown local_train_epoch(LocalState& state, const Dataset& train, const FlatVector& w_ref,
                                const Phase1Config& cfg, std::uint64_t epoch_seed);

using RoundCallback = std::function<void(const RoundReport&)>;

/// Federated adversarial fine-tuning of the adapters. `initial` holds one
/// model per client (shared frozen parts, zero adapters); `clients[i]` is the
/// matching private data. Deterministic for a fixed config and seed,
/// independent of `cfg.threads`.
Phase1Result run_phase1(const Phase1Config& cfg, std::span<const ClientData> clients,
                        std::vector<ClientModel> initial, const RoundCallback& on_round = {});

struct ConvergenceSeries {
    std::vector<double> grad_norm_sq;
    std::vector<double> running_average;
};

/// ||(w^t - w^{t+1}) / zeta||^2 for consecutive globals and its running mean.
ConvergenceSeries convergence_monitor(std::span<const FlatVector> globals, double zeta);
ConvergenceSeries convergence_monitor(std::span<const RoundReport> reports);

/// Equivalent step size used by the monitor: learning_rate * local_epochs.
inline double equivalent_step(const Phase1Config& cfg) { return cfg.learning_rate * cfg.local_epochs; }

}  // namespace lorica
