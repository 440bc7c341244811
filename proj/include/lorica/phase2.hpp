#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "lorica/attacks.hpp"
#include "lorica/data.hpp"
#include "lorica/model.hpp"
#include "lorica/training.hpp"

namespace lorica {

/// Per-layer sigmoid gates over the selectable layers of a fused model.
struct GateVector {
    std::vector<double> logits;
    int budget = 0;
    std::vector<std::size_t> selected;  // filled by project_top_budget

    std::vector<double> gates() const;
    std::size_t size() const { return logits.size(); }
};

double sigmoid(double v);

/// The `budget` largest gates (ties to the lower index), ascending.
std::vector<std::size_t> project_top_budget(const GateVector& gates);

struct Phase2Config {
    int outer_steps = 10;  // T3
    int inner_steps = 20;  // T4
    double beta = 5.0;
    double lambda3 = 1.0;
    int budget = 2;                         // B, absolute layer count
    std::optional<double> budget_fraction;  // overrides `budget` as a share of selectable layers
    double learning_rate = 0.005;
    double gate_learning_rate = 1.0;
    double gate_init_logit = 0.0;
    int batch_size = 32;
    int final_epochs = 5;
    double validation_fraction = 0.1;
    bool include_classifier = true;
    AdvPerturbation pgd;  // budget for the robustness term
    bool regenerate_pool = true;  // rebuild the adversarial pool every outer step; false keeps the one built on w_fus
    std::uint64_t seed = 0;
};

/// Selectable layer indices: backbone layers, then the classifier (index ==
/// number of backbone layers) when included.
std::vector<std::size_t> selectable_layers(const DenseNet& fused, bool include_classifier);

/// w_fus + z_r * delta_r on every selectable layer r.
DenseNet gated_weights(const DenseNet& fused, std::span<const std::size_t> layers, std::span<const Matrix> deltas,
                       std::span<const double> gates);

struct GateObjective {
    double value = 0.0;
    double acc_loss = 0.0;
    double rob_score = 0.0;  // negative cross-entropy on the adversarial pool
    std::vector<double> grad_logits;
};

/// J = CE_clean - beta * rob_score + lambda3 * [sum z - B]_+ evaluated at the
/// gated weights, with its gradient w.r.t. the gate logits. The robustness
/// score is the negated cross-entropy on the adversarial pool, so lowering J
/// lowers both clean and adversarial loss.
GateObjective gate_objective(const DenseNet& fused, std::span<const std::size_t> layers,
                             std::span<const Matrix> deltas, const GateVector& gates, const Matrix& x_clean,
                             std::span<const int> y_clean, const Matrix& x_adv, std::span<const int> y_adv,
                             double beta, double lambda3);

struct Phase2Report {
    int client_id = 0;
    int budget = 0;
    bool budget_clamped = false;
    std::vector<double> final_gates;
    std::vector<std::size_t> selected;
    std::vector<double> objective_trace;  // J after each outer step
};

nlohmann::json to_json(const Phase2Report& report);

struct Phase2Result {
    FusedModel model;
    GateVector gates;
    Phase2Report report;
};

/// Gated layer selection followed by benign retraining of the selected layers.
Phase2Result run_phase2(const ClientModel& client, const Dataset& train, const Phase2Config& cfg);

}  // namespace lorica
