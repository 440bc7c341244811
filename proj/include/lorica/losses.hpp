#pragma once

#include <span>
#include <vector>

#include "lorica/model.hpp"

namespace lorica {

/// Row-wise softmax with max subtraction.
Matrix softmax_rows(const Matrix& logits);

/// Floor applied to probabilities before taking logs in the KL term.
inline constexpr double kProbabilityFloor = 1e-12;

/// Per-class weights for the class-balanced adversarial loss.
struct ClassWeights {
    Vector base;        // (1 - gamma) / (1 - gamma^{n_c})
    Vector adaptive;    // exponentially smoothed base weights
    Vector normalized;  // adaptive / sum(adaptive)
    double gamma = 0.9;
    double eps_smooth = 0.9;
    int epoch = 0;
};

struct LossWeights {
    double lambda1 = 20.0;
    double lambda2 = 0.001;
    double eta = 0.5;
};

/// (1 - gamma) / (1 - gamma^{n_c}); absent classes (n_c == 0) get weight 1.
double base_weight(std::size_t n_c, double gamma);
Vector base_weights(std::span<const std::size_t> counts, double gamma);

/// eps * prev.adaptive + (1 - eps) * base_now.
Vector smooth_weights(const ClassWeights& prev, const Vector& base_now, double eps_smooth);

/// Divides by the sum; throws RuntimeError when the sum is not positive.
Vector normalize_weights(const Vector& adaptive);

/// Epoch-0 state: adaptive and normalized weights uniform at 1/C.
ClassWeights initial_class_weights(int num_classes, double gamma, double eps_smooth);

/// One epoch of the smoothing recursion using the client's class counts.
ClassWeights advance_class_weights(const ClassWeights& prev, std::span<const std::size_t> counts);

/// Mean over the batch of w[y] * CE(softmax(logits), y).
LogitLoss weighted_cross_entropy(const Matrix& logits, std::span<const int> labels,
                                 std::span<const double> class_weights);
LogitLoss cross_entropy(const Matrix& logits, std::span<const int> labels);

struct KlTerm {
    double value = 0.0;
    Matrix d_clean;  // gradient w.r.t. the clean-branch logits
    Matrix d_adv;    // gradient w.r.t. the adversarial-branch logits
};

/// Mean over the batch of KL(softmax(clean) || softmax(adv)).
KlTerm kl_divergence(const Matrix& clean_logits, const Matrix& adv_logits);

LossAndGradients loss_A(const ClientModel& model, const Matrix& x_adv, std::span<const int> labels,
                        const ClassWeights& weights);
LossAndGradients loss_A(const ClientModel& model, const Matrix& x_adv, std::span<const int> labels,
                        std::span<const double> class_weights);

LossAndGradients loss_S(const ClientModel& model, const Matrix& x, const Matrix& x_adv);

/// (1 - eta) * global + eta * expert.
FlatVector reference_model(const FlatVector& global, const FlatVector& expert, double eta);

struct FlatLoss {
    double value = 0.0;
    Vector grad;
};

/// ||local - ref||^2 and its gradient 2 (local - ref).
FlatLoss loss_R(const FlatVector& local, const FlatVector& ref);

struct TotalLoss {
    double total = 0.0;
    double adversarial = 0.0;  // L_A
    double smoothness = 0.0;   // L_S
    double reference = 0.0;    // L_R
    ModelGradients grad;
};

/// L_A + lambda1 * L_S + lambda2 * L_R, with L_R over the adapter vector only.
TotalLoss total_loss(const ClientModel& model, const Matrix& x, const Matrix& x_adv,
                     std::span<const int> labels, const ClassWeights& weights, const FlatVector& w_ref,
                     const LossWeights& lw, long batch_index = 0);

/// acc_loss - beta * rob_score + lambda3 * max(sum(gates) - budget, 0).
double phase2_objective(double acc_loss, double rob_score, std::span<const double> gates, double beta,
                        double lambda3, double budget);

}  // namespace lorica
