#include "lorica/losses.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "lorica/error.hpp"

namespace lorica {

namespace {

void check_gamma(double gamma) {
    if (!(gamma >= 0.5 && gamma <= 0.99)) {
        throw ConfigError("gamma must lie in [0.5, 0.99], got " + std::to_string(gamma));
    }
}

void check_labels(std::span<const int> labels, Eigen::Index rows, Eigen::Index classes) {
    if (static_cast<Eigen::Index>(labels.size()) != rows) {
        throw DimensionError(-1, "batch has " + std::to_string(rows) + " rows but " +
                                     std::to_string(labels.size()) + " labels");
    }
    for (std::size_t b = 0; b < labels.size(); ++b) {
        if (labels[b] < 0 || labels[b] >= classes) {
            throw RuntimeError("label " + std::to_string(labels[b]) + " at batch row " + std::to_string(b) +
                               " outside [0, " + std::to_string(classes) + ")");
        }
    }
}

}  // namespace

Matrix softmax_rows(const Matrix& logits) {
    Matrix p(logits.rows(), logits.cols());
    for (Eigen::Index b = 0; b < logits.rows(); ++b) {
        const double m = logits.row(b).maxCoeff();
        p.row(b) = (logits.row(b).array() - m).exp().matrix();
        p.row(b) /= p.row(b).sum();
    }
    return p;
}

double base_weight(std::size_t n_c, double gamma) {
    check_gamma(gamma);
    if (n_c == 0) return 1.0;
    return (1.0 - gamma) / (1.0 - std::pow(gamma, static_cast<double>(n_c)));
}

Vector base_weights(std::span<const std::size_t> counts, double gamma) {
    Vector v(static_cast<Eigen::Index>(counts.size()));
    for (std::size_t c = 0; c < counts.size(); ++c) v[static_cast<Eigen::Index>(c)] = base_weight(counts[c], gamma);
    return v;
}

Vector smooth_weights(const ClassWeights& prev, const Vector& base_now, double eps_smooth) {
    if (prev.adaptive.size() != base_now.size()) throw DimensionError(-1, "smooth_weights: length mismatch");
    return eps_smooth * prev.adaptive + (1.0 - eps_smooth) * base_now;
}

Vector normalize_weights(const Vector& adaptive) {
    const double total = adaptive.sum();
    if (!(total > 0.0)) throw RuntimeError("normalize_weights: weights sum to zero");
    return adaptive / total;
}

ClassWeights initial_class_weights(int num_classes, double gamma, double eps_smooth) {
    check_gamma(gamma);
    if (eps_smooth < 0.0 || eps_smooth > 1.0) throw ConfigError("eps_smooth must lie in [0, 1]");
    ClassWeights w;
    w.gamma = gamma;
    w.eps_smooth = eps_smooth;
    w.base = Vector::Ones(num_classes);
    w.adaptive = Vector::Constant(num_classes, 1.0 / num_classes);
    w.normalized = w.adaptive;
    return w;
}

ClassWeights advance_class_weights(const ClassWeights& prev, std::span<const std::size_t> counts) {
    ClassWeights next = prev;
    next.base = base_weights(counts, prev.gamma);
    next.adaptive = smooth_weights(prev, next.base, prev.eps_smooth);
    next.normalized = normalize_weights(next.adaptive);
    next.epoch = prev.epoch + 1;
    return next;
}

LogitLoss weighted_cross_entropy(const Matrix& logits, std::span<const int> labels,
                                 std::span<const double> class_weights) {
    check_labels(labels, logits.rows(), logits.cols());
    if (static_cast<Eigen::Index>(class_weights.size()) != logits.cols()) {
        throw DimensionError(-1, "class weight vector length differs from number of classes");
    }
    LogitLoss out;
    const auto n = static_cast<double>(logits.rows());
    out.dlogits = softmax_rows(logits);
    for (Eigen::Index b = 0; b < logits.rows(); ++b) {
        const int y = labels[static_cast<std::size_t>(b)];
        const double w = class_weights[static_cast<std::size_t>(y)];
        const double m = logits.row(b).maxCoeff();
        const double lse = m + std::log((logits.row(b).array() - m).exp().sum());
        out.value += w * (lse - logits(b, y));
        out.dlogits(b, y) -= 1.0;
        out.dlogits.row(b) *= w / n;
    }
    out.value /= n;
    return out;
}

LogitLoss cross_entropy(const Matrix& logits, std::span<const int> labels) {
    const std::vector<double> ones(static_cast<std::size_t>(logits.cols()), 1.0);
    return weighted_cross_entropy(logits, labels, ones);
}

KlTerm kl_divergence(const Matrix& clean_logits, const Matrix& adv_logits) {
    if (clean_logits.rows() != adv_logits.rows() || clean_logits.cols() != adv_logits.cols()) {
        throw DimensionError(-1, "kl_divergence: logits shapes differ");
    }
    if (!clean_logits.allFinite() || !adv_logits.allFinite()) throw NonFiniteError(0, "kl_divergence: non-finite logits");
    const Matrix p = softmax_rows(clean_logits);
    const Matrix q = softmax_rows(adv_logits);
    const auto n = static_cast<double>(clean_logits.rows());
    const Matrix log_ratio = (p.array().max(kProbabilityFloor).log() - q.array().max(kProbabilityFloor).log()).matrix();
    KlTerm out;
    out.d_clean.resize(p.rows(), p.cols());
    for (Eigen::Index b = 0; b < p.rows(); ++b) {
        const double kl_b = p.row(b).dot(log_ratio.row(b));
        out.value += kl_b;
        out.d_clean.row(b) = p.row(b).cwiseProduct((log_ratio.row(b).array() - kl_b).matrix()) / n;
    }
    out.d_adv = (q - p) / n;
    out.value /= n;
    return out;
}

LossAndGradients loss_A(const ClientModel& model, const Matrix& x_adv, std::span<const int> labels,
                        std::span<const double> class_weights) {
    auto fn = [&](const Matrix& logits, std::span<const int> y) {
        return weighted_cross_entropy(logits, y, class_weights);
    };
    return gradients(model, fn, x_adv, labels);
}

LossAndGradients loss_A(const ClientModel& model, const Matrix& x_adv, std::span<const int> labels,
                        const ClassWeights& weights) {
    return loss_A(model, x_adv, labels,
                  std::span<const double>(weights.normalized.data(), static_cast<std::size_t>(weights.normalized.size())));
}

LossAndGradients loss_S(const ClientModel& model, const Matrix& x, const Matrix& x_adv) {
    const DenseNet net = model.effective();
    const ForwardTrace clean = forward_trace(net, x);
    const ForwardTrace adv = forward_trace(net, x_adv);
    const KlTerm kl = kl_divergence(clean.logits, adv.logits);
    LossAndGradients out;
    out.value = kl.value;
    out.grad = restrict_to_trainable(model, backward(net, clean, kl.d_clean));
    out.grad += restrict_to_trainable(model, backward(net, adv, kl.d_adv));
    return out;
}

FlatVector reference_model(const FlatVector& global, const FlatVector& expert, double eta) {
    require_same_layout(global, expert, "reference_model");
    FlatVector out;
    out.layout = global.layout;
    out.values = (1.0 - eta) * global.values + eta * expert.values;
    return out;
}

FlatLoss loss_R(const FlatVector& local, const FlatVector& ref) {
    require_same_layout(local, ref, "loss_R");
    const Vector diff = local.values - ref.values;
    return {diff.squaredNorm(), 2.0 * diff};
}

TotalLoss total_loss(const ClientModel& model, const Matrix& x, const Matrix& x_adv,
                     std::span<const int> labels, const ClassWeights& weights, const FlatVector& w_ref,
                     const LossWeights& lw, long batch_index) {
    const DenseNet net = model.effective();
    const ForwardTrace clean = forward_trace(net, x);
    const ForwardTrace adv = forward_trace(net, x_adv);

    const LogitLoss la = weighted_cross_entropy(
        adv.logits, labels,
        std::span<const double>(weights.normalized.data(), static_cast<std::size_t>(weights.normalized.size())));
    const KlTerm ls = kl_divergence(clean.logits, adv.logits);
    const FlatLoss lr = loss_R(flatten_adapters(model), w_ref);

    TotalLoss out;
    out.adversarial = la.value;
    out.smoothness = ls.value;
    out.reference = lr.value;
    out.total = la.value + lw.lambda1 * ls.value + lw.lambda2 * lr.value;
    if (!std::isfinite(out.total)) throw NonFiniteError(batch_index, "total loss is not finite");

    const Matrix d_adv = la.dlogits + lw.lambda1 * ls.d_adv;
    out.grad = restrict_to_trainable(model, backward(net, adv, d_adv));
    if (lw.lambda1 != 0.0) {
        const Matrix d_clean = lw.lambda1 * ls.d_clean;
        out.grad += restrict_to_trainable(model, backward(net, clean, d_clean));
    }
    FlatVector g_ref;
    g_ref.layout = w_ref.layout;
    g_ref.values = lw.lambda2 * lr.grad;
    const ClientModel ref_grad = unflatten_adapters(g_ref, model);
    for (std::size_t l = 0; l < model.backbone.size(); ++l) out.grad.b_train[l] += ref_grad.backbone[l].b_train;
    return out;
}

double phase2_objective(double acc_loss, double rob_score, std::span<const double> gates, double beta,
                        double lambda3, double budget) {
    const double open = std::accumulate(gates.begin(), gates.end(), 0.0);
    return acc_loss - beta * rob_score + lambda3 * std::max(open - budget, 0.0);
}

}  // namespace lorica
