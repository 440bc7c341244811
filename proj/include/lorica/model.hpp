#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace lorica {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation { relu, identity };

/// One backbone layer with a frozen pretrained weight, a frozen down-projection
/// and a trainable up-projection. Shapes: w_pre (in x out), a_fixed (in x rank),
/// b_train (rank x out).
struct AdapterLayer {
    Matrix w_pre;
    Matrix a_fixed;
    Matrix b_train;
    Activation activation = Activation::relu;

    int in_dim() const { return static_cast<int>(w_pre.rows()); }
    int out_dim() const { return static_cast<int>(w_pre.cols()); }
    int rank() const { return static_cast<int>(a_fixed.cols()); }

    /// w_pre + a_fixed * b_train, computed on demand.
    Matrix effective_weight() const { return w_pre + a_fixed * b_train; }
};

/// Plain feed-forward network: dense layers followed by a linear classifier.
/// Doubles as the fused model and the pretrained backbone.
struct DenseNet {
    std::vector<Matrix> weights;
    std::vector<Activation> activations;
    Matrix classifier;

    std::size_t num_layers() const { return weights.size(); }
    int input_dim() const { return weights.empty() ? static_cast<int>(classifier.rows())
                                                   : static_cast<int>(weights.front().rows()); }
    int num_classes() const { return static_cast<int>(classifier.cols()); }
};

using FusedModel = DenseNet;

struct ClientModel {
    int client_id = 0;
    std::vector<AdapterLayer> backbone;
    Matrix classifier;  // feature_dim x num_classes
    int num_classes = 0;

    int input_dim() const { return backbone.empty() ? static_cast<int>(classifier.rows())
                                                    : backbone.front().in_dim(); }

    /// Dense view with effective weights.
    DenseNet effective() const;
};

/// Intermediate values of one forward pass, kept for backpropagation.
struct ForwardTrace {
    std::vector<Matrix> inputs;           // input to each dense layer
    std::vector<Matrix> pre_activations;  // x * W per dense layer
    Matrix features;                      // input to the classifier
    Matrix logits;
};

ForwardTrace forward_trace(const DenseNet& net, const Matrix& x);

/// Raw logits (batch x C). Throws DimensionError naming the offending layer.
Matrix forward(const DenseNet& net, const Matrix& x);
Matrix forward(const ClientModel& model, const Matrix& x);

struct DenseGradients {
    std::vector<Matrix> weights;
    Matrix classifier;
    Matrix input;  // d loss / d x, same shape as the batch
};

DenseGradients backward(const DenseNet& net, const ForwardTrace& trace, const Matrix& dlogits);

/// Gradients restricted to the trainable parameters of a ClientModel.
struct ModelGradients {
    std::vector<Matrix> b_train;
    Matrix classifier;

    static ModelGradients zeros_like(const ClientModel& model);
    ModelGradients& operator+=(const ModelGradients& other);
    ModelGradients& operator*=(double s);
};

/// Chain rule from effective-weight gradients onto the trainable factors.
ModelGradients restrict_to_trainable(const ClientModel& model, const DenseGradients& dense);

struct LogitLoss {
    double value = 0.0;
    Matrix dlogits;
};

using LogitLossFn = std::function<LogitLoss(const Matrix& logits, std::span<const int> labels)>;

struct LossAndGradients {
    double value = 0.0;
    ModelGradients grad;
};

/// Loss value and its gradient over b_train and the classifier. A non-finite
/// loss raises NonFiniteError carrying `batch_index`.
LossAndGradients gradients(const ClientModel& model, const LogitLossFn& loss, const Matrix& x,
                           std::span<const int> labels, long batch_index = 0);

/// Plain SGD step on the trainable parameters.
void sgd_step(ClientModel& model, const ModelGradients& grad, double learning_rate);

struct LayoutEntry {
    int layer = 0;
    int rows = 0;
    int cols = 0;

    bool operator==(const LayoutEntry&) const = default;
};

struct FlatVector {
    Vector values;
    std::vector<LayoutEntry> layout;

    std::size_t size() const { return static_cast<std::size_t>(values.size()); }
    bool same_layout(const FlatVector& other) const { return layout == other.layout; }
};

/// Throws DimensionError when the two vectors have different layouts.
void require_same_layout(const FlatVector& a, const FlatVector& b, const char* what);

/// Row-major concatenation of every b_train in layer order.
FlatVector flatten_adapters(const ClientModel& model);

/// Returns `model` with its b_train matrices replaced by the contents of `v`.
ClientModel unflatten_adapters(const FlatVector& v, ClientModel model);

/// Adapters followed by the classifier (layer index == number of backbone
/// layers). Only used by the whole-model averaging baseline.
FlatVector flatten_trainable(const ClientModel& model);
ClientModel unflatten_trainable(const FlatVector& v, ClientModel model);

FusedModel fuse(const ClientModel& model);

/// Wraps a pretrained dense network with low-rank adapters. a_fixed is drawn
/// from N(0, 1/r_in) using `adapter_seed` (so every client sharing the seed
/// shares the same down-projections); b_train starts at zero.
ClientModel make_client_model(const DenseNet& pretrained, int rank, std::uint64_t adapter_seed,
                              int client_id = 0);

/// He-initialised dense network; ReLU between hidden layers, identity on the
/// last backbone layer. dims = {input, hidden..., feature}.
DenseNet random_dense_net(std::span<const int> dims, int num_classes, std::uint64_t seed);

/// SHA-256 over every w_pre and a_fixed, in layer order.
std::string frozen_digest(const ClientModel& model);

}  // namespace lorica
