#include "lorica/model.hpp"

#include <cmath>
#include <random>
#include <string>

#include "lorica/digest.hpp"
#include "lorica/error.hpp"
#include "lorica/random.hpp"

namespace lorica {

namespace {

std::string shape(const Matrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void append_bytes(std::vector<std::byte>& out, const Matrix& m) {
    // Row-major so the digest does not depend on Eigen's storage order.
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            const double v = m(i, j);
            const auto* p = reinterpret_cast<const std::byte*>(&v);
            out.insert(out.end(), p, p + sizeof(double));
        }
    }
}

void write_row_major(const Matrix& m, Vector& dst, Eigen::Index& offset) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) dst[offset++] = m(i, j);
    }
}

void read_row_major(const Vector& src, Eigen::Index& offset, Matrix& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = src[offset++];
    }
}

}  // namespace

DenseNet ClientModel::effective() const {
    DenseNet net;
    net.weights.reserve(backbone.size());
    net.activations.reserve(backbone.size());
    for (const auto& layer : backbone) {
        net.weights.push_back(layer.effective_weight());
        net.activations.push_back(layer.activation);
    }
    net.classifier = classifier;
    return net;
}

ForwardTrace forward_trace(const DenseNet& net, const Matrix& x) {
    ForwardTrace trace;
    trace.inputs.reserve(net.weights.size());
    trace.pre_activations.reserve(net.weights.size());
    Matrix h = x;
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
        const Matrix& w = net.weights[l];
        if (h.cols() != w.rows()) {
            throw DimensionError(static_cast<int>(l),
                                 "input has " + std::to_string(h.cols()) +
                                     " columns but weight is " + shape(w));
        }
        trace.inputs.push_back(h);
        Matrix z = h * w;
        trace.pre_activations.push_back(z);
        h = net.activations[l] == Activation::relu ? Matrix(z.cwiseMax(0.0)) : z;
    }
    if (h.cols() != net.classifier.rows()) {
        throw DimensionError(static_cast<int>(net.weights.size()),
                             "classifier expects " + std::to_string(net.classifier.rows()) +
                                 " features, got " + std::to_string(h.cols()));
    }
    trace.logits = h * net.classifier;
    trace.features = std::move(h);
    return trace;
}

Matrix forward(const DenseNet& net, const Matrix& x) { return forward_trace(net, x).logits; }

Matrix forward(const ClientModel& model, const Matrix& x) { return forward(model.effective(), x); }

DenseGradients backward(const DenseNet& net, const ForwardTrace& trace, const Matrix& dlogits) {
    DenseGradients g;
    g.classifier = trace.features.transpose() * dlogits;
    Matrix dh = dlogits * net.classifier.transpose();
    g.weights.resize(net.weights.size());
    for (std::size_t k = net.weights.size(); k-- > 0;) {
        if (net.activations[k] == Activation::relu) {
            dh = dh.cwiseProduct((trace.pre_activations[k].array() > 0.0).cast<double>().matrix());
        }
        g.weights[k] = trace.inputs[k].transpose() * dh;
        dh = dh * net.weights[k].transpose();
    }
    g.input = std::move(dh);
    return g;
}

ModelGradients ModelGradients::zeros_like(const ClientModel& model) {
    ModelGradients g;
    for (const auto& layer : model.backbone) {
        g.b_train.push_back(Matrix::Zero(layer.b_train.rows(), layer.b_train.cols()));
    }
    g.classifier = Matrix::Zero(model.classifier.rows(), model.classifier.cols());
    return g;
}

ModelGradients& ModelGradients::operator+=(const ModelGradients& other) {
    for (std::size_t l = 0; l < b_train.size(); ++l) b_train[l] += other.b_train[l];
    classifier += other.classifier;
    return *this;
}

ModelGradients& ModelGradients::operator*=(double s) {
    for (auto& b : b_train) b *= s;
    classifier *= s;
    return *this;
}

ModelGradients restrict_to_trainable(const ClientModel& model, const DenseGradients& dense) {
    ModelGradients g;
    g.b_train.reserve(model.backbone.size());
    for (std::size_t l = 0; l < model.backbone.size(); ++l) {
        g.b_train.push_back(model.backbone[l].a_fixed.transpose() * dense.weights[l]);
    }
    g.classifier = dense.classifier;
    return g;
}

LossAndGradients gradients(const ClientModel& model, const LogitLossFn& loss, const Matrix& x,
                           std::span<const int> labels, long batch_index) {
    const DenseNet net = model.effective();
    const ForwardTrace trace = forward_trace(net, x);
    LogitLoss l = loss(trace.logits, labels);
    if (!std::isfinite(l.value)) throw NonFiniteError(batch_index, "loss is not finite");
    return {l.value, restrict_to_trainable(model, backward(net, trace, l.dlogits))};
}

void sgd_step(ClientModel& model, const ModelGradients& grad, double learning_rate) {
    for (std::size_t l = 0; l < model.backbone.size(); ++l) {
        model.backbone[l].b_train -= learning_rate * grad.b_train[l];
    }
    model.classifier -= learning_rate * grad.classifier;
}

void require_same_layout(const FlatVector& a, const FlatVector& b, const char* what) {
    if (!a.same_layout(b) || a.values.size() != b.values.size()) {
        throw DimensionError(-1, std::string(what) + ": flat vector layouts differ");
    }
}

FlatVector flatten_adapters(const ClientModel& model) {
    FlatVector v;
    Eigen::Index total = 0;
    for (std::size_t l = 0; l < model.backbone.size(); ++l) {
        const Matrix& b = model.backbone[l].b_train;
        v.layout.push_back({static_cast<int>(l), static_cast<int>(b.rows()), static_cast<int>(b.cols())});
        total += b.size();
    }
    v.values.resize(total);
    Eigen::Index offset = 0;
    for (const auto& layer : model.backbone) write_row_major(layer.b_train, v.values, offset);
    return v;
}

ClientModel unflatten_adapters(const FlatVector& v, ClientModel model) {
    if (v.layout.size() != model.backbone.size()) {
        throw DimensionError(-1, "flat vector has " + std::to_string(v.layout.size()) +
                                     " layers, model has " + std::to_string(model.backbone.size()));
    }
    Eigen::Index total = 0;
    for (std::size_t l = 0; l < v.layout.size(); ++l) {
        const auto& e = v.layout[l];
        const Matrix& b = model.backbone[l].b_train;
        if (e.layer != static_cast<int>(l) || e.rows != b.rows() || e.cols != b.cols()) {
            throw DimensionError(static_cast<int>(l), "layout entry does not match b_train " + shape(b));
        }
        total += static_cast<Eigen::Index>(e.rows) * e.cols;
    }
    if (total != v.values.size()) throw DimensionError(-1, "flat vector length does not match layout");
    Eigen::Index offset = 0;
    for (auto& layer : model.backbone) read_row_major(v.values, offset, layer.b_train);
    return model;
}

FlatVector flatten_trainable(const ClientModel& model) {
    FlatVector v = flatten_adapters(model);
    const Eigen::Index adapters = v.values.size();
    v.layout.push_back({static_cast<int>(model.backbone.size()), static_cast<int>(model.classifier.rows()),
                        static_cast<int>(model.classifier.cols())});
    v.values.conservativeResize(adapters + model.classifier.size());
    Eigen::Index offset = adapters;
    write_row_major(model.classifier, v.values, offset);
    return v;
}

ClientModel unflatten_trainable(const FlatVector& v, ClientModel model) {
    if (v.layout.size() != model.backbone.size() + 1) {
        throw DimensionError(-1, "flat vector does not carry a classifier block");
    }
    const LayoutEntry& head = v.layout.back();
    if (head.rows != model.classifier.rows() || head.cols != model.classifier.cols()) {
        throw DimensionError(static_cast<int>(model.backbone.size()), "classifier block shape mismatch");
    }
    FlatVector adapters;
    adapters.layout.assign(v.layout.begin(), v.layout.end() - 1);
    const Eigen::Index n_adapters = v.values.size() - model.classifier.size();
    adapters.values = v.values.head(n_adapters);
    model = unflatten_adapters(adapters, std::move(model));
    Eigen::Index offset = n_adapters;
    read_row_major(v.values, offset, model.classifier);
    return model;
}

FusedModel fuse(const ClientModel& model) { return model.effective(); }

ClientModel make_client_model(const DenseNet& pretrained, int rank, std::uint64_t adapter_seed,
                              int client_id) {
    ClientModel m;
    m.client_id = client_id;
    m.classifier = pretrained.classifier;
    m.num_classes = pretrained.num_classes();
    Rng rng(adapter_seed);
    for (std::size_t l = 0; l < pretrained.weights.size(); ++l) {
        const Matrix& w = pretrained.weights[l];
        if (rank < 1 || rank > std::min(w.rows(), w.cols())) {
            throw DimensionError(static_cast<int>(l), "rank " + std::to_string(rank) +
                                                          " outside [1, min(r_in, r_out)]");
        }
        AdapterLayer layer;
        layer.w_pre = w;
        layer.activation = pretrained.activations[l];
        std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(w.rows())));
        layer.a_fixed.resize(w.rows(), rank);
        for (Eigen::Index i = 0; i < layer.a_fixed.rows(); ++i) {
            for (Eigen::Index j = 0; j < rank; ++j) layer.a_fixed(i, j) = normal(rng);
        }
        layer.b_train = Matrix::Zero(rank, w.cols());
        m.backbone.push_back(std::move(layer));
    }
    return m;
}

DenseNet random_dense_net(std::span<const int> dims, int num_classes, std::uint64_t seed) {
    if (dims.size() < 2 || num_classes < 2) throw DimensionError(-1, "need at least one layer and two classes");
    DenseNet net;
    Rng rng(seed);
    auto fill = [&rng](Eigen::Index rows, Eigen::Index cols) {
        std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(rows)));
        Matrix m(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i) {
            for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = normal(rng);
        }
        return m;
    };
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        net.weights.push_back(fill(dims[l], dims[l + 1]));
        net.activations.push_back(l + 2 < dims.size() ? Activation::relu : Activation::identity);
    }
    net.classifier = fill(dims.back(), num_classes);
    return net;
}

std::string frozen_digest(const ClientModel& model) {
    std::vector<std::byte> bytes;
    for (const auto& layer : model.backbone) {
        append_bytes(bytes, layer.w_pre);
        append_bytes(bytes, layer.a_fixed);
    }
    return sha256_hex(bytes);
}

}  // namespace lorica
