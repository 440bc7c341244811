#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "lorica/attacks.hpp"
#include "lorica/data.hpp"
#include "lorica/model.hpp"

namespace lorica {

struct Accuracy {
    double ba = 0.0;  // clean accuracy
    double ar = 0.0;  // accuracy under the attack (equals ba without one)
};

/// Argmax of each logit row; ties resolve to the lower class.
std::vector<int> predict(const DenseNet& net, const Matrix& x);

double accuracy(const DenseNet& net, const Matrix& x, std::span<const int> labels);

/// Benign accuracy and accuracy on PGD examples built with `attack`.
/// Throws RuntimeError on an empty test set.
Accuracy evaluate(const DenseNet& net, const Dataset& test, const std::optional<AdvPerturbation>& attack,
                  std::uint64_t seed = 0);
Accuracy evaluate(const ClientModel& model, const Dataset& test, const std::optional<AdvPerturbation>& attack,
                  std::uint64_t seed = 0);

/// Shuffled minibatch index lists covering every sample once.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, int batch_size, std::uint64_t seed);

/// Rows of `ds` picked by `indices`, as (features, labels).
std::pair<Matrix, std::vector<int>> gather(const Dataset& ds, std::span<const std::size_t> indices);

struct PretrainConfig {
    int epochs = 20;
    double learning_rate = 0.05;
    int batch_size = 32;
    std::uint64_t seed = 0;
};

/// Trains a dense network of shape `dims` (+ classifier) with plain SGD on
/// cross-entropy. This stands in for the public pretrained backbone.
DenseNet pretrain_backbone(const Dataset& pool, std::span<const int> dims, const PretrainConfig& cfg);

/// SGD on the dense layers listed in `trainable` (index == num_layers is the
/// classifier); every other layer is left untouched.
void dense_sgd_step(DenseNet& net, const DenseGradients& grad, double learning_rate,
                    std::span<const std::size_t> trainable);

}  // namespace lorica
