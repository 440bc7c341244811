#pragma once

#include <cstdint>
#include <set>
#include <span>
#include <vector>

#include "lorica/data.hpp"
#include "lorica/model.hpp"

namespace lorica {

/// l_inf attack budget. Defaults: epsilon = 8/255 of a [0, 1] input range,
/// step = epsilon / 4, 10 iterations, uniform random start.
struct AdvPerturbation {
    double epsilon = 8.0 / 255.0;
    double step_size = 2.0 / 255.0;
    int iterations = 10;
    bool random_start = true;
    double clamp_lo = 0.0;
    double clamp_hi = 1.0;
};

/// Throws ConfigError on a negative budget or an empty clamp range.
void validate(const AdvPerturbation& p);

/// Gradient of the mean cross-entropy w.r.t. the input batch.
Matrix input_gradient(const DenseNet& net, const Matrix& x, std::span<const int> labels);

/// x + epsilon * sign(grad_x CE), clamped to the input range. The budget wins
/// over the clamp when x itself lies outside [lo, hi].
Matrix fgsm(const DenseNet& net, const Matrix& x, std::span<const int> labels, const AdvPerturbation& p);
Matrix fgsm(const ClientModel& model, const Matrix& x, std::span<const int> labels, const AdvPerturbation& p);

/// Iterated signed-gradient ascent with projection onto the epsilon box and
/// the clamp range after every step. `seed` drives the random start.
Matrix pgd(const DenseNet& net, const Matrix& x, std::span<const int> labels, const AdvPerturbation& p,
           std::uint64_t seed);
Matrix pgd(const ClientModel& model, const Matrix& x, std::span<const int> labels, const AdvPerturbation& p,
           std::uint64_t seed);

enum class ByzantineMode { none, label_flip, mpaf };

struct ByzantineSpec {
    ByzantineMode mode = ByzantineMode::none;
    std::set<int> malicious_ids;
    double rho = 0.0;
    double mpaf_scale = 10.0;
    double mpaf_target_std = 0.5;  // std of the attacker's random base adapters
    std::vector<int> flip_rule;    // permutation of [0, C)

    bool is_malicious(int client_id) const { return malicious_ids.count(client_id) > 0; }
};

/// round(rho * N) malicious clients chosen by `seed`; flip rule y -> (y + 1) mod C.
ByzantineSpec make_byzantine_spec(ByzantineMode mode, int num_clients, double rho, int num_classes,
                                  std::uint64_t seed, double mpaf_scale = 10.0);

bool is_derangement(std::span<const int> rule);

/// Labels mapped through spec.flip_rule; features untouched.
Dataset apply_label_flip(const Dataset& ds, const ByzantineSpec& spec);

/// current_global + scale * (attacker_target - current_global).
FlatVector mpaf_update(const FlatVector& current_global, const FlatVector& attacker_target, double scale);

/// The attacker's fixed random base adapters, same layout as `like`.
FlatVector mpaf_target(const FlatVector& like, double stddev, std::uint64_t seed);

}  // namespace lorica
