#include "lorica/phase1.hpp"

#include <cmath>
#include <iostream>

#include "lorica/parallel.hpp"
#include "lorica/random.hpp"
#include "lorica/training.hpp"

namespace lorica {

namespace {

enum SeedTag : std::uint64_t { kTrain = 1, kMpaf = 2, kEval = 3 };

FlatVector share_vector(const ClientModel& m, bool share_classifier) {
    return share_classifier ? flatten_trainable(m) : flatten_adapters(m);
}

ClientModel download(const FlatVector& global, ClientModel m, bool share_classifier) {
    return share_classifier ? unflatten_trainable(global, std::move(m)) : unflatten_adapters(global, std::move(m));
}

FlatVector adapter_part(const FlatVector& v, std::size_t num_layers) {
    if (v.layout.size() == num_layers) return v;
    FlatVector out;
    out.layout.assign(v.layout.begin(), v.layout.begin() + static_cast<std::ptrdiff_t>(num_layers));
    Eigen::Index n = 0;
    for (const auto& e : out.layout) n += static_cast<Eigen::Index>(e.rows) * e.cols;
    out.values = v.values.head(n);
    return out;
}

}  // namespace

nlohmann::json to_json(const RoundReport& report) {
    nlohmann::json clients = nlohmann::json::array();
    for (const auto& c : report.clients) {
        clients.push_back({{"client_id", c.client_id},
                           {"malicious", c.malicious},
                           {"loss_total", c.loss.total},
                           {"loss_adversarial", c.loss.adversarial},
                           {"loss_smoothness", c.loss.smoothness},
                           {"loss_reference", c.loss.reference},
                           {"ba", c.accuracy.ba},
                           {"ar", c.accuracy.ar}});
    }
    return {{"schema", "lorica.round_report.v1"},
            {"round", report.round},
            {"skipped", report.skipped},
            {"grad_norm_sq", report.grad_norm_sq},
            {"clients", clients},
            {"aggregation", to_json(report.aggregation)}};
}

LossBreakdown local_train_epoch(LocalState& state, const Dataset& train, const FlatVector& w_ref,
                                const Phase1Config& cfg, std::uint64_t epoch_seed) {
    const auto counts = class_counts(train);
    state.weights = advance_class_weights(state.weights, counts);
    LossBreakdown sum;
    const auto batches = make_batches(train.size(), cfg.batch_size, epoch_seed);
    for (std::size_t b = 0; b < batches.size(); ++b) {
        const auto [x, y] = gather(train, batches[b]);
        const Matrix x_adv = pgd(state.model, x, y, cfg.pgd, derive_seed(epoch_seed, {b}));
        const TotalLoss l = total_loss(state.model, x, x_adv, y, state.weights, w_ref, cfg.loss,
                                       static_cast<long>(b));
        sgd_step(state.model, l.grad, cfg.learning_rate);
        sum.total += l.total;
        sum.adversarial += l.adversarial;
        sum.smoothness += l.smoothness;
        sum.reference += l.reference;
        ++sum.batches;
    }
    return sum;
}

Phase1Result run_phase1(const Phase1Config& cfg, std::span<const ClientData> clients,
                        std::vector<ClientModel> initial, const RoundCallback& on_round) {
    if (cfg.rounds < 0 || cfg.local_epochs < 1) throw ConfigError("phase1: rounds >= 0 and local_epochs >= 1 required");
    if (initial.size() != clients.size() || clients.empty()) {
        throw ConfigError("phase1: need one initial model per client");
    }
    const std::size_t n = clients.size();
    const std::size_t num_layers = initial.front().backbone.size();
    const bool share = cfg.share_classifier;

    std::vector<LocalState> states;
    std::vector<Dataset> train_sets;
    for (std::size_t i = 0; i < n; ++i) {
        initial[i].client_id = static_cast<int>(i);
        states.push_back({initial[i], initial_class_weights(initial[i].num_classes, cfg.gamma, cfg.eps_smooth)});
        const bool flip = cfg.byzantine.mode == ByzantineMode::label_flip && cfg.byzantine.is_malicious(static_cast<int>(i));
        train_sets.push_back(flip ? apply_label_flip(clients[i].train, cfg.byzantine) : clients[i].train);
    }

    Phase1Result result;
    FlatVector global = share_vector(initial.front(), share);
    std::vector<FlatVector> experts(n, adapter_part(global, num_layers));
    std::vector<FlatVector> mpaf_targets(n);
    if (cfg.byzantine.mode == ByzantineMode::mpaf) {
        for (int id : cfg.byzantine.malicious_ids) {
            if (id < 0 || static_cast<std::size_t>(id) >= n) continue;
            mpaf_targets[static_cast<std::size_t>(id)] =
                mpaf_target(global, cfg.byzantine.mpaf_target_std, derive_seed(cfg.seed, {kMpaf, static_cast<std::uint64_t>(id)}));
        }
    }
    result.global_history.push_back(global);
    const double zeta = equivalent_step(cfg);

    for (int t = 1; t <= cfg.rounds; ++t) {
        RoundReport report;
        report.round = t;
        report.clients.resize(n);
        std::vector<ClientUpload> uploads(n);

        parallel_for(n, cfg.threads, [&](std::size_t i) {
            const int id = static_cast<int>(i);
            LocalState& st = states[i];
            ClientRoundStats& stats = report.clients[i];
            stats.client_id = id;
            stats.malicious = cfg.byzantine.mode != ByzantineMode::none && cfg.byzantine.is_malicious(id);
            st.model = download(global, std::move(st.model), share);

            ClientUpload& up = uploads[i];
            up.client_id = id;
            up.num_samples = train_sets[i].size();
            if (cfg.byzantine.mode == ByzantineMode::mpaf && stats.malicious) {
                up.adapters = mpaf_update(global, mpaf_targets[i], cfg.byzantine.mpaf_scale);
                return;
            }
            const FlatVector w_ref = reference_model(adapter_part(global, num_layers), experts[i], cfg.loss.eta);
            LossBreakdown sum;
            for (int e = 0; e < cfg.local_epochs; ++e) {
                const auto seed = derive_seed(cfg.seed, {kTrain, static_cast<std::uint64_t>(t), i, static_cast<std::uint64_t>(e)});
                const LossBreakdown l = local_train_epoch(st, train_sets[i], w_ref, cfg, seed);
                sum.total += l.total;
                sum.adversarial += l.adversarial;
                sum.smoothness += l.smoothness;
                sum.reference += l.reference;
                sum.batches += l.batches;
            }
            if (sum.batches > 0) {
                const auto nb = static_cast<double>(sum.batches);
                stats.loss = {sum.total / nb, sum.adversarial / nb, sum.smoothness / nb, sum.reference / nb, sum.batches};
            }
            up.adapters = share_vector(st.model, share);
        });

        report.aggregation = cfg.aggregator == Aggregator::lorica ? lorica_aggregate(uploads, cfg.aggregation)
                                                                  : fedavg_aggregate(uploads);
        const FlatVector previous = global;
        if (report.aggregation.aborted) {
            report.skipped = true;
            std::cerr << "warning: round " << t << " aggregation aborted; keeping previous global\n";
        } else {
            global = report.aggregation.global;
            for (std::size_t i = 0; i < n; ++i) {
                const auto e = static_cast<std::size_t>(report.aggregation.cluster_of[i]);
                experts[i] = adapter_part(report.aggregation.experts[e], num_layers);
            }
        }
        report.grad_norm_sq = zeta > 0.0 ? ((previous.values - global.values) / zeta).squaredNorm() : 0.0;
        result.global_history.push_back(global);

        if (cfg.evaluate_rounds) {
            parallel_for(n, cfg.threads, [&](std::size_t i) {
                if (clients[i].test.empty()) return;
                const ClientModel deployed = download(global, states[i].model, share);
                report.clients[i].accuracy = evaluate(deployed, clients[i].test, cfg.eval_attack,
                                                      derive_seed(cfg.seed, {kEval, static_cast<std::uint64_t>(t), i}));
            });
        }
        if (on_round) on_round(report);
        result.rounds.push_back(std::move(report));
    }

    for (auto& st : states) result.clients.push_back(download(global, std::move(st.model), share));
    result.global = std::move(global);
    return result;
}

ConvergenceSeries convergence_monitor(std::span<const FlatVector> globals, double zeta) {
    ConvergenceSeries s;
    if (!(zeta > 0.0)) throw ConfigError("convergence monitor needs a positive step size");
    double running = 0.0;
    for (std::size_t t = 0; t + 1 < globals.size(); ++t) {
        require_same_layout(globals[t], globals[t + 1], "convergence_monitor");
        const double g = ((globals[t].values - globals[t + 1].values) / zeta).squaredNorm();
        s.grad_norm_sq.push_back(g);
        running += g;
        s.running_average.push_back(running / static_cast<double>(t + 1));
    }
    return s;
}

ConvergenceSeries convergence_monitor(std::span<const RoundReport> reports) {
    ConvergenceSeries s;
    double running = 0.0;
    for (std::size_t t = 0; t < reports.size(); ++t) {
        s.grad_norm_sq.push_back(reports[t].grad_norm_sq);
        running += reports[t].grad_norm_sq;
        s.running_average.push_back(running / static_cast<double>(t + 1));
    }
    return s;
}

}  // namespace lorica
