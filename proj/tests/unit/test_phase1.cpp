#include <doctest.h>

#include <cmath>

#include "lorica/phase1.hpp"
#include "oracles.hpp"

using namespace lorica;

namespace {

struct Setup {
    std::vector<ClientData> clients;
    std::vector<ClientModel> models;
};

Setup make_setup(int num_clients, std::uint64_t seed, int per_class = 30) {
    Dataset ds = make_blobs(3, per_class * num_clients, 4, 0.12, seed);
    auto [pool, fed] = stratified_split(ds, 0.7, seed);
    PretrainConfig pc;
    pc.epochs = 15;
    pc.seed = seed;
    DenseNet net = pretrain_backbone(pool, std::vector<int>{4, 6, 5}, pc);
    Setup s;
    auto shards = dirichlet_partition(fed, {num_clients, 10.0, seed});
    for (int i = 0; i < num_clients; ++i) {
        auto [train, test] = stratified_split(shards[static_cast<std::size_t>(i)], 0.25, seed + 1);
        s.clients.push_back({train, test.empty() ? train : test});
        s.models.push_back(make_client_model(net, 2, seed + 99, i));
    }
    return s;
}

Phase1Config small_config() {
    Phase1Config cfg;
    cfg.rounds = 2;
    cfg.local_epochs = 1;
    cfg.learning_rate = 0.05;
    cfg.batch_size = 16;
    cfg.aggregation.knn_k = 2;
    cfg.aggregation.tree_depth = 1;
    cfg.loss.lambda1 = 1.0;
    cfg.pgd.epsilon = 0.03;
    cfg.pgd.step_size = 0.01;
    cfg.pgd.iterations = 2;
    cfg.eval_attack = cfg.pgd;
    cfg.seed = 5;
    return cfg;
}

}  // namespace

TEST_CASE("zero rounds return the initial adapters") {
    Setup s = make_setup(3, 1);
    Phase1Config cfg = small_config();
    cfg.rounds = 0;
    Phase1Result r = run_phase1(cfg, s.clients, s.models);
    CHECK(r.rounds.empty());
    CHECK(r.global.values.cwiseAbs().maxCoeff() == 0.0);
    CHECK(r.global_history.size() == 1);
}

TEST_CASE("a zero learning rate keeps the adapters at zero") {
    Setup s = make_setup(3, 2);
    Phase1Config cfg = small_config();
    cfg.learning_rate = 0.0;
    Phase1Result r = run_phase1(cfg, s.clients, s.models);
    CHECK(r.global.values.cwiseAbs().maxCoeff() == 0.0);
    for (const auto& rep : r.rounds) CHECK(rep.grad_norm_sq == 0.0);
}

TEST_CASE("one client, one full-batch step matches a finite-difference oracle") {
    Setup s = make_setup(1, 3);
    Phase1Config cfg = small_config();
    cfg.rounds = 1;
    cfg.batch_size = 100000;
    cfg.pgd.iterations = 0;  // x_adv == x, so the smoothness term and its gradient vanish
    cfg.evaluate_rounds = false;
    Phase1Result r = run_phase1(cfg, s.clients, s.models);

    // Independent recomputation of the class weights after one epoch.
    const auto& train = s.clients[0].train;
    std::vector<double> counts(3, 0.0);
    for (int y : train.labels) counts[static_cast<std::size_t>(y)] += 1.0;
    std::vector<double> w(3);
    double total = 0.0;
    for (int c = 0; c < 3; ++c) {
        const double base = counts[c] > 0 ? (1.0 - 0.9) / (1.0 - std::pow(0.9, counts[c])) : 1.0;
        w[c] = 0.9 / 3.0 + 0.1 * base;
        total += w[c];
    }
    for (auto& v : w) v /= total;

    ClientModel m = s.models[0];
    auto loss = [&] { return oracle::cross_entropy(oracle::forward(m, train.features), train.labels, w); };
    Vector expected(static_cast<Eigen::Index>(r.global.size()));
    Eigen::Index off = 0;
    for (auto& layer : m.backbone) {
        const Matrix fd = oracle::finite_difference(layer.b_train, loss);
        for (Eigen::Index i = 0; i < fd.rows(); ++i)
            for (Eigen::Index j = 0; j < fd.cols(); ++j) expected[off++] = -cfg.learning_rate * fd(i, j);
    }
    CHECK(oracle::relative_error(r.global.values, expected) <= 1e-5);
}

TEST_CASE("frozen tensors never change and runs are deterministic across thread counts") {
    Setup s = make_setup(4, 4);
    Phase1Config cfg = small_config();
    const std::string digest = frozen_digest(s.models[0]);
    Phase1Result a = run_phase1(cfg, s.clients, s.models);
    cfg.threads = 3;
    Phase1Result b = run_phase1(cfg, s.clients, s.models);
    CHECK(a.global.values == b.global.values);
    for (std::size_t i = 0; i < a.clients.size(); ++i) {
        CHECK(frozen_digest(a.clients[i]) == digest);
        CHECK(a.clients[i].classifier == b.clients[i].classifier);
        CHECK(a.rounds.back().clients[i].accuracy.ba == b.rounds.back().clients[i].accuracy.ba);
    }
    int callbacks = 0;
    (void)run_phase1(cfg, s.clients, s.models, [&](const RoundReport& rep) { CHECK(rep.round == ++callbacks); });
    CHECK(callbacks == cfg.rounds);
}

TEST_CASE("convergence monitor") {
    std::vector<FlatVector> globals(3);
    for (auto& g : globals) g.layout = {{0, 1, 2}};
    globals[0].values = Vector::Zero(2);
    globals[1].values = (Vector(2) << 1.0, 0.0).finished();
    globals[2].values = (Vector(2) << 1.0, 2.0).finished();
    ConvergenceSeries s = convergence_monitor(globals, 0.5);
    CHECK(s.grad_norm_sq == std::vector<double>{4.0, 16.0});
    CHECK(s.running_average == std::vector<double>{4.0, 10.0});
    CHECK_THROWS_AS((void)convergence_monitor(globals, 0.0), ConfigError);

    Setup st = make_setup(3, 6);
    Phase1Config cfg = small_config();
    Phase1Result r = run_phase1(cfg, st.clients, st.models);
    ConvergenceSeries from_history = convergence_monitor(r.global_history, equivalent_step(cfg));
    ConvergenceSeries from_reports = convergence_monitor(r.rounds);
    REQUIRE(from_history.grad_norm_sq.size() == from_reports.grad_norm_sq.size());
    for (std::size_t t = 0; t < from_history.grad_norm_sq.size(); ++t) {
        CHECK(from_history.grad_norm_sq[t] == doctest::Approx(from_reports.grad_norm_sq[t]).epsilon(1e-12));
    }
}

TEST_CASE("round reports carry per-client losses and serialise") {
    Setup s = make_setup(3, 7);
    Phase1Config cfg = small_config();
    Phase1Result r = run_phase1(cfg, s.clients, s.models);
    REQUIRE(r.rounds.size() == 2);
    for (const auto& c : r.rounds[0].clients) {
        CHECK(c.loss.batches > 0);
        CHECK(c.loss.total == doctest::Approx(c.loss.adversarial + cfg.loss.lambda1 * c.loss.smoothness +
                                              cfg.loss.lambda2 * c.loss.reference));
        CHECK(c.accuracy.ar <= 1.0);
    }
    auto j = to_json(r.rounds[0]);
    CHECK(j["schema"] == "lorica.round_report.v1");
    CHECK(j["clients"].size() == 3);
}

TEST_CASE("mpaf clients upload the scaled poisoned vector") {
    Setup s = make_setup(4, 8);
    Phase1Config cfg = small_config();
    cfg.rounds = 1;
    cfg.aggregator = Aggregator::fedavg;
    cfg.byzantine = make_byzantine_spec(ByzantineMode::mpaf, 4, 0.25, 3, 1, 10.0);
    Phase1Result r = run_phase1(cfg, s.clients, s.models);
    const int bad = *cfg.byzantine.malicious_ids.begin();
    CHECK(r.rounds[0].clients[static_cast<std::size_t>(bad)].malicious);
    CHECK(r.rounds[0].clients[static_cast<std::size_t>(bad)].loss.batches == 0);
    // A tenfold-scaled random target dominates the unfiltered average.
    CHECK(r.global.values.norm() > 1.0);
}

TEST_CASE("configuration errors") {
    Setup s = make_setup(2, 9);
    Phase1Config cfg = small_config();
    cfg.local_epochs = 0;
    CHECK_THROWS_AS((void)run_phase1(cfg, s.clients, s.models), ConfigError);
    cfg = small_config();
    std::vector<ClientModel> one{s.models[0]};
    CHECK_THROWS_AS((void)run_phase1(cfg, s.clients, one), ConfigError);
}
