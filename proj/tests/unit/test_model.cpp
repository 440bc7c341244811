#include <doctest.h>

#include <random>

#include "lorica/error.hpp"
#include "lorica/losses.hpp"
#include "lorica/model.hpp"
#include "oracles.hpp"

using namespace lorica;

namespace {

ClientModel random_model(std::uint64_t seed, std::vector<int> dims, int classes, int rank, double b_scale = 0.3) {
    DenseNet net = random_dense_net(dims, classes, seed);
    ClientModel m = make_client_model(net, rank, seed + 1);
    std::mt19937_64 rng(seed + 2);
    for (auto& layer : m.backbone) layer.b_train = oracle::random_matrix(layer.b_train.rows(), layer.b_train.cols(), rng, b_scale);
    return m;
}

LogitLossFn squared_error(const Matrix& target) {
    return [target](const Matrix& logits, std::span<const int>) {
        const Matrix diff = logits - target;
        return LogitLoss{diff.squaredNorm(), 2.0 * diff};
    };
}

}  // namespace

TEST_CASE("forward through an identity layer returns the input") {
    ClientModel m;
    AdapterLayer layer;
    layer.w_pre = Matrix::Identity(3, 3);
    layer.a_fixed = Matrix::Ones(3, 1);
    layer.b_train = Matrix::Zero(1, 3);
    layer.activation = Activation::identity;
    m.backbone.push_back(layer);
    m.classifier = Matrix::Identity(3, 3);
    m.num_classes = 3;
    Matrix x = Matrix::Zero(1, 3);
    x(0, 0) = 1.0;
    CHECK(forward(m, x) == x);
}

TEST_CASE("zero adapters reproduce the pretrained network") {
    DenseNet net = random_dense_net(std::vector<int>{5, 7, 4}, 3, 11);
    ClientModel m = make_client_model(net, 2, 99);
    std::mt19937_64 rng(1);
    Matrix x = oracle::random_matrix(6, 5, rng);
    CHECK((forward(m, x) - forward(net, x)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("forward matches the straight-line matmul oracle") {
    ClientModel m = random_model(42, {6, 8, 5}, 4, 3);
    std::mt19937_64 rng(42);
    Matrix x = oracle::random_matrix(10, 6, rng);
    CHECK((forward(m, x) - oracle::forward(m, x)).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("dimension mismatch names the offending layer") {
    ClientModel m = random_model(1, {4, 5, 3}, 2, 2);
    m.backbone[1].w_pre = Matrix::Zero(6, 3);
    m.backbone[1].a_fixed = Matrix::Zero(6, 2);
    try {
        (void)forward(m, Matrix::Zero(2, 4));
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        CHECK(e.layer() == 1);
    }
    CHECK_THROWS_AS((void)forward(m, Matrix::Zero(2, 3)), DimensionError);
}

TEST_CASE("gradients of a constant loss are zero") {
    ClientModel m = random_model(3, {4, 5, 3}, 3, 2);
    std::mt19937_64 rng(3);
    Matrix x = oracle::random_matrix(4, 4, rng);
    std::vector<int> y{0, 1, 2, 0};
    auto zero = [](const Matrix& logits, std::span<const int>) {
        return LogitLoss{0.0, Matrix::Zero(logits.rows(), logits.cols())};
    };
    auto g = gradients(m, zero, x, y);
    for (const auto& b : g.grad.b_train) CHECK(b.cwiseAbs().maxCoeff() == 0.0);
    CHECK(g.grad.classifier.cwiseAbs().maxCoeff() == 0.0);
    CHECK(g.grad.b_train.size() == m.backbone.size());
}

TEST_CASE("single linear layer with squared error matches the closed form") {
    // L = ||x (W + A B) C - t||^2, dL/dB = A^T x^T 2 r C^T with r the residual.
    std::mt19937_64 rng(5);
    ClientModel m;
    AdapterLayer layer;
    layer.w_pre = oracle::random_matrix(3, 2, rng);
    layer.a_fixed = oracle::random_matrix(3, 1, rng);
    layer.b_train = oracle::random_matrix(1, 2, rng);
    layer.activation = Activation::identity;
    m.backbone.push_back(layer);
    m.classifier = Matrix::Identity(2, 2);
    m.num_classes = 2;
    Matrix x = oracle::random_matrix(1, 3, rng);
    Matrix t = oracle::random_matrix(1, 2, rng);
    auto g = gradients(m, squared_error(t), x, std::vector<int>{0});
    const Matrix w = layer.w_pre + layer.a_fixed * layer.b_train;
    const Matrix r = x * w - t;
    const Matrix expected = layer.a_fixed.transpose() * x.transpose() * (2.0 * r);
    CHECK((g.grad.b_train[0] - expected).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("gradients match central finite differences on random models") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        ClientModel m = random_model(100 + seed, {4, 6, 5}, 3, 2);
        std::mt19937_64 rng(seed);
        Matrix x = oracle::random_matrix(5, 4, rng);
        std::vector<int> y{0, 1, 2, 1, 0};
        auto loss = [](const Matrix& logits, std::span<const int> labels) { return cross_entropy(logits, labels); };
        auto g = gradients(m, loss, x, y);
        auto f = [&] { return oracle::cross_entropy(oracle::forward(m, x), y); };
        for (std::size_t l = 0; l < m.backbone.size(); ++l) {
            Matrix fd = oracle::finite_difference(m.backbone[l].b_train, f);
            CHECK(oracle::relative_error(g.grad.b_train[l], fd) <= 1e-4);
        }
        Matrix fd = oracle::finite_difference(m.classifier, f);
        CHECK(oracle::relative_error(g.grad.classifier, fd) <= 1e-4);
    }
}

TEST_CASE("non-finite loss reports the batch index") {
    ClientModel m = random_model(7, {3, 3, 2}, 2, 1);
    auto nan_loss = [](const Matrix& logits, std::span<const int>) {
        return LogitLoss{std::nan(""), Matrix::Zero(logits.rows(), logits.cols())};
    };
    try {
        (void)gradients(m, nan_loss, Matrix::Zero(1, 3), std::vector<int>{0}, 17);
        FAIL("expected NonFiniteError");
    } catch (const NonFiniteError& e) {
        CHECK(e.batch_index() == 17);
    }
}

TEST_CASE("flatten is row-major in layer order") {
    ClientModel m = random_model(8, {2, 2, 2}, 2, 2);
    m.backbone[0].b_train << 1, 2, 3, 4;
    m.backbone[1].b_train << 5, 6, 7, 8;
    FlatVector v = flatten_adapters(m);
    REQUIRE(v.size() == 8);
    for (int i = 0; i < 8; ++i) CHECK(v.values[i] == i + 1);
    REQUIRE(v.layout.size() == 2);
    CHECK(v.layout[1] == LayoutEntry{1, 2, 2});
}

TEST_CASE("flatten and unflatten round-trip bit-exactly on 100 models") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        std::mt19937_64 rng(seed);
        const int depth = 1 + static_cast<int>(seed % 3);
        std::vector<int> dims{3 + static_cast<int>(seed % 4)};
        for (int l = 0; l < depth; ++l) dims.push_back(2 + static_cast<int>((seed + l) % 5));
        ClientModel m = random_model(seed, dims, 3, 1 + static_cast<int>(seed % 2));
        ClientModel blank = m;
        for (auto& layer : blank.backbone) layer.b_train.setZero();
        ClientModel back = unflatten_adapters(flatten_adapters(m), blank);
        for (std::size_t l = 0; l < m.backbone.size(); ++l) {
            CHECK(back.backbone[l].b_train == m.backbone[l].b_train);
            CHECK(back.backbone[l].w_pre == m.backbone[l].w_pre);
        }
    }
}

TEST_CASE("unflatten of a zero vector zeroes the adapters and rejects bad layouts") {
    ClientModel m = random_model(9, {4, 3, 3}, 2, 2);
    FlatVector v = flatten_adapters(m);
    v.values.setZero();
    ClientModel z = unflatten_adapters(v, m);
    for (const auto& layer : z.backbone) CHECK(layer.b_train.cwiseAbs().maxCoeff() == 0.0);

    FlatVector bad = flatten_adapters(m);
    bad.layout[0].rows += 1;
    CHECK_THROWS_AS((void)unflatten_adapters(bad, m), DimensionError);
    bad = flatten_adapters(m);
    bad.layout.pop_back();
    CHECK_THROWS_AS((void)unflatten_adapters(bad, m), DimensionError);
}

TEST_CASE("trainable flattening carries the classifier block") {
    ClientModel m = random_model(10, {4, 3, 3}, 2, 2);
    FlatVector v = flatten_trainable(m);
    CHECK(v.layout.back().layer == 2);
    CHECK(v.size() == flatten_adapters(m).size() + static_cast<std::size_t>(m.classifier.size()));
    ClientModel blank = m;
    blank.classifier.setZero();
    CHECK(unflatten_trainable(v, blank).classifier == m.classifier);
}

TEST_CASE("fuse equals the adapter model") {
    SUBCASE("zero adapters fuse to w_pre exactly") {
        DenseNet net = random_dense_net(std::vector<int>{4, 5, 3}, 2, 12);
        FusedModel f = fuse(make_client_model(net, 2, 1));
        for (std::size_t l = 0; l < net.weights.size(); ++l) CHECK(f.weights[l] == net.weights[l]);
    }
    SUBCASE("rank-1 2x2 by hand") {
        ClientModel m;
        AdapterLayer layer;
        layer.w_pre.resize(2, 2);
        layer.w_pre << 1, 0, 0, 1;
        layer.a_fixed.resize(2, 1);
        layer.a_fixed << 1, 2;
        layer.b_train.resize(1, 2);
        layer.b_train << 3, 4;
        m.backbone.push_back(layer);
        m.classifier = Matrix::Identity(2, 2);
        m.num_classes = 2;
        Matrix expected(2, 2);
        expected << 4, 4, 6, 9;
        CHECK(fuse(m).weights[0] == expected);
    }
    SUBCASE("forward equivalence on 50 random models") {
        for (std::uint64_t seed = 0; seed < 50; ++seed) {
            ClientModel m = random_model(500 + seed, {5, 6, 4}, 3, 2);
            std::mt19937_64 rng(seed);
            Matrix x = oracle::random_matrix(7, 5, rng);
            CHECK((forward(fuse(m), x) - forward(m, x)).cwiseAbs().maxCoeff() <= 1e-12);
        }
    }
}

TEST_CASE("make_client_model validates rank and shares down-projections") {
    DenseNet net = random_dense_net(std::vector<int>{4, 3, 3}, 2, 13);
    CHECK_THROWS_AS((void)make_client_model(net, 0, 1), DimensionError);
    CHECK_THROWS_AS((void)make_client_model(net, 4, 1), DimensionError);
    ClientModel a = make_client_model(net, 2, 77, 0);
    ClientModel b = make_client_model(net, 2, 77, 1);
    CHECK(frozen_digest(a) == frozen_digest(b));
    CHECK(a.backbone[0].b_train.cwiseAbs().maxCoeff() == 0.0);
    CHECK(a.backbone.back().activation == Activation::identity);
    CHECK(a.backbone.front().activation == Activation::relu);
}

TEST_CASE("sgd_step leaves frozen tensors untouched") {
    ClientModel m = random_model(14, {4, 5, 3}, 3, 2);
    const std::string before = frozen_digest(m);
    std::mt19937_64 rng(14);
    Matrix x = oracle::random_matrix(6, 4, rng);
    std::vector<int> y{0, 1, 2, 0, 1, 2};
    auto loss = [](const Matrix& logits, std::span<const int> labels) { return cross_entropy(logits, labels); };
    for (int i = 0; i < 5; ++i) sgd_step(m, gradients(m, loss, x, y).grad, 0.1);
    CHECK(frozen_digest(m) == before);
}
