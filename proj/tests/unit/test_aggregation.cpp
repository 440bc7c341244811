#include <doctest.h>

#include <random>
#include <type_traits>

#include "lorica/aggregation.hpp"
#include "oracles.hpp"

using namespace lorica;

namespace {

FlatVector flat(std::initializer_list<double> values) {
    FlatVector v;
    v.values.resize(static_cast<Eigen::Index>(values.size()));
    Eigen::Index i = 0;
    for (double x : values) v.values[i++] = x;
    v.layout = {{0, 1, static_cast<int>(values.size())}};
    return v;
}

FlatVector random_flat(Eigen::Index dim, std::mt19937_64& rng, double centre, double scale) {
    FlatVector v;
    v.values = (oracle::random_matrix(dim, 1, rng, scale).array() + centre).matrix().col(0);
    v.layout = {{0, 1, static_cast<int>(dim)}};
    return v;
}

}  // namespace

TEST_CASE("gaussian weights on a hand example") {
    const Vector q = gaussian_weights({{0.0}, {1.0}, {2.0}}, {1.0});
    const double z = 1.0 + std::exp(-1.0) + std::exp(-2.0);
    CHECK(q[0] == doctest::Approx(1.0 / z).epsilon(1e-14));
    CHECK(q[1] == doctest::Approx(std::exp(-1.0) / z).epsilon(1e-14));
    CHECK(q[2] == doctest::Approx(std::exp(-2.0) / z).epsilon(1e-14));
    CHECK(q[0] == doctest::Approx(0.6652).epsilon(1e-4));
    CHECK(q[1] == doctest::Approx(0.2447).epsilon(1e-4));
    CHECK(q[2] == doctest::Approx(0.0900).epsilon(1e-3));
}

TEST_CASE("gaussian weights survive large distances and reject a zero bandwidth") {
    const Vector q = gaussian_weights({{1e4, 1e4}, {1e4 + 1.0, 1e4 + 1.0}}, {1.0});
    CHECK(q.allFinite());
    CHECK(q.sum() == doctest::Approx(1.0));
    CHECK(q[0] > q[1]);
    CHECK_THROWS_AS((void)gaussian_weights({{1.0}}, {0.0}), ConfigError);
}

TEST_CASE("median bandwidth") {
    CHECK(median_bandwidth({{1.0, 3.0}, {2.0, 4.0}}).sigma_sq == 2.5);
    CHECK(median_bandwidth({{0.0}, {0.0}}).sigma_sq == 1.0);
    CHECK(median({3.0, 1.0, 2.0}) == 2.0);
}

TEST_CASE("filter excludes a single far point") {
    std::vector<FlatVector> pts{flat({1}), flat({1}), flat({1}), flat({10})};
    const std::vector<double> q{0.25, 0.25, 0.25, 0.25};
    FilterResult f = byzantine_filter(pts, q, 3.0);
    CHECK(f.excluded == std::vector<std::size_t>{3});
    CHECK(f.q_filtered == std::vector<double>{0.25, 0.25, 0.25, 0.0});
    CHECK(f.psi == std::vector<double>{0.0, 0.0, 0.0, 9.0});
    CHECK(f.stats.mad == 0.0);
}

TEST_CASE("filter catches planted outliers without flagging honest points") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        std::mt19937_64 rng(seed);
        std::vector<FlatVector> pts;
        for (int i = 0; i < 12; ++i) pts.push_back(random_flat(6, rng, 0.0, 0.1));
        for (int i = 0; i < 3; ++i) pts.push_back(random_flat(6, rng, 5.0, 0.1));
        const std::vector<double> q(15, 1.0 / 15.0);
        FilterResult f = byzantine_filter(pts, q, 3.0);
        for (std::size_t i = 12; i < 15; ++i) CHECK(f.q_filtered[i] == 0.0);
    }
}

TEST_CASE("global aggregation") {
    std::vector<FlatVector> w{flat({0.0}), flat({4.0})};
    const std::vector<std::size_t> sizes{1, 3};
    CHECK(aggregate_global(w, std::vector<double>{0.5, 0.5}, sizes).values[0] == 3.0);
    CHECK(aggregate_global(w, std::vector<double>{1.0, 0.0}, sizes).values[0] == 0.0);
    CHECK_THROWS_AS((void)aggregate_global(w, std::vector<double>{0.0, 0.0}, sizes), AggregationAborted);
    CHECK_THROWS_AS((void)aggregate_global(w, std::vector<double>{1.0, 1.0}, std::vector<std::size_t>{0, 0}),
                    AggregationAborted);
    std::vector<FlatVector> mixed{flat({0.0}), flat({1.0, 2.0})};
    CHECK_THROWS_AS((void)aggregate_global(mixed, std::vector<double>{1, 1}, sizes), DimensionError);
}

TEST_CASE("fedavg weights by sample count") {
    std::vector<FlatVector> w{flat({0.0}), flat({4.0})};
    CHECK(aggregate_fedavg(w, std::vector<std::size_t>{1, 3}).values[0] == 3.0);
}

TEST_CASE("trimmed-mean experts") {
    std::vector<FlatVector> m{flat({0}), flat({0}), flat({0}), flat({100})};
    CHECK(aggregate_expert(m, 0.2).values[0] == 0.0);
    CHECK(aggregate_expert(m, 0.0).values[0] == 25.0);
    std::vector<FlatVector> two{flat({1}), flat({3})};
    CHECK(aggregate_expert(two, 0.4).values[0] == 2.0);
    CHECK_THROWS_AS((void)aggregate_expert(m, 0.5), ConfigError);
}

TEST_CASE("aggregates stay inside the coordinate-wise box of their inputs") {
    std::mt19937_64 rng(11);
    for (int t = 0; t < 50; ++t) {
        std::vector<ClientUpload> uploads;
        for (int i = 0; i < 8; ++i) {
            uploads.push_back({i, random_flat(5, rng, 0.0, 1.0), static_cast<std::size_t>(10 + i)});
        }
        AggregationParams p;
        p.knn_k = 3;
        p.tree_depth = 1;
        AggregationReport r = lorica_aggregate(uploads, p);
        REQUIRE_FALSE(r.aborted);
        Vector lo = uploads[0].adapters.values, hi = lo;
        for (const auto& u : uploads) {
            lo = lo.cwiseMin(u.adapters.values);
            hi = hi.cwiseMax(u.adapters.values);
        }
        CHECK((r.global.values.array() >= lo.array() - 1e-12).all());
        CHECK((r.global.values.array() <= hi.array() + 1e-12).all());
        for (const auto& e : r.experts) {
            CHECK((e.values.array() >= lo.array() - 1e-12).all());
            CHECK((e.values.array() <= hi.array() + 1e-12).all());
        }
        CHECK(r.q_filtered.size() == uploads.size());
        double qs = 0.0;
        for (double v : r.q) qs += v;
        CHECK(qs == doctest::Approx(1.0));
    }
}

TEST_CASE("identical uploads aggregate to themselves") {
    std::vector<ClientUpload> uploads;
    for (int i = 0; i < 6; ++i) uploads.push_back({i, flat({1.5, -2.0}), 7});
    AggregationParams p;
    p.knn_k = 2;
    AggregationReport r = lorica_aggregate(uploads, p);
    CHECK(r.excluded.empty());
    CHECK((r.global.values - uploads[0].adapters.values).cwiseAbs().maxCoeff() <= 1e-15);
    for (double q : r.q) CHECK(q == doctest::Approx(1.0 / 6.0));
}

TEST_CASE("planted malicious uploads are excluded from the round") {
    std::mt19937_64 rng(12);
    std::vector<ClientUpload> uploads;
    for (int i = 0; i < 12; ++i) uploads.push_back({i, random_flat(8, rng, 0.0, 0.05), 20});
    for (int i = 12; i < 15; ++i) uploads.push_back({i, random_flat(8, rng, 3.0, 0.05), 20});
    AggregationParams p;
    p.knn_k = 5;
    p.tree_depth = 0;
    AggregationReport r = lorica_aggregate(uploads, p);
    for (int i = 12; i < 15; ++i) CHECK(r.excluded.count(i) == 1);
    CHECK(r.global.values.cwiseAbs().maxCoeff() < 0.5);
    auto j = to_json(r);
    CHECK(j.contains("excluded"));
}

TEST_CASE("single upload and fedavg report shape") {
    std::vector<ClientUpload> one{{3, flat({2.0}), 5}};
    AggregationReport r = lorica_aggregate(one, AggregationParams{});
    CHECK(r.global.values[0] == 2.0);
    std::vector<ClientUpload> two{{0, flat({0.0}), 1}, {1, flat({4.0}), 3}};
    AggregationReport f = fedavg_aggregate(two);
    CHECK(f.global.values[0] == 3.0);
    CHECK(f.q == std::vector<double>{0.25, 0.75});
    CHECK(f.clusters.size() == 1);
    CHECK(f.excluded.empty());
}

TEST_CASE("the server-side upload carries only adapters and a sample count") {
    const auto& [id, adapters, samples] = ClientUpload{};
    static_assert(std::is_same_v<std::remove_cvref_t<decltype(id)>, int>);
    static_assert(std::is_same_v<std::remove_cvref_t<decltype(adapters)>, FlatVector>);
    static_assert(std::is_same_v<std::remove_cvref_t<decltype(samples)>, std::size_t>);
    static_assert(sizeof(ClientUpload) == sizeof(FlatVector) + 2 * sizeof(std::size_t));
    CHECK(samples == 0);
}
