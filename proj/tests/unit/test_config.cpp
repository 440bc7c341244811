#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "lorica/config.hpp"
#include "lorica/error.hpp"

using namespace lorica;
using nlohmann::json;

namespace {

json smoke() {
    std::ifstream in(std::filesystem::path(LORICA_SOURCE_DIR) / "configs" / "smoke.json");
    return json::parse(in);
}

}  // namespace

TEST_CASE("defaults parse from an empty object") {
    ExperimentConfig cfg = parse_config(json::object());
    CHECK(cfg.partition.num_clients == 15);
    CHECK(cfg.phase1.loss.lambda1 == 20.0);
    CHECK(cfg.phase1.loss.eta == 0.5);
    CHECK(cfg.phase1.aggregator == Aggregator::lorica);
    CHECK(cfg.layer_dims() == std::vector<int>{16, 32, 32, 16});
}

TEST_CASE("serialisation round-trips") {
    ExperimentConfig cfg = parse_config(smoke());
    ExperimentConfig back = parse_config(to_json(cfg));
    CHECK(to_json(back) == to_json(cfg));
    CHECK(config_hash(back) == config_hash(cfg));
    CHECK(cfg.seed == 7);
    CHECK(cfg.phase1.rounds == 3);
}

TEST_CASE("unknown keys are rejected with their path") {
    json j = smoke();
    j["phase1"]["learning_rte"] = 0.1;
    try {
        (void)parse_config(j);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("phase1.learning_rte") != std::string::npos);
    }
    j = smoke();
    j["extra"] = 1;
    CHECK_THROWS_AS((void)parse_config(j), ConfigError);
}

TEST_CASE("wrong types and out-of-range values are config errors") {
    json j = smoke();
    j["phase1"]["rounds"] = "three";
    CHECK_THROWS_AS((void)parse_config(j), ConfigError);
    j = smoke();
    j["phase1"]["gamma"] = 0.3;
    CHECK_THROWS_AS(validate(parse_config(j)), ConfigError);
    j = smoke();
    j["phase1"]["trim_fraction"] = 0.5;
    CHECK_THROWS_AS(validate(parse_config(j)), ConfigError);
    j = smoke();
    j["model"]["rank"] = 64;
    CHECK_THROWS_AS(validate(parse_config(j)), ConfigError);
    j = smoke();
    j["byzantine"] = {{"mode", "sybil"}};
    CHECK_THROWS_AS((void)parse_config(j), ConfigError);
}

TEST_CASE("hash ignores threads and output but tracks everything else") {
    ExperimentConfig a = parse_config(smoke());
    ExperimentConfig b = a;
    b.threads = 8;
    b.output_dir = "elsewhere";
    CHECK(config_hash(a) == config_hash(b));
    b.seed = 8;
    CHECK(config_hash(a) != config_hash(b));
    CHECK(config_hash(a).size() == 64);
}

TEST_CASE("resolved phase configs derive distinct seeds and the byzantine spec") {
    json j = smoke();
    j["byzantine"] = {{"mode", "label_flip"}, {"rho", 0.5}};
    ExperimentConfig cfg = parse_config(j);
    Phase1Config p1 = resolve_phase1(cfg, 4, 4);
    Phase2Config p2 = resolve_phase2(cfg);
    CHECK(p1.seed != p2.seed);
    CHECK(p1.byzantine.malicious_ids.size() == 2);
    CHECK(p1.byzantine.mode == ByzantineMode::label_flip);
    REQUIRE(p1.eval_attack.has_value());
    CHECK(p1.eval_attack->iterations == 10);
    CHECK(p2.pgd.epsilon == p1.pgd.epsilon);
}

TEST_CASE("loading a missing or malformed file") {
    CHECK_THROWS_AS((void)load_config("/nonexistent/config.json"), Error);
    const auto p = std::filesystem::temp_directory_path() / "lorica_unit_bad.json";
    std::ofstream(p) << "{ not json";
    CHECK_THROWS_AS((void)load_config(p), ConfigError);
}
