#include "lorica/config.hpp"

#include <fstream>
#include <set>

#include "lorica/digest.hpp"
#include "lorica/error.hpp"
#include "lorica/random.hpp"

namespace lorica {

namespace {

using nlohmann::json;

/// Reads typed fields out of one JSON object and rejects keys nobody asked for.
class Section {
public:
    Section(json j, std::string path) : value_(std::move(j)), path_(std::move(path)) {
        if (value_.is_null()) return;
        if (!value_.is_object()) throw ConfigError(path_ + ": expected an object");
        obj_ = &value_;
    }

    ~Section() noexcept(false) {
        if (std::uncaught_exceptions() > 0 || obj_ == nullptr) return;
        for (const auto& [key, value] : obj_->items()) {
            if (!seen_.count(key)) throw ConfigError(path_ + "." + key + ": unknown key");
        }
    }

    template <typename T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (obj_ == nullptr || !obj_->contains(key)) return;
        try {
            out = obj_->at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(path_ + "." + key + ": " + e.what());
        }
    }

    void get_optional(const char* key, std::optional<double>& out) {
        seen_.insert(key);
        if (obj_ == nullptr || !obj_->contains(key)) return;
        const json& v = obj_->at(key);
        if (v.is_null()) {
            out.reset();
        } else if (v.is_number()) {
            out = v.get<double>();
        } else {
            throw ConfigError(path_ + "." + key + ": expected a number or null");
        }
    }

    json child(const char* key) {
        seen_.insert(key);
        if (obj_ == nullptr || !obj_->contains(key)) return nullptr;
        return obj_->at(key);
    }

    const std::string& path() const { return path_; }

private:
    json value_;
    const json* obj_ = nullptr;
    std::string path_;
    std::set<std::string> seen_;
};

void read_attack(const json& j, const std::string& path, AdvPerturbation& p) {
    Section s(j, path);
    s.get("epsilon", p.epsilon);
    s.get("step_size", p.step_size);
    s.get("iterations", p.iterations);
    s.get("random_start", p.random_start);
    s.get("clamp_lo", p.clamp_lo);
    s.get("clamp_hi", p.clamp_hi);
}

json write_attack(const AdvPerturbation& p) {
    return {{"epsilon", p.epsilon},       {"step_size", p.step_size}, {"iterations", p.iterations},
            {"random_start", p.random_start}, {"clamp_lo", p.clamp_lo}, {"clamp_hi", p.clamp_hi}};
}

ByzantineMode parse_mode(const std::string& s) {
    if (s == "none") return ByzantineMode::none;
    if (s == "label_flip") return ByzantineMode::label_flip;
    if (s == "mpaf") return ByzantineMode::mpaf;
    throw ConfigError("byzantine.mode: expected none, label_flip or mpaf, got '" + s + "'");
}

Aggregator parse_aggregator(const std::string& s) {
    if (s == "lorica") return Aggregator::lorica;
    if (s == "fedavg") return Aggregator::fedavg;
    throw ConfigError("phase1.aggregator: expected lorica or fedavg, got '" + s + "'");
}

}  // namespace

std::string to_string(ByzantineMode mode) {
    switch (mode) {
        case ByzantineMode::label_flip: return "label_flip";
        case ByzantineMode::mpaf: return "mpaf";
        default: return "none";
    }
}

std::string to_string(Aggregator a) { return a == Aggregator::fedavg ? "fedavg" : "lorica"; }

std::vector<int> ExperimentConfig::layer_dims() const {
    std::vector<int> dims{dataset.dim};
    dims.insert(dims.end(), model.hidden.begin(), model.hidden.end());
    dims.push_back(model.feature_dim);
    return dims;
}

ExperimentConfig parse_config(const json& j) {
    ExperimentConfig cfg;
    Section root(j, "config");
    root.get("seed", cfg.seed);
    root.get("threads", cfg.threads);
    {
        Section s(root.child("dataset"), "dataset");
        s.get("source", cfg.dataset.source);
        s.get("csv_path", cfg.dataset.csv_path);
        s.get("num_classes", cfg.dataset.num_classes);
        s.get("per_class", cfg.dataset.per_class);
        s.get("dim", cfg.dataset.dim);
        s.get("spread", cfg.dataset.spread);
        s.get("radius", cfg.dataset.radius);
        s.get("pretrain_fraction", cfg.dataset.pretrain_fraction);
    }
    {
        Section s(root.child("partition"), "partition");
        s.get("num_clients", cfg.partition.num_clients);
        s.get("dirichlet_alpha", cfg.partition.dirichlet_alpha);
        s.get("iid", cfg.partition.iid);
        s.get("test_fraction", cfg.partition.test_fraction);
    }
    {
        Section s(root.child("model"), "model");
        s.get("hidden", cfg.model.hidden);
        s.get("feature_dim", cfg.model.feature_dim);
        s.get("rank", cfg.model.rank);
        s.get("pretrain_epochs", cfg.model.pretrain.epochs);
        s.get("pretrain_learning_rate", cfg.model.pretrain.learning_rate);
        s.get("pretrain_batch_size", cfg.model.pretrain.batch_size);
    }
    {
        Section s(root.child("phase1"), "phase1");
        Phase1Config& p = cfg.phase1;
        s.get("rounds", p.rounds);
        s.get("local_epochs", p.local_epochs);
        s.get("learning_rate", p.learning_rate);
        s.get("batch_size", p.batch_size);
        s.get("knn_k", p.aggregation.knn_k);
        s.get_optional("sigma_sq", p.aggregation.sigma_sq);
        s.get("tree_depth", p.aggregation.tree_depth);
        s.get("leaf_size", p.aggregation.leaf_size);
        s.get("kappa", p.aggregation.kappa);
        s.get("trim_fraction", p.aggregation.trim_fraction);
        s.get("eta", p.loss.eta);
        s.get("lambda1", p.loss.lambda1);
        s.get("lambda2", p.loss.lambda2);
        s.get("gamma", p.gamma);
        s.get("eps_smooth", p.eps_smooth);
        std::string aggregator = to_string(p.aggregator);
        s.get("aggregator", aggregator);
        p.aggregator = parse_aggregator(aggregator);
        s.get("share_classifier", p.share_classifier);
        s.get("evaluate_rounds", p.evaluate_rounds);
        read_attack(s.child("pgd"), "phase1.pgd", p.pgd);
    }
    {
        Section s(root.child("phase2"), "phase2");
        Phase2Config& p = cfg.phase2;
        s.get("outer_steps", p.outer_steps);
        s.get("inner_steps", p.inner_steps);
        s.get("beta", p.beta);
        s.get("lambda3", p.lambda3);
        s.get("budget", p.budget);
        s.get_optional("budget_fraction", p.budget_fraction);
        s.get("learning_rate", p.learning_rate);
        s.get("gate_learning_rate", p.gate_learning_rate);
        s.get("gate_init_logit", p.gate_init_logit);
        s.get("batch_size", p.batch_size);
        s.get("final_epochs", p.final_epochs);
        s.get("validation_fraction", p.validation_fraction);
        s.get("include_classifier", p.include_classifier);
        s.get("regenerate_pool", p.regenerate_pool);
    }
    read_attack(root.child("attack"), "attack", cfg.attack);
    {
        Section s(root.child("byzantine"), "byzantine");
        std::string mode = to_string(cfg.byzantine.mode);
        s.get("mode", mode);
        cfg.byzantine.mode = parse_mode(mode);
        s.get("rho", cfg.byzantine.rho);
        s.get("mpaf_scale", cfg.byzantine.mpaf_scale);
        s.get("mpaf_target_std", cfg.byzantine.mpaf_target_std);
    }
    {
        Section s(root.child("output"), "output");
        s.get("dir", cfg.output_dir);
    }
    validate(cfg);
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return parse_config(j);
}

json to_json(const ExperimentConfig& cfg) {
    const Phase1Config& p1 = cfg.phase1;
    const Phase2Config& p2 = cfg.phase2;
    json sigma = p1.aggregation.sigma_sq ? json(*p1.aggregation.sigma_sq) : json(nullptr);
    json fraction = p2.budget_fraction ? json(*p2.budget_fraction) : json(nullptr);
    return {
        {"seed", cfg.seed},
        {"threads", cfg.threads},
        {"dataset",
         {{"source", cfg.dataset.source},
          {"csv_path", cfg.dataset.csv_path},
          {"num_classes", cfg.dataset.num_classes},
          {"per_class", cfg.dataset.per_class},
          {"dim", cfg.dataset.dim},
          {"spread", cfg.dataset.spread},
          {"radius", cfg.dataset.radius},
          {"pretrain_fraction", cfg.dataset.pretrain_fraction}}},
        {"partition",
         {{"num_clients", cfg.partition.num_clients},
          {"dirichlet_alpha", cfg.partition.dirichlet_alpha},
          {"iid", cfg.partition.iid},
          {"test_fraction", cfg.partition.test_fraction}}},
        {"model",
         {{"hidden", cfg.model.hidden},
          {"feature_dim", cfg.model.feature_dim},
          {"rank", cfg.model.rank},
          {"pretrain_epochs", cfg.model.pretrain.epochs},
          {"pretrain_learning_rate", cfg.model.pretrain.learning_rate},
          {"pretrain_batch_size", cfg.model.pretrain.batch_size}}},
        {"phase1",
         {{"rounds", p1.rounds},
          {"local_epochs", p1.local_epochs},
          {"learning_rate", p1.learning_rate},
          {"batch_size", p1.batch_size},
          {"knn_k", p1.aggregation.knn_k},
          {"sigma_sq", sigma},
          {"tree_depth", p1.aggregation.tree_depth},
          {"leaf_size", p1.aggregation.leaf_size},
          {"kappa", p1.aggregation.kappa},
          {"trim_fraction", p1.aggregation.trim_fraction},
          {"eta", p1.loss.eta},
          {"lambda1", p1.loss.lambda1},
          {"lambda2", p1.loss.lambda2},
          {"gamma", p1.gamma},
          {"eps_smooth", p1.eps_smooth},
          {"aggregator", to_string(p1.aggregator)},
          {"share_classifier", p1.share_classifier},
          {"evaluate_rounds", p1.evaluate_rounds},
          {"pgd", write_attack(p1.pgd)}}},
        {"phase2",
         {{"outer_steps", p2.outer_steps},
          {"inner_steps", p2.inner_steps},
          {"beta", p2.beta},
          {"lambda3", p2.lambda3},
          {"budget", p2.budget},
          {"budget_fraction", fraction},
          {"learning_rate", p2.learning_rate},
          {"gate_learning_rate", p2.gate_learning_rate},
          {"gate_init_logit", p2.gate_init_logit},
          {"batch_size", p2.batch_size},
          {"final_epochs", p2.final_epochs},
          {"validation_fraction", p2.validation_fraction},
          {"include_classifier", p2.include_classifier},
          {"regenerate_pool", p2.regenerate_pool}}},
        {"attack", write_attack(cfg.attack)},
        {"byzantine",
         {{"mode", to_string(cfg.byzantine.mode)},
          {"rho", cfg.byzantine.rho},
          {"mpaf_scale", cfg.byzantine.mpaf_scale},
          {"mpaf_target_std", cfg.byzantine.mpaf_target_std}}},
        {"output", {{"dir", cfg.output_dir}}},
    };
}

void validate(const ExperimentConfig& cfg) {
    auto require = [](bool ok, const std::string& what) {
        if (!ok) throw ConfigError(what);
    };
    require(cfg.dataset.source == "blobs" || cfg.dataset.source == "csv", "dataset.source must be blobs or csv");
    require(cfg.dataset.source != "csv" || !cfg.dataset.csv_path.empty(), "dataset.csv_path is required for csv");
    require(cfg.dataset.num_classes >= 2, "dataset.num_classes must be >= 2");
    require(cfg.dataset.per_class >= 1, "dataset.per_class must be >= 1");
    require(cfg.dataset.dim >= 1, "dataset.dim must be >= 1");
    require(cfg.dataset.spread >= 0.0, "dataset.spread must be >= 0");
    require(cfg.dataset.pretrain_fraction > 0.0 && cfg.dataset.pretrain_fraction < 1.0,
            "dataset.pretrain_fraction must lie in (0, 1)");
    require(cfg.partition.num_clients >= 1, "partition.num_clients must be >= 1");
    require(cfg.partition.dirichlet_alpha > 0.0, "partition.dirichlet_alpha must be > 0");
    require(cfg.partition.test_fraction >= 0.0 && cfg.partition.test_fraction < 1.0,
            "partition.test_fraction must lie in [0, 1)");
    require(cfg.model.feature_dim >= 1 && cfg.model.rank >= 1, "model.feature_dim and model.rank must be >= 1");
    for (int h : cfg.model.hidden) require(h >= 1, "model.hidden sizes must be >= 1");
    const auto dims = cfg.layer_dims();
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        require(cfg.model.rank <= std::min(dims[l], dims[l + 1]), "model.rank exceeds min(r_in, r_out) of a layer");
    }
    require(cfg.model.pretrain.epochs >= 0 && cfg.model.pretrain.batch_size >= 1, "model pretraining settings invalid");
    const Phase1Config& p1 = cfg.phase1;
    require(p1.rounds >= 0, "phase1.rounds must be >= 0");
    require(p1.local_epochs >= 1, "phase1.local_epochs must be >= 1");
    require(p1.learning_rate >= 0.0, "phase1.learning_rate must be >= 0");
    require(p1.batch_size >= 1, "phase1.batch_size must be >= 1");
    require(p1.aggregation.knn_k >= 0, "phase1.knn_k must be >= 0");
    require(!p1.aggregation.sigma_sq || *p1.aggregation.sigma_sq > 0.0, "phase1.sigma_sq must be > 0 or null");
    require(p1.aggregation.tree_depth >= 0, "phase1.tree_depth must be >= 0");
    require(p1.aggregation.leaf_size >= 1, "phase1.leaf_size must be >= 1");
    require(p1.aggregation.kappa >= 0.0, "phase1.kappa must be >= 0");
    require(p1.aggregation.trim_fraction >= 0.0 && p1.aggregation.trim_fraction < 0.5,
            "phase1.trim_fraction must lie in [0, 0.5)");
    require(p1.loss.eta >= 0.0 && p1.loss.eta <= 1.0, "phase1.eta must lie in [0, 1]");
    require(p1.loss.lambda1 >= 0.0 && p1.loss.lambda2 >= 0.0, "phase1.lambda1/lambda2 must be >= 0");
    require(p1.gamma >= 0.5 && p1.gamma <= 0.99, "phase1.gamma must lie in [0.5, 0.99]");
    require(p1.eps_smooth >= 0.0 && p1.eps_smooth <= 1.0, "phase1.eps_smooth must lie in [0, 1]");
    try {
        validate(p1.pgd);
        validate(cfg.attack);
    } catch (const ConfigError& e) {
        throw ConfigError(std::string("attack settings: ") + e.what());
    }
    const Phase2Config& p2 = cfg.phase2;
    require(p2.outer_steps >= 0 && p2.inner_steps >= 0 && p2.final_epochs >= 0, "phase2 step counts must be >= 0");
    require(p2.budget >= 0, "phase2.budget must be >= 0");
    require(!p2.budget_fraction || (*p2.budget_fraction >= 0.0 && *p2.budget_fraction <= 1.0),
            "phase2.budget_fraction must lie in [0, 1] or be null");
    require(p2.batch_size >= 1, "phase2.batch_size must be >= 1");
    require(p2.validation_fraction >= 0.0 && p2.validation_fraction < 1.0, "phase2.validation_fraction must lie in [0, 1)");
    require(cfg.byzantine.rho >= 0.0 && cfg.byzantine.rho <= 1.0, "byzantine.rho must lie in [0, 1]");
    require(cfg.byzantine.mpaf_scale > 0.0, "byzantine.mpaf_scale must be > 0");
    require(cfg.byzantine.mpaf_target_std > 0.0, "byzantine.mpaf_target_std must be > 0");
    require(cfg.threads >= 1, "threads must be >= 1");
}

std::string config_hash(const ExperimentConfig& cfg) {
    json j = to_json(cfg);
    // Neither affects any output.
    j.erase("threads");
    j.erase("output");
    return sha256_hex(j.dump());
}

Phase1Config resolve_phase1(const ExperimentConfig& cfg, int num_clients, int num_classes) {
    Phase1Config p = cfg.phase1;
    p.seed = derive_seed(cfg.seed, {0x7a5e1});
    p.threads = cfg.threads;
    p.eval_attack = cfg.attack;
    p.byzantine = make_byzantine_spec(cfg.byzantine.mode, num_clients, cfg.byzantine.rho, num_classes,
                                      derive_seed(cfg.seed, {0xb7}), cfg.byzantine.mpaf_scale);
    p.byzantine.mpaf_target_std = cfg.byzantine.mpaf_target_std;
    return p;
}

Phase2Config resolve_phase2(const ExperimentConfig& cfg) {
    Phase2Config p = cfg.phase2;
    p.pgd = cfg.phase1.pgd;
    p.seed = derive_seed(cfg.seed, {0x7a5e2});
    return p;
}

}  // namespace lorica
