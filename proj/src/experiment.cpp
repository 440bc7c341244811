#include "lorica/experiment.hpp"

#include "lorica/error.hpp"
#include "lorica/random.hpp"

namespace lorica {

PreparedData prepare_data(const ExperimentConfig& cfg) {
    Dataset full;
    if (cfg.dataset.source == "csv") {
        full = load_csv(cfg.dataset.csv_path, cfg.dataset.num_classes);
    } else {
        full = make_blobs(cfg.dataset.num_classes, cfg.dataset.per_class, cfg.dataset.dim, cfg.dataset.spread,
                          derive_seed(cfg.seed, {0xb10b}), cfg.dataset.radius);
    }
    if (full.dim() != cfg.dataset.dim) {
        throw ConfigError("dataset.dim is " + std::to_string(cfg.dataset.dim) + " but the data has " +
                          std::to_string(full.dim()) + " columns");
    }
    PreparedData out;
    auto [federated, pool] = stratified_split(full, cfg.dataset.pretrain_fraction, derive_seed(cfg.seed, {0x9001}));
    pool.name = "pretrain_pool";
    federated.name = full.name.empty() ? std::string("data") : full.name;
    out.pretrain_pool = std::move(pool);
    if (cfg.partition.iid) {
        out.shards = iid_partition(federated, cfg.partition.num_clients, derive_seed(cfg.seed, {0x9a27}));
    } else {
        out.shards = dirichlet_partition(
            federated, {cfg.partition.num_clients, cfg.partition.dirichlet_alpha, derive_seed(cfg.seed, {0x9a27})});
    }
    for (std::size_t k = 0; k < out.shards.size(); ++k) {
        auto [train, test] = stratified_split(out.shards[k], cfg.partition.test_fraction,
                                              derive_seed(cfg.seed, {0x7e57, static_cast<std::uint64_t>(k)}));
        if (train.empty()) throw RuntimeError("client " + std::to_string(k) + " has no training samples");
        if (test.empty()) test = train;
        out.clients.push_back({std::move(train), std::move(test)});
    }
    return out;
}

DenseNet pretrain(const ExperimentConfig& cfg, const Dataset& pool) {
    PretrainConfig p = cfg.model.pretrain;
    p.seed = derive_seed(cfg.seed, {0x97e});
    const auto dims = cfg.layer_dims();
    return pretrain_backbone(pool, dims, p);
}

std::vector<ClientModel> initial_client_models(const ExperimentConfig& cfg, const DenseNet& pretrained,
                                               int num_clients) {
    const std::uint64_t adapter_seed = derive_seed(cfg.seed, {0xada});
    std::vector<ClientModel> models;
    models.reserve(static_cast<std::size_t>(num_clients));
    for (int i = 0; i < num_clients; ++i) models.push_back(make_client_model(pretrained, cfg.model.rank, adapter_seed, i));
    return models;
}

}  // namespace lorica
