#pragma once

#include <vector>

#include "lorica/config.hpp"
#include "lorica/model.hpp"
#include "lorica/phase1.hpp"

namespace lorica {

struct PreparedData {
    Dataset pretrain_pool;            // stands in for the public pretraining corpus
    std::vector<Dataset> shards;      // one per client, before the train/test split
    std::vector<ClientData> clients;  // per-client train/test splits
};

/// Builds or loads the dataset, holds back the pretraining pool, partitions
/// the rest across clients and splits each shard into train and test.
PreparedData prepare_data(const ExperimentConfig& cfg);

/// Pretrained dense network for the configured layer sizes.
DenseNet pretrain(const ExperimentConfig& cfg, const Dataset& pool);

/// One adapter-wrapped copy of `pretrained` per client. Every client shares
/// the same frozen down-projections.
std::vector<ClientModel> initial_client_models(const ExperimentConfig& cfg, const DenseNet& pretrained,
                                               int num_clients);

}  // namespace lorica
