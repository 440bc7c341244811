#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lorica/model.hpp"

namespace lorica {

/// Binary checkpoint layout (all integers and reals little-endian):
///
///   magic "LORICACK" | u32 version | u32 kind (1 adapter, 2 dense)
///   i64 client_id | u32 num_layers | u32 dims[num_layers + 1]
///   u32 rank (0 for dense) | u32 num_classes | u8 activation[num_layers]
///   f64 arrays, row-major, in declared order:
///     adapter: per layer w_pre, a_fixed, b_train; then classifier
///     dense:   per layer weight; then classifier
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const ClientModel& model);
std::vector<std::uint8_t> encode_checkpoint(const DenseNet& net, std::int64_t client_id = 0);

ClientModel decode_client_checkpoint(const std::vector<std::uint8_t>& bytes);
DenseNet decode_dense_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const ClientModel& model);
void save_checkpoint(const std::filesystem::path& path, const DenseNet& net, std::int64_t client_id = 0);
ClientModel load_client_checkpoint(const std::filesystem::path& path);
DenseNet load_dense_checkpoint(const std::filesystem::path& path);

/// Kind field of a checkpoint file without decoding the payload.
std::uint32_t checkpoint_kind(const std::filesystem::path& path);

}  // namespace lorica
