#pragma once

// .dnrf checkpoint container:
//   "DNRF" | u32 version | u32 header bytes | header JSON | body | "FRND"
// The body is little-endian f32: coarse params, fine params, latent table, then
// Adam first/second moments for coarse, fine, and each latent row. Shapes, step
// counts, and the sampler/RNG state live in the header.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dnrf/train.hpp"

namespace dnrf::data {

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const train::TrainState& state);
// Throws DataError (kTruncated, kVersionMismatch, kMalformed). Never returns a partial state.
train::TrainState deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const train::TrainState& state, const std::filesystem::path& path);
train::TrainState load_checkpoint(const std::filesystem::path& path);

// Size of the JSON header for `state`, in bytes.
std::size_t checkpoint_header_size(const train::TrainState& state);

}  // namespace dnrf::data
