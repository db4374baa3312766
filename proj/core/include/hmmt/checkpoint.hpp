#pragma once

// Binary model files: "HMMT", u32 version, registry, a JSON header with the
// model configuration, then named tensor records. All integers and floats
// are little-endian; f64 payloads round-trip bit-exactly.

#include <cstdint>
#include <filesystem>

#include "hmmt/model.hpp"
#include "hmmt/training.hpp"

namespace hmmt {

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_model(const std::filesystem::path& path, const Model& model);
// Rebuilds the model from the file alone.
Model load_model(const std::filesystem::path& path);
// Overwrites `model`'s values; names and shapes must match exactly.
void load_weights(const std::filesystem::path& path, Model& model);

void save_train_state(const std::filesystem::path& path, const Model& model, const Adam& adam,
                      const TrainProgress& progress);
// Restores weights, optimizer moments and progress into existing objects.
void load_train_state(const std::filesystem::path& path, Model& model, Adam& adam, TrainProgress& progress);

}  // namespace hmmt
