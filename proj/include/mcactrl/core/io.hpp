#pragma once

#include <filesystem>

#include "mcactrl/core/denoiser.hpp"
#include "mcactrl/core/tensor.hpp"

namespace mcactrl {

/// Weights file: one UTF-8 header line (DenoiserConfig::header plus
/// `params=N`), then N little-endian float32 values.
void save_weights(const std::filesystem::path& path, const ToyDenoiser& model);
ToyDenoiser load_weights(const std::filesystem::path& path);

/// Tensor file: "MCT1", u32 rank, rank x u32 dims, little-endian float32 payload.
void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace mcactrl
