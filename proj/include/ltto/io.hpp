// Copyright 2026 The LTTO Authors
// SPDX-License-Identifier: Apache-2.0

// File formats: the "LTTO" named-tensor container, grayscale/colour PFM,
// observation CSV, and SHA-256 digests for manifests.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ltto/tensor.hpp"
#include "ltto/world.hpp"

namespace ltto::io {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kTensorFileVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// magic "LTTO", u32 version, then per tensor: u32 name length, name bytes,
/// u32 rank, u64 extents, little-endian f64 data; records run to end of file.
std::vector<std::uint8_t> encode_tensors(const NamedTensors& tensors);
NamedTensors decode_tensors(std::span<const std::uint8_t> bytes);
void write_tensor_file(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors read_tensor_file(const std::filesystem::path& path);

/// PFM with scale −1 (little-endian float32), bottom row first. Rank-2
/// tensors are written as "Pf", H×W×3 tensors as "PF".
std::vector<std::uint8_t> encode_pfm(const Tensor& map);
Tensor decode_pfm(std::span<const std::uint8_t> bytes);
void write_pfm(const std::filesystem::path& path, const Tensor& map);
Tensor read_pfm(const std::filesystem::path& path);

/// Header `row,col,value`, one line per observed pixel.
void write_observations_csv(const std::filesystem::path& path, const world::SparseObservation& obs);
/// Values only; the sensor parameters travel in the accompanying JSON.
world::SparseObservation read_observations_csv(const std::filesystem::path& path,
                                               std::size_t width);

/// Scene and observations in one LTTO container: image, depth, omega (n×2),
/// values, sensor (a*, b*, σ) and meta (kind, seed halves, width).
NamedTensors scene_bundle(const world::SceneSample& scene, const world::SparseObservation& obs);
std::pair<world::SceneSample, world::SparseObservation> read_scene_bundle(const NamedTensors& tensors);

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_file(const std::filesystem::path& path);

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text(const std::filesystem::path& path, const std::string& text);

/// Shortest round-trip decimal form of a double.
std::string format_double(double v);

}  // namespace ltto::io
