#pragma once

#include <filesystem>
#include <string>

#include "oodno/tensor.hpp"

namespace oodno::io {

/// 8-byte file magic of the binary tensor format.
inline constexpr char kTensorMagic[8] = {'O', 'O', 'D', 'N', 'O', 'T', 'S', 'R'};

/// Writes `<path>`: magic, u32 rank, u64 extents, little-endian f64 payload
/// (complex tensors store (re, im) pairs), plus a `<path>.json` sidecar with
/// name, dtype and role.
void write_tensor(const std::filesystem::path& path, const Tensor& tensor, const std::string& name,
                  const std::string& role);

/// Reads a tensor written by write_tensor. The dtype is taken from the sidecar
/// when present, otherwise inferred as real.
Tensor read_tensor(const std::filesystem::path& path);

std::filesystem::path sidecar_path(const std::filesystem::path& path);

}  // namespace oodno::io
