#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "freeevent/unet.hpp"

namespace freeevent {

// Little-endian binary container shared by weight files and reference caches:
//   magic (8 bytes) | u32 version | body
inline constexpr std::uint32_t kWeightsVersion = 1;

/// Body: U-Net config fields, then a manifest of (name, rank, dims) per tensor,
/// then every tensor's elements as float32 in manifest order.
void save_weights(const std::filesystem::path& path, const Weights& weights);
Weights load_weights(const std::filesystem::path& path);

/// Rounds every parameter to the nearest float32 so a save/load cycle is exact.
Weights quantized_f32(const Weights& weights);

/// FNV-1a 64-bit digest, used for cache keys and reproducibility checks.
std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t file_digest(const std::filesystem::path& path);
std::string hex64(std::uint64_t v);

namespace binio {
void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
void write_i32(std::ostream& os, std::int32_t v);
void write_f32(std::ostream& os, float v);
void write_f64(std::ostream& os, double v);
void write_string(std::ostream& os, const std::string& s);
void write_tensor_f64(std::ostream& os, const Tensor& t);
std::uint32_t read_u32(std::istream& is);
std::uint64_t read_u64(std::istream& is);
std::int32_t read_i32(std::istream& is);
float read_f32(std::istream& is);
double read_f64(std::istream& is);
std::string read_string(std::istream& is);
Tensor read_tensor_f64(std::istream& is);
}  // namespace binio

}  // namespace freeevent
