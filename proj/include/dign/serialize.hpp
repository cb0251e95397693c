#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "dign/tensor.hpp"

namespace dign {

/// Flat tensor record:
///   "DIGN" | version u32 | N, C, H, W as u64 | payload
/// Version 1 carries 32-bit floats, version 2 carries 64-bit floats.
/// Every integer and float is little-endian.
inline constexpr std::uint32_t kTensorVersionF32 = 1;
inline constexpr std::uint32_t kTensorVersionF64 = 2;

template <typename T>
void write_tensor(std::ostream& out, const Tensor<T>& t);

/// Reads one record at either payload width, converting to T.
template <typename T>
Tensor<T> read_tensor(std::istream& in);

template <typename T>
void save_tensor(const std::string& path, const Tensor<T>& t);
template <typename T>
Tensor<T> load_tensor(const std::string& path);

namespace io {

void put_u32(std::ostream& out, std::uint32_t v);
void put_u64(std::ostream& out, std::uint64_t v);
void put_string(std::ostream& out, const std::string& s);
std::uint32_t get_u32(std::istream& in);
std::uint64_t get_u64(std::istream& in);
std::string get_string(std::istream& in, std::size_t max_len = 1u << 20);

}  // namespace io

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(const std::string& text);

}  // namespace dign
