#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dign/generator.hpp"

namespace dign {

/// Checkpoint file layout (little-endian):
///   "DGCK" | version u32 | config digest u64 | config text (u32 length + bytes)
///   | iteration u64 | optimizer step u64 | tensor count u32
///   | name table: count x (u32 length + bytes) | count x tensor record
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
struct CheckpointFile {
  std::string config_text;
  std::uint64_t digest = 0;
  std::uint64_t iteration = 0;
  std::uint64_t optimizer_step = 0;
  std::vector<std::pair<std::string, Tensor<T>>> tensors;

  /// Tensor by name, or an undefined tensor.
  Tensor<T> find(const std::string& name) const;
};

/// Writes to a sibling temporary file and renames it into place.
template <typename T>
void write_checkpoint_file(const std::string& path, const CheckpointFile<T>& file);

/// Parses the whole file before returning; throws ParseError on any
/// truncation or malformed field.
template <typename T>
CheckpointFile<T> read_checkpoint_file(const std::string& path);

/// Generator weights and running statistics under their layer paths.
template <typename T>
CheckpointFile<T> snapshot(Generator<T>& gen, std::uint64_t iteration = 0);

/// Copies every generator tensor from `file`. Throws IncompatibleError on a
/// digest mismatch or a missing or misshapen tensor; the generator is
/// untouched on failure.
template <typename T>
void restore(Generator<T>& gen, const CheckpointFile<T>& file);

template <typename T>
void save_checkpoint(Generator<T>& gen, const std::string& path);

/// Rebuilds the generator from the stored config, then restores it.
template <typename T>
Generator<T> load_checkpoint(const std::string& path);

/// As above, but rejects a file whose digest differs from `expected`.
template <typename T>
Generator<T> load_checkpoint(const std::string& path, const GeneratorConfig& expected);

}  // namespace dign
