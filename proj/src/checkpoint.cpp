#include "dign/checkpoint.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "dign/serialize.hpp"

namespace dign {

namespace {

constexpr char kMagic[4] = {'D', 'G', 'C', 'K'};
constexpr std::uint32_t kMaxTensors = 1u << 20;

}  // namespace

template <typename T>
Tensor<T> CheckpointFile<T>::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  return {};
}

template <typename T>
void write_checkpoint_file(const std::string& path, const CheckpointFile<T>& file) {
  std::ostringstream out(std::ios::binary);
  out.write(kMagic, 4);
  io::put_u32(out, kCheckpointVersion);
  io::put_u64(out, file.digest);
  io::put_string(out, file.config_text);
  io::put_u64(out, file.iteration);
  io::put_u64(out, file.optimizer_step);
  io::put_u32(out, static_cast<std::uint32_t>(file.tensors.size()));
  for (const auto& [name, t] : file.tensors) io::put_string(out, name);
  for (const auto& [name, t] : file.tensors) write_tensor(out, t);

  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + tmp + " for writing");
    const std::string bytes = out.str();
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    f.flush();
    if (!f) throw IoError("write failed: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp + " to " + path + ": " + ec.message());
}

template <typename T>
CheckpointFile<T> read_checkpoint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::string(magic, 4) != std::string(kMagic, 4)) {
    throw ParseError(path + ": not a checkpoint file");
  }
  const std::uint32_t version = io::get_u32(in);
  if (version != kCheckpointVersion) {
    throw ParseError(path + ": unsupported checkpoint version " + std::to_string(version));
  }
  CheckpointFile<T> file;
  file.digest = io::get_u64(in);
  file.config_text = io::get_string(in);
  file.iteration = io::get_u64(in);
  file.optimizer_step = io::get_u64(in);
  const std::uint32_t count = io::get_u32(in);
  if (count > kMaxTensors) throw ParseError(path + ": implausible tensor count");
  std::vector<std::string> names(count);
  for (auto& n : names) n = io::get_string(in, 4096);
  file.tensors.reserve(count);
  for (auto& n : names) file.tensors.emplace_back(std::move(n), read_tensor<T>(in));
  if (in.peek() != std::char_traits<char>::eof()) throw ParseError(path + ": trailing bytes after last tensor");
  return file;
}

template <typename T>
CheckpointFile<T> snapshot(Generator<T>& gen, std::uint64_t iteration) {
  CheckpointFile<T> file;
  file.config_text = gen.config().canonical_text();
  file.digest = gen.config().digest();
  file.iteration = iteration;
  for (auto& nt : gen.tensors()) file.tensors.emplace_back(nt.name, nt.tensor.detach());
  return file;
}

template <typename T>
void restore(Generator<T>& gen, const CheckpointFile<T>& file) {
  if (file.digest != gen.config().digest()) {
    throw IncompatibleError("checkpoint config digest does not match the generator");
  }
  std::map<std::string, const Tensor<T>*> by_name;
  for (const auto& [n, t] : file.tensors) by_name[n] = &t;
  auto targets = gen.tensors();
  for (const auto& nt : targets) {
    auto it = by_name.find(nt.name);
    if (it == by_name.end()) throw IncompatibleError("checkpoint is missing tensor " + nt.name);
    if (it->second->shape() != nt.tensor.shape()) {
      throw IncompatibleError("checkpoint tensor " + nt.name + " has shape " + it->second->shape().str() +
                              ", expected " + nt.tensor.shape().str());
    }
  }
  for (auto& nt : targets) {
    const auto src = by_name[nt.name]->data();
    auto dst = nt.tensor.mutable_data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

template <typename T>
void save_checkpoint(Generator<T>& gen, const std::string& path) {
  write_checkpoint_file(path, snapshot(gen));
}

template <typename T>
Generator<T> load_checkpoint(const std::string& path) {
  const CheckpointFile<T> file = read_checkpoint_file<T>(path);
  const GeneratorConfig config = GeneratorConfig::parse(file.config_text);
  if (config.digest() != file.digest) throw IncompatibleError(path + ": stored digest does not match its config");
  Generator<T> gen(config, 0);
  restore(gen, file);
  return gen;
}

template <typename T>
Generator<T> load_checkpoint(const std::string& path, const GeneratorConfig& expected) {
  const CheckpointFile<T> file = read_checkpoint_file<T>(path);
  if (file.digest != expected.digest()) {
    throw IncompatibleError(path + ": checkpoint config digest does not match the requested config");
  }
  Generator<T> gen(expected, 0);
  restore(gen, file);
  return gen;
}

#define DIGN_INSTANTIATE(T)                                                                      \
  template struct CheckpointFile<T>;                                                             \
  template void write_checkpoint_file<T>(const std::string&, const CheckpointFile<T>&);          \
  template CheckpointFile<T> read_checkpoint_file<T>(const std::string&);                        \
  template CheckpointFile<T> snapshot<T>(Generator<T>&, std::uint64_t);                          \
  template void restore<T>(Generator<T>&, const CheckpointFile<T>&);                             \
  template void save_checkpoint<T>(Generator<T>&, const std::string&);                           \
  template Generator<T> load_checkpoint<T>(const std::string&);                                  \
  template Generator<T> load_checkpoint<T>(const std::string&, const GeneratorConfig&);

DIGN_INSTANTIATE(float)
DIGN_INSTANTIATE(double)
#undef DIGN_INSTANTIATE

}  // namespace dign
