#include "dign/serialize.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

namespace dign {

namespace io {

namespace {

template <typename U>
void put_le(std::ostream& out, U v) {
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(bytes.data(), bytes.size());
}

template <typename U>
U get_le(std::istream& in) {
  std::array<unsigned char, sizeof(U)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw ParseError("unexpected end of data");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes[i]) << (8 * i);
  return v;
}

}  // namespace

void put_u32(std::ostream& out, std::uint32_t v) { put_le(out, v); }
void put_u64(std::ostream& out, std::uint64_t v) { put_le(out, v); }

void put_string(std::ostream& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t get_u32(std::istream& in) { return get_le<std::uint32_t>(in); }
std::uint64_t get_u64(std::istream& in) { return get_le<std::uint64_t>(in); }

std::string get_string(std::istream& in, std::size_t max_len) {
  const std::uint32_t len = get_u32(in);
  if (len > max_len) throw ParseError("string length " + std::to_string(len) + " exceeds limit");
  std::string s(len, '\0');
  in.read(s.data(), len);
  if (in.gcount() != static_cast<std::streamsize>(len)) throw ParseError("unexpected end of data in string");
  return s;
}

}  // namespace io

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename T>
void write_tensor(std::ostream& out, const Tensor<T>& t) {
  out.write("DIGN", 4);
  constexpr bool wide = sizeof(T) == 8;
  io::put_u32(out, wide ? kTensorVersionF64 : kTensorVersionF32);
  const Shape& s = t.shape();
  io::put_u64(out, s.n);
  io::put_u64(out, s.c);
  io::put_u64(out, s.h);
  io::put_u64(out, s.w);
  for (T v : t.data()) {
    if constexpr (wide) {
      io::put_u64(out, std::bit_cast<std::uint64_t>(static_cast<double>(v)));
    } else {
      io::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  }
}

template <typename T>
Tensor<T> read_tensor(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, "DIGN", 4) != 0) throw ParseError("bad tensor magic");
  const std::uint32_t version = io::get_u32(in);
  if (version != kTensorVersionF32 && version != kTensorVersionF64) {
    throw ParseError("unsupported tensor version " + std::to_string(version));
  }
  Shape s;
  s.n = io::get_u64(in);
  s.c = io::get_u64(in);
  s.h = io::get_u64(in);
  s.w = io::get_u64(in);
  constexpr std::uint64_t kMaxElements = 1ULL << 32;
  if (s.n == 0 || s.c == 0 || s.h == 0 || s.w == 0 || s.n > kMaxElements || s.c > kMaxElements ||
      s.h > kMaxElements || s.w > kMaxElements || s.numel() > kMaxElements) {
    throw ParseError("implausible tensor shape " + s.str());
  }
  std::vector<T> data(s.numel());
  for (auto& v : data) {
    if (version == kTensorVersionF64) {
      v = static_cast<T>(std::bit_cast<double>(io::get_u64(in)));
    } else {
      v = static_cast<T>(std::bit_cast<float>(io::get_u32(in)));
    }
  }
  return Tensor<T>::from_data(s, std::move(data));
}

template <typename T>
void save_tensor(const std::string& path, const Tensor<T>& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  write_tensor(out, t);
  if (!out) throw IoError("failed writing " + path);
}

template <typename T>
Tensor<T> load_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return read_tensor<T>(in);
}

#define DIGN_INSTANTIATE(T)                                        \
  template void write_tensor<T>(std::ostream&, const Tensor<T>&);  \
  template Tensor<T> read_tensor<T>(std::istream&);                \
  template void save_tensor<T>(const std::string&, const Tensor<T>&); \
  template Tensor<T> load_tensor<T>(const std::string&);

DIGN_INSTANTIATE(float)
DIGN_INSTANTIATE(double)
#undef DIGN_INSTANTIATE

}  // namespace dign
