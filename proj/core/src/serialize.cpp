#include "uat/serialize.hpp"

#include <bit>
#include <cstring>
#include <istream>
#include <limits>
#include <ostream>

namespace uat {

static_assert(std::endian::native == std::endian::little,
              "serialization writes raw little-endian words; add byte swaps for this platform");

void write_bytes(std::ostream& os, const void* p, size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  if (!os) throw FormatError("write failed");
}

void read_bytes(std::istream& is, void* p, size_t n) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(is.gcount()) != n) throw FormatError("unexpected end of stream");
}

void write_u32le(std::ostream& os, uint32_t v) { write_bytes(os, &v, 4); }
void write_u64le(std::ostream& os, uint64_t v) { write_bytes(os, &v, 8); }
void write_f32le(std::ostream& os, float v) { write_bytes(os, &v, 4); }

uint32_t read_u32le(std::istream& is) {
  uint32_t v;
  read_bytes(is, &v, 4);
  return v;
}

uint64_t read_u64le(std::istream& is) {
  uint64_t v;
  read_bytes(is, &v, 8);
  return v;
}

float read_f32le(std::istream& is) {
  float v;
  read_bytes(is, &v, 4);
  return v;
}

void write_string(std::ostream& os, const std::string& s) {
  write_u32le(os, static_cast<uint32_t>(s.size()));
  write_bytes(os, s.data(), s.size());
}

std::string read_string(std::istream& is, size_t max_len) {
  const uint32_t n = read_u32le(is);
  if (n > max_len) throw FormatError("string length " + std::to_string(n) + " exceeds limit");
  std::string s(n, '\0');
  if (n) read_bytes(is, s.data(), n);
  return s;
}

void write_tensor(std::ostream& os, const Tensor<float>& t) {
  write_u32le(os, static_cast<uint32_t>(t.rank()));
  for (int64_t i = 0; i < t.rank(); ++i) write_u32le(os, static_cast<uint32_t>(t.shape()[static_cast<size_t>(i)]));
  write_bytes(os, t.data(), static_cast<size_t>(t.size()) * 4);
}

void write_tensor(std::ostream& os, const Tensor<double>& t) {
  write_u32le(os, static_cast<uint32_t>(t.rank()));
  for (int64_t i = 0; i < t.rank(); ++i) write_u32le(os, static_cast<uint32_t>(t.shape()[static_cast<size_t>(i)]));
  for (int64_t i = 0; i < t.size(); ++i) write_f32le(os, static_cast<float>(t[i]));
}

Tensor<float> read_tensor(std::istream& is) {
  const uint32_t rank = read_u32le(is);
  if (rank > 8) throw FormatError("tensor rank " + std::to_string(rank) + " out of range");
  Shape shape(rank);
  int64_t n = 1;
  for (uint32_t i = 0; i < rank; ++i) {
    const uint32_t e = read_u32le(is);
    shape[i] = static_cast<int64_t>(e);
    n *= shape[i];
    if (n > (int64_t(1) << 33)) throw FormatError("tensor too large");
  }
  Tensor<float> t = Tensor<float>::uninitialized(std::move(shape));
  if (t.size()) read_bytes(is, t.data(), static_cast<size_t>(t.size()) * 4);
  return t;
}

}  // namespace uat
