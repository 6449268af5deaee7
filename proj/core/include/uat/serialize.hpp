#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "uat/tensor.hpp"

namespace uat {

// Little-endian primitives. Reads throw FormatError on truncation.
void write_u32le(std::ostream& os, uint32_t v);
void write_u64le(std::ostream& os, uint64_t v);
void write_f32le(std::ostream& os, float v);
uint32_t read_u32le(std::istream& is);
uint64_t read_u64le(std::istream& is);
float read_f32le(std::istream& is);
void write_bytes(std::ostream& os, const void* p, size_t n);
void read_bytes(std::istream& is, void* p, size_t n);
void write_string(std::ostream& os, const std::string& s);  // u32 length prefix
std::string read_string(std::istream& is, size_t max_len = 1 << 20);

// Tensor snapshot: u32 rank, u32 extents[rank], then flat float32 data,
// everything little-endian, row-major element order.
void write_tensor(std::ostream& os, const Tensor<float>& t);
void write_tensor(std::ostream& os, const Tensor<double>& t);  // stored as f32
Tensor<float> read_tensor(std::istream& is);

}  // namespace uat
