#pragma once

// Little-endian primitive encoding shared by array files and checkpoints.

#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "hmmt/tensor.hpp"

namespace hmmt::io {

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void bytes(const void* data, std::size_t size);
  void str(const std::string& s);  // u32 length + bytes
  void tensor_body(const Tensor& t);  // rank u64, extents u64, f64 payload

 private:
  std::ostream& out_;
};

// Every read checks for truncation and throws FormatError with `context`.
class Reader {
 public:
  Reader(std::istream& in, std::string context) : in_(in), context_(std::move(context)) {}
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  void bytes(void* data, std::size_t size);
  // Rejects lengths above `max_length` before allocating.
  std::string str(std::size_t max_length = 1 << 20);
  Tensor tensor_body();
  bool at_end();
  // Bytes left in a seekable stream.
  std::optional<std::uint64_t> remaining();

 private:
  std::istream& in_;
  std::string context_;
};

// Standalone array file: rank, extents (u64 LE), f64 LE payload.
void write_array(const std::filesystem::path& path, const Tensor& t);
Tensor read_array(const std::filesystem::path& path);

}  // namespace hmmt::io
