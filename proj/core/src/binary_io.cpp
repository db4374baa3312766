#include "hmmt/binary_io.hpp"

#include <bit>
#include <fstream>

#include "hmmt/errors.hpp"

namespace hmmt::io {

namespace {

// Upper bounds that keep a corrupted header from triggering huge allocations.
constexpr std::uint64_t kMaxRank = 16;
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 32;

}  // namespace

void Writer::u32(std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  bytes(b, 4);
}

void Writer::u64(std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  bytes(b, 8);
}

void Writer::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void Writer::bytes(const void* data, std::size_t size) {
  out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  if (!out_) throw FormatError("write failed");
}

void Writer::str(const std::string& s) {
  u32(static_cast<std::uint32_t>(s.size()));
  bytes(s.data(), s.size());
}

void Writer::tensor_body(const Tensor& t) {
  u64(t.rank());
  for (auto e : t.shape()) u64(e);
  for (double v : t.data()) f64(v);
}

void Reader::bytes(void* data, std::size_t size) {
  in_.read(static_cast<char*>(data), static_cast<std::streamsize>(size));
  if (static_cast<std::size_t>(in_.gcount()) != size) throw FormatError(context_ + ": truncated input");
}

std::uint32_t Reader::u32() {
  unsigned char b[4];
  bytes(b, 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t Reader::u64() {
  unsigned char b[8];
  bytes(b, 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

double Reader::f64() { return std::bit_cast<double>(u64()); }

std::string Reader::str(std::size_t max_length) {
  const auto n = u32();
  if (n > max_length) throw FormatError(context_ + ": string length " + std::to_string(n) + " exceeds limit");
  const auto left = remaining();
  if (left && n > *left) throw FormatError(context_ + ": truncated string of length " + std::to_string(n));
  std::string s(n, '\0');
  bytes(s.data(), n);
  return s;
}

Tensor Reader::tensor_body() {
  const auto rank = u64();
  if (rank == 0 || rank > kMaxRank) throw FormatError(context_ + ": invalid rank " + std::to_string(rank));
  Shape shape(rank);
  std::uint64_t count = 1;
  for (auto& e : shape) {
    e = u64();
    if (e == 0 || e > kMaxElements || count * e > kMaxElements) throw FormatError(context_ + ": invalid extent");
    count *= e;
  }
  const auto left = remaining();
  if (left && count * 8 > *left) {
    throw FormatError(context_ + ": payload of " + std::to_string(count) + " values exceeds the " +
                      std::to_string(*left) + " bytes left");
  }
  std::vector<unsigned char> raw(count * 8);
  bytes(raw.data(), raw.size());
  std::vector<double> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(raw[i * 8 + k]) << (8 * k);
    values[i] = std::bit_cast<double>(bits);
  }
  return Tensor::from(std::move(shape), std::move(values));
}

std::optional<std::uint64_t> Reader::remaining() {
  const auto here = in_.tellg();
  if (here < 0) return std::nullopt;
  in_.seekg(0, std::ios::end);
  const auto end = in_.tellg();
  in_.seekg(here);
  if (end < here) return std::nullopt;
  return static_cast<std::uint64_t>(end - here);
}

bool Reader::at_end() { return in_.peek() == std::char_traits<char>::eof(); }

void write_array(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  Writer w(out);
  w.tensor_body(t);
}

Tensor read_array(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  Reader r(in, path.string());
  Tensor t = r.tensor_body();
  if (!r.at_end()) throw FormatError(path.string() + ": trailing bytes after array payload");
  return t;
}

}  // namespace hmmt::io
