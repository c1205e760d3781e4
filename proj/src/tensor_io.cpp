#include "tpc/tensor_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>

namespace tpc {

std::uint64_t TensorRecord::element_count() const {
  std::uint64_t n = 1;
  for (auto e : extents) n *= e;
  return n;
}

namespace io {
namespace {

template <typename T>
void write_le(std::ostream& os, T v) {
  std::array<char, sizeof(T)> buf{};
  std::memcpy(buf.data(), &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf.begin(), buf.end());
  os.write(buf.data(), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
  std::array<char, sizeof(T)> buf{};
  const auto offset = is.tellg();
  if (!is.read(buf.data(), sizeof(T))) {
    throw FormatError("unexpected end of data at byte offset " + std::to_string(static_cast<long long>(offset)));
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf.begin(), buf.end());
  T v;
  std::memcpy(&v, buf.data(), sizeof(T));
  return v;
}

}  // namespace

void write_u8(std::ostream& os, std::uint8_t v) { write_le(os, v); }
void write_u32(std::ostream& os, std::uint32_t v) { write_le(os, v); }
void write_u64(std::ostream& os, std::uint64_t v) { write_le(os, v); }
void write_f64(std::ostream& os, double v) { write_le(os, v); }
void write_f32(std::ostream& os, float v) { write_le(os, v); }
void write_string(std::ostream& os, const std::string& s) {
  write_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint8_t read_u8(std::istream& is) { return read_le<std::uint8_t>(is); }
std::uint32_t read_u32(std::istream& is) { return read_le<std::uint32_t>(is); }
std::uint64_t read_u64(std::istream& is) { return read_le<std::uint64_t>(is); }
double read_f64(std::istream& is) { return read_le<double>(is); }
float read_f32(std::istream& is) { return read_le<float>(is); }

std::string read_string(std::istream& is, std::uint64_t max_len) {
  const auto len = read_u64(is);
  if (len > max_len) throw FormatError("string length " + std::to_string(len) + " exceeds limit");
  std::string s(len, '\0');
  if (!is.read(s.data(), static_cast<std::streamsize>(len))) throw FormatError("truncated string");
  return s;
}

}  // namespace io

void write_tensor(std::ostream& os, const TensorRecord& record) {
  if (record.element_count() != record.data.size()) throw ContractError("tensor record extents do not match data");
  io::write_u8(os, static_cast<std::uint8_t>(record.dtype));
  io::write_u32(os, static_cast<std::uint32_t>(record.extents.size()));
  for (auto e : record.extents) io::write_u64(os, e);
  for (double v : record.data) {
    if (record.dtype == DType::f64) {
      io::write_f64(os, v);
    } else {
      io::write_f32(os, static_cast<float>(v));
    }
  }
}

TensorRecord read_tensor(std::istream& is) {
  TensorRecord rec;
  const auto tag = io::read_u8(is);
  if (tag > 1) throw FormatError("unknown dtype tag " + std::to_string(tag));
  rec.dtype = static_cast<DType>(tag);
  const auto rank = io::read_u32(is);
  if (rank > 8) throw FormatError("tensor rank " + std::to_string(rank) + " not supported");
  rec.extents.resize(rank);
  for (auto& e : rec.extents) e = io::read_u64(is);
  const auto n = rec.element_count();
  if (n > (1ull << 34)) throw FormatError("tensor record too large");
  rec.data.resize(n);
  for (auto& v : rec.data) v = rec.dtype == DType::f64 ? io::read_f64(is) : static_cast<double>(io::read_f32(is));
  return rec;
}

}  // namespace tpc
