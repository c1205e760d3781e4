#pragma once

// Little-endian binary tensor records:
//   u8 dtype | u32 rank | u64 extents[rank] | raw element data
// dtype 0 = f64, 1 = f32.

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>
#include <vector>

#include "tpc/tensor.hpp"

namespace tpc {

enum class DType : std::uint8_t { f64 = 0, f32 = 1 };

template <typename Scalar>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<Scalar, double> || std::is_same_v<Scalar, float>);
  return std::is_same_v<Scalar, double> ? DType::f64 : DType::f32;
}

struct TensorRecord {
  DType dtype = DType::f64;
  std::vector<std::uint64_t> extents;
  std::vector<double> data;  // f32 records hold exactly representable values

  std::uint64_t element_count() const;
};

namespace io {
void write_u8(std::ostream& os, std::uint8_t v);
void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
void write_f64(std::ostream& os, double v);
void write_f32(std::ostream& os, float v);
void write_string(std::ostream& os, const std::string& s);  // u64 length + bytes

std::uint8_t read_u8(std::istream& is);
std::uint32_t read_u32(std::istream& is);
std::uint64_t read_u64(std::istream& is);
double read_f64(std::istream& is);
float read_f32(std::istream& is);
std::string read_string(std::istream& is, std::uint64_t max_len = (1ull << 32));
}  // namespace io

void write_tensor(std::ostream& os, const TensorRecord& record);
TensorRecord read_tensor(std::istream& is);

template <typename Scalar>
TensorRecord to_record(const Matrix<Scalar>& m) {
  TensorRecord rec;
  rec.dtype = dtype_of<Scalar>();
  rec.extents = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  rec.data.assign(m.data(), m.data() + m.size());
  return rec;
}

/// Rank 0 maps to 1x1, rank 1 to a 1xn row, rank 2 as is. Higher ranks
/// flatten trailing extents into columns.
template <typename Scalar>
Matrix<Scalar> to_matrix(const TensorRecord& rec) {
  Index rows = 1;
  Index cols = 1;
  if (rec.extents.size() == 1) {
    cols = static_cast<Index>(rec.extents[0]);
  } else if (rec.extents.size() >= 2) {
    rows = static_cast<Index>(rec.extents[0]);
    for (std::size_t i = 1; i < rec.extents.size(); ++i) cols *= static_cast<Index>(rec.extents[i]);
  }
  if (static_cast<std::uint64_t>(rows * cols) != rec.data.size()) throw FormatError("tensor record size mismatch");
  Matrix<Scalar> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(rec.data[static_cast<std::size_t>(i)]);
  return m;
}

}  // namespace tpc
