#pragma once

// GPT1 tensor files: "GPT1", u8 dtype (0 = f32, 1 = f64), u8 rank,
// little-endian u64 dims, row-major little-endian payload.

#include "gpo/types.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace gpo {

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

struct Tensor {
  DType dtype = DType::F64;
  std::vector<std::uint64_t> shape;
  std::vector<double> data;  // row-major

  std::size_t numel() const;
  std::size_t payload_bytes() const { return numel() * (dtype == DType::F32 ? 4 : 8); }
  std::size_t encoded_bytes() const { return 6 + 8 * shape.size() + payload_bytes(); }
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename Scalar>
Tensor to_tensor(const Mat<Scalar>& m, DType dtype = DType::F64) {
  Tensor t;
  t.dtype = dtype;
  t.shape = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  t.data.reserve(static_cast<std::size_t>(m.size()));
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) t.data.push_back(static_cast<double>(m(r, c)));
  return t;
}

template <typename Scalar>
Tensor to_tensor(const Vec<Scalar>& v, DType dtype = DType::F64) {
  Tensor t;
  t.dtype = dtype;
  t.shape = {static_cast<std::uint64_t>(v.size())};
  for (Index i = 0; i < v.size(); ++i) t.data.push_back(static_cast<double>(v(i)));
  return t;
}

// Rank-1 tensors become column vectors; rank > 2 folds leading dims into rows.
template <typename Scalar>
Mat<Scalar> to_matrix(const Tensor& t) {
  if (t.shape.empty()) return Mat<Scalar>::Constant(1, 1, static_cast<Scalar>(t.data.at(0)));
  const Index cols = t.shape.size() == 1 ? 1 : static_cast<Index>(t.shape.back());
  const Index rows = cols == 0 ? 0 : static_cast<Index>(t.numel()) / cols;
  Mat<Scalar> m(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) m(r, c) = static_cast<Scalar>(t.data[static_cast<std::size_t>(r * cols + c)]);
  return m;
}

void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

// Writes path and path + ".json" with channel names and an optional mask file reference.
void save_field_tensor(const std::string& path, const Tensor& t, const std::vector<std::string>& channels,
                       const std::string& mask_ref = "");

}  // namespace gpo
