#pragma once

#include "gpo/types.hpp"

#include <cmath>

namespace gpo {

// ||pred - truth||_2 / ||truth||_2 over unmasked rows (mask true = excluded).
template <typename Scalar>
Scalar relative_l2(const Mat<Scalar>& pred, const Mat<Scalar>& truth, const Mask& mask = Mask()) {
  require_shape(pred.rows() == truth.rows() && pred.cols() == truth.cols(), "relative_l2: shape mismatch");
  require_shape(mask.size() == 0 || mask.size() == truth.rows(), "relative_l2: mask length mismatch");
  long double num = 0, den = 0;
  for (Index j = 0; j < truth.rows(); ++j) {
    if (mask.size() > 0 && mask(j)) continue;
    for (Index c = 0; c < truth.cols(); ++c) {
      const long double e = static_cast<long double>(pred(j, c)) - truth(j, c);
      num += e * e;
      den += static_cast<long double>(truth(j, c)) * truth(j, c);
    }
  }
  if (den == 0) throw DomainError("relative_l2: reference field has zero norm");
  return static_cast<Scalar>(std::sqrt(num / den));
}

}  // namespace gpo
