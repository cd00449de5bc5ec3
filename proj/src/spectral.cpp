#include "gpo/spectral.hpp"

#include <unsupported/Eigen/FFT>

#include <utility>
#include <vector>

namespace gpo {

MatC fft2(const Mat<double>& u) {
  require_shape(u.rows() == u.cols(), "fft2: grid must be square");
  const Index n = u.rows();
  Eigen::FFT<double> fft;
  MatC tmp(n, n), out(n, n);
  Eigen::VectorXcd in_c(n), res(n);
  for (Index r = 0; r < n; ++r) {
    in_c = u.row(r).transpose().cast<Complex>();
    fft.fwd(res, in_c);
    tmp.row(r) = res.transpose();
  }
  for (Index c = 0; c < n; ++c) {
    in_c = tmp.col(c);
    fft.fwd(res, in_c);
    out.col(c) = res;
  }
  return out;
}

Mat<double> ifft2_real(const MatC& uh) {
  require_shape(uh.rows() == uh.cols(), "ifft2: grid must be square");
  const Index n = uh.rows();
  Eigen::FFT<double> fft;
  MatC tmp(n, n);
  Eigen::VectorXcd in_c(n), res(n);
  for (Index c = 0; c < n; ++c) {
    in_c = uh.col(c);
    fft.inv(res, in_c);
    tmp.col(c) = res;
  }
  Mat<double> out(n, n);
  for (Index r = 0; r < n; ++r) {
    in_c = tmp.row(r).transpose();
    fft.inv(res, in_c);
    out.row(r) = res.real().transpose();
  }
  return out;
}

Mat<double> unflatten_grid(const Mat<double>& column, Index n) {
  require_shape(column.rows() == n * n && column.cols() == 1, "unflatten_grid: expected n^2 x 1 values");
  Mat<double> g(n, n);
  for (Index ix = 0; ix < n; ++ix)
    for (Index iy = 0; iy < n; ++iy) g(ix, iy) = column(ix * n + iy, 0);
  return g;
}

Mat<double> flatten_grid(const Mat<double>& grid) {
  const Index n = grid.rows();
  require_shape(grid.cols() == n, "flatten_grid: grid must be square");
  Mat<double> c(n * n, 1);
  for (Index ix = 0; ix < n; ++ix)
    for (Index iy = 0; iy < n; ++iy) c(ix * n + iy, 0) = grid(ix, iy);
  return c;
}

Mat<double> spectral_upsample(const Mat<double>& grid, Index m) {
  const Index n = grid.rows();
  require_shape(grid.cols() == n && m >= n && m % n == 0, "spectral_upsample: need a square grid and m a multiple of n");
  const MatC h = fft2(grid);
  MatC out = MatC::Zero(m, m);
  auto targets = [&](Index i) {
    const Index k = wavenumber(i, n);
    std::vector<std::pair<Index, double>> t;
    if (n % 2 == 0 && i == n / 2 && m > n) t = {{k, 0.5}, {m - k, 0.5}};
    else t = {{k >= 0 ? k : k + m, 1.0}};
    return t;
  };
  for (Index i = 0; i < n; ++i)
    for (const auto& [a, wa] : targets(i))
      for (Index j = 0; j < n; ++j)
        for (const auto& [b, wb] : targets(j)) out(a, b) += wa * wb * h(i, j);
  const double scale = static_cast<double>(m * m) / static_cast<double>(n * n);
  return scale * ifft2_real(out);
}

}  // namespace gpo
