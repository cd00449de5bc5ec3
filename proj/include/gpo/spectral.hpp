#pragma once

// 2D FFT helpers on n x n periodic grids (row index = first axis).

#include "gpo/types.hpp"

#include <complex>

namespace gpo {

using Complex = std::complex<double>;
using MatC = Eigen::Matrix<Complex, Eigen::Dynamic, Eigen::Dynamic>;

MatC fft2(const Mat<double>& u);
Mat<double> ifft2_real(const MatC& uh);

// Signed integer wavenumber of FFT index i on an n-point axis.
inline Index wavenumber(Index i, Index n) { return i <= n / 2 ? i : i - n; }

// Field stored as n^2 x 1 (last axis fastest) <-> n x n with (ix, iy).
Mat<double> unflatten_grid(const Mat<double>& column, Index n);
Mat<double> flatten_grid(const Mat<double>& grid);

// Trigonometric interpolation of an n x n periodic grid onto m x m (m >= n, m
// divisible by n); the Nyquist line is split between +n/2 and -n/2 so the
// coarse samples are reproduced.
Mat<double> spectral_upsample(const Mat<double>& grid, Index m);

}  // namespace gpo
