#include "ultr/kernels.hpp"

#include <cstdint>

namespace ultr::kernels {

// Rows below this run serially; OpenMP fork/join dominates for tiny batches.
constexpr std::size_t kParallelRows = 64;

void affine_forward(const Matrix& in, std::span<const double> weight, std::span<const double> bias, Matrix& out) {
  const std::size_t n = in.rows, d = in.cols, h = bias.size();
  out.rows = n;
  out.cols = h;
  out.data.resize(n * h);
  const double* x = in.data.data();
  const double* w = weight.data();
  double* y = out.data.data();
#pragma omp parallel for schedule(static) if (n >= kParallelRows)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i) {
    const double* xi = x + i * d;
    double* yi = y + i * h;
    for (std::size_t j = 0; j < h; ++j) {
      const double* wj = w + j * d;
      double acc = bias[j];
      for (std::size_t k = 0; k < d; ++k) acc += xi[k] * wj[k];
      yi[j] = acc;
    }
  }
}

void affine_backward_params(const Matrix& in, const Matrix& upstream, std::span<double> d_weight,
                            std::span<double> d_bias) {
  const std::size_t n = in.rows, d = in.cols, h = upstream.cols;
  const double* x = in.data.data();
  const double* g = upstream.data.data();
#pragma omp parallel for schedule(static) if (n >= kParallelRows)
  for (std::int64_t j = 0; j < static_cast<std::int64_t>(h); ++j) {
    double* dw = d_weight.data() + j * d;
    double db = d_bias[j];
    for (std::size_t i = 0; i < n; ++i) {
      const double gij = g[i * h + j];
      if (gij == 0.0) continue;
      const double* xi = x + i * d;
      for (std::size_t k = 0; k < d; ++k) dw[k] += gij * xi[k];
      db += gij;
    }
    d_bias[j] = db;
  }
}

void affine_backward_input(const Matrix& upstream, std::span<const double> weight, std::size_t in_dim, Matrix& d_in) {
  const std::size_t n = upstream.rows, h = upstream.cols, d = in_dim;
  d_in.rows = n;
  d_in.cols = d;
  d_in.data.assign(n * d, 0.0);
  const double* g = upstream.data.data();
  const double* w = weight.data();
  double* dx = d_in.data.data();
#pragma omp parallel for schedule(static) if (n >= kParallelRows)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i) {
    double* dxi = dx + i * d;
    for (std::size_t j = 0; j < h; ++j) {
      const double gij = g[i * h + j];
      if (gij == 0.0) continue;
      const double* wj = w + j * d;
      for (std::size_t k = 0; k < d; ++k) dxi[k] += gij * wj[k];
    }
  }
}

namespace reference {

void affine_forward(const Matrix& in, std::span<const double> weight, std::span<const double> bias, Matrix& out) {
  const std::size_t h = bias.size();
  out = Matrix(in.rows, h);
  for (std::size_t i = 0; i < in.rows; ++i)
    for (std::size_t j = 0; j < h; ++j) {
      double acc = bias[j];
      for (std::size_t k = 0; k < in.cols; ++k) acc += in(i, k) * weight[j * in.cols + k];
      out(i, j) = acc;
    }
}

void affine_backward_params(const Matrix& in, const Matrix& upstream, std::span<double> d_weight,
                            std::span<double> d_bias) {
  for (std::size_t j = 0; j < upstream.cols; ++j)
    for (std::size_t i = 0; i < in.rows; ++i) {
      const double gij = upstream(i, j);
      if (gij == 0.0) continue;
      for (std::size_t k = 0; k < in.cols; ++k) d_weight[j * in.cols + k] += gij * in(i, k);
      d_bias[j] += gij;
    }
}

void affine_backward_input(const Matrix& upstream, std::span<const double> weight, std::size_t in_dim, Matrix& d_in) {
  d_in = Matrix(upstream.rows, in_dim);
  for (std::size_t i = 0; i < upstream.rows; ++i)
    for (std::size_t j = 0; j < upstream.cols; ++j) {
      const double gij = upstream(i, j);
      if (gij == 0.0) continue;
      for (std::size_t k = 0; k < in_dim; ++k) d_in(i, k) += gij * weight[j * in_dim + k];
    }
}

}  // namespace reference
}  // namespace ultr::kernels
