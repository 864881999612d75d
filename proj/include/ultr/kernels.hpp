#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace ultr {

/// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
};

// Dense-layer kernels. Weights are stored out-major (out x in). The OpenMP
// versions parallelize over independent outputs and accumulate every output in
// the same order as the serial references, so the two agree bit for bit.
namespace kernels {

/// out[i][j] = bias[j] + sum_k in[i][k] * weight[j][k]
void affine_forward(const Matrix& in, std::span<const double> weight, std::span<const double> bias, Matrix& out);

/// d_weight[j][k] += sum_i upstream[i][j] * in[i][k];  d_bias[j] += sum_i upstream[i][j]
void affine_backward_params(const Matrix& in, const Matrix& upstream, std::span<double> d_weight,
                            std::span<double> d_bias);

/// d_in[i][k] = sum_j upstream[i][j] * weight[j][k]
void affine_backward_input(const Matrix& upstream, std::span<const double> weight, std::size_t in_dim, Matrix& d_in);

namespace reference {
void affine_forward(const Matrix& in, std::span<const double> weight, std::span<const double> bias, Matrix& out);
void affine_backward_params(const Matrix& in, const Matrix& upstream, std::span<double> d_weight,
                            std::span<double> d_bias);
void affine_backward_input(const Matrix& upstream, std::span<const double> weight, std::size_t in_dim, Matrix& d_in);
}  // namespace reference

}  // namespace kernels
}  // namespace ultr
