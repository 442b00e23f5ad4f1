#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>

#include "sheafpc/types.hpp"

namespace sheafpc {

/// splitmix64 finalizer; bijective on 64-bit words.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent child stream seed. Deterministic in (seed, stream); distinct
/// streams decorrelate even for adjacent inputs.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

inline std::mt19937_64 make_rng(std::uint64_t seed) { return std::mt19937_64(splitmix64(seed)); }

template <typename Scalar = double>
Matrix<Scalar> gaussian_matrix(Index rows, Index cols, std::mt19937_64& rng, Scalar stddev = Scalar(1)) {
  std::normal_distribution<Scalar> normal(Scalar(0), stddev);
  Matrix<Scalar> A(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) A(i, j) = normal(rng);
  return A;
}

/// Haar-distributed orthonormal frame via QR of a Gaussian matrix, with the
/// R-diagonal sign fix that makes the distribution uniform. Square input
/// gives an orthogonal matrix; rectangular gives a semi-orthogonal one
/// (orthonormal columns if rows >= cols, orthonormal rows otherwise).
template <typename Scalar = double>
Matrix<Scalar> haar_orthonormal(Index rows, Index cols, std::mt19937_64& rng) {
  if (rows <= 0 || cols <= 0) throw std::invalid_argument("haar_orthonormal: dims must be positive");
  const bool tall = rows >= cols;
  const Index m = tall ? rows : cols;
  const Index n = tall ? cols : rows;
  Matrix<Scalar> A = gaussian_matrix<Scalar>(m, n, rng);
  Eigen::HouseholderQR<Matrix<Scalar>> qr(A);
  Matrix<Scalar> Q = qr.householderQ() * Matrix<Scalar>::Identity(m, n);
  Matrix<Scalar> R = qr.matrixQR().template triangularView<Eigen::Upper>();
  for (Index j = 0; j < n; ++j)
    if (R(j, j) < Scalar(0)) Q.col(j) = -Q.col(j);
  return tall ? Q : Matrix<Scalar>(Q.transpose());
}

/// Haar rotation: orthogonal with det +1 (flips one column sign if needed).
template <typename Scalar = double>
Matrix<Scalar> haar_rotation(Index n, std::mt19937_64& rng) {
  Matrix<Scalar> Q = haar_orthonormal<Scalar>(n, n, rng);
  if (Q.determinant() < Scalar(0)) Q.col(0) = -Q.col(0);
  return Q;
}

/// 2x2 rotation by angle theta.
template <typename Scalar = double>
Matrix<Scalar> rotation2(Scalar theta) {
  Matrix<Scalar> R(2, 2);
  const Scalar c = std::cos(theta), s = std::sin(theta);
  R << c, -s, s, c;
  return R;
}

}  // namespace sheafpc
