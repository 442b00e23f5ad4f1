#pragma once

#include <Eigen/Dense>

#include <stdexcept>

#include "sheafpc/types.hpp"

namespace sheafpc {

/// Truncated-SVD workhorse: numerical rank, min-norm least-squares solves,
/// Moore-Penrose pseudoinverse, and (co)kernel bases, all sharing one
/// factorization and one rank decision (sigma_i > rank_tol * sigma_max).
///
/// Kernel/cokernel bases need the full U/V factors; construct with
/// full_uv = true to enable them. Zero-row / zero-column matrices are
/// handled without touching Eigen's SVD.
template <typename Scalar>
class SvdSolver {
 public:
  explicit SvdSolver(const Matrix<Scalar>& A, Scalar rank_tol = default_rank_tol<Scalar>(),
                     bool full_uv = false)
      : rows_(A.rows()), cols_(A.cols()), full_(full_uv) {
    if (rank_tol < Scalar(0)) throw std::invalid_argument("SvdSolver: rank_tol must be >= 0");
    if (rows_ == 0 || cols_ == 0) {
      rank_ = 0;
      if (full_) {
        U_ = Matrix<Scalar>::Identity(rows_, rows_);
        V_ = Matrix<Scalar>::Identity(cols_, cols_);
      }
      return;
    }
    const unsigned options = full_ ? (Eigen::ComputeFullU | Eigen::ComputeFullV)
                                   : (Eigen::ComputeThinU | Eigen::ComputeThinV);
    Eigen::BDCSVD<Matrix<Scalar>> svd(A, options);
    sigma_ = svd.singularValues();
    U_ = svd.matrixU();
    V_ = svd.matrixV();
    const Scalar cut = rank_tol * sigma_(0);
    rank_ = 0;
    while (rank_ < sigma_.size() && sigma_(rank_) > cut) ++rank_;
  }

  Index rank() const { return rank_; }
  Index rows() const { return rows_; }
  Index cols() const { return cols_; }
  const Vector<Scalar>& singular_values() const { return sigma_; }

  /// Min-norm least-squares solution of A x = B, one column at a time.
  template <typename Derived>
  Matrix<Scalar> solve(const Eigen::MatrixBase<Derived>& B) const {
    if (B.rows() != rows_) throw std::invalid_argument("SvdSolver::solve: rhs row mismatch");
    if (rank_ == 0) return Matrix<Scalar>::Zero(cols_, B.cols());
    return V_.leftCols(rank_) *
           (sigma_.head(rank_).cwiseInverse().asDiagonal() *
            (U_.leftCols(rank_).transpose() * B.derived()));
  }

  Matrix<Scalar> pseudoinverse() const {
    if (rank_ == 0) return Matrix<Scalar>::Zero(cols_, rows_);
    return V_.leftCols(rank_) * sigma_.head(rank_).cwiseInverse().asDiagonal() *
           U_.leftCols(rank_).transpose();
  }

  /// Orthonormal basis of ker A (columns). Requires full_uv.
  Matrix<Scalar> kernel_basis() const {
    require_full("kernel_basis");
    return V_.rightCols(cols_ - rank_);
  }

  /// Orthonormal basis of ker A^T = (im A)^perp (columns). Requires full_uv.
  Matrix<Scalar> cokernel_basis() const {
    require_full("cokernel_basis");
    return U_.rightCols(rows_ - rank_);
  }

  /// Columns of U spanning im A. Requires full_uv only when rank == 0.
  Matrix<Scalar> image_basis() const {
    return U_.leftCols(rank_);
  }

 private:
  void require_full(const char* op) const {
    if (!full_ && rows_ != 0 && cols_ != 0)
      throw std::logic_error(std::string("SvdSolver::") + op + ": construct with full_uv = true");
  }

  Index rows_, cols_, rank_ = 0;
  bool full_;
  Vector<Scalar> sigma_;
  Matrix<Scalar> U_, V_;
};

template <typename Scalar>
Index numeric_rank(const Matrix<Scalar>& A, Scalar rank_tol = default_rank_tol<Scalar>()) {
  return SvdSolver<Scalar>(A, rank_tol).rank();
}

template <typename Scalar>
Matrix<Scalar> pseudoinverse(const Matrix<Scalar>& A, Scalar rank_tol = default_rank_tol<Scalar>()) {
  return SvdSolver<Scalar>(A, rank_tol).pseudoinverse();
}

template <typename Scalar>
Matrix<Scalar> kernel_basis(const Matrix<Scalar>& A, Scalar rank_tol = default_rank_tol<Scalar>()) {
  return SvdSolver<Scalar>(A, rank_tol, /*full_uv=*/true).kernel_basis();
}

/// A^T A assembled so the result is exactly symmetric.
template <typename Scalar>
Matrix<Scalar> gram(const Matrix<Scalar>& A) {
  Matrix<Scalar> G = Matrix<Scalar>::Zero(A.cols(), A.cols());
  G.template selfadjointView<Eigen::Lower>().rankUpdate(A.transpose());
  G.template triangularView<Eigen::StrictlyUpper>() = G.transpose();
  return G;
}

}  // namespace sheafpc
