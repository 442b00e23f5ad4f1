#pragma once

#include <Eigen/Dense>

#include <limits>
#include <optional>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include "sheafpc/relative.hpp"
#include "sheafpc/types.hpp"

namespace sheafpc {

enum class Preconditioner { none, block_jacobi };

/// Gradient flow on E(z) = 1/2 |D z + b|^2, discretized explicitly.
/// step_size empty means 0.9 * (2 / lambda_max), just inside the stability
/// region of the (possibly preconditioned) iteration.
template <typename Scalar>
struct DiffusionConfig {
  std::optional<Scalar> step_size;
  int max_steps = 1000;
  Scalar stop_tol = Scalar(1e-10);  // on |grad| relative to 1 + |b|
  Preconditioner preconditioner = Preconditioner::none;
};

template <typename Scalar>
struct DiffusionResult {
  Vector<Scalar> z;
  int steps_used = 0;
  std::vector<Scalar> residual_norms;  // |D^T (D z + b)| per iterate, including z0
  std::vector<Scalar> energies;        // E(z) per iterate, including z0
  Scalar step_size_used = Scalar(0);
  Scalar lambda_max = Scalar(0);       // of L_rel, or of M^{-1} L_rel when preconditioned
  bool step_size_admissible = true;    // eta < 2 / lambda_max
};

/// One explicit Euler step z - eta * D^T (D z + b).
template <typename Scalar, typename Derived>
Vector<Scalar> diffusion_step(const RelativeSystem<Scalar>& rel,
                              const Eigen::MatrixBase<Derived>& z, Scalar eta) {
  if (z.rows() != rel.free_dim() || z.cols() != 1)
    throw std::invalid_argument("diffusion_step: state has wrong size");
  return z.derived() - eta * (rel.D.transpose() * (rel.D * z.derived() + rel.b));
}

/// Block-diagonal preconditioner: the per-free-vertex diagonal blocks of
/// L_rel. A free vertex with no incident edge would make the block singular,
/// so that is rejected by name.
template <typename Scalar>
Matrix<Scalar> block_jacobi(const RelativeSystem<Scalar>& rel) {
  std::unordered_set<VertexId> touched;
  for (const auto& e : rel.sheaf.edges()) {
    touched.insert(e.src);
    touched.insert(e.dst);
  }
  for (const auto& id : rel.free_cols.ids())
    if (!touched.count(id))
      throw std::invalid_argument("block_jacobi: free vertex '" + id +
                                  "' has no incident edges; its diagonal block is singular");
  const Matrix<Scalar> L = relative_laplacian(rel);
  Matrix<Scalar> M = Matrix<Scalar>::Zero(L.rows(), L.cols());
  for (const auto& id : rel.free_cols.ids()) {
    const Index off = rel.free_cols.offset(id), d = rel.free_cols.dim(id);
    M.block(off, off, d, d) = L.block(off, off, d, d);
  }
  return M;
}

/// z - eta * M^{-1} D^T (D z + b). M must be symmetric positive definite;
/// the solve is verified and a singular M is rejected.
template <typename Scalar, typename Derived>
Vector<Scalar> preconditioned_step(const RelativeSystem<Scalar>& rel,
                                   const Eigen::MatrixBase<Derived>& z, Scalar eta,
                                   const Matrix<Scalar>& M) {
  if (z.rows() != rel.free_dim() || z.cols() != 1)
    throw std::invalid_argument("preconditioned_step: state has wrong size");
  if (M.rows() != rel.free_dim() || M.cols() != rel.free_dim())
    throw std::invalid_argument("preconditioned_step: preconditioner has wrong shape");
  const Vector<Scalar> g = rel.D.transpose() * (rel.D * z.derived() + rel.b);
  Eigen::LDLT<Matrix<Scalar>> ldlt(M);
  const Vector<Scalar> y = ldlt.solve(g);
  const Scalar scale = M.norm() * y.norm() + g.norm();
  if ((M * y - g).norm() > Scalar(1e-8) * (Scalar(1) + scale))
    throw std::runtime_error("preconditioned_step: preconditioner is singular or indefinite");
  return z.derived() - eta * y;
}

/// Iterate plain or preconditioned diffusion until the gradient norm falls
/// below stop_tol * (1 + |b|) or max_steps updates have been applied.
/// Traces hold one entry per visited iterate (so steps_used + 1 entries).
template <typename Scalar, typename Derived>
DiffusionResult<Scalar> run_diffusion(const RelativeSystem<Scalar>& rel,
                                      const Eigen::MatrixBase<Derived>& z0,
                                      const DiffusionConfig<Scalar>& cfg) {
  Vector<Scalar> z = z0;
  if (z.size() != rel.free_dim())
    throw std::invalid_argument("run_diffusion: initial state has wrong size");
  if (cfg.max_steps < 0) throw std::invalid_argument("run_diffusion: max_steps must be >= 0");

  const Matrix<Scalar> L = relative_laplacian(rel);
  const bool precond = cfg.preconditioner == Preconditioner::block_jacobi;
  Matrix<Scalar> M;
  Eigen::LDLT<Matrix<Scalar>> ldlt;
  DiffusionResult<Scalar> res;

  if (precond) {
    M = block_jacobi<Scalar>(rel);
    ldlt.compute(M);
    const Vector<Scalar> probe = Vector<Scalar>::Ones(M.rows());
    if ((M * ldlt.solve(probe) - probe).norm() > Scalar(1e-8) * (Scalar(1) + M.norm()))
      throw std::runtime_error("run_diffusion: block-jacobi preconditioner is numerically singular");
    Eigen::GeneralizedSelfAdjointEigenSolver<Matrix<Scalar>> ges(L, M, Eigen::EigenvaluesOnly | Eigen::Ax_lBx);
    res.lambda_max = ges.eigenvalues().size() ? ges.eigenvalues().maxCoeff() : Scalar(0);
  } else {
    Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> es(L, Eigen::EigenvaluesOnly);
    res.lambda_max = es.eigenvalues().size() ? es.eigenvalues().maxCoeff() : Scalar(0);
  }

  const Scalar eta = cfg.step_size ? *cfg.step_size
                                   : (res.lambda_max > Scalar(0) ? Scalar(0.9) * Scalar(2) / res.lambda_max
                                                                 : Scalar(1));
  if (eta <= Scalar(0)) throw std::invalid_argument("run_diffusion: step size must be positive");
  res.step_size_used = eta;
  res.step_size_admissible = res.lambda_max <= Scalar(0) || eta < Scalar(2) / res.lambda_max;

  const Scalar stop = cfg.stop_tol * (Scalar(1) + rel.b.norm());
  for (int t = 0;; ++t) {
    const Vector<Scalar> r = rel.D * z + rel.b;
    const Vector<Scalar> g = rel.D.transpose() * r;
    res.residual_norms.push_back(g.norm());
    res.energies.push_back(r.squaredNorm() / Scalar(2));
    if (g.norm() <= stop || t == cfg.max_steps) {
      res.steps_used = t;
      break;
    }
    z -= eta * (precond ? Vector<Scalar>(ldlt.solve(g)) : g);
  }
  res.z = std::move(z);
  return res;
}

/// Eigenvalues of L_rel (ascending) plus the condition-style ratio
/// kappa = lambda_max / lambda_min_plus, where lambda_min_plus is the
/// smallest eigenvalue above rank_tol * lambda_max. kappa = inf when the
/// spectrum is entirely (numerically) zero.
template <typename Scalar>
struct SpectralReport {
  Vector<Scalar> eigenvalues;
  Scalar lambda_min_plus = Scalar(0);
  Scalar lambda_max = Scalar(0);
  Scalar kappa = Scalar(0);
};

template <typename Scalar>
SpectralReport<Scalar> spectral_report(const RelativeSystem<Scalar>& rel,
                                       Scalar rank_tol = default_rank_tol<Scalar>()) {
  Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> es(relative_laplacian(rel));
  if (es.info() != Eigen::Success) throw std::runtime_error("spectral_report: eigensolver failed");
  SpectralReport<Scalar> rep;
  rep.eigenvalues = es.eigenvalues();
  rep.lambda_max = rep.eigenvalues.size() ? rep.eigenvalues.maxCoeff() : Scalar(0);
  const Scalar cut = rank_tol * rep.lambda_max;
  rep.lambda_min_plus = Scalar(0);
  for (Index i = 0; i < rep.eigenvalues.size(); ++i) {
    if (rep.eigenvalues(i) > cut) {
      rep.lambda_min_plus = rep.eigenvalues(i);
      break;
    }
  }
  rep.kappa = rep.lambda_min_plus > Scalar(0) ? rep.lambda_max / rep.lambda_min_plus
                                              : std::numeric_limits<Scalar>::infinity();
  return rep;
}

}  // namespace sheafpc
