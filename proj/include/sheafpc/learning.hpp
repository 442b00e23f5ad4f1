#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <stdexcept>
#include <utility>
#include <variant>
#include <vector>

#include "sheafpc/linalg.hpp"
#include "sheafpc/random.hpp"
#include "sheafpc/relative.hpp"
#include "sheafpc/types.hpp"

namespace sheafpc {

/// dE/dW_e at a fixed full state s: (W_e s_u - s_v) s_u^T = -r_e s_u^T.
/// At an inference optimum the envelope theorem makes this the total
/// derivative of the optimal energy as well.
template <typename Scalar, typename Derived>
Matrix<Scalar> edge_gradient(const PCSheaf<Scalar>& F, const Eigen::MatrixBase<Derived>& s,
                             const EdgeId& e) {
  if (s.rows() != F.c0_dim() || s.cols() != 1)
    throw std::invalid_argument("edge_gradient: state has wrong size");
  const auto& ed = F.edge(e);
  const auto su = vertex_block(F, s, ed.src);
  return (ed.weight * su - vertex_block(F, s, ed.dst)) * su.transpose();
}

/// The same gradient at the equilibrium of rel, written through the solved
/// system: -r_e z_u^T with z = -D^+ b. Only defined when the edge source is
/// free; for a clamped source the factorized form degenerates and the plain
/// edge_gradient at the assembled optimum is the right tool.
template <typename Scalar>
Matrix<Scalar> harmonic_diffusive_gradient(const RelativeSystem<Scalar>& rel, const EdgeId& e,
                                           Scalar rank_tol = default_rank_tol<Scalar>()) {
  const auto& ed = rel.sheaf.edge(e);
  if (!rel.is_free(ed.src))
    throw std::invalid_argument("harmonic_diffusive_gradient: source '" + ed.src +
                                "' is clamped; evaluate edge_gradient at the solved state instead");
  SvdSolver<Scalar> svd(rel.D, rank_tol);
  const Vector<Scalar> z = -svd.solve(rel.b);
  const Vector<Scalar> r = rel.D * z + rel.b;
  return -edge_block(rel.sheaf, r, e) * free_block(rel, z, ed.src).transpose();
}

/// Per-batch equilibrium summaries, all produced from one factorization of D:
///  - harmonic_load: mean over samples of |r_e| per edge;
///  - diffusive_activation: mean over samples of |z_v| per free vertex;
///  - gradient_sum: sum over samples of r_e s_u^T per edge (s_u read from the
///    solved state for free sources, from the clamp batch otherwise).
template <typename Scalar>
struct BatchStats {
  Index batch_size = 0;
  std::vector<EdgeId> edge_ids;
  std::vector<VertexId> free_vertex_ids;
  std::vector<Scalar> harmonic_load;
  std::vector<Scalar> diffusive_activation;
  std::vector<Matrix<Scalar>> gradient_sum;
};

template <typename Scalar>
BatchStats<Scalar> batch_statistics(const RelativeSystem<Scalar>& rel,
                                    const std::map<VertexId, Matrix<Scalar>>& values,
                                    Scalar rank_tol = default_rank_tol<Scalar>()) {
  const Matrix<Scalar> B = batch_boundary(rel, values);
  const Index n = B.cols();
  if (n == 0) throw std::invalid_argument("batch_statistics: empty batch");
  SvdSolver<Scalar> svd(rel.D, rank_tol);
  const Matrix<Scalar> Z = -svd.solve(B);
  const Matrix<Scalar> R = rel.D * Z + B;

  BatchStats<Scalar> st;
  st.batch_size = n;
  st.edge_ids = rel.sheaf.edge_layout().ids();
  st.free_vertex_ids = rel.free_cols.ids();
  for (const auto& e : rel.sheaf.edges()) {
    const auto Re = R.middleRows(rel.sheaf.edge_offset(e.id), rel.sheaf.edge_dim(e.id));
    st.harmonic_load.push_back(Re.colwise().norm().sum() / Scalar(n));
    const Matrix<Scalar> Su = rel.is_free(e.src)
                                  ? Matrix<Scalar>(free_block(rel, Z, e.src))
                                  : values.at(e.src);
    st.gradient_sum.push_back(Re * Su.transpose());
  }
  for (const auto& v : st.free_vertex_ids) {
    const auto Zv = free_block(rel, Z, v);
    st.diffusive_activation.push_back(Zv.colwise().norm().sum() / Scalar(n));
  }
  return st;
}

enum class UpdateRule { plain, gauss_newton, scalar_spectral };

template <typename Scalar>
struct TrainConfig {
  Scalar learning_rate = Scalar(0.1);
  int steps = 1000;
  int batch_size = 128;
  UpdateRule rule = UpdateRule::plain;
  std::vector<EdgeId> trainable_edges;  // empty means every edge
  std::uint64_t seed = 0;               // only consumed by stochastic covariance probes
  Scalar rank_tol = default_rank_tol<Scalar>();
};

/// Knobs for the curvature-normalized rules. probes > 0 switches the source
/// covariance to the stochastic estimator with that many probe vectors;
/// tikhonov shifts its inner solve (required when L_rel is singular).
template <typename Scalar>
struct GNConfig {
  Scalar gamma = Scalar(1);
  Scalar epsilon = Scalar(1e-3);
  Scalar sigma2 = Scalar(1);
  int probes = 0;
  Scalar tikhonov = Scalar(0);
};

/// Either an isotropic variance sigma^2 or a full covariance on the edge
/// space, describing the distribution of boundary vectors b.
template <typename Scalar>
using BoundaryCovariance = std::variant<Scalar, Matrix<Scalar>>;

/// Covariance of the equilibrium response per free vertex: the diagonal
/// blocks of D^+ Sigma_b (D^+)^T, in free-vertex order.
template <typename Scalar>
struct SourceCovariance {
  std::vector<std::pair<VertexId, Matrix<Scalar>>> blocks;

  const Matrix<Scalar>& at(const VertexId& v) const {
    for (const auto& [id, S] : blocks)
      if (id == v) return S;
    throw std::out_of_range("SourceCovariance: no block for vertex '" + v + "'");
  }
};

namespace detail {

template <typename Scalar>
void check_boundary_covariance(const BoundaryCovariance<Scalar>& sigma_b, Index m) {
  if (std::holds_alternative<Scalar>(sigma_b)) {
    if (std::get<Scalar>(sigma_b) < Scalar(0))
      throw std::invalid_argument("boundary covariance: sigma^2 must be >= 0");
    return;
  }
  const Matrix<Scalar>& S = std::get<Matrix<Scalar>>(sigma_b);
  if (S.rows() != m || S.cols() != m)
    throw std::invalid_argument("boundary covariance: matrix must be c1_dim x c1_dim");
  const Scalar scale = S.norm();
  if ((S - S.transpose()).norm() > Scalar(1e-10) * (Scalar(1) + scale))
    throw std::invalid_argument("boundary covariance: matrix is not symmetric");
  Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> es(S, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().size() && es.eigenvalues().minCoeff() < -Scalar(1e-10) * (Scalar(1) + scale))
    throw std::invalid_argument("boundary covariance: matrix is not positive semidefinite");
}

template <typename Scalar>
SourceCovariance<Scalar> blocks_of(const RelativeSystem<Scalar>& rel, const Matrix<Scalar>& full) {
  SourceCovariance<Scalar> out;
  for (const auto& v : rel.free_cols.ids()) {
    const Index off = rel.free_cols.offset(v), d = rel.free_cols.dim(v);
    out.blocks.emplace_back(v, full.block(off, off, d, d));
  }
  return out;
}

}  // namespace detail

/// Exact source covariance. Isotropic sigma^2 gives sigma^2 * L_rel^+;
/// a full Sigma_b gives D^+ Sigma_b (D^+)^T. Blocks are symmetrized to kill
/// roundoff skew.
template <typename Scalar>
SourceCovariance<Scalar> gn_source_covariance(const RelativeSystem<Scalar>& rel,
                                              const BoundaryCovariance<Scalar>& sigma_b,
                                              Scalar rank_tol = default_rank_tol<Scalar>()) {
  detail::check_boundary_covariance(sigma_b, rel.c1_dim());
  SvdSolver<Scalar> svd(rel.D, rank_tol);
  Matrix<Scalar> full;
  if (std::holds_alternative<Scalar>(sigma_b)) {
    // sigma^2 L_rel^+ = sigma^2 D^+ (D^+)^T, built from the factorization of D itself.
    const Matrix<Scalar> G = svd.pseudoinverse();
    full = Matrix<Scalar>::Zero(rel.free_dim(), rel.free_dim());
    full.template selfadjointView<Eigen::Lower>().rankUpdate(G);
    full.template triangularView<Eigen::StrictlyUpper>() = full.transpose();
    full *= std::get<Scalar>(sigma_b);
  } else {
    const Matrix<Scalar> G = svd.pseudoinverse();
    full = G * std::get<Matrix<Scalar>>(sigma_b) * G.transpose();
    full = ((full + full.transpose()) / Scalar(2)).eval();
  }
  return detail::blocks_of(rel, full);
}

/// lambda = 1e-8 * lambda_max(L_rel): a safe default shift for the stochastic
/// estimator when L_rel may be singular.
template <typename Scalar>
Scalar default_tikhonov(const RelativeSystem<Scalar>& rel) {
  Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> es(relative_laplacian(rel), Eigen::EigenvaluesOnly);
  return Scalar(1e-8) * (es.eigenvalues().size() ? es.eigenvalues().maxCoeff() : Scalar(0));
}

/// Monte Carlo source covariance: draw probes xi ~ N(0, Sigma_b), solve
/// (L_rel + lambda I) y = D^T xi, and average y_u y_u^T per free vertex.
/// Deterministic in (seed, probes). lambda = 0 is allowed only for
/// nonsingular L_rel.
template <typename Scalar>
SourceCovariance<Scalar> hutchinson_covariance(const RelativeSystem<Scalar>& rel,
                                               const BoundaryCovariance<Scalar>& sigma_b,
                                               int probes, Scalar tikhonov, std::uint64_t seed) {
  if (probes <= 0) throw std::invalid_argument("hutchinson_covariance: probes must be > 0");
  if (tikhonov < Scalar(0)) throw std::invalid_argument("hutchinson_covariance: tikhonov must be >= 0");
  detail::check_boundary_covariance(sigma_b, rel.c1_dim());

  Matrix<Scalar> L = relative_laplacian(rel);
  if (tikhonov == Scalar(0)) {
    Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> es(L, Eigen::EigenvaluesOnly);
    const Scalar lmax = es.eigenvalues().size() ? es.eigenvalues().maxCoeff() : Scalar(0);
    const Scalar lmin = es.eigenvalues().size() ? es.eigenvalues().minCoeff() : Scalar(0);
    if (lmin <= Scalar(1e-12) * std::max(lmax, Scalar(1)))
      throw std::invalid_argument(
          "hutchinson_covariance: L_rel is singular; pass tikhonov > 0 (see default_tikhonov)");
  } else {
    L.diagonal().array() += tikhonov;
  }

  std::mt19937_64 rng = make_rng(seed);
  Matrix<Scalar> Xi;
  if (std::holds_alternative<Scalar>(sigma_b)) {
    const Scalar sd = std::sqrt(std::get<Scalar>(sigma_b));
    Xi = gaussian_matrix<Scalar>(rel.c1_dim(), probes, rng);
    Xi *= sd;
  } else {
    // Factor Sigma_b = A A^T through its eigendecomposition (PSD).
    Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> es(std::get<Matrix<Scalar>>(sigma_b));
    const Vector<Scalar> lam = es.eigenvalues().cwiseMax(Scalar(0)).cwiseSqrt();
    Xi = es.eigenvectors() * lam.asDiagonal() * gaussian_matrix<Scalar>(rel.c1_dim(), probes, rng);
  }

  Eigen::LDLT<Matrix<Scalar>> ldlt(L);
  const Matrix<Scalar> Y = ldlt.solve(rel.D.transpose() * Xi);

  SourceCovariance<Scalar> out;
  for (const auto& v : rel.free_cols.ids()) {
    const auto Yv = Y.middleRows(rel.free_cols.offset(v), rel.free_cols.dim(v));
    Matrix<Scalar> S = Matrix<Scalar>::Zero(Yv.rows(), Yv.rows());
    S.template selfadjointView<Eigen::Lower>().rankUpdate(Yv);
    S.template triangularView<Eigen::StrictlyUpper>() = S.transpose();
    out.blocks.emplace_back(v, S / Scalar(probes));
  }
  return out;
}

/// Empirical covariance of boundary vectors over a clamp batch,
/// (1/N) B B^T. A data-driven alternative to the isotropic default for the
/// curvature-normalized rules.
template <typename Scalar>
Matrix<Scalar> empirical_boundary_covariance(const RelativeSystem<Scalar>& rel,
                                             const std::map<VertexId, Matrix<Scalar>>& values) {
  const Matrix<Scalar> B = batch_boundary(rel, values);
  Matrix<Scalar> S = Matrix<Scalar>::Zero(B.rows(), B.rows());
  S.template selfadjointView<Eigen::Lower>().rankUpdate(B);
  S.template triangularView<Eigen::StrictlyUpper>() = S.transpose();
  return S / Scalar(B.cols());
}

/// Curvature-normalized weight update W + gamma * G (Sigma + eps I)^{-1},
/// with G the descent-oriented mean gradient sum r s_u^T / N. Collapses to
/// the plain rule W + eta * G when Sigma + eps I = (gamma / eta) I.
template <typename Scalar>
Matrix<Scalar> gn_update(const Matrix<Scalar>& W, const Matrix<Scalar>& G,
                         const Matrix<Scalar>& Sigma, const GNConfig<Scalar>& gn) {
  if (G.rows() != W.rows() || G.cols() != W.cols())
    throw std::invalid_argument("gn_update: gradient shape mismatch");
  if (Sigma.rows() != W.cols() || Sigma.cols() != W.cols())
    throw std::invalid_argument("gn_update: covariance must match the source dimension");
  if (gn.epsilon <= Scalar(0)) throw std::invalid_argument("gn_update: epsilon must be > 0");
  Matrix<Scalar> A = Sigma;
  A.diagonal().array() += gn.epsilon;
  Eigen::LDLT<Matrix<Scalar>> ldlt(A);
  return W + gn.gamma * ldlt.solve(G.transpose()).transpose();
}

/// Scalar surrogate of the curvature normalization:
/// rate = gamma / (eps + lambda_max(Sigma)).
template <typename Scalar>
Scalar scalar_rate(const Matrix<Scalar>& Sigma, const GNConfig<Scalar>& gn) {
  if (gn.epsilon <= Scalar(0)) throw std::invalid_argument("scalar_rate: epsilon must be > 0");
  Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> es(Sigma, Eigen::EigenvaluesOnly);
  const Scalar lmax = es.eigenvalues().size() ? es.eigenvalues().maxCoeff() : Scalar(0);
  return gn.gamma / (gn.epsilon + lmax);
}

/// Which vertices of the network a training batch drives.
struct ClampTemplate {
  VertexId input = "x";
  VertexId output = "y";
};

template <typename Scalar>
struct Batch {
  Matrix<Scalar> inputs;   // dim(input) x N
  Matrix<Scalar> targets;  // dim(output) x N
};

template <typename Scalar>
using BatchSource = std::function<Batch<Scalar>(int step)>;

template <typename Scalar>
using Validator = std::function<Scalar(const PCSheaf<Scalar>&)>;

/// Metrics recorded each step, evaluated at the pre-update weights except for
/// val_mse, which scores the post-update network (NaN without a validator).
template <typename Scalar>
struct StepMetrics {
  int step = 0;
  std::vector<Scalar> harmonic_load;
  std::vector<Scalar> gradient_norm;  // Frobenius norm of the mean gradient
  std::vector<Scalar> diffusive_activation;
  Scalar val_mse = std::numeric_limits<Scalar>::quiet_NaN();
};

template <typename Scalar>
struct TrainResult {
  PCSheaf<Scalar> sheaf;
  std::vector<EdgeId> edge_ids;
  std::vector<VertexId> free_vertex_ids;
  std::vector<StepMetrics<Scalar>> metrics;
};

/// Batched equilibrium learning: each step clamps (input, output) to the
/// sampled batch, solves inference exactly, and applies the configured rule
/// to every trainable edge using the batch-mean gradient. For the
/// curvature-normalized rules the source covariance of a clamped source is
/// the empirical second moment of its clamp batch; free sources use the
/// model covariance (exact, or stochastic when gn.probes > 0, with probe
/// seeds derived from cfg.seed and the step index).
template <typename Scalar>
TrainResult<Scalar> train(PCSheaf<Scalar> net, const ClampTemplate& io,
                          const BatchSource<Scalar>& data, const TrainConfig<Scalar>& cfg,
                          const GNConfig<Scalar>& gn = {},
                          const Validator<Scalar>& validate = {}) {
  if (cfg.steps < 0) throw std::invalid_argument("train: steps must be >= 0");
  if (!data) throw std::invalid_argument("train: no batch source");
  if (!net.has_vertex(io.input) || !net.has_vertex(io.output))
    throw std::invalid_argument("train: clamp template names an unknown vertex");
  if (io.input == io.output) throw std::invalid_argument("train: input and output coincide");

  std::vector<EdgeId> trainable = cfg.trainable_edges;
  if (trainable.empty()) trainable = net.edge_layout().ids();
  for (const auto& e : trainable)
    if (!net.has_edge(e)) throw std::invalid_argument("train: unknown trainable edge '" + e + "'");

  ClampSpec<Scalar> zeros;
  zeros.values[io.input] = Vector<Scalar>::Zero(net.vertex_dim(io.input));
  zeros.values[io.output] = Vector<Scalar>::Zero(net.vertex_dim(io.output));

  TrainResult<Scalar> out;
  out.metrics.reserve(cfg.steps);

  for (int step = 1; step <= cfg.steps; ++step) {
    Batch<Scalar> batch = data(step);
    if (batch.inputs.rows() != net.vertex_dim(io.input) ||
        batch.targets.rows() != net.vertex_dim(io.output))
      throw std::invalid_argument("train: batch rows do not match the clamped stalks");
    if (batch.inputs.cols() != batch.targets.cols() || batch.inputs.cols() == 0)
      throw std::invalid_argument("train: batch sample counts disagree");
    const Scalar n = Scalar(batch.inputs.cols());

    const RelativeSystem<Scalar> rel = clamp(net, zeros);
    std::map<VertexId, Matrix<Scalar>> clamp_batch{{io.input, batch.inputs},
                                                   {io.output, batch.targets}};
    const BatchStats<Scalar> stats = batch_statistics(rel, clamp_batch, cfg.rank_tol);

    SourceCovariance<Scalar> cov;
    if (cfg.rule != UpdateRule::plain) {
      cov = gn.probes > 0
                ? hutchinson_covariance(rel, BoundaryCovariance<Scalar>(gn.sigma2), gn.probes,
                                        gn.tikhonov, derive_seed(cfg.seed, std::uint64_t(step)))
                : gn_source_covariance(rel, BoundaryCovariance<Scalar>(gn.sigma2), cfg.rank_tol);
    }

    StepMetrics<Scalar> rec;
    rec.step = step;
    rec.harmonic_load = stats.harmonic_load;
    rec.diffusive_activation = stats.diffusive_activation;
    rec.gradient_norm.resize(stats.edge_ids.size());
    for (std::size_t k = 0; k < stats.edge_ids.size(); ++k)
      rec.gradient_norm[k] = stats.gradient_sum[k].norm() / n;

    for (const auto& eid : trainable) {
      const auto& ed = net.edge(eid);
      std::size_t k = 0;
      while (stats.edge_ids[k] != eid) ++k;
      const Matrix<Scalar> G = stats.gradient_sum[k] / n;
      switch (cfg.rule) {
        case UpdateRule::plain:
          net.set_weight(eid, Matrix<Scalar>(ed.weight + cfg.learning_rate * G));
          break;
        case UpdateRule::gauss_newton:
        case UpdateRule::scalar_spectral: {
          const Matrix<Scalar> Sigma =
              rel.is_free(ed.src) ? cov.at(ed.src)
                                  : Matrix<Scalar>(clamp_batch.at(ed.src) *
                                                   clamp_batch.at(ed.src).transpose() / n);
          if (cfg.rule == UpdateRule::gauss_newton)
            net.set_weight(eid, gn_update(ed.weight, G, Sigma, gn));
          else
            net.set_weight(eid, Matrix<Scalar>(ed.weight + scalar_rate(Sigma, gn) * G));
          break;
        }
      }
    }

    if (validate) rec.val_mse = validate(net);
    if (out.edge_ids.empty()) {
      out.edge_ids = stats.edge_ids;
      out.free_vertex_ids = stats.free_vertex_ids;
    }
    out.metrics.push_back(std::move(rec));
  }

  out.sheaf = std::move(net);
  if (out.edge_ids.empty()) out.edge_ids = out.sheaf.edge_layout().ids();
  return out;
}

}  // namespace sheafpc
