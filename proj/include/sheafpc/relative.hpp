#pragma once

#include <Eigen/Dense>

#include <map>
#include <stdexcept>
#include <utility>

#include "sheafpc/linalg.hpp"
#include "sheafpc/sheaf.hpp"
#include "sheafpc/types.hpp"

namespace sheafpc {

/// Vertices held at fixed values. Keys are vertex ids; each value must match
/// the vertex stalk dimension.
template <typename Scalar>
struct ClampSpec {
  std::map<VertexId, Vector<Scalar>> values;
};

/// The constraint system left after conditioning on clamped vertices.
/// Splitting the coboundary columns as [free | clamped] gives
///   d s = D z + C x,
/// where z stacks free-vertex states (free_cols order) and x stacks clamped
/// values (clamped_cols order). b = C x is the inhomogeneity actually used by
/// inference; it is cached for the clamp values given at construction.
template <typename Scalar>
struct RelativeSystem {
  PCSheaf<Scalar> sheaf;
  BlockLayout free_cols;
  BlockLayout clamped_cols;
  Matrix<Scalar> D;  // c1_dim x free_dim
  Matrix<Scalar> C;  // c1_dim x clamped_dim
  Vector<Scalar> b;  // C * (stacked clamp values)
  std::map<VertexId, Vector<Scalar>> clamp_values;

  bool is_free(const VertexId& v) const { return free_cols.contains(v); }
  Index free_dim() const { return free_cols.total(); }
  Index clamped_dim() const { return clamped_cols.total(); }
  Index c1_dim() const { return sheaf.c1_dim(); }
};

/// Block of a stacked free-state vector (or per-sample matrix rows) owned by
/// free vertex v. The non-const overload gives a writable view.
template <typename Scalar, typename Derived>
auto free_block(const RelativeSystem<Scalar>& rel, const Eigen::MatrixBase<Derived>& z,
                const VertexId& v) {
  return z.derived().middleRows(rel.free_cols.offset(v), rel.free_cols.dim(v));
}

template <typename Scalar, typename Derived>
auto free_block(const RelativeSystem<Scalar>& rel, Eigen::MatrixBase<Derived>& z,
                const VertexId& v) {
  return z.derived().middleRows(rel.free_cols.offset(v), rel.free_cols.dim(v));
}

template <typename Scalar>
RelativeSystem<Scalar> clamp(const PCSheaf<Scalar>& F, const ClampSpec<Scalar>& spec) {
  RelativeSystem<Scalar> rel;
  rel.sheaf = F;
  for (const auto& [id, value] : spec.values) {
    if (!F.has_vertex(id)) throw std::invalid_argument("clamp: unknown vertex '" + id + "'");
    if (value.size() != F.vertex_dim(id))
      throw std::invalid_argument("clamp: value for '" + id + "' has size " +
                                  std::to_string(value.size()) + ", stalk dim is " +
                                  std::to_string(F.vertex_dim(id)));
  }
  for (const auto& v : F.vertices()) {
    if (spec.values.count(v.id))
      rel.clamped_cols.append(v.id, v.dim);
    else
      rel.free_cols.append(v.id, v.dim);
  }
  if (rel.free_cols.total() == 0)
    throw std::invalid_argument("clamp: every vertex is clamped; nothing to infer");

  rel.D = Matrix<Scalar>::Zero(F.c1_dim(), rel.free_cols.total());
  rel.C = Matrix<Scalar>::Zero(F.c1_dim(), rel.clamped_cols.total());
  for (const auto& e : F.edges()) {
    const Index r = F.edge_offset(e.id), m = F.edge_dim(e.id);
    if (rel.free_cols.contains(e.src))
      rel.D.block(r, rel.free_cols.offset(e.src), m, F.vertex_dim(e.src)) -= e.weight;
    else
      rel.C.block(r, rel.clamped_cols.offset(e.src), m, F.vertex_dim(e.src)) -= e.weight;
    if (rel.free_cols.contains(e.dst))
      rel.D.block(r, rel.free_cols.offset(e.dst), m, m) += Matrix<Scalar>::Identity(m, m);
    else
      rel.C.block(r, rel.clamped_cols.offset(e.dst), m, m) += Matrix<Scalar>::Identity(m, m);
  }

  rel.clamp_values = spec.values;
  Vector<Scalar> x(rel.clamped_cols.total());
  for (const auto& [id, value] : spec.values) x.segment(rel.clamped_cols.offset(id), value.size()) = value;
  rel.b = rel.C * x;
  return rel;
}

/// b for fresh clamp values on the same clamped vertex set.
template <typename Scalar>
Vector<Scalar> boundary_vector(const RelativeSystem<Scalar>& rel,
                               const std::map<VertexId, Vector<Scalar>>& values) {
  Vector<Scalar> x(rel.clamped_dim());
  Index covered = 0;
  for (const auto& [id, value] : values) {
    if (!rel.clamped_cols.contains(id))
      throw std::invalid_argument("boundary_vector: vertex '" + id + "' is not clamped");
    if (value.size() != rel.clamped_cols.dim(id))
      throw std::invalid_argument("boundary_vector: value for '" + id + "' has wrong size");
    x.segment(rel.clamped_cols.offset(id), value.size()) = value;
    covered += value.size();
  }
  if (covered != rel.clamped_dim())
    throw std::invalid_argument("boundary_vector: clamp values missing for some clamped vertex");
  return rel.C * x;
}

/// Column j of the result is the boundary vector of sample j. Every clamped
/// vertex must appear with a dim(v) x N block of per-sample values.
template <typename Scalar>
Matrix<Scalar> batch_boundary(const RelativeSystem<Scalar>& rel,
                              const std::map<VertexId, Matrix<Scalar>>& values) {
  if (values.empty()) throw std::invalid_argument("batch_boundary: no clamp values given");
  const Index n = values.begin()->second.cols();
  Matrix<Scalar> X(rel.clamped_dim(), n);
  Index covered = 0;
  for (const auto& [id, block] : values) {
    if (!rel.clamped_cols.contains(id))
      throw std::invalid_argument("batch_boundary: vertex '" + id + "' is not clamped");
    if (block.rows() != rel.clamped_cols.dim(id) || block.cols() != n)
      throw std::invalid_argument("batch_boundary: block for '" + id + "' has wrong shape");
    X.middleRows(rel.clamped_cols.offset(id), block.rows()) = block;
    covered += block.rows();
  }
  if (covered != rel.clamped_dim())
    throw std::invalid_argument("batch_boundary: clamp values missing for some clamped vertex");
  return rel.C * X;
}

/// Equilibrium of the clamped network: z_star is the min-norm minimizer of
/// E(z) = 1/2 |D z + b|^2, r_star = D z_star + b its residual (orthogonal to
/// im D), and s_star the full state with clamp values filled back in.
template <typename Scalar>
struct HodgeSolution {
  Vector<Scalar> z_star;
  Cochain1<Scalar> r_star;
  Cochain0<Scalar> s_star;
  Scalar energy_rel;
};

/// Full state from a free-state vector plus the cached clamp values.
template <typename Scalar, typename Derived>
Cochain0<Scalar> assemble_state(const RelativeSystem<Scalar>& rel,
                                const Eigen::MatrixBase<Derived>& z) {
  if (z.rows() != rel.free_dim() || z.cols() != 1)
    throw std::invalid_argument("assemble_state: free state has wrong size");
  Cochain0<Scalar> s(rel.sheaf.c0_dim());
  for (const auto& v : rel.sheaf.vertices()) {
    if (rel.is_free(v.id))
      vertex_block(rel.sheaf, s, v.id) = free_block(rel, z, v.id);
    else
      vertex_block(rel.sheaf, s, v.id) = rel.clamp_values.at(v.id);
  }
  return s;
}

template <typename Scalar>
HodgeSolution<Scalar> solve_inference(const RelativeSystem<Scalar>& rel,
                                      Scalar rank_tol = default_rank_tol<Scalar>()) {
  SvdSolver<Scalar> svd(rel.D, rank_tol);
  HodgeSolution<Scalar> sol;
  sol.z_star = -svd.solve(rel.b);
  sol.r_star = rel.D * sol.z_star + rel.b;
  sol.s_star = assemble_state(rel, sol.z_star);
  sol.energy_rel = sol.r_star.squaredNorm() / Scalar(2);
  return sol;
}

/// L_rel = D^T D, the Laplacian restricted to free vertices.
template <typename Scalar>
Matrix<Scalar> relative_laplacian(const RelativeSystem<Scalar>& rel) {
  return gram(rel.D);
}

/// Orthogonal projector onto ker D^T = (im D)^perp. Applied to b it yields
/// the irreducible residual: the part of the boundary load no free state can
/// absorb.
template <typename Scalar>
Matrix<Scalar> harmonic_projector(const RelativeSystem<Scalar>& rel,
                                  Scalar rank_tol = default_rank_tol<Scalar>()) {
  SvdSolver<Scalar> svd(rel.D, rank_tol);
  const Index m = rel.c1_dim();
  Matrix<Scalar> H = Matrix<Scalar>::Identity(m, m);
  if (svd.rank() > 0) {
    // I - U_r U_r^T, assembled symmetrically.
    H.template selfadjointView<Eigen::Lower>().rankUpdate(svd.image_basis(), Scalar(-1));
    H.template triangularView<Eigen::StrictlyUpper>() = H.transpose();
  }
  return H;
}

/// G = D^+, mapping boundary loads to the (negated) equilibrium response:
/// z_star = -G b. Satisfies G G^T = (D^T D)^+.
template <typename Scalar>
Matrix<Scalar> diffusive_operator(const RelativeSystem<Scalar>& rel,
                                  Scalar rank_tol = default_rank_tol<Scalar>()) {
  return pseudoinverse(rel.D, rank_tol);
}

template <typename Scalar>
struct HodgeParts {
  Cochain1<Scalar> image_part;     // D z_star = -(D D^+) b
  Cochain1<Scalar> harmonic_part;  // residual in ker D^T
};

/// Orthogonal split b = image_part + harmonic_part relative to im D.
template <typename Scalar, typename Derived>
HodgeParts<Scalar> hodge_decompose(const RelativeSystem<Scalar>& rel,
                                   const Eigen::MatrixBase<Derived>& b,
                                   Scalar rank_tol = default_rank_tol<Scalar>()) {
  if (b.rows() != rel.c1_dim() || b.cols() != 1)
    throw std::invalid_argument("hodge_decompose: vector has wrong size");
  SvdSolver<Scalar> svd(rel.D, rank_tol);
  HodgeParts<Scalar> parts;
  parts.image_part = rel.D * svd.solve(b);
  parts.harmonic_part = b.derived() - parts.image_part;
  return parts;
}

}  // namespace sheafpc
