#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sheafpc/linalg.hpp"
#include "sheafpc/types.hpp"

namespace sheafpc {

struct Vertex {
  VertexId id;
  Index dim = 0;
};

/// Directed edge u -> v carrying the map W that transports the source stalk
/// into the edge stalk. The edge stalk is a copy of the destination stalk, so
/// weight is dim(dst) x dim(src); the destination is compared untransformed.
template <typename Scalar>
struct Edge {
  EdgeId id;
  VertexId src;
  VertexId dst;
  Matrix<Scalar> weight;
};

/// A network-with-weights viewed as one object: vertex stalks R^{n_v}, edge
/// stalks R^{n_dst}, and per-edge comparison maps. Parallel edges and
/// self-loops are legal; ids are the identity of a cell, not its endpoints.
///
/// Block order for stacked vectors/matrices follows construction order and is
/// exposed through vertex_layout()/edge_layout().
template <typename Scalar>
class PCSheaf {
 public:
  PCSheaf() = default;

  PCSheaf(std::vector<Vertex> vertices, std::vector<Edge<Scalar>> edges)
      : vertices_(std::move(vertices)), edges_(std::move(edges)) {
    for (const auto& v : vertices_) vertex_layout_.append(v.id, v.dim);
    for (std::size_t k = 0; k < edges_.size(); ++k) {
      const auto& e = edges_[k];
      if (!vertex_layout_.contains(e.src))
        throw std::invalid_argument("PCSheaf: edge '" + e.id + "' has unknown src '" + e.src + "'");
      if (!vertex_layout_.contains(e.dst))
        throw std::invalid_argument("PCSheaf: edge '" + e.id + "' has unknown dst '" + e.dst + "'");
      check_weight_shape(e, e.weight);
      edge_layout_.append(e.id, vertex_layout_.dim(e.dst));
      edge_index_.emplace(e.id, k);
    }
  }

  const std::vector<Vertex>& vertices() const { return vertices_; }
  const std::vector<Edge<Scalar>>& edges() const { return edges_; }

  const BlockLayout& vertex_layout() const { return vertex_layout_; }
  const BlockLayout& edge_layout() const { return edge_layout_; }

  Index c0_dim() const { return vertex_layout_.total(); }
  Index c1_dim() const { return edge_layout_.total(); }

  Index vertex_dim(const VertexId& v) const { return vertex_layout_.dim(v); }
  Index vertex_offset(const VertexId& v) const { return vertex_layout_.offset(v); }
  Index edge_dim(const EdgeId& e) const { return edge_layout_.dim(e); }
  Index edge_offset(const EdgeId& e) const { return edge_layout_.offset(e); }

  bool has_vertex(const VertexId& v) const { return vertex_layout_.contains(v); }
  bool has_edge(const EdgeId& e) const { return edge_index_.count(e) != 0; }

  const Edge<Scalar>& edge(const EdgeId& id) const {
    auto it = edge_index_.find(id);
    if (it == edge_index_.end()) throw std::out_of_range("PCSheaf: unknown edge '" + id + "'");
    return edges_[it->second];
  }

  void set_weight(const EdgeId& id, Matrix<Scalar> W) {
    auto it = edge_index_.find(id);
    if (it == edge_index_.end()) throw std::out_of_range("PCSheaf: unknown edge '" + id + "'");
    Edge<Scalar>& e = edges_[it->second];
    check_weight_shape(e, W);
    e.weight = std::move(W);
  }

 private:
  void check_weight_shape(const Edge<Scalar>& e, const Matrix<Scalar>& W) const {
    if (W.rows() != vertex_layout_.dim(e.dst) || W.cols() != vertex_layout_.dim(e.src))
      throw std::invalid_argument("PCSheaf: edge '" + e.id + "' weight is " +
                                  std::to_string(W.rows()) + "x" + std::to_string(W.cols()) +
                                  ", expected " + std::to_string(vertex_layout_.dim(e.dst)) + "x" +
                                  std::to_string(vertex_layout_.dim(e.src)));
  }

  std::vector<Vertex> vertices_;
  std::vector<Edge<Scalar>> edges_;
  BlockLayout vertex_layout_;
  BlockLayout edge_layout_;
  std::unordered_map<EdgeId, std::size_t> edge_index_;
};

template <typename Scalar>
PCSheaf<Scalar> build_sheaf(std::vector<Vertex> vertices, std::vector<Edge<Scalar>> edges) {
  return PCSheaf<Scalar>(std::move(vertices), std::move(edges));
}

/// View of the block of a stacked vertex vector belonging to v. The non-const
/// overloads give writable views.
template <typename Scalar, typename Derived>
auto vertex_block(const PCSheaf<Scalar>& F, const Eigen::MatrixBase<Derived>& s, const VertexId& v) {
  return s.derived().segment(F.vertex_offset(v), F.vertex_dim(v));
}

template <typename Scalar, typename Derived>
auto vertex_block(const PCSheaf<Scalar>& F, Eigen::MatrixBase<Derived>& s, const VertexId& v) {
  return s.derived().segment(F.vertex_offset(v), F.vertex_dim(v));
}

template <typename Scalar, typename Derived>
auto edge_block(const PCSheaf<Scalar>& F, const Eigen::MatrixBase<Derived>& r, const EdgeId& e) {
  return r.derived().segment(F.edge_offset(e), F.edge_dim(e));
}

template <typename Scalar, typename Derived>
auto edge_block(const PCSheaf<Scalar>& F, Eigen::MatrixBase<Derived>& r, const EdgeId& e) {
  return r.derived().segment(F.edge_offset(e), F.edge_dim(e));
}

/// Coboundary: per edge u -> v, (d s)_e = s_v - W_e s_u. Matrix-free.
template <typename Scalar, typename Derived>
Cochain1<Scalar> apply_coboundary(const PCSheaf<Scalar>& F, const Eigen::MatrixBase<Derived>& s) {
  if (s.rows() != F.c0_dim() || s.cols() != 1)
    throw std::invalid_argument("apply_coboundary: state has wrong size");
  Cochain1<Scalar> out(F.c1_dim());
  for (const auto& e : F.edges()) {
    edge_block(F, out, e.id) =
        vertex_block(F, s, e.dst) - e.weight * vertex_block(F, s, e.src);
  }
  return out;
}

/// Dense coboundary matrix in the layouts' block order. Contributions to the
/// same block accumulate, so self-loops produce I - W_e on the diagonal block.
template <typename Scalar>
Matrix<Scalar> assemble_coboundary(const PCSheaf<Scalar>& F) {
  Matrix<Scalar> delta = Matrix<Scalar>::Zero(F.c1_dim(), F.c0_dim());
  for (const auto& e : F.edges()) {
    const Index r = F.edge_offset(e.id), m = F.edge_dim(e.id);
    delta.block(r, F.vertex_offset(e.src), m, F.vertex_dim(e.src)) -= e.weight;
    delta.block(r, F.vertex_offset(e.dst), m, F.vertex_dim(e.dst)) +=
        Matrix<Scalar>::Identity(m, m);
  }
  return delta;
}

/// Disagreement energy E(s) = 1/2 sum_e |s_v - W_e s_u|^2.
template <typename Scalar, typename Derived>
Scalar energy(const PCSheaf<Scalar>& F, const Eigen::MatrixBase<Derived>& s) {
  return apply_coboundary(F, s).squaredNorm() / Scalar(2);
}

/// Sheaf Laplacian L = d^T d; symmetric positive semidefinite by construction.
template <typename Scalar>
Matrix<Scalar> sheaf_laplacian(const PCSheaf<Scalar>& F) {
  return gram(assemble_coboundary(F));
}

/// Orthonormal basis of the globally consistent states ker d (degree-0
/// cohomology). Zero columns when only s = 0 is consistent.
template <typename Scalar>
Matrix<Scalar> h0_basis(const PCSheaf<Scalar>& F, Scalar rank_tol = default_rank_tol<Scalar>()) {
  if (F.c1_dim() == 0) return Matrix<Scalar>::Identity(F.c0_dim(), F.c0_dim());
  return kernel_basis(assemble_coboundary(F), rank_tol);
}

/// dim H^1 = dim C^1 - rank d: edge constraints not induced by any state.
template <typename Scalar>
Index h1_dim(const PCSheaf<Scalar>& F, Scalar rank_tol = default_rank_tol<Scalar>()) {
  if (F.c1_dim() == 0) return 0;
  return F.c1_dim() - numeric_rank(assemble_coboundary(F), rank_tol);
}

}  // namespace sheafpc
