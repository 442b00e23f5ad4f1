#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace sheafpc {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Index = Eigen::Index;
using VertexId = std::string;
using EdgeId = std::string;

/// Vertex-stacked block vector: one block per vertex, in layout order.
template <typename Scalar>
using Cochain0 = Vector<Scalar>;

/// Edge-stacked block vector: one block per edge, in layout order.
template <typename Scalar>
using Cochain1 = Vector<Scalar>;

/// Singular values below rank_tol * sigma_max are treated as zero everywhere
/// a numerical rank decision is made.
template <typename Scalar>
constexpr Scalar default_rank_tol() {
  return Scalar(1e-10);
}

/// Ordered id -> (offset, dim) table describing how named blocks are stacked
/// into one dense vector. Preserves insertion order; offsets are cumulative.
class BlockLayout {
 public:
  Index append(const std::string& id, Index dim) {
    if (dim <= 0) throw std::invalid_argument("BlockLayout: block '" + id + "' has non-positive dim");
    auto [it, inserted] = spans_.emplace(id, std::pair<Index, Index>{total_, dim});
    if (!inserted) throw std::invalid_argument("BlockLayout: duplicate id '" + id + "'");
    ids_.push_back(id);
    const Index off = total_;
    total_ += dim;
    return off;
  }

  bool contains(const std::string& id) const { return spans_.count(id) != 0; }

  Index offset(const std::string& id) const { return span(id).first; }
  Index dim(const std::string& id) const { return span(id).second; }

  Index total() const { return total_; }
  std::size_t size() const { return ids_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }

 private:
  const std::pair<Index, Index>& span(const std::string& id) const {
    auto it = spans_.find(id);
    if (it == spans_.end()) throw std::out_of_range("BlockLayout: unknown id '" + id + "'");
    return it->second;
  }

  std::vector<std::string> ids_;
  std::unordered_map<std::string, std::pair<Index, Index>> spans_;
  Index total_ = 0;
};

}  // namespace sheafpc
