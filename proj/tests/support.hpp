#pragma once

#include <algorithm>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "sheafpc/random.hpp"
#include "sheafpc/relative.hpp"
#include "sheafpc/sheaf.hpp"

namespace sheafpc::testing {

/// Random multigraph instance: 2..max_vertices vertices with stalk dims
/// 1..max_dim, and 1..2V edges over random ordered pairs (parallel edges
/// allowed, self-loops excluded) with Gaussian weights.
inline PCSheaf<double> random_sheaf(std::mt19937_64& rng, int max_vertices = 6, int max_dim = 4) {
  std::uniform_int_distribution<int> nv(2, max_vertices);
  std::uniform_int_distribution<int> nd(1, max_dim);
  const int V = nv(rng);
  std::vector<Vertex> vs;
  for (int i = 0; i < V; ++i) vs.push_back({"v" + std::to_string(i), nd(rng)});

  std::uniform_int_distribution<int> ne(1, 2 * V);
  std::uniform_int_distribution<int> pick(0, V - 1);
  const int E = ne(rng);
  std::vector<Edge<double>> es;
  for (int k = 0; k < E; ++k) {
    int u = pick(rng), v = pick(rng);
    if (u == v) v = (v + 1) % V;
    es.push_back({"e" + std::to_string(k), vs[u].id, vs[v].id,
                  gaussian_matrix<double>(vs[v].dim, vs[u].dim, rng)});
  }
  return build_sheaf(std::move(vs), std::move(es));
}

/// Clamp a random nonempty proper subset of vertices to Gaussian values.
inline ClampSpec<double> random_clamp(std::mt19937_64& rng, const PCSheaf<double>& F) {
  const auto& ids = F.vertex_layout().ids();
  std::uniform_int_distribution<int> nc(1, int(ids.size()) - 1);
  std::vector<std::string> shuffled = ids;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  const int k = nc(rng);
  ClampSpec<double> spec;
  for (int i = 0; i < k; ++i) {
    const auto& id = shuffled[i];
    Matrix<double> col = gaussian_matrix<double>(F.vertex_dim(id), 1, rng);
    spec.values[id] = col.col(0);
  }
  return spec;
}

}  // namespace sheafpc::testing
