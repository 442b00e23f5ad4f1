#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "sheafpc/dynamics.hpp"
#include "sheafpc/learning.hpp"
#include "sheafpc/random.hpp"
#include "sheafpc/relative.hpp"
#include "sheafpc/sheaf.hpp"
#include "sheafpc/types.hpp"

namespace sheafpc {

inline VertexId chain_vertex_name(int k, int n_hidden) {
  if (k == 0) return "x";
  if (k == n_hidden + 1) return "y";
  return "h" + std::to_string(k);
}

inline EdgeId edge_name(const VertexId& src, const VertexId& dst) { return src + ":" + dst; }

/// Feedforward chain x -> h1 -> ... -> y with explicit weights. dims has one
/// entry per vertex; weights[k] maps dims[k] into dims[k+1].
template <typename Scalar = double>
PCSheaf<Scalar> make_chain(const std::vector<Index>& dims,
                           const std::vector<Matrix<Scalar>>& weights) {
  if (dims.size() < 2) throw std::invalid_argument("make_chain: need at least two vertices");
  if (weights.size() + 1 != dims.size())
    throw std::invalid_argument("make_chain: need one weight per consecutive pair");
  const int n_hidden = int(dims.size()) - 2;
  std::vector<Vertex> vs;
  for (std::size_t k = 0; k < dims.size(); ++k)
    vs.push_back({chain_vertex_name(int(k), n_hidden), dims[k]});
  std::vector<Edge<Scalar>> es;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    const VertexId u = vs[k].id, v = vs[k + 1].id;
    es.push_back({edge_name(u, v), u, v, weights[k]});
  }
  return build_sheaf(std::move(vs), std::move(es));
}

/// Deep chain with a feedback edge next to every hidden-to-hidden forward
/// edge. Forward weights are Haar rotations W_i (2x2, det +1); the feedback
/// partner of h_i -> h_{i+1} is h_{i+1} -> h_i with weight R(theta) W_i^T, so
/// every 2-cycle has monodromy exactly R(theta): the identity at theta = 0,
/// maximally frustrated at theta = pi.
struct KnottedSpec {
  int layers = 10;
  int stalk_dim = 2;
  double theta = 0.0;
  std::uint64_t seed = 0;
};

template <typename Scalar = double>
PCSheaf<Scalar> make_knotted(const KnottedSpec& spec) {
  if (spec.layers < 1) throw std::invalid_argument("make_knotted: layers must be >= 1");
  if (spec.stalk_dim != 2)
    throw std::invalid_argument("make_knotted: the rotation parameterization needs stalk_dim = 2");
  const Index d = spec.stalk_dim;
  std::vector<Vertex> vs;
  vs.push_back({"x", d});
  for (int i = 1; i <= spec.layers; ++i) vs.push_back({"h" + std::to_string(i), d});
  vs.push_back({"y", d});

  std::mt19937_64 rng = make_rng(spec.seed);
  const Matrix<Scalar> R = rotation2<Scalar>(Scalar(spec.theta));
  std::vector<Edge<Scalar>> es;
  std::vector<Matrix<Scalar>> hidden_forward;
  for (std::size_t k = 0; k + 1 < vs.size(); ++k) {
    const VertexId u = vs[k].id, v = vs[k + 1].id;
    Matrix<Scalar> W = haar_rotation<Scalar>(d, rng);
    if (k >= 1 && k + 2 < vs.size()) hidden_forward.push_back(W);
    es.push_back({edge_name(u, v), u, v, std::move(W)});
  }
  for (int i = 1; i < spec.layers; ++i) {
    const VertexId u = "h" + std::to_string(i + 1), v = "h" + std::to_string(i);
    es.push_back({edge_name(u, v), u, v, Matrix<Scalar>(R * hidden_forward[i - 1].transpose())});
  }
  return build_sheaf(std::move(vs), std::move(es));
}

/// Fully recurrent hidden block: every ordered pair of hidden vertices gets
/// an edge, plus x -> h1 and h_n -> y. Weights are Haar (semi-)orthonormal.
struct AllToAllSpec {
  int n_hidden = 4;
  int hidden_dim = 4;
  int io_dim = 2;
  std::uint64_t seed = 0;
};

template <typename Scalar = double>
PCSheaf<Scalar> make_all_to_all(const AllToAllSpec& spec) {
  if (spec.n_hidden < 1) throw std::invalid_argument("make_all_to_all: n_hidden must be >= 1");
  if (spec.hidden_dim < 1 || spec.io_dim < 1)
    throw std::invalid_argument("make_all_to_all: dims must be >= 1");
  std::vector<Vertex> vs;
  vs.push_back({"x", spec.io_dim});
  for (int i = 1; i <= spec.n_hidden; ++i) vs.push_back({"h" + std::to_string(i), spec.hidden_dim});
  vs.push_back({"y", spec.io_dim});

  std::mt19937_64 rng = make_rng(spec.seed);
  std::vector<Edge<Scalar>> es;
  es.push_back({"x:h1", "x", "h1", haar_orthonormal<Scalar>(spec.hidden_dim, spec.io_dim, rng)});
  for (int i = 1; i <= spec.n_hidden; ++i) {
    for (int j = 1; j <= spec.n_hidden; ++j) {
      if (i == j) continue;
      const VertexId u = "h" + std::to_string(i), v = "h" + std::to_string(j);
      es.push_back({edge_name(u, v), u, v, haar_orthonormal<Scalar>(spec.hidden_dim, spec.hidden_dim, rng)});
    }
  }
  const VertexId last = "h" + std::to_string(spec.n_hidden);
  es.push_back({edge_name(last, "y"), last, "y",
                haar_orthonormal<Scalar>(spec.io_dim, spec.hidden_dim, rng)});
  return build_sheaf(std::move(vs), std::move(es));
}

/// Product of edge weights along a directed closed walk, later edges applied
/// on the left. The walk must follow edge directions and return to its start.
template <typename Scalar>
Matrix<Scalar> monodromy(const PCSheaf<Scalar>& F, const std::vector<EdgeId>& walk) {
  if (walk.empty()) throw std::invalid_argument("monodromy: empty walk");
  const VertexId start = F.edge(walk.front()).src;
  Matrix<Scalar> Phi = Matrix<Scalar>::Identity(F.vertex_dim(start), F.vertex_dim(start));
  VertexId at = start;
  for (const auto& eid : walk) {
    const auto& e = F.edge(eid);
    if (e.src != at)
      throw std::invalid_argument("monodromy: edge '" + eid + "' does not continue the walk");
    Phi = (e.weight * Phi).eval();
    at = e.dst;
  }
  if (at != start) throw std::invalid_argument("monodromy: walk does not close up");
  return Phi;
}

/// Identity-task data: targets equal inputs up to optional Gaussian noise.
template <typename Scalar>
struct BatchSample {
  Matrix<Scalar> inputs;
  Matrix<Scalar> targets;
};

template <typename Scalar = double>
BatchSample<Scalar> sample_batch(int n, Index io_dim, Scalar noise_std, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("sample_batch: batch size must be >= 1");
  std::mt19937_64 rng = make_rng(seed);
  BatchSample<Scalar> s;
  s.inputs = gaussian_matrix<Scalar>(io_dim, n, rng);
  s.targets = s.inputs;
  if (noise_std > Scalar(0)) s.targets += gaussian_matrix<Scalar>(io_dim, n, rng, noise_std);
  return s;
}

namespace detail {
template <typename Scalar>
BatchStats<Scalar> io_batch_statistics(const RelativeSystem<Scalar>& rel,
                                       const BatchSample<Scalar>& sample, const VertexId& input,
                                       const VertexId& output, Scalar rank_tol) {
  std::map<VertexId, Matrix<Scalar>> values{{input, sample.inputs}, {output, sample.targets}};
  return batch_statistics(rel, values, rank_tol);
}
}  // namespace detail

/// Mean residual magnitude per edge over a batch.
template <typename Scalar>
std::vector<std::pair<EdgeId, Scalar>> harmonic_load(const RelativeSystem<Scalar>& rel,
                                                     const BatchSample<Scalar>& sample,
                                                     const VertexId& input = "x",
                                                     const VertexId& output = "y",
                                                     Scalar rank_tol = default_rank_tol<Scalar>()) {
  const auto st = detail::io_batch_statistics(rel, sample, input, output, rank_tol);
  std::vector<std::pair<EdgeId, Scalar>> out;
  for (std::size_t k = 0; k < st.edge_ids.size(); ++k)
    out.emplace_back(st.edge_ids[k], st.harmonic_load[k]);
  return out;
}

/// Mean equilibrium state magnitude per free vertex over a batch.
template <typename Scalar>
std::vector<std::pair<VertexId, Scalar>> diffusive_activation(
    const RelativeSystem<Scalar>& rel, const BatchSample<Scalar>& sample,
    const VertexId& input = "x", const VertexId& output = "y",
    Scalar rank_tol = default_rank_tol<Scalar>()) {
  const auto st = detail::io_batch_statistics(rel, sample, input, output, rank_tol);
  std::vector<std::pair<VertexId, Scalar>> out;
  for (std::size_t k = 0; k < st.free_vertex_ids.size(); ++k)
    out.emplace_back(st.free_vertex_ids[k], st.diffusive_activation[k]);
  return out;
}

/// Frobenius norm of the batch-mean gradient per edge.
template <typename Scalar>
std::vector<std::pair<EdgeId, Scalar>> gradient_magnitude(
    const RelativeSystem<Scalar>& rel, const BatchSample<Scalar>& sample,
    const VertexId& input = "x", const VertexId& output = "y",
    Scalar rank_tol = default_rank_tol<Scalar>()) {
  const auto st = detail::io_batch_statistics(rel, sample, input, output, rank_tol);
  std::vector<std::pair<EdgeId, Scalar>> out;
  for (std::size_t k = 0; k < st.edge_ids.size(); ++k)
    out.emplace_back(st.edge_ids[k], Scalar(st.gradient_sum[k].norm() / Scalar(st.batch_size)));
  return out;
}

/// Score the network as a predictor: clamp only the input, read the
/// equilibrium state of the output vertex, and average the squared error per
/// output coordinate.
template <typename Scalar>
Scalar validation_mse(const PCSheaf<Scalar>& net, const BatchSample<Scalar>& sample,
                      const VertexId& input = "x", const VertexId& output = "y",
                      Scalar rank_tol = default_rank_tol<Scalar>()) {
  ClampSpec<Scalar> spec;
  spec.values[input] = Vector<Scalar>::Zero(net.vertex_dim(input));
  const RelativeSystem<Scalar> rel = clamp(net, spec);
  if (!rel.is_free(output))
    throw std::invalid_argument("validation_mse: output vertex must be free");
  const Matrix<Scalar> B = batch_boundary(rel, {{input, sample.inputs}});
  SvdSolver<Scalar> svd(rel.D, rank_tol);
  const Matrix<Scalar> Z = -svd.solve(B);
  const Matrix<Scalar> err = free_block(rel, Z, output) - sample.targets;
  return err.squaredNorm() / (Scalar(err.cols()) * Scalar(err.rows()));
}

/// The identity-task training recipe shared by the deep-chain and all-to-all
/// studies.
struct Protocol {
  double learning_rate = 0.1;
  int steps = 1000;
  int batch_size = 128;
  int val_batch_size = 128;
  double noise_std = 0.0;
  double mse_threshold = 1e-3;
  UpdateRule rule = UpdateRule::plain;
  GNConfig<double> gn = {};
  std::vector<EdgeId> trainable_edges;  // empty means every edge
  double rank_tol = 1e-10;
};

struct RunSummary {
  bool converged = false;
  std::optional<int> first_step_below_threshold;
  double final_mse = std::numeric_limits<double>::quiet_NaN();
  double kappa_at_init = std::numeric_limits<double>::quiet_NaN();
};

struct ProtocolRun {
  RunSummary summary;
  TrainResult<double> train;
};

/// Seed stream indices inside one protocol run: 0 draws the validation batch,
/// 1..steps draw the training batches, and kNetworkStream (when a network is
/// generated from the run seed) stays clear of both.
inline constexpr std::uint64_t kNetworkStream = std::uint64_t(1) << 32;

/// Train `net` to copy its input to its output, with fresh Gaussian batches
/// each step and a fixed held-out validation batch. Convergence means the
/// final validation MSE is at or below the threshold; kappa is measured on
/// the initial network with input and output clamped.
inline ProtocolRun run_identity_protocol(const PCSheaf<double>& net, const Protocol& p,
                                         std::uint64_t run_seed) {
  const Index io_dim = net.vertex_dim("x");
  if (net.vertex_dim("y") != io_dim)
    throw std::invalid_argument("run_identity_protocol: x and y must have equal dims");

  const BatchSample<double> val =
      sample_batch(p.val_batch_size, io_dim, p.noise_std, derive_seed(run_seed, 0));

  ClampSpec<double> zeros;
  zeros.values["x"] = Vector<double>::Zero(io_dim);
  zeros.values["y"] = Vector<double>::Zero(io_dim);

  ProtocolRun run;
  run.summary.kappa_at_init = spectral_report(clamp(net, zeros), p.rank_tol).kappa;

  TrainConfig<double> cfg;
  cfg.learning_rate = p.learning_rate;
  cfg.steps = p.steps;
  cfg.batch_size = p.batch_size;
  cfg.rule = p.rule;
  cfg.trainable_edges = p.trainable_edges;
  cfg.seed = run_seed;
  cfg.rank_tol = p.rank_tol;

  const BatchSource<double> source = [&](int step) {
    const auto s = sample_batch(p.batch_size, io_dim, p.noise_std,
                                derive_seed(run_seed, std::uint64_t(step)));
    return Batch<double>{s.inputs, s.targets};
  };
  const Validator<double> score = [&](const PCSheaf<double>& current) {
    return validation_mse(current, val, "x", "y", p.rank_tol);
  };

  run.train = train(net, ClampTemplate{"x", "y"}, source, cfg, p.gn, score);

  for (const auto& m : run.train.metrics) {
    if (m.val_mse <= p.mse_threshold) {
      run.summary.first_step_below_threshold = m.step;
      break;
    }
  }
  run.summary.final_mse =
      run.train.metrics.empty() ? validation_mse(run.train.sheaf, val, "x", "y", p.rank_tol)
                                : run.train.metrics.back().val_mse;
  run.summary.converged = run.summary.final_mse <= p.mse_threshold;
  return run;
}

struct SweepEntry {
  double point = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t run_seed = 0;
  RunSummary summary;
  TrainResult<double> train;
};

namespace detail {

inline void run_parallel(std::size_t tasks, int max_threads,
                         const std::function<void(std::size_t)>& body) {
  unsigned hw = std::thread::hardware_concurrency();
  std::size_t n = max_threads > 0 ? std::size_t(max_threads) : std::size_t(hw ? hw : 1);
  n = std::min(n, tasks);
  if (n <= 1) {
    for (std::size_t i = 0; i < tasks; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(tasks);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < n; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next.fetch_add(1); i < tasks; i = next.fetch_add(1)) {
        try {
          body(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace detail

/// One identity-protocol run per (theta, seed) pair. Point seeds follow
/// derive_seed(seed, point_index); the network itself is generated from a
/// further derived stream so batches and initialization never collide.
/// Runs are independent, so they execute on a small thread pool
/// (max_threads <= 0 means hardware concurrency).
inline std::vector<SweepEntry> sweep_theta(const std::vector<double>& thetas,
                                           const KnottedSpec& base, const Protocol& p,
                                           const std::vector<std::uint64_t>& seeds,
                                           int max_threads = 0) {
  if (thetas.empty() || seeds.empty())
    throw std::invalid_argument("sweep_theta: empty grid");
  std::vector<SweepEntry> out(thetas.size() * seeds.size());
  detail::run_parallel(out.size(), max_threads, [&](std::size_t task) {
    const std::size_t pi = task / seeds.size(), si = task % seeds.size();
    SweepEntry& e = out[task];
    e.point = thetas[pi];
    e.seed = seeds[si];
    e.run_seed = derive_seed(seeds[si], pi);
    KnottedSpec spec = base;
    spec.theta = thetas[pi];
    spec.seed = derive_seed(e.run_seed, kNetworkStream);
    ProtocolRun run = run_identity_protocol(make_knotted<double>(spec), p, e.run_seed);
    e.summary = run.summary;
    e.train = std::move(run.train);
  });
  return out;
}

/// Same sweep over the hidden-block size of the all-to-all network.
inline std::vector<SweepEntry> sweep_size(const std::vector<int>& sizes, const AllToAllSpec& base,
                                          const Protocol& p,
                                          const std::vector<std::uint64_t>& seeds,
                                          int max_threads = 0) {
  if (sizes.empty() || seeds.empty()) throw std::invalid_argument("sweep_size: empty grid");
  std::vector<SweepEntry> out(sizes.size() * seeds.size());
  detail::run_parallel(out.size(), max_threads, [&](std::size_t task) {
    const std::size_t pi = task / seeds.size(), si = task % seeds.size();
    SweepEntry& e = out[task];
    e.point = double(sizes[pi]);
    e.seed = seeds[si];
    e.run_seed = derive_seed(seeds[si], pi);
    AllToAllSpec spec = base;
    spec.n_hidden = sizes[pi];
    spec.seed = derive_seed(e.run_seed, kNetworkStream);
    ProtocolRun run = run_identity_protocol(make_all_to_all<double>(spec), p, e.run_seed);
    e.summary = run.summary;
    e.train = std::move(run.train);
  });
  return out;
}

}  // namespace sheafpc
