#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "sheafpc/learning.hpp"
#include "support.hpp"

using namespace sheafpc;

namespace {

Matrix<double> w1(double v) { return Matrix<double>::Constant(1, 1, v); }

PCSheaf<double> chain211() {
  return build_sheaf<double>({{"x", 1}, {"h1", 1}, {"h2", 1}, {"y", 1}},
                             {{"e1", "x", "h1", w1(2)},
                              {"e2", "h1", "h2", w1(1)},
                              {"e3", "h2", "y", w1(1)}});
}

RelativeSystem<double> clamped_chain() {
  ClampSpec<double> spec;
  spec.values["x"] = Vector<double>::Constant(1, 1.0);
  spec.values["y"] = Vector<double>::Constant(1, 5.0);
  return clamp(chain211(), spec);
}

double optimal_energy(const PCSheaf<double>& F, const ClampSpec<double>& spec) {
  return solve_inference(clamp(F, spec)).energy_rel;
}

}  // namespace

TEST_CASE("edge gradients at the chain equilibrium") {
  const auto rel = clamped_chain();
  const auto sol = solve_inference(rel);
  CHECK(edge_gradient(rel.sheaf, sol.s_star, "e1")(0, 0) == doctest::Approx(-1.0));
  CHECK(edge_gradient(rel.sheaf, sol.s_star, "e2")(0, 0) == doctest::Approx(-3.0));
  CHECK(edge_gradient(rel.sheaf, sol.s_star, "e3")(0, 0) == doctest::Approx(-4.0));

  // factorized route agrees where the source is free
  CHECK(harmonic_diffusive_gradient(rel, "e2")(0, 0) == doctest::Approx(-3.0));
  CHECK(harmonic_diffusive_gradient(rel, "e3")(0, 0) == doctest::Approx(-4.0));
  CHECK_THROWS_AS(harmonic_diffusive_gradient(rel, "e1"), std::invalid_argument);
}

TEST_CASE("gradient matches finite differences of the optimal energy") {
  std::mt19937_64 rng = make_rng(61);
  const Index n0 = 2, n1 = 3, n2 = 2;
  auto F = build_sheaf<double>({{"x", n0}, {"h1", n1}, {"h2", n2}, {"y", n2}},
                               {{"f1", "x", "h1", gaussian_matrix<double>(n1, n0, rng)},
                                {"f2", "h1", "h2", gaussian_matrix<double>(n2, n1, rng)},
                                {"f3", "h2", "y", gaussian_matrix<double>(n2, n2, rng)},
                                {"fb", "h2", "h1", gaussian_matrix<double>(n1, n2, rng)}});
  ClampSpec<double> spec;
  spec.values["x"] = gaussian_matrix<double>(n0, 1, rng).col(0);
  spec.values["y"] = gaussian_matrix<double>(n2, 1, rng).col(0);

  for (const EdgeId eid : {"f1", "f2", "fb"}) {
    const auto rel = clamp(F, spec);
    const auto sol = solve_inference(rel);
    const Matrix<double> G = edge_gradient(F, sol.s_star, eid);
    const Matrix<double> W0 = F.edge(eid).weight;
    const double h = 1e-6;
    for (Index i = 0; i < W0.rows(); ++i) {
      for (Index j = 0; j < W0.cols(); ++j) {
        Matrix<double> Wp = W0, Wm = W0;
        Wp(i, j) += h;
        Wm(i, j) -= h;
        PCSheaf<double> Fp = F, Fm = F;
        Fp.set_weight(eid, Wp);
        Fm.set_weight(eid, Wm);
        const double fd = (optimal_energy(Fp, spec) - optimal_energy(Fm, spec)) / (2 * h);
        CHECK(G(i, j) == doctest::Approx(fd).epsilon(1e-5));
      }
    }
    if (rel.is_free(F.edge(eid).src))
      CHECK((harmonic_diffusive_gradient(rel, eid) - G).norm() <= 1e-9 * (1.0 + G.norm()));
  }
}

TEST_CASE("batch statistics at batch size one reduce to a single solve") {
  const auto rel = clamped_chain();
  const auto sol = solve_inference(rel);
  Matrix<double> X(1, 1), Y(1, 1);
  X << 1.0;
  Y << 5.0;
  const auto st = batch_statistics(rel, {{"x", X}, {"y", Y}});
  CHECK(st.batch_size == 1);
  REQUIRE(st.edge_ids == std::vector<EdgeId>{"e1", "e2", "e3"});
  for (std::size_t k = 0; k < 3; ++k)
    CHECK(st.harmonic_load[k] ==
          doctest::Approx(edge_block(rel.sheaf, sol.r_star, st.edge_ids[k]).norm()));
  REQUIRE(st.free_vertex_ids == std::vector<VertexId>{"h1", "h2"});
  CHECK(st.diffusive_activation[0] == doctest::Approx(3.0));
  CHECK(st.diffusive_activation[1] == doctest::Approx(4.0));
  // gradient sums carry the opposite sign of the energy gradient
  CHECK(st.gradient_sum[0](0, 0) == doctest::Approx(1.0));
  CHECK(st.gradient_sum[1](0, 0) == doctest::Approx(3.0));
  CHECK(st.gradient_sum[2](0, 0) == doctest::Approx(4.0));
}

TEST_CASE("batch statistics average per-sample solves") {
  std::mt19937_64 rng = make_rng(62);
  const auto F = chain211();
  ClampSpec<double> zeros;
  zeros.values["x"] = Vector<double>::Zero(1);
  zeros.values["y"] = Vector<double>::Zero(1);
  const auto rel = clamp(F, zeros);

  const int N = 7;
  const Matrix<double> X = gaussian_matrix<double>(1, N, rng);
  const Matrix<double> Y = gaussian_matrix<double>(1, N, rng);
  const auto st = batch_statistics(rel, {{"x", X}, {"y", Y}});

  std::vector<double> load(3, 0.0);
  Matrix<double> g1 = Matrix<double>::Zero(1, 1);
  for (int i = 0; i < N; ++i) {
    ClampSpec<double> spec;
    spec.values["x"] = X.col(i);
    spec.values["y"] = Y.col(i);
    const auto sol = solve_inference(clamp(F, spec));
    for (std::size_t k = 0; k < 3; ++k)
      load[k] += edge_block(F, sol.r_star, st.edge_ids[k]).norm() / N;
    g1 += edge_block(F, sol.r_star, "e1") * X.col(i).transpose();
  }
  for (std::size_t k = 0; k < 3; ++k) CHECK(st.harmonic_load[k] == doctest::Approx(load[k]));
  CHECK(st.gradient_sum[0](0, 0) == doctest::Approx(g1(0, 0)));
}

TEST_CASE("exact source covariance on the chain") {
  const auto rel = clamped_chain();
  const auto cov = gn_source_covariance(rel, BoundaryCovariance<double>(1.0));
  REQUIRE(cov.blocks.size() == 2);
  CHECK(cov.at("h1")(0, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(cov.at("h2")(0, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));

  // isotropic path equals the general path with sigma^2 I
  const Matrix<double> S = Matrix<double>::Identity(3, 3) * 1.0;
  const auto gen = gn_source_covariance(rel, BoundaryCovariance<double>(S));
  for (const auto& [id, blk] : cov.blocks)
    CHECK((blk - gen.at(id)).norm() <= 1e-9 * (1.0 + blk.norm()));
  CHECK_THROWS_AS(cov.at("x"), std::out_of_range);
}

TEST_CASE("source covariance blocks are the diagonal of the response covariance") {
  std::mt19937_64 rng = make_rng(63);
  const auto F = sheafpc::testing::random_sheaf(rng, 5, 3);
  const auto spec = sheafpc::testing::random_clamp(rng, F);
  const auto rel = clamp(F, spec);

  Matrix<double> A = gaussian_matrix<double>(rel.c1_dim(), rel.c1_dim(), rng);
  const Matrix<double> Sigma_b = gram(A);
  const auto cov = gn_source_covariance(rel, BoundaryCovariance<double>(Sigma_b));

  const Matrix<double> G = diffusive_operator(rel);
  const Matrix<double> full = G * Sigma_b * G.transpose();
  for (const auto& v : rel.free_cols.ids()) {
    const Index off = rel.free_cols.offset(v), d = rel.free_cols.dim(v);
    CHECK((cov.at(v) - full.block(off, off, d, d)).norm() <= 1e-9 * (1.0 + full.norm()));
    CHECK((cov.at(v) - cov.at(v).transpose()).norm() <= 1e-10 * (1.0 + cov.at(v).norm()));
  }
}

TEST_CASE("non-psd boundary covariances are rejected") {
  const auto rel = clamped_chain();
  Matrix<double> bad = -Matrix<double>::Identity(3, 3);
  CHECK_THROWS_AS(gn_source_covariance(rel, BoundaryCovariance<double>(bad)),
                  std::invalid_argument);
  Matrix<double> skew = Matrix<double>::Zero(3, 3);
  skew(0, 1) = 1.0;
  CHECK_THROWS_AS(gn_source_covariance(rel, BoundaryCovariance<double>(skew)),
                  std::invalid_argument);
  CHECK_THROWS_AS(gn_source_covariance(rel, BoundaryCovariance<double>(-1.0)),
                  std::invalid_argument);
}

TEST_CASE("stochastic covariance estimates the exact one") {
  const auto rel = clamped_chain();
  const auto exact = gn_source_covariance(rel, BoundaryCovariance<double>(1.0));
  const auto est = hutchinson_covariance(rel, BoundaryCovariance<double>(1.0), 20000, 0.0, 99);
  for (const auto& [id, blk] : exact.blocks) {
    const double rel_err = (est.at(id) - blk).norm() / blk.norm();
    CHECK(rel_err <= 0.05);
  }

  // deterministic in the seed, sensitive to it
  const auto est2 = hutchinson_covariance(rel, BoundaryCovariance<double>(1.0), 500, 0.0, 99);
  const auto est3 = hutchinson_covariance(rel, BoundaryCovariance<double>(1.0), 500, 0.0, 99);
  const auto est4 = hutchinson_covariance(rel, BoundaryCovariance<double>(1.0), 500, 0.0, 100);
  CHECK((est2.at("h1") - est3.at("h1")).norm() == 0.0);
  CHECK((est2.at("h1") - est4.at("h1")).norm() > 0.0);

  // zero boundary covariance gives a zero estimate
  const auto zero = hutchinson_covariance(rel, BoundaryCovariance<double>(0.0), 32, 0.0, 1);
  CHECK(zero.at("h1").norm() == 0.0);
}

TEST_CASE("stochastic covariance demands a shift on singular systems") {
  // free vertex w has no incident edges, so L_rel has a zero block
  auto F = build_sheaf<double>({{"x", 1}, {"h", 1}, {"w", 1}, {"y", 1}},
                               {{"e1", "x", "h", w1(2)}, {"e2", "h", "y", w1(3)}});
  ClampSpec<double> spec;
  spec.values["x"] = Vector<double>::Constant(1, 1.0);
  spec.values["y"] = Vector<double>::Constant(1, 1.0);
  const auto rel = clamp(F, spec);
  CHECK_THROWS_AS(hutchinson_covariance(rel, BoundaryCovariance<double>(1.0), 16, 0.0, 1),
                  std::invalid_argument);
  const double lam = default_tikhonov(rel);
  CHECK(lam > 0.0);
  const auto est = hutchinson_covariance(rel, BoundaryCovariance<double>(1.0), 16, lam, 1);
  CHECK(est.at("w").norm() == 0.0);  // nothing drives w, shift or not
}

TEST_CASE("curvature update reduces to the plain rule at matched scaling") {
  std::mt19937_64 rng = make_rng(64);
  const Matrix<double> W = gaussian_matrix<double>(3, 2, rng);
  const Matrix<double> G = gaussian_matrix<double>(3, 2, rng);
  GNConfig<double> gn;
  gn.gamma = 0.8;
  gn.epsilon = 1e-3;
  const double eta = 0.05;
  const Matrix<double> Sigma =
      (gn.gamma / eta - gn.epsilon) * Matrix<double>::Identity(2, 2);
  const Matrix<double> updated = gn_update(W, G, Sigma, gn);
  CHECK((updated - (W + eta * G)).norm() <= 1e-10 * (1.0 + W.norm()));
}

TEST_CASE("curvature update moves in a descent direction") {
  std::mt19937_64 rng = make_rng(65);
  for (int t = 0; t < 10; ++t) {
    const Matrix<double> W = gaussian_matrix<double>(2, 3, rng);
    const Matrix<double> G = gaussian_matrix<double>(2, 3, rng);
    const Matrix<double> Sigma = gram(gaussian_matrix<double>(3, 3, rng));
    GNConfig<double> gn;
    const Matrix<double> step = gn_update(W, G, Sigma, gn) - W;
    // G is the negated energy gradient, so <grad E, step> = -<G, step> < 0
    CHECK((G.array() * step.array()).sum() > 0.0);
  }
}

TEST_CASE("scalar rate uses the top eigenvalue") {
  GNConfig<double> gn;
  gn.gamma = 2.0;
  gn.epsilon = 0.5;
  Matrix<double> Sigma = Matrix<double>::Zero(2, 2);
  Sigma(0, 0) = 3.0;
  Sigma(1, 1) = 1.0;
  CHECK(scalar_rate(Sigma, gn) == doctest::Approx(2.0 / 3.5).epsilon(1e-12));
}

TEST_CASE("one training step applies the hand-computed plain update") {
  std::mt19937_64 rng = make_rng(66);
  const double a = 0.7, c = 1.3, lr = 0.1;
  auto F = build_sheaf<double>({{"x", 1}, {"h1", 1}, {"y", 1}},
                               {{"e1", "x", "h1", w1(a)}, {"e2", "h1", "y", w1(c)}});
  const int N = 5;
  const Matrix<double> X = gaussian_matrix<double>(1, N, rng);
  const Matrix<double> Y = gaussian_matrix<double>(1, N, rng);

  TrainConfig<double> cfg;
  cfg.learning_rate = lr;
  cfg.steps = 1;
  cfg.batch_size = N;
  const auto result = train<double>(
      F, ClampTemplate{"x", "y"}, [&](int) { return Batch<double>{X, Y}; }, cfg);

  // by hand: z_i = (a x_i + c y_i) / (1 + c^2), r_i = (z_i - a x_i, y_i - c z_i)
  double g1 = 0.0, g2 = 0.0;
  for (int i = 0; i < N; ++i) {
    const double z = (a * X(0, i) + c * Y(0, i)) / (1 + c * c);
    g1 += (z - a * X(0, i)) * X(0, i);
    g2 += (Y(0, i) - c * z) * z;
  }
  const double a1 = a + lr * g1 / N;
  const double c1 = c + lr * g2 / N;
  CHECK(result.sheaf.edge("e1").weight(0, 0) == doctest::Approx(a1).epsilon(1e-12));
  CHECK(result.sheaf.edge("e2").weight(0, 0) == doctest::Approx(c1).epsilon(1e-12));
}

TEST_CASE("training respects the trainable set and records metrics") {
  std::mt19937_64 rng = make_rng(67);
  auto F = chain211();
  const double frozen = F.edge("e3").weight(0, 0);
  TrainConfig<double> cfg;
  cfg.steps = 4;
  cfg.batch_size = 8;
  cfg.trainable_edges = {"e1", "e2"};
  int calls = 0;
  const auto result = train<double>(
      F, ClampTemplate{"x", "y"},
      [&](int) {
        ++calls;
        Batch<double> b;
        b.inputs = gaussian_matrix<double>(1, 8, rng);
        b.targets = b.inputs;
        return b;
      },
      cfg);
  CHECK(calls == 4);
  CHECK(result.sheaf.edge("e3").weight(0, 0) == frozen);
  CHECK(result.metrics.size() == 4);
  CHECK(result.metrics.front().step == 1);
  CHECK(result.metrics.back().step == 4);
  for (const auto& m : result.metrics) {
    CHECK(m.harmonic_load.size() == 3);
    CHECK(m.gradient_norm.size() == 3);
    CHECK(m.diffusive_activation.size() == 2);
    CHECK(std::isnan(m.val_mse));  // no validator attached
  }
}

TEST_CASE("training is deterministic given seeds, including stochastic probes") {
  auto make_source = [](std::uint64_t seed) {
    return [seed](int step) {
      std::mt19937_64 r = make_rng(derive_seed(seed, std::uint64_t(step)));
      Batch<double> b;
      b.inputs = gaussian_matrix<double>(1, 6, r);
      b.targets = b.inputs;
      return b;
    };
  };
  TrainConfig<double> cfg;
  cfg.steps = 5;
  cfg.batch_size = 6;
  cfg.rule = UpdateRule::gauss_newton;
  cfg.seed = 42;
  GNConfig<double> gn;
  gn.probes = 8;
  gn.tikhonov = 1e-8;

  const auto r1 = train<double>(chain211(), ClampTemplate{}, make_source(5), cfg, gn);
  const auto r2 = train<double>(chain211(), ClampTemplate{}, make_source(5), cfg, gn);
  REQUIRE(r1.metrics.size() == r2.metrics.size());
  for (std::size_t i = 0; i < r1.metrics.size(); ++i) {
    CHECK(r1.metrics[i].harmonic_load == r2.metrics[i].harmonic_load);
    CHECK(r1.metrics[i].gradient_norm == r2.metrics[i].gradient_norm);
    CHECK(r1.metrics[i].diffusive_activation == r2.metrics[i].diffusive_activation);
  }
  for (const auto& e : {"e1", "e2", "e3"})
    CHECK((r1.sheaf.edge(e).weight - r2.sheaf.edge(e).weight).norm() == 0.0);
}

TEST_CASE("all three rules make progress on an identity task") {
  auto run_rule = [](UpdateRule rule) {
    auto F = build_sheaf<double>({{"x", 1}, {"h1", 1}, {"y", 1}},
                                 {{"e1", "x", "h1", w1(0.4)}, {"e2", "h1", "y", w1(0.6)}});
    TrainConfig<double> cfg;
    cfg.steps = 120;
    cfg.batch_size = 16;
    cfg.learning_rate = 0.2;
    cfg.rule = rule;
    GNConfig<double> gn;
    gn.gamma = 0.2;
    const auto source = [](int step) {
      std::mt19937_64 r = make_rng(derive_seed(7, std::uint64_t(step)));
      Batch<double> b;
      b.inputs = gaussian_matrix<double>(1, 16, r);
      b.targets = b.inputs;
      return b;
    };
    // measure the map x -> y implied by the trained weights
    const auto result = train<double>(F, ClampTemplate{}, source, cfg, gn);
    const double map = result.sheaf.edge("e2").weight(0, 0) * result.sheaf.edge("e1").weight(0, 0);
    return std::abs(map - 1.0);
  };
  const double before = std::abs(0.4 * 0.6 - 1.0);
  CHECK(run_rule(UpdateRule::plain) < before / 4);
  CHECK(run_rule(UpdateRule::gauss_newton) < before / 4);
  CHECK(run_rule(UpdateRule::scalar_spectral) < before / 4);
}

TEST_CASE("empirical boundary covariance matches its definition") {
  std::mt19937_64 rng = make_rng(68);
  const auto rel = clamped_chain();
  const Matrix<double> X = gaussian_matrix<double>(1, 9, rng);
  const Matrix<double> Y = gaussian_matrix<double>(1, 9, rng);
  const std::map<VertexId, Matrix<double>> values{{"x", X}, {"y", Y}};
  const Matrix<double> S = empirical_boundary_covariance(rel, values);
  const Matrix<double> B = batch_boundary(rel, values);
  CHECK((S - B * B.transpose() / 9.0).norm() <= 1e-12 * (1.0 + S.norm()));
  // it is a valid boundary covariance for the exact path
  const auto cov = gn_source_covariance(rel, BoundaryCovariance<double>(S));
  CHECK(cov.blocks.size() == 2);
}

TEST_CASE("train validates its inputs") {
  TrainConfig<double> cfg;
  cfg.steps = 1;
  const auto good = [](int) {
    Batch<double> b;
    b.inputs = Matrix<double>::Ones(1, 2);
    b.targets = Matrix<double>::Ones(1, 2);
    return b;
  };
  CHECK_THROWS_AS(train<double>(chain211(), ClampTemplate{"x", "x"}, good, cfg),
                  std::invalid_argument);
  CHECK_THROWS_AS(train<double>(chain211(), ClampTemplate{"x", "nope"}, good, cfg),
                  std::invalid_argument);
  TrainConfig<double> badedge = cfg;
  badedge.trainable_edges = {"missing"};
  CHECK_THROWS_AS(train<double>(chain211(), ClampTemplate{}, good, badedge),
                  std::invalid_argument);
  const auto mismatched = [](int) {
    Batch<double> b;
    b.inputs = Matrix<double>::Ones(2, 2);
    b.targets = Matrix<double>::Ones(1, 2);
    return b;
  };
  CHECK_THROWS_AS(train<double>(chain211(), ClampTemplate{}, mismatched, cfg),
                  std::invalid_argument);
}
