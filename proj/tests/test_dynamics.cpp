#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "sheafpc/dynamics.hpp"
#include "sheafpc/linalg.hpp"
#include "support.hpp"

using namespace sheafpc;

namespace {

Matrix<double> w1(double v) { return Matrix<double>::Constant(1, 1, v); }

RelativeSystem<double> clamped_chain() {
  auto F = build_sheaf<double>({{"x", 1}, {"h1", 1}, {"h2", 1}, {"y", 1}},
                               {{"e1", "x", "h1", w1(2)},
                                {"e2", "h1", "h2", w1(1)},
                                {"e3", "h2", "y", w1(1)}});
  ClampSpec<double> spec;
  spec.values["x"] = Vector<double>::Constant(1, 1.0);
  spec.values["y"] = Vector<double>::Constant(1, 5.0);
  return clamp(F, spec);
}

}  // namespace

TEST_CASE("single explicit steps, plain and preconditioned") {
  const auto rel = clamped_chain();
  const Vector<double> z0 = Vector<double>::Zero(2);

  Vector<double> z1 = diffusion_step(rel, z0, 0.1);
  Vector<double> expected(2);
  expected << 0.2, 0.5;
  CHECK((z1 - expected).norm() <= 1e-15);

  const Matrix<double> M = block_jacobi(rel);
  Matrix<double> Mexp(2, 2);
  Mexp << 2, 0, 0, 2;
  CHECK((M - Mexp).norm() == 0.0);

  Vector<double> zp = preconditioned_step(rel, z0, 0.1, M);
  expected << 0.1, 0.25;
  CHECK((zp - expected).norm() <= 1e-15);
}

TEST_CASE("diffusion converges to the exact equilibrium") {
  const auto rel = clamped_chain();
  DiffusionConfig<double> cfg;
  cfg.max_steps = 5000;
  cfg.stop_tol = 1e-12;
  const auto res = run_diffusion(rel, Vector<double>::Zero(2), cfg);
  const auto sol = solve_inference(rel);
  CHECK((res.z - sol.z_star).norm() <= 1e-9);
  CHECK(res.lambda_max == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(res.step_size_used == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(res.step_size_admissible);
  CHECK(res.residual_norms.size() == std::size_t(res.steps_used) + 1);
  CHECK(res.energies.size() == res.residual_norms.size());
  for (std::size_t i = 1; i < res.energies.size(); ++i)
    CHECK(res.energies[i] <= res.energies[i - 1] + 1e-14);
  CHECK(res.energies.back() == doctest::Approx(sol.energy_rel).epsilon(1e-9));
}

TEST_CASE("starting at the equilibrium takes no steps") {
  const auto rel = clamped_chain();
  DiffusionConfig<double> cfg;
  cfg.stop_tol = 1e-9;
  const auto res = run_diffusion(rel, solve_inference(rel).z_star, cfg);
  CHECK(res.steps_used == 0);
  CHECK(res.residual_norms.size() == 1);
}

TEST_CASE("inadmissible step sizes are flagged and diverge") {
  const auto rel = clamped_chain();
  DiffusionConfig<double> cfg;
  cfg.step_size = 0.7;  // above 2 / lambda_max = 2/3
  cfg.max_steps = 300;
  const auto res = run_diffusion(rel, Vector<double>::Zero(2), cfg);
  CHECK(!res.step_size_admissible);
  CHECK(res.energies.back() > res.energies.front());
}

TEST_CASE("preconditioned iteration reaches the same fixed point") {
  const auto rel = clamped_chain();
  DiffusionConfig<double> cfg;
  cfg.preconditioner = Preconditioner::block_jacobi;
  cfg.max_steps = 5000;
  cfg.stop_tol = 1e-12;
  const auto res = run_diffusion(rel, Vector<double>::Zero(2), cfg);
  CHECK((res.z - solve_inference(rel).z_star).norm() <= 1e-9);
  // eigenvalues of M^{-1} L are {1/2, 3/2}
  CHECK(res.lambda_max == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(res.step_size_used == doctest::Approx(1.2).epsilon(1e-12));
}

TEST_CASE("preconditioned steps are plain steps in the rescaled metric") {
  std::mt19937_64 rng = make_rng(51);
  const auto F = sheafpc::testing::random_sheaf(rng, 5, 3);
  const auto spec = sheafpc::testing::random_clamp(rng, F);
  const auto rel = clamp(F, spec);
  Matrix<double> M;
  try {
    M = block_jacobi(rel);
  } catch (const std::invalid_argument&) {
    return;  // isolated free vertex in this draw; covered elsewhere
  }
  Eigen::SelfAdjointEigenSolver<Matrix<double>> es(M);
  if (es.eigenvalues().minCoeff() <= 1e-12) return;
  const Matrix<double> Mh = es.operatorSqrt();
  const Matrix<double> Mih = es.operatorInverseSqrt();

  RelativeSystem<double> scaled = rel;
  scaled.D = rel.D * Mih;

  const double eta = 0.3;
  Vector<double> z = gaussian_matrix<double>(rel.free_dim(), 1, rng).col(0);
  Vector<double> y = Mh * z;
  for (int k = 0; k < 5; ++k) {
    z = preconditioned_step(rel, z, eta, M);
    y = diffusion_step(scaled, y, eta);
    CHECK((Mh * z - y).norm() <= 1e-8 * (1.0 + y.norm()));
  }
}

TEST_CASE("block jacobi refuses isolated free vertices") {
  auto F = build_sheaf<double>({{"u", 1}, {"w", 1}}, {{"loop", "u", "u", w1(0.5)}});
  ClampSpec<double> spec;
  spec.values["u"] = Vector<double>::Zero(1);
  const auto rel = clamp(F, spec);
  CHECK_THROWS_WITH_AS(block_jacobi(rel), doctest::Contains("'w'"), std::invalid_argument);
}

TEST_CASE("singular preconditioners are rejected") {
  const auto rel = clamped_chain();
  const Matrix<double> M = Matrix<double>::Zero(2, 2);
  CHECK_THROWS_AS(preconditioned_step(rel, Vector<double>::Zero(2), 0.1, M), std::runtime_error);
}

TEST_CASE("spectral report of the clamped chain") {
  const auto rel = clamped_chain();
  const auto rep = spectral_report(rel);
  REQUIRE(rep.eigenvalues.size() == 2);
  CHECK(rep.eigenvalues(0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(rep.eigenvalues(1) == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(rep.lambda_min_plus == doctest::Approx(1.0));
  CHECK(rep.kappa == doctest::Approx(3.0));
}

TEST_CASE("an edgeless system reports an infinite kappa") {
  auto F = build_sheaf<double>({{"x", 1}, {"w", 1}}, {});
  ClampSpec<double> spec;
  spec.values["x"] = Vector<double>::Zero(1);
  const auto rel = clamp(F, spec);
  const auto rep = spectral_report(rel);
  CHECK(rep.lambda_max == 0.0);
  CHECK(std::isinf(rep.kappa));
}

TEST_CASE("default step size tracks the requested preconditioner") {
  const auto rel = clamped_chain();
  DiffusionConfig<double> plain, pre;
  plain.max_steps = 0;
  pre.max_steps = 0;
  pre.preconditioner = Preconditioner::block_jacobi;
  CHECK(run_diffusion(rel, Vector<double>::Zero(2), plain).lambda_max == doctest::Approx(3.0));
  CHECK(run_diffusion(rel, Vector<double>::Zero(2), pre).lambda_max == doctest::Approx(1.5));
}
