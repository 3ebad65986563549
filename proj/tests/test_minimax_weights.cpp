#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "panelfe/errors.hpp"
#include "panelfe/minimax_weights.hpp"
#include "test_support.hpp"

using namespace panelfe;
using testsupport::random_matrix;

namespace {

Matrix diag_matrix(std::initializer_list<double> values) {
  Vector v(static_cast<Index>(values.size()));
  Index i = 0;
  for (double d : values) {
    v(i++) = d;
  }
  return Matrix(v.asDiagonal());
}

double criterion_mse(double b, const WeightMatrix& w) {
  return b * b * w.s1 * w.s1 + w.fro_sq;
}

}  // namespace

TEST_CASE("partial_out_nuclear with no controls equals soft thresholding") {
  const Matrix x = random_matrix(6, 5, 1);
  const double mu = 0.7;
  const auto res = partial_out_nuclear(x, {}, mu);
  const auto st = soft_threshold_svd(x, mu);
  CHECK((res.pi - st.pi).norm() <= 1e-12 * std::max(1.0, x.norm()));
  CHECK((res.omega - st.omega).norm() <= 1e-12 * std::max(1.0, x.norm()));
  CHECK(res.psi.size() == 0);
}

TEST_CASE("large mu collapses to plain OLS partialling") {
  const Index n = 7, t = 5;
  const Matrix x = random_matrix(n, t, 2);
  const std::vector<Matrix> z = {random_matrix(n, t, 3), random_matrix(n, t, 4)};

  // OLS of vec(x) on the stacked controls.
  Matrix zs(n * t, 2);
  zs.col(0) = z[0].reshaped();
  zs.col(1) = z[1].reshaped();
  const Vector psi_ols =
      (zs.transpose() * zs).ldlt().solve(zs.transpose() * x.reshaped());
  const Matrix resid =
      x - (zs * psi_ols).reshaped(n, t);

  const double mu = testsupport::jacobi_spectral_norm(resid) * 1.01;
  const auto res = partial_out_nuclear(x, z, mu);
  CHECK(res.pi.norm() <= 1e-8 * x.norm());
  CHECK((res.psi - psi_ols).norm() <= 1e-8 * std::max(1.0, psi_ols.norm()));
  CHECK((res.omega - resid).norm() <= 1e-8 * std::max(1.0, resid.norm()));
}

TEST_CASE("objective matches the proximal-gradient oracle with controls") {
  const Index n = 8, t = 6;
  const Matrix x = random_matrix(n, t, 5);
  const std::vector<Matrix> z = {random_matrix(n, t, 6), random_matrix(n, t, 7)};
  const double mu = 1.0;
  const auto res = partial_out_nuclear(x, z, mu);
  Matrix fitted = res.pi;
  for (size_t k = 0; k < z.size(); ++k) {
    fitted += res.psi(static_cast<Index>(k)) * z[k];
  }
  const double objective = (x - fitted).squaredNorm() / 2.0 +
                           mu * testsupport::jacobi_nuclear_norm(res.pi);
  const double oracle = testsupport::proximal_gradient_objective(x, z, mu);
  CHECK(objective == doctest::Approx(oracle).epsilon(1e-8));
  // Stationarity in psi: residual orthogonal to every control.
  for (const auto& zk : z) {
    CHECK(std::abs(frobenius_inner(res.omega, zk)) <=
          1e-8 * res.omega.norm() * zk.norm());
  }
}

TEST_CASE("weights_for_mu closed forms") {
  // Pure OLS weights when mu exceeds the top singular value.
  const Matrix x = random_matrix(5, 4, 8);
  const double s1 = testsupport::jacobi_spectral_norm(x);
  const WeightMatrix ols = weights_for_mu(x, {}, s1 * 2.0);
  CHECK((ols.a - x / x.squaredNorm()).norm() <= 1e-10);

  // diag(3,1), mu = 2: omega = diag(2,1), <omega, x> = 7.
  const WeightMatrix w = weights_for_mu(diag_matrix({3.0, 1.0}), {}, 2.0);
  CHECK(w.a(0, 0) == doctest::Approx(2.0 / 7.0).epsilon(1e-12));
  CHECK(w.a(1, 1) == doctest::Approx(1.0 / 7.0).epsilon(1e-12));

  // Identity checks on a random instance at an interior mu.
  const Matrix x2 = random_matrix(8, 6, 9);
  const Vector s = testsupport::jacobi_singular_values(x2);
  const double mu = 0.5 * (s(1) + s(2));
  const WeightMatrix wi = weights_for_mu(x2, {}, mu);
  CHECK(frobenius_inner(wi.a, x2) == doctest::Approx(1.0).epsilon(1e-10));
  double d = 0.0;
  for (Index j = 0; j < s.size(); ++j) {
    d += std::min(s(j), mu) * s(j);
  }
  CHECK(wi.s1 == doctest::Approx(std::min(s(0), mu) / d).epsilon(1e-10));
}

TEST_CASE("WeightMatrix diagnostics are consistent with the matrix") {
  const Matrix x = random_matrix(7, 6, 10);
  const WeightMatrix w = weights_for_mu(x, {}, 1.0);
  CHECK(w.s1 ==
        doctest::Approx(testsupport::jacobi_spectral_norm(w.a)).epsilon(1e-10));
  CHECK(w.fro_sq == doctest::Approx(w.a.squaredNorm()).epsilon(1e-10));
  CHECK(w.lind ==
        doctest::Approx(w.a.array().square().maxCoeff() / w.a.squaredNorm())
            .epsilon(1e-10));
}

TEST_CASE("select_weights with b = 0 returns OLS-partialling weights") {
  const Index n = 7, t = 6;
  const Matrix x = random_matrix(n, t, 11);
  const std::vector<Matrix> z = {random_matrix(n, t, 12)};
  const auto sel = select_weights(x, z, 0.0);

  const auto ols = partial_out_nuclear(
      x, z, testsupport::jacobi_spectral_norm(x) * 4.0);
  const Matrix a_ols = ols.omega / frobenius_inner(ols.omega, x);
  CHECK((sel.weights.a - a_ols).norm() <= 1e-6 * a_ols.norm());
  // Selected Pi vanishes at the top of the path.
  const auto at_selected = partial_out_nuclear(x, z, sel.weights.mu);
  CHECK(at_selected.pi.norm() <= 1e-8 * x.norm());
}

TEST_CASE("path points satisfy their invariants and are dominated") {
  const Index n = 8, t = 6;
  const Matrix x = random_matrix(n, t, 13);
  const double b = 5.0;
  const auto sel = select_weights(x, {}, b);
  REQUIRE(!sel.path.empty());
  for (const auto& pt : sel.path) {
    CHECK(pt.objective ==
          doctest::Approx(b * b * pt.s1_a * pt.s1_a + pt.var_factor)
              .epsilon(1e-12));
    // Global-over-grid dominance.
    CHECK(sel.criterion_value <= pt.objective * (1 + 1e-10));
  }
  // bbar recomputed from a fresh partialling-out solve at sampled points.
  size_t stride = std::max<size_t>(1, sel.path.size() / 9);
  for (size_t i = 0; i < sel.path.size(); i += stride) {
    const auto& pt = sel.path[i];
    const auto res = partial_out_nuclear(x, {}, pt.mu);
    const double expected = frobenius_inner(res.omega, res.pi) /
                            frobenius_inner(res.omega, x);
    if (std::abs(expected) > 1e-12) {
      CHECK(pt.bbar == doctest::Approx(expected).epsilon(1e-9));
    } else {
      CHECK(std::abs(pt.bbar) <= 1e-9);
    }
  }
  // K = 0 identity: s1(A_mu) * <Omega_mu, X> = min(s1(X), mu).
  const double s1x = testsupport::jacobi_spectral_norm(x);
  for (const auto& pt : sel.path) {
    CHECK(pt.s1_a * pt.omega_x_inner ==
          doctest::Approx(std::min(s1x, pt.mu)).epsilon(1e-10));
  }
}

TEST_CASE("path feasibility: implied weights satisfy the constraints") {
  const Index n = 6, t = 5;
  const Matrix x = random_matrix(n, t, 14);
  const std::vector<Matrix> z = {random_matrix(n, t, 15)};
  const auto sel = select_weights(x, z, 3.0);
  size_t step = std::max<size_t>(1, sel.path.size() / 7);
  for (size_t i = 0; i < sel.path.size(); i += step) {
    const WeightMatrix w = weights_for_mu(x, z, sel.path[i].mu);
    CHECK(frobenius_inner(w.a, x) == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(std::abs(frobenius_inner(w.a, z[0])) <=
          1e-8 * w.a.norm() * z[0].norm());
  }
}

TEST_CASE("selection scales correctly when x is rescaled") {
  const Matrix x = random_matrix(7, 5, 16);
  const double b = 4.0, c = 2.5;
  const auto base = select_weights(x, {}, b);
  const auto scaled = select_weights(c * x, {}, b);
  CHECK(frobenius_inner(scaled.weights.a, c * x) ==
        doctest::Approx(1.0).epsilon(1e-10));
  // The estimator <A, c X beta> is invariant: A maps to A / c.
  CHECK((scaled.weights.a - base.weights.a / c).norm() <=
        1e-8 * base.weights.a.norm() / c);
}

TEST_CASE("selected objective is nondecreasing in b") {
  const Matrix x = random_matrix(8, 6, 17);
  double prev = 0.0;
  for (double b : {0.0, 1.0, 3.0, 10.0, 30.0}) {
    const auto sel = select_weights(x, {}, b);
    const double value = criterion_mse(b, sel.weights);
    CHECK(value >= prev - 1e-12);
    prev = value;
  }
}

TEST_CASE("lindeberg ratio closed forms") {
  CHECK(lindeberg(Matrix::Constant(4, 5, 0.3)) ==
        doctest::Approx(1.0 / 20.0).epsilon(1e-12));
  Matrix onehot = Matrix::Zero(3, 3);
  onehot(1, 2) = 2.0;
  CHECK(lindeberg(onehot) == doctest::Approx(1.0));
  CHECK(lindeberg(Matrix::Constant(1, 50, 1.0 / 50)) ==
        doctest::Approx(1.0 / 50).epsilon(1e-12));
  CHECK_THROWS_WITH_AS(lindeberg(Matrix::Zero(2, 2)),
                       doctest::Contains("undefined Lindeberg"), NumericError);
}

TEST_CASE("lind_cap marks violations without altering the weights") {
  const Matrix x = random_matrix(5, 4, 18);
  SelectWeightsOptions opts;
  const auto plain = select_weights(x, {}, 2.0, opts);
  opts.lind_cap = plain.weights.lind * 0.5;  // guaranteed violation
  const auto capped = select_weights(x, {}, 2.0, opts);
  CHECK(capped.weights.lind_cap_violated);
  CHECK((capped.weights.a - plain.weights.a).norm() == 0.0);
  opts.lind_cap = plain.weights.lind * 2.0;
  CHECK(!select_weights(x, {}, 2.0, opts).weights.lind_cap_violated);
}

TEST_CASE("oracle matches the closed-form scalar reduction on diag(3,1)") {
  // For X = diag(3,1), K = 0, the path gives A(mu) = diag(min(3,mu), min(1,mu))/d,
  // d = 3 min(3,mu) + min(1,mu); scan mu to get the reference optimum.
  const double b = 1.0;
  double best = std::numeric_limits<double>::infinity();
  for (int i = 1; i <= 400000; ++i) {
    const double mu = 3.0 * i / 400000.0;
    const double o1 = std::min(3.0, mu), o2 = std::min(1.0, mu);
    const double d = 3.0 * o1 + o2;
    const double value = b * b * (o1 / d) * (o1 / d) +
                         (o1 * o1 + o2 * o2) / (d * d);
    best = std::min(best, value);
  }
  const Matrix x = diag_matrix({3.0, 1.0});
  const WeightMatrix direct = oracle_weights_small(x, {}, b);
  CHECK(criterion_mse(b, direct) == doctest::Approx(best).epsilon(1e-5));
  const auto path = select_weights(x, {}, b);
  CHECK(criterion_mse(b, path.weights) == doctest::Approx(best).epsilon(1e-6));
}

TEST_CASE("oracle equals OLS weights at b = 0") {
  const Matrix x = random_matrix(6, 5, 19);
  const std::vector<Matrix> z = {random_matrix(6, 5, 20)};
  const WeightMatrix direct = oracle_weights_small(x, z, 0.0);
  const auto sel = select_weights(x, z, 0.0);
  CHECK((direct.a - sel.weights.a).norm() <= 1e-4 * sel.weights.a.norm());
}

TEST_CASE("oracle agrees with the path selection on small instances") {
  for (std::uint64_t seed : {30u, 31u}) {
    const Matrix x = random_matrix(8, 6, seed);
    for (double b : {1.0, 10.0}) {
      const auto sel = select_weights(x, {}, b);
      const WeightMatrix direct = oracle_weights_small(x, {}, b);
      CHECK(criterion_mse(b, sel.weights) ==
            doctest::Approx(criterion_mse(b, direct)).epsilon(1e-5));
    }
  }
}

TEST_CASE("oracle guards") {
  CHECK_THROWS_WITH_AS(oracle_weights_small(random_matrix(20, 10, 21), {}, 1.0),
                       doctest::Contains("NT <= 100"), DataError);
  // X inside the span of the controls: no feasible weights.
  const Matrix z1 = random_matrix(5, 4, 22);
  CHECK_THROWS_WITH_AS(oracle_weights_small(2.0 * z1, {z1}, 1.0),
                       doctest::Contains("no feasible weights"), NumericError);
}

TEST_CASE("degenerate designs are reported") {
  const Matrix z1 = random_matrix(6, 5, 23);
  CHECK_THROWS_WITH_AS(select_weights(3.0 * z1, {z1}, 1.0),
                       doctest::Contains("degenerate weights"), NumericError);
  CHECK_THROWS_AS(select_weights(Matrix::Zero(4, 4), {}, 1.0), NumericError);
}
