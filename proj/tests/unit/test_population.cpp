#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "rscavity/error.hpp"
#include "rscavity/population.hpp"

using namespace rscavity;

TEST_CASE("haar orthogonal: orthogonality and p = 1")
{
  Rng rng = make_stream(11);
  for (int p : {1, 2, 5, 40}) {
    const Eigen::MatrixXd O = sample_haar_orthogonal(p, rng);
    CHECK((O.transpose() * O - Eigen::MatrixXd::Identity(p, p)).cwiseAbs().maxCoeff() <= 1e-12);
  }
  int plus = 0;
  for (int k = 0; k < 2000; ++k) {
    const Eigen::MatrixXd O = sample_haar_orthogonal(1, rng);
    CHECK(std::abs(std::abs(O(0, 0)) - 1.0) < 1e-15);
    plus += O(0, 0) > 0;
  }
  CHECK(plus > 900);
  CHECK(plus < 1100);
  CHECK_THROWS_AS(sample_haar_orthogonal(0, rng), InvalidArgument);
}

TEST_CASE("haar orthogonal: first column uniform on the sphere (p = 3)")
{
  // On S^2 each coordinate is Uniform[-1, 1]; Kolmogorov-Smirnov at 1%.
  Rng rng = make_stream(12);
  const int m = 10000;
  std::vector<std::vector<double>> coords(3);
  for (int k = 0; k < m; ++k) {
    const Eigen::MatrixXd O = sample_haar_orthogonal(3, rng);
    for (int i = 0; i < 3; ++i) coords[i].push_back(O(i, 0));
  }
  for (auto& c : coords) {
    std::sort(c.begin(), c.end());
    double D = 0.0;
    for (int k = 0; k < m; ++k) {
      const double F = 0.5 * (c[k] + 1.0);
      D = std::max({D, std::abs(F - double(k) / m), std::abs(double(k + 1) / m - F)});
    }
    CHECK(D * std::sqrt(double(m)) < 1.628);  // p-value > 0.01
  }
}

TEST_CASE("build_population: S, alpha2, spectrum")
{
  Rng rng = make_stream(13);
  const PopulationSpec s = build_population(100, {}, 1.0, rng);
  CHECK(std::abs(s.S - 1.0) <= 1e-12);
  CHECK(std::abs(std::sqrt(s.beta0.dot(s.A0 * s.beta0)) - 1.0) <= 1e-12);
  CHECK(s.beta0 == Eigen::VectorXd::Unit(100, 0));
  CHECK(s.S0 == 1.0);
  CHECK((s.A0 - s.A0.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * s.A0.cwiseAbs().maxCoeff());
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s.A0);
  CHECK(es.eigenvalues().minCoeff() >= s.scale * 0.1 * (1 - 1e-10));
  CHECK(es.eigenvalues().maxCoeff() <= s.scale * 10.0 * (1 + 1e-10));

  Rng rng2 = make_stream(14);
  const PopulationSpec t = build_population(50, {}, 1.3, rng2);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> et(t.A0);
  const double oracle = et.eigenvalues().cwiseInverse().mean();
  CHECK(std::abs(t.alpha2 - oracle) <= 1e-12 * oracle);
  CHECK(std::abs(t.S - 1.3) <= 1e-12);
}

TEST_CASE("build_population: isotropic support and errors")
{
  Rng rng = make_stream(15);
  const PopulationSpec s = build_population(2, {1.0, 1.0}, 2.0, rng);
  CHECK((s.A0 - 4.0 * Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(std::abs(s.S - 2.0) <= 1e-12);
  CHECK_THROWS_AS(build_population(3, {}, 0.0, rng), InvalidArgument);
  CHECK_THROWS_AS(build_population(3, {1.0, 0.5}, 1.0, rng), InvalidArgument);
}

TEST_CASE("alpha_squared")
{
  CHECK(alpha_squared(Eigen::MatrixXd::Identity(7, 7)) == doctest::Approx(1.0).epsilon(1e-15));
  Eigen::MatrixXd D = Eigen::Vector2d(2.0, 0.5).asDiagonal();
  CHECK(alpha_squared(D) == doctest::Approx(1.25).epsilon(1e-14));

  Rng rng = make_stream(16);
  Eigen::MatrixXd G(30, 30);
  for (int i = 0; i < 30; ++i)
    for (int j = 0; j < 30; ++j) G(i, j) = standard_normal(rng);
  const Eigen::MatrixXd A = G * G.transpose() / 30.0 + 0.5 * Eigen::MatrixXd::Identity(30, 30);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
  const double oracle = es.eigenvalues().cwiseInverse().mean();
  CHECK(std::abs(alpha_squared(A) - oracle) <= 1e-10 * oracle);
  // scaling law
  for (double c : {0.1, 3.0, 17.5})
    CHECK(std::abs(alpha_squared(c * A) - alpha_squared(A) / c) <= 1e-12 * alpha_squared(A) / c);

  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(3, 3);
  S(0, 0) = 1.0;
  CHECK_THROWS_AS(alpha_squared(S), SingularMatrixError);
}

TEST_CASE("sample_covariates: covariance, determinism, whitening")
{
  {
    Rng rng = make_stream(17);
    const PopulationSpec I = population_from_covariance(Eigen::MatrixXd::Identity(3, 3), Eigen::Vector3d(1, 0, 0));
    const Eigen::MatrixXd X = sample_covariates(10000, I, rng);
    for (int j = 0; j < 3; ++j) CHECK(std::abs(X.col(j).squaredNorm() / 10000.0 - 1.0) < 0.05);
  }
  {
    Eigen::Matrix2d A;
    A << 1.0, 0.5, 0.5, 1.0;
    const PopulationSpec s = population_from_covariance(A, Eigen::Vector2d(1, 0));
    Rng rng = make_stream(18);
    const int n = 100000;
    const Eigen::MatrixXd X = sample_covariates(n, s, rng);
    const Eigen::Matrix2d C = X.transpose() * X / double(n);
    CHECK(std::abs(C(0, 1) / std::sqrt(C(0, 0) * C(1, 1)) - 0.5) < 0.03);
    // entrywise within 5 standard errors: var(x_i x_j) = A_ii A_jj + A_ij^2
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j)
        CHECK(std::abs(C(i, j) - A(i, j)) < 5.0 * std::sqrt((A(i, i) * A(j, j) + A(i, j) * A(i, j)) / n));
    // whitening: A0^{-1/2} x has identity covariance
    const Eigen::MatrixXd W = s.sqrt_A0().inverse();
    const Eigen::MatrixXd Z = X * W.transpose();
    const Eigen::Matrix2d CZ = Z.transpose() * Z / double(n);
    CHECK((CZ - Eigen::Matrix2d::Identity()).cwiseAbs().maxCoeff() < 0.02);
  }
  {
    Rng a = make_stream(19), b = make_stream(19);
    Rng c = make_stream(20);
    const PopulationSpec pa = build_population(10, {}, 1.0, a);
    const PopulationSpec pb = build_population(10, {}, 1.0, b);
    CHECK(pa.A0 == pb.A0);
    CHECK(sample_covariates(50, pa, a) == sample_covariates(50, pb, b));
    CHECK(build_population(10, {}, 1.0, c).A0 != pa.A0);
  }
}

TEST_CASE("population JSON round trip")
{
  Rng rng = make_stream(21);
  const PopulationSpec s = build_population(6, {}, 1.0, rng);
  const nlohmann::json j = s;
  for (const char* k : {"p", "eigenvalues", "beta0", "S", "S0", "alpha2"}) CHECK(j.contains(k));
  const PopulationSpec r = j.get<PopulationSpec>();
  CHECK((r.A0 - s.A0).cwiseAbs().maxCoeff() == 0.0);
  CHECK(r.alpha2 == doctest::Approx(s.alpha2).epsilon(1e-14));
}

TEST_CASE("rng streams are path dependent and reproducible")
{
  Rng a = make_stream(5, {1, 2}), b = make_stream(5, {1, 2}), c = make_stream(5, {2, 1});
  const auto x = a(), y = b(), z = c();
  CHECK(x == y);
  CHECK(x != z);
  for (int k = 0; k < 1000; ++k) {
    const double u = uniform01(a);
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(standard_exponential(a) > 0.0);
  }
}
