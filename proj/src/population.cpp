#include "rscavity/population.hpp"

#include <cmath>
#include <string>

#include "rscavity/error.hpp"

namespace rscavity {

namespace {

Eigen::MatrixXd gaussian_matrix(int rows, int cols, Rng& rng)
{
  Eigen::MatrixXd G(rows, cols);
  // row-major fill order is part of the reproducibility contract
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) G(i, j) = standard_normal(rng);
  return G;
}

void check_spd_shape(const Eigen::MatrixXd& A)
{
  if (A.rows() == 0 || A.rows() != A.cols())
    throw InvalidArgument("covariance must be a non-empty square matrix");
}

}  // namespace

Eigen::MatrixXd PopulationSpec::sqrt_A0() const
{
  if (rotation.size() > 0 && eigenvalues.size() == p)
    return rotation * eigenvalues.cwiseSqrt().asDiagonal() * rotation.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A0);
  return es.operatorSqrt();
}

Eigen::MatrixXd sample_haar_orthogonal(int p, Rng& rng)
{
  if (p < 1) throw InvalidArgument("sample_haar_orthogonal: dimension must be >= 1");
  Eigen::MatrixXd G = gaussian_matrix(p, p, rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(G);
  Eigen::MatrixXd Q = qr.householderQ();
  const Eigen::MatrixXd& R = qr.matrixQR();
  for (int j = 0; j < p; ++j)
    if (R(j, j) < 0.0) Q.col(j) = -Q.col(j);
  return Q;
}

PopulationSpec build_population(int p, EigSupport support, double S_target, Rng& rng)
{
  if (p < 1) throw InvalidArgument("build_population: dimension must be >= 1");
  if (!(S_target > 0.0)) throw InvalidArgument("build_population: S_target must be positive");
  if (!(support.lo > 0.0) || support.hi < support.lo)
    throw InvalidArgument("build_population: eigenvalue support must be a non-empty subset of (0, inf)");

  PopulationSpec spec;
  spec.p = p;
  spec.rotation = sample_haar_orthogonal(p, rng);
  Eigen::VectorXd lambda(p);
  for (int i = 0; i < p; ++i) lambda(i) = support.lo + (support.hi - support.lo) * uniform01(rng);

  // beta0 = e1, so beta0 . A0 beta0 = sum_k O(0,k)^2 lambda_k
  double quad = spec.rotation.row(0).array().square().matrix().dot(lambda);
  spec.scale = S_target * S_target / quad;
  spec.eigenvalues = spec.scale * lambda;
  spec.A0 = spec.rotation * spec.eigenvalues.asDiagonal() * spec.rotation.transpose();
  spec.A0 = 0.5 * (spec.A0 + spec.A0.transpose());

  spec.beta0 = Eigen::VectorXd::Unit(p, 0);
  spec.S = std::sqrt(spec.beta0.dot(spec.A0 * spec.beta0));
  spec.S0 = 1.0;
  spec.alpha2 = spec.eigenvalues.cwiseInverse().mean();
  return spec;
}

PopulationSpec population_from_covariance(const Eigen::MatrixXd& A0, const Eigen::VectorXd& beta0)
{
  check_spd_shape(A0);
  if (beta0.size() != A0.rows()) throw InvalidArgument("beta0 dimension does not match A0");
  PopulationSpec spec;
  spec.p = static_cast<int>(A0.rows());
  spec.A0 = A0;
  spec.beta0 = beta0;
  spec.S = std::sqrt(beta0.dot(A0 * beta0));
  spec.S0 = beta0.norm();
  spec.alpha2 = alpha_squared(A0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A0);
  spec.rotation = es.eigenvectors();
  spec.eigenvalues = es.eigenvalues();
  return spec;
}

double alpha_squared(const Eigen::MatrixXd& A0)
{
  check_spd_shape(A0);
  Eigen::LLT<Eigen::MatrixXd> llt(A0);
  if (llt.info() != Eigen::Success) throw SingularMatrixError("alpha_squared: matrix is not positive definite");
  const auto& L = llt.matrixL();
  double dmin = L.toDenseMatrix().diagonal().cwiseAbs().minCoeff();
  double dmax = L.toDenseMatrix().diagonal().cwiseAbs().maxCoeff();
  if (!(dmin > 1e-150) || dmin / dmax < 1e-15) throw SingularMatrixError("alpha_squared: matrix is singular");
  // Tr(A^{-1}) = |L^{-1}|_F^2
  Eigen::MatrixXd Linv = L.solve(Eigen::MatrixXd::Identity(A0.rows(), A0.cols()));
  return Linv.squaredNorm() / static_cast<double>(A0.rows());
}

Eigen::MatrixXd sample_covariates(int n, const PopulationSpec& spec, Rng& rng)
{
  if (n < 1) throw InvalidArgument("sample_covariates: n must be >= 1");
  if (spec.A0.rows() != spec.p) throw InvalidArgument("sample_covariates: malformed PopulationSpec");
  Eigen::MatrixXd G = gaussian_matrix(n, spec.p, rng);
  return G * spec.sqrt_A0();  // sqrt is symmetric
}

void to_json(nlohmann::json& j, const PopulationSpec& spec)
{
  auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < spec.A0.rows(); ++i) {
    Eigen::VectorXd r = spec.A0.row(i).transpose();
    rows.push_back(vec(r));
  }
  j = nlohmann::json{{"p", spec.p},
                     {"eigenvalues", vec(spec.eigenvalues)},
                     {"scale", spec.scale},
                     {"A0", rows},
                     {"beta0", vec(spec.beta0)},
                     {"S", spec.S},
                     {"S0", spec.S0},
                     {"alpha2", spec.alpha2}};
  if (spec.seed) j["seed"] = *spec.seed;
}

void from_json(const nlohmann::json& j, PopulationSpec& spec)
{
  auto rows = j.at("A0").get<std::vector<std::vector<double>>>();
  auto b = j.at("beta0").get<std::vector<double>>();
  Eigen::MatrixXd A(rows.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows.size()) throw InvalidArgument("PopulationSpec JSON: A0 is not square");
    for (std::size_t k = 0; k < rows.size(); ++k) A(i, k) = rows[i][k];
  }
  spec = population_from_covariance(A, Eigen::Map<Eigen::VectorXd>(b.data(), b.size()));
  if (j.contains("scale")) spec.scale = j.at("scale").get<double>();
  if (j.contains("seed")) spec.seed = j.at("seed").get<std::uint64_t>();
}

}  // namespace rscavity
