#include "koopman/koopman_id.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <complex>
#include <limits>

namespace koopman {

LiftedData lift_dataset(const SnapshotDataset& data, const Basis& basis) {
  require(!data.snapshots.empty(), ErrorCode::InvalidArgument, "fit_koopman: dataset is empty");
  require(data.n() == basis.n() && data.m() == basis.m(), ErrorCode::DimensionMismatch,
          "fit_koopman: snapshot dimensions (" + std::to_string(data.n()) + ", " + std::to_string(data.m()) +
              ") do not match basis (" + std::to_string(basis.n()) + ", " + std::to_string(basis.m()) + ")");
  const auto rows = static_cast<Eigen::Index>(data.snapshots.size());
  LiftedData out{Eigen::MatrixXd(rows, basis.size()), Eigen::MatrixXd(rows, basis.size())};
  for (Eigen::Index k = 0; k < rows; ++k) {
    const auto& s = data.snapshots[static_cast<std::size_t>(k)];
    out.before.row(k) = basis.lift(s.p, s.u).transpose();
    out.after.row(k) = basis.lift(s.q, s.u).transpose();
  }
  return out;
}

double training_residual(const KoopmanMatrix& K, const LiftedData& lifted) {
  return (lifted.before * K.K - lifted.after).squaredNorm() / static_cast<double>(lifted.before.rows());
}

KoopmanMatrix fit_koopman(const SnapshotDataset& data, const Basis& basis, const FitOptions& options) {
  const LiftedData lifted = lift_dataset(data, basis);
  const Eigen::Index M = basis.size();
  const Eigen::MatrixXd gram = lifted.before.transpose() * lifted.before;
  const double ridge = options.ridge.value_or(options.ridge_factor * gram.trace() / static_cast<double>(M));
  require(ridge >= 0 && std::isfinite(ridge) && options.ridge_factor >= 0, ErrorCode::InvalidArgument,
          "fit_koopman: ridge must be >= 0");

  if (ridge == 0.0) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(lifted.before);
    if (qr.rank() < M)
      throw Error(ErrorCode::RankDeficient, "fit_koopman: lifted data has rank " + std::to_string(qr.rank()) +
                                                " < " + std::to_string(M) + "; use ridge > 0");
    return {qr.solve(lifted.after), data.ts, basis, ridge};
  }

  Eigen::MatrixXd K;
  if (M <= options.qr_threshold) {
    Eigen::MatrixXd regularized = gram;
    regularized.diagonal().array() += ridge;
    const Eigen::LLT<Eigen::MatrixXd> llt(regularized);
    if (llt.info() != Eigen::Success) throw Error(ErrorCode::Numerical, "fit_koopman: Gram factorization failed");
    K = llt.solve(lifted.before.transpose() * lifted.after);
  } else {
    const Eigen::Index rows = lifted.before.rows();
    Eigen::MatrixXd stacked(rows + M, M);
    stacked << lifted.before, std::sqrt(ridge) * Eigen::MatrixXd::Identity(M, M);
    Eigen::MatrixXd target(rows + M, M);
    target << lifted.after, Eigen::MatrixXd::Zero(M, M);
    K = stacked.householderQr().solve(target);
  }
  if (!K.allFinite()) throw Error(ErrorCode::Numerical, "fit_koopman: non-finite solution");
  return {std::move(K), data.ts, basis, ridge};
}

GeneratorMatrix continuous_generator(const KoopmanMatrix& K) { return continuous_generator(K.K, K.ts); }

GeneratorMatrix continuous_generator(const Eigen::MatrixXd& K_ts, double ts) {
  require(K_ts.rows() == K_ts.cols(), ErrorCode::DimensionMismatch, "continuous_generator: matrix is not square");
  require(ts > 0, ErrorCode::InvalidArgument, "continuous_generator: ts must be positive");
  constexpr double kAxisTol = 1e-12;

  const Eigen::EigenSolver<Eigen::MatrixXd> es(K_ts);
  if (es.info() != Eigen::Success) throw Error(ErrorCode::Numerical, "continuous_generator: eigensolver failed");
  const Eigen::VectorXcd lambda = es.eigenvalues();
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    const auto l = lambda(i);
    if (std::abs(l) <= kAxisTol || (l.real() < 0 && std::abs(l.imag()) <= kAxisTol))
      throw Error(ErrorCode::Domain, "continuous_generator: eigenvalue (" + std::to_string(l.real()) + ", " +
                                         std::to_string(l.imag()) +
                                         ") outside the principal logarithm domain");
  }

  const double norm = K_ts.norm();
  auto round_trip_error = [&](const Eigen::MatrixXd& log_k) {
    const Eigen::MatrixXd back = log_k.exp();
    return (back - K_ts).norm() / norm;
  };

  const Eigen::MatrixXcd V = es.eigenvectors();
  const Eigen::PartialPivLU<Eigen::MatrixXcd> lu(V);
  Eigen::MatrixXd log_k = (V * lambda.array().log().matrix().asDiagonal() * lu.inverse()).real();
  double err = log_k.allFinite() ? round_trip_error(log_k) : std::numeric_limits<double>::infinity();
  if (err > 1e-10) {
    // Ill-conditioned eigenvectors: try the Schur-Parlett logarithm and keep the better one.
    const Eigen::MatrixXd schur_log = K_ts.log();
    const double schur_err =
        schur_log.allFinite() ? round_trip_error(schur_log) : std::numeric_limits<double>::infinity();
    if (schur_err < err) {
      log_k = schur_log;
      err = schur_err;
    }
  }
  if (!(err <= 1e-8))
    throw Error(ErrorCode::Numerical, "continuous_generator: logarithm did not reproduce the matrix");
  return {log_k / ts, ts};
}

Eigen::MatrixXd output_selector(int n, int N) {
  require(n <= N, ErrorCode::DimensionMismatch, "output_selector: n exceeds lifted dimension");
  Eigen::MatrixXd C = Eigen::MatrixXd::Zero(n, N);
  C.leftCols(n).setIdentity();
  return C;
}

namespace {
void require_family(const KoopmanMatrix& K, Family family, const char* op) {
  require(K.basis.family() == family, ErrorCode::InvalidArgument,
          std::string(op) + ": basis family is " + std::string(to_string(K.basis.family())));
  require(K.K.rows() == K.basis.size() && K.K.cols() == K.basis.size(), ErrorCode::DimensionMismatch,
          std::string(op) + ": Koopman matrix does not match basis dimension");
}
}  // namespace

ModelLinear extract_linear(const KoopmanMatrix& K) {
  require_family(K, Family::Linear, "extract_linear");
  const int N = K.basis.state_dimension(), m = K.basis.m();
  const Eigen::MatrixXd Kt = K.transpose();
  return {Kt.topLeftCorner(N, N), Kt.block(0, N, N, m), output_selector(K.basis.n(), N), K.basis, K.ts};
}

ModelBilinear extract_bilinear(const KoopmanMatrix& K) {
  require_family(K, Family::Bilinear, "extract_bilinear");
  const int N = K.basis.state_dimension(), m = K.basis.m(), c = K.basis.constant_index();
  const Eigen::MatrixXd Kt = K.transpose();
  ModelBilinear model{Kt.topLeftCorner(N, N), {}, Eigen::MatrixXd(N, m), output_selector(K.basis.n(), N),
                      K.basis, K.ts};
  for (int j = 0; j < m; ++j) {
    Eigen::MatrixXd H = Kt.block(0, N * (j + 1), N, N);
    model.B.col(j) = H.col(c);
    H.col(c).setZero();
    model.H.push_back(std::move(H));
  }
  return model;
}

ModelNonlinear extract_nonlinear(const KoopmanMatrix& K) {
  require_family(K, Family::Nonlinear, "extract_nonlinear");
  return {K.transpose().topRows(K.basis.n()), K.basis, K.ts};
}

Model extract_model(const KoopmanMatrix& K) {
  switch (K.basis.family()) {
    case Family::Linear: return extract_linear(K);
    case Family::Bilinear: return extract_bilinear(K);
    case Family::Nonlinear: return extract_nonlinear(K);
  }
  throw Error(ErrorCode::InvalidArgument, "extract_model: unknown family");
}

Eigen::MatrixXd reassemble(const ModelLinear& model) {
  Eigen::MatrixXd out(model.A.rows(), model.A.cols() + model.B.cols());
  out << model.A, model.B;
  return out;
}

Eigen::MatrixXd reassemble(const ModelBilinear& model) {
  const Eigen::Index N = model.A.rows();
  const auto m = static_cast<Eigen::Index>(model.H.size());
  const int c = model.basis.constant_index();
  Eigen::MatrixXd out(N, N * (m + 1));
  out.leftCols(N) = model.A;
  for (Eigen::Index j = 0; j < m; ++j) {
    out.middleCols(N * (j + 1), N) = model.H[j];
    out.col(N * (j + 1) + c) = model.B.col(j);
  }
  return out;
}

Eigen::MatrixXd ModelBilinear::effective_input(const Eigen::VectorXd& z) const {
  Eigen::MatrixXd Bt = B;
  for (std::size_t j = 0; j < H.size(); ++j) Bt.col(static_cast<Eigen::Index>(j)) += H[j] * z;
  return Bt;
}

const Basis& model_basis(const Model& model) {
  return std::visit([](const auto& m) -> const Basis& { return m.basis; }, model);
}

double model_ts(const Model& model) {
  return std::visit([](const auto& m) { return m.ts; }, model);
}

}  // namespace koopman
