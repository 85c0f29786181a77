#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <optional>
#include <variant>

#include "koopman/basis.hpp"
#include "koopman/plant.hpp"

namespace koopman {

/// Least-squares approximation of the discrete-time Koopman operator on the
/// span of `basis`. Predictions advance as psi(q, u) ~= K^T psi(p, u).
struct KoopmanMatrix {
  Eigen::MatrixXd K;  // M x M
  double ts = 0.0;
  Basis basis;
  double ridge = 0.0;

  /// K^T, the form in which model coefficients are read off.
  Eigen::MatrixXd transpose() const { return K.transpose(); }
};

struct FitOptions {
  /// Absolute Tikhonov weight. Unset selects ridge_factor * trace(Gram) / M.
  std::optional<double> ridge;
  double ridge_factor = 1e-8;
  /// Above this dimension the solve goes through a QR factorization of the
  /// stacked data instead of the Gram matrix.
  int qr_threshold = 200;
};

/// Minimizes sum_k || K^T psi(p_k, u_k) - psi(q_k, u_k) ||^2 + ridge ||K||_F^2.
KoopmanMatrix fit_koopman(const SnapshotDataset& data, const Basis& basis, const FitOptions& options = {});

/// Data matrices with one lifted snapshot per row.
struct LiftedData {
  Eigen::MatrixXd before;  // K x M, rows psi(p_k, u_k)
  Eigen::MatrixXd after;   // K x M, rows psi(q_k, u_k)
};
LiftedData lift_dataset(const SnapshotDataset& data, const Basis& basis);

/// Mean squared regression residual of K on the lifted data.
double training_residual(const KoopmanMatrix& K, const LiftedData& lifted);

struct GeneratorMatrix {
  Eigen::MatrixXd Kc;
  double ts = 0.0;
};

/// Kc = log(K_ts) / ts with the principal logarithm. Refuses matrices with an
/// eigenvalue at zero or on the negative real axis.
GeneratorMatrix continuous_generator(const KoopmanMatrix& K);
GeneratorMatrix continuous_generator(const Eigen::MatrixXd& K_ts, double ts);

/// z+ = A z + B u,  x = C z.
struct ModelLinear {
  Eigen::MatrixXd A;  // N x N
  Eigen::MatrixXd B;  // N x m
  Eigen::MatrixXd C;  // n x N selector
  Basis basis;
  double ts = 0.0;
};

/// z+ = A z + sum_j H_j z u_j + B u,  x = C z.
///
/// The constant * u_j observable of the bilinear dictionary doubles as the
/// projection onto u_j, so its coefficients form column j of B and the
/// corresponding column of H_j is zero.
struct ModelBilinear {
  Eigen::MatrixXd A;
  std::vector<Eigen::MatrixXd> H;
  Eigen::MatrixXd B;
  Eigen::MatrixXd C;
  Basis basis;
  double ts = 0.0;

  /// B + [H_1 z | ... | H_m z].
  Eigen::MatrixXd effective_input(const Eigen::VectorXd& z) const;
};

/// x+ = Crows psi(x, u).
struct ModelNonlinear {
  Eigen::MatrixXd Crows;  // n x M
  Basis basis;
  double ts = 0.0;
};

using Model = std::variant<ModelLinear, ModelBilinear, ModelNonlinear>;

/// n x N matrix picking the leading n observables.
Eigen::MatrixXd output_selector(int n, int N);

ModelLinear extract_linear(const KoopmanMatrix& K);
ModelBilinear extract_bilinear(const KoopmanMatrix& K);
ModelNonlinear extract_nonlinear(const KoopmanMatrix& K);
Model extract_model(const KoopmanMatrix& K);

/// The leading rows of K^T rebuilt from the extracted blocks.
Eigen::MatrixXd reassemble(const ModelLinear& model);
Eigen::MatrixXd reassemble(const ModelBilinear& model);

const Basis& model_basis(const Model& model);
double model_ts(const Model& model);

// Model files: JSON with family, n, m, rho, ts, ordering version, the entry
// list and each matrix as {rows, cols, data (row-major)}.
constexpr int kOrderingVersion = 1;
void write_model(const Model& model, const std::filesystem::path& path);
Model read_model(const std::filesystem::path& path);
std::string model_to_string(const Model& model);
Model model_from_string(const std::string& text);

}  // namespace koopman
