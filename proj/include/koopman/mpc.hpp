#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <string>
#include <vector>

#include "koopman/koopman_id.hpp"
#include "koopman/plant.hpp"
#include "koopman/realization.hpp"

namespace koopman {

struct MpcConfig {
  int horizon = 10;
  double weight_ee = 1.0;
  double weight_u = 1e-3;
  double ts = 0.05;
  int nmpc_max_iters = 30;
  double nmpc_damping = 1e-6;
  /// Output components penalized against the reference. Empty selects the
  /// last two outputs (the end effector of the arm), or all outputs if n < 2.
  std::vector<int> tracked;

  void validate() const;
  std::vector<int> tracked_outputs(int n) const;
};

struct ReferenceTrajectory {
  std::vector<Eigen::Vector2d> samples;
  double duration = 0.0;
  double ts = 0.0;
};

/// Corners of a block letter M of width and height `scale` centred on
/// `center`, in stroke order from the lower-left corner.
std::vector<Eigen::Vector2d> block_m_vertices(double scale, const Eigen::Vector2d& center);

/// Constant-speed traversal of a polyline: sample k sits at arc length
/// k * ts * (length / duration). duration / ts samples are produced.
ReferenceTrajectory polyline_reference(const std::vector<Eigen::Vector2d>& vertices, double duration, double ts,
                                       double reach = 0.99);

/// Block-M reference starting at whichever end of the letter lies nearest the
/// hanging end-effector position (0, -reach).
ReferenceTrajectory block_m_reference(double scale, const Eigen::Vector2d& center, double duration, double ts,
                                      double reach = 0.99);

/// Default letter geometry for the tracking benchmark: a 0.2 m letter
/// centred below the shoulder, well inside the 0.99 m reach, traced in 15 s.
struct BlockMSpec {
  double scale = 0.2;
  Eigen::Vector2d center{0.0, -0.8};
  double duration = 15.0;
};

ReferenceTrajectory block_m_reference(const BlockMSpec& spec, double ts);

/// Polyline vertices from a CSV with columns x,y.
std::vector<Eigen::Vector2d> read_polyline_csv(const std::filesystem::path& path);

/// Tracking references for the horizon after sample k, holding the final sample.
Sequence reference_window(const ReferenceTrajectory& ref, std::size_t k, int horizon);

/// Condensed lifted prediction Y = Phi z0 + Gamma U of the tracked outputs.
struct CondensedPrediction {
  Eigen::MatrixXd Phi;    // (p Nh) x N
  Eigen::MatrixXd Gamma;  // (p Nh) x (m Nh)
};

CondensedPrediction condense(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, const Eigen::MatrixXd& tracked_C,
                             int horizon);

/// tracked_C * A^k for k = 0..horizon. Independent of the state and input
/// matrix, so a controller builds it once per model.
struct OutputPowers {
  std::vector<Eigen::MatrixXd> CtA;
  int horizon() const { return static_cast<int>(CtA.size()) - 1; }
};

OutputPowers output_powers(const Eigen::MatrixXd& A, const Eigen::MatrixXd& tracked_C, int horizon);
CondensedPrediction condense(const OutputPowers& powers, const Eigen::MatrixXd& B);

struct MpcSolution {
  Sequence inputs;   // horizon inputs, apply the first
  double cost = 0.0;
  bool ok = true;
  int iterations = 0;
  double gradient_norm = 0.0;
  std::vector<double> cost_history;  // accepted iterates (K-NMPC)
};

/// Quadratic MPC cost of U under the lifted linear recursion (A, B).
double lifted_linear_cost(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, const Eigen::MatrixXd& tracked_C,
                          const Eigen::VectorXd& z0, const Sequence& refs, const Sequence& inputs,
                          const MpcConfig& cfg);

/// Unconstrained quadratic MPC on a lifted linear model; one SPD solve.
MpcSolution solve_kmpc(const ModelLinear& model, const Eigen::VectorXd& x_now, const Sequence& refs,
                       const MpcConfig& cfg);

/// K-MPC on the linearization that freezes the lifted state in the bilinear
/// terms at z0 = psi(x_now): input matrix B + [H_1 z0 | ... | H_m z0].
MpcSolution solve_kbmpc(const ModelBilinear& model, const Eigen::VectorXd& x_now, const Sequence& refs,
                        const MpcConfig& cfg);

/// Same solves with output powers precomputed by output_powers(A, C_tracked, horizon).
MpcSolution solve_kmpc(const ModelLinear& model, const OutputPowers& powers, const Eigen::VectorXd& x_now,
                       const Sequence& refs, const MpcConfig& cfg);
MpcSolution solve_kbmpc(const ModelBilinear& model, const OutputPowers& powers, const Eigen::VectorXd& x_now,
                        const Sequence& refs, const MpcConfig& cfg);

/// Cost of U under the re-lifted nonlinear rollout.
double nonlinear_cost(const ModelNonlinear& model, const Eigen::VectorXd& x_now, const Sequence& refs,
                      const Sequence& inputs, const MpcConfig& cfg);

/// Gradient of nonlinear_cost with respect to the stacked inputs, from the
/// analytic forward sensitivities.
Eigen::VectorXd nonlinear_cost_gradient(const ModelNonlinear& model, const Eigen::VectorXd& x_now,
                                        const Sequence& refs, const Sequence& inputs, const MpcConfig& cfg);

/// Single-shooting Levenberg-Marquardt (damped Gauss-Newton) from a warm start.
/// Converges to a local minimizer only.
MpcSolution solve_knmpc(const ModelNonlinear& model, const Eigen::VectorXd& x_now, const Sequence& refs,
                        const Sequence& warm_start, const MpcConfig& cfg);

enum class ControllerKind { KMpc, KBMpc, KNMpc };
std::string_view to_string(ControllerKind kind);
ControllerKind parse_controller(std::string_view name);

struct ControlStep {
  double t = 0.0;
  Eigen::Vector2d ref;
  Eigen::Vector2d ee;
  double error = 0.0;
  Eigen::VectorXd u;
  double solve_time = 0.0;  // seconds, solver call only
  int flag = 0;             // 1 when the controller failed and zero torque was applied
};

struct ControlLog {
  std::vector<ControlStep> steps;
  double mean_error = 0.0;
  double mean_solve_time = 0.0;
};

/// Closed loop on the simulated arm from the hanging state, one control step
/// per reference sample. Only the solver call is timed.
ControlLog run_closed_loop(const ArmParameters& params, ControllerKind kind, const Model& model,
                           const ReferenceTrajectory& ref, const MpcConfig& cfg);

/// `t,ref_x,ref_y,ee_x,ee_y,err,u1,u2,u3,solve_time,flag` rows plus a
/// trailing `# mean_error=...,mean_solve_time=...` summary line.
std::string control_log_csv(const ControlLog& log, bool include_timing = true);

}  // namespace koopman
