#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <string>
#include <vector>

#include "koopman/koopman_id.hpp"

namespace koopman {

using Sequence = std::vector<Eigen::VectorXd>;

/// Ground-truth outputs x_true[0..T] under inputs u_seq[0..T-1].
struct PredictionEpisode {
  Eigen::VectorXd x0;
  Sequence u_seq;
  Sequence x_true;

  void validate() const;
};

/// Open-loop rollout returning x[0..T]. Linear and bilinear models roll out in
/// the lifted space from z[0] = psi(x0); the nonlinear model re-lifts each step.
Sequence simulate_model(const ModelLinear& model, const Eigen::VectorXd& x0, const Sequence& u_seq);
Sequence simulate_model(const ModelBilinear& model, const Eigen::VectorXd& x0, const Sequence& u_seq);
Sequence simulate_model(const ModelNonlinear& model, const Eigen::VectorXd& x0, const Sequence& u_seq);
Sequence simulate_model(const Model& model, const Eigen::VectorXd& x0, const Sequence& u_seq);

/// One-step prediction from a measured output.
Eigen::VectorXd predict_step(const Model& model, const Eigen::VectorXd& x, const Eigen::VectorXd& u);

struct ErrorReport {
  double raw_mean_error = 0.0;     // mean ||x_pred - x_true|| over predicted steps
  double baseline_error = 0.0;     // same mean for the identically-zero predictor
  double normalized_error = 0.0;   // raw / baseline
  double raw_one_step_error = 0.0;
  double normalized_one_step_error = 0.0;
  std::vector<double> per_step;    // mean error at horizon step t = 1..T
};

/// Errors are averaged over steps 1..T of every episode (step 0 is the given
/// initial condition).
ErrorReport prediction_error(const Model& model, const std::vector<PredictionEpisode>& episodes);

std::vector<PredictionEpisode> to_episodes(const std::vector<Trajectory>& trajectories);

/// Episode CSV: `episode,t,x1..xn,u1..um`; the inputs of the final row of each
/// episode are ignored.
void write_episodes_csv(const std::vector<PredictionEpisode>& episodes, const std::filesystem::path& path);
std::vector<PredictionEpisode> read_episodes_csv(const std::filesystem::path& path);

struct ErrorRow {
  std::string model;
  Family family;
  int rho;
  int M;
  ErrorReport report;
};

/// `model,family,rho,M,raw_error,normalized_error,raw_error_1step,normalized_error_1step`
std::string error_report_csv(const std::vector<ErrorRow>& rows);

}  // namespace koopman
