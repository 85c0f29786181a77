#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "koopman/error.hpp"

namespace koopman {

using Vector3 = Eigen::Vector3d;
using Vector6 = Eigen::Matrix<double, 6, 1>;
using Matrix3 = Eigen::Matrix3d;

/// Physical parameters of the 3-link planar arm. Links are uniform thin rods.
struct ArmParameters {
  Vector3 link_masses = Vector3::Constant(0.1);       // kg
  Vector3 link_lengths = Vector3::Constant(0.33);     // m
  Vector3 joint_stiffness = Vector3::Constant(1e-5);  // N m / rad, pulls toward theta = 0
  Vector3 joint_damping = Vector3::Constant(1.0);     // N m s / rad
  double gravity = 9.81;                              // m / s^2

  void validate() const;
  double reach() const { return link_lengths.sum(); }
};

/// Joint angles are relative to the previous link; zero is the hanging pose.
struct PlantState {
  Vector3 theta = Vector3::Zero();
  Vector3 theta_dot = Vector3::Zero();
};

/// Link-end positions (alpha1, beta1, alpha2, beta2, alpha3, beta3).
Vector6 forward_kinematics(const Vector3& theta, const ArmParameters& params);

/// Joint-space mass matrix M(theta).
Matrix3 mass_matrix(const Vector3& theta, const ArmParameters& params);
/// Velocity-product torques C(theta, theta_dot) theta_dot.
Vector3 coriolis_torque(const Vector3& theta, const Vector3& theta_dot, const ArmParameters& params);
/// Gravity torques dV/dtheta.
Vector3 gravity_torque(const Vector3& theta, const ArmParameters& params);

/// Solves M theta_ddot = tau - C theta_dot - g - K theta - D theta_dot.
Vector3 arm_acceleration(const PlantState& state, const Vector3& torque, const ArmParameters& params);

/// One classical RK4 step of length ts with the torque held.
PlantState integrate_step(const PlantState& state, const Vector3& torque, double ts, const ArmParameters& params);

/// Advances by ts using `substeps` RK4 steps.
PlantState simulate_interval(const PlantState& state, const Vector3& torque, double ts,
                             const ArmParameters& params, int substeps);

/// Kinetic + gravitational + spring energy; zero at the hanging rest state.
double mechanical_energy(const PlantState& state, const ArmParameters& params);

/// RK4 substeps per sampling period. The arm is stiff: with unit damping and
/// ~1e-3 kg m^2 inertia its fast pole is near -1e3/s, so the substep must stay
/// well inside the RK4 stability region.
int default_substeps(double ts, const ArmParameters& params);

/// Output before the step, output after the step, input held in between.
struct Snapshot {
  Eigen::VectorXd p;
  Eigen::VectorXd q;
  Eigen::VectorXd u;
};

struct SnapshotDataset {
  double ts = 0.05;
  std::uint64_t seed = 0;
  std::optional<ArmParameters> params;  // absent for data not produced by the arm
  std::vector<Snapshot> snapshots;

  int n() const { return snapshots.empty() ? 0 : static_cast<int>(snapshots.front().p.size()); }
  int m() const { return snapshots.empty() ? 0 : static_cast<int>(snapshots.front().u.size()); }
};

struct ExcitationConfig {
  double torque_amplitude = 0.6;  // N m
  int hold_steps = 20;
  double init_angle_range = 0.5;  // rad
  int episode_length = 200;
  int episodes = 60;

  void validate() const;
};

/// Deterministic randomized data collection. Episodes start at rest from
/// uniform random angles and are driven by uniform random torques held for
/// hold_steps samples. Exactly `count` snapshots are returned.
SnapshotDataset collect_snapshots(const ArmParameters& params, const ExcitationConfig& excitation,
                                  std::int64_t count, double ts, std::uint64_t seed);

/// An open-loop trajectory of the arm under piecewise-constant torques.
struct Trajectory {
  std::vector<Eigen::VectorXd> outputs;  // length steps + 1
  std::vector<Eigen::VectorXd> inputs;   // length steps
};

/// Random-excitation trajectories used for validation. Each episode is driven
/// by its own generator derived from (seed, episode).
std::vector<Trajectory> collect_trajectories(const ArmParameters& params, const ExcitationConfig& excitation,
                                             int episodes, int steps, double ts, std::uint64_t seed);

void write_snapshots_csv(const SnapshotDataset& data, const std::filesystem::path& csv);
/// Sidecar with ts, seed and arm parameters, written next to the CSV.
void write_snapshots_metadata(const SnapshotDataset& data, const std::filesystem::path& json);
SnapshotDataset read_snapshots(const std::filesystem::path& csv);
std::filesystem::path metadata_path(const std::filesystem::path& csv);

}  // namespace koopman
