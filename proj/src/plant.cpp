#include "koopman/plant.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "koopman/csv.hpp"

namespace koopman {

void ArmParameters::validate() const {
  require((link_masses.array() > 0).all(), ErrorCode::InvalidArgument, "link masses must be positive");
  require((link_lengths.array() > 0).all(), ErrorCode::InvalidArgument, "link lengths must be positive");
  require((joint_stiffness.array() >= 0).all(), ErrorCode::InvalidArgument, "joint stiffness must be >= 0");
  require((joint_damping.array() >= 0).all(), ErrorCode::InvalidArgument, "joint damping must be >= 0");
  require(std::isfinite(gravity), ErrorCode::InvalidArgument, "gravity must be finite");
}

void ExcitationConfig::validate() const {
  require(torque_amplitude >= 0 && init_angle_range >= 0, ErrorCode::InvalidArgument,
          "excitation amplitudes must be non-negative");
  require(hold_steps >= 1 && episode_length >= 1 && episodes >= 1, ErrorCode::InvalidArgument,
          "excitation step counts must be positive");
}

namespace {

// Kinematic quantities shared by the dynamics terms. For link i the centre of
// mass is c_i = sum_{l<i} L_l e(phi_l) + (L_i/2) e(phi_i) with
// e(phi) = (sin phi, -cos phi) and phi_i the absolute link angle.
struct ChainGeometry {
  Vector3 phi;
  Eigen::Matrix<double, 2, 3> e;        // e(phi_l) per column
  Eigen::Matrix<double, 2, 3> t;        // de/dphi = (cos, sin)
  std::array<Eigen::Matrix<double, 2, 3>, 3> jv;  // d c_i / d theta
  Matrix3 arm;                          // arm(i, l): lever of link l in c_i

  ChainGeometry(const Vector3& theta, const ArmParameters& p) {
    phi << theta(0), theta(0) + theta(1), theta(0) + theta(1) + theta(2);
    for (int l = 0; l < 3; ++l) {
      e.col(l) << std::sin(phi(l)), -std::cos(phi(l));
      t.col(l) << std::cos(phi(l)), std::sin(phi(l));
    }
    arm.setZero();
    for (int i = 0; i < 3; ++i)
      for (int l = 0; l <= i; ++l) arm(i, l) = l < i ? p.link_lengths(l) : 0.5 * p.link_lengths(l);
    for (int i = 0; i < 3; ++i) {
      jv[i].setZero();
      for (int j = 0; j <= i; ++j)
        for (int l = j; l <= i; ++l) jv[i].col(j) += arm(i, l) * t.col(l);
    }
  }
};

Vector3 rod_inertia(const ArmParameters& p) {
  return (p.link_masses.array() * p.link_lengths.array().square() / 12.0).matrix();
}

}  // namespace

Vector6 forward_kinematics(const Vector3& theta, const ArmParameters& params) {
  Vector6 out;
  double phi = 0.0, a = 0.0, b = 0.0;
  for (int i = 0; i < 3; ++i) {
    phi += theta(i);
    a += params.link_lengths(i) * std::sin(phi);
    b -= params.link_lengths(i) * std::cos(phi);
    out(2 * i) = a;
    out(2 * i + 1) = b;
  }
  return out;
}

Matrix3 mass_matrix(const Vector3& theta, const ArmParameters& params) {
  const ChainGeometry g(theta, params);
  const Vector3 inertia = rod_inertia(params);
  Matrix3 M = Matrix3::Zero();
  for (int i = 0; i < 3; ++i) {
    M += params.link_masses(i) * g.jv[i].transpose() * g.jv[i];
    Vector3 jw = Vector3::Zero();
    jw.head(i + 1).setOnes();
    M += inertia(i) * jw * jw.transpose();
  }
  return M;
}

Vector3 coriolis_torque(const Vector3& theta, const Vector3& theta_dot, const ArmParameters& params) {
  const ChainGeometry g(theta, params);
  Vector3 phi_dot;
  phi_dot << theta_dot(0), theta_dot(0) + theta_dot(1), theta_dot.sum();
  Vector3 h = Vector3::Zero();
  for (int i = 0; i < 3; ++i) {
    Eigen::Vector2d bias = Eigen::Vector2d::Zero();
    for (int l = 0; l <= i; ++l) bias -= g.arm(i, l) * phi_dot(l) * phi_dot(l) * g.e.col(l);
    h += params.link_masses(i) * g.jv[i].transpose() * bias;
  }
  return h;
}

Vector3 gravity_torque(const Vector3& theta, const ArmParameters& params) {
  const ChainGeometry g(theta, params);
  Vector3 out = Vector3::Zero();
  for (int i = 0; i < 3; ++i) out += params.link_masses(i) * params.gravity * g.jv[i].row(1).transpose();
  return out;
}

Vector3 arm_acceleration(const PlantState& state, const Vector3& torque, const ArmParameters& params) {
  const Matrix3 M = mass_matrix(state.theta, params);
  const Vector3 rhs = torque - coriolis_torque(state.theta, state.theta_dot, params) -
                      gravity_torque(state.theta, params) -
                      params.joint_stiffness.cwiseProduct(state.theta) -
                      params.joint_damping.cwiseProduct(state.theta_dot);
  const Eigen::LLT<Matrix3> llt(M);
  if (llt.info() != Eigen::Success) throw Error(ErrorCode::Numerical, "arm mass matrix is not positive definite");
  return llt.solve(rhs);
}

PlantState integrate_step(const PlantState& state, const Vector3& torque, double ts, const ArmParameters& params) {
  require(ts > 0, ErrorCode::InvalidArgument, "integrate_step: ts must be positive");
  auto deriv = [&](const PlantState& s) {
    return std::pair<Vector3, Vector3>{s.theta_dot, arm_acceleration(s, torque, params)};
  };
  auto offset = [](const PlantState& s, const std::pair<Vector3, Vector3>& k, double h) {
    return PlantState{s.theta + h * k.first, s.theta_dot + h * k.second};
  };
  const auto k1 = deriv(state);
  const auto k2 = deriv(offset(state, k1, 0.5 * ts));
  const auto k3 = deriv(offset(state, k2, 0.5 * ts));
  const auto k4 = deriv(offset(state, k3, ts));
  PlantState next;
  next.theta = state.theta + ts / 6.0 * (k1.first + 2.0 * k2.first + 2.0 * k3.first + k4.first);
  next.theta_dot = state.theta_dot + ts / 6.0 * (k1.second + 2.0 * k2.second + 2.0 * k3.second + k4.second);
  if (!next.theta.allFinite() || !next.theta_dot.allFinite())
    throw Error(ErrorCode::Divergence, "integrate_step: non-finite state");
  return next;
}

PlantState simulate_interval(const PlantState& state, const Vector3& torque, double ts,
                             const ArmParameters& params, int substeps) {
  require(substeps >= 1, ErrorCode::InvalidArgument, "simulate_interval: substeps must be >= 1");
  PlantState s = state;
  const double h = ts / substeps;
  for (int k = 0; k < substeps; ++k) s = integrate_step(s, torque, h, params);
  return s;
}

double mechanical_energy(const PlantState& state, const ArmParameters& params) {
  const ChainGeometry g(state.theta, params);
  const Vector3 inertia = rod_inertia(params);
  Vector3 phi_dot;
  phi_dot << state.theta_dot(0), state.theta_dot(0) + state.theta_dot(1), state.theta_dot.sum();
  double kinetic = 0.0, potential = 0.0;
  for (int i = 0; i < 3; ++i) {
    const Eigen::Vector2d v = g.jv[i] * state.theta_dot;
    kinetic += 0.5 * params.link_masses(i) * v.squaredNorm() + 0.5 * inertia(i) * phi_dot(i) * phi_dot(i);
    double height = 0.0, hanging = 0.0;
    for (int l = 0; l <= i; ++l) {
      height += g.arm(i, l) * g.e(1, l);
      hanging -= g.arm(i, l);
    }
    potential += params.link_masses(i) * params.gravity * (height - hanging);
  }
  potential += 0.5 * params.joint_stiffness.dot(state.theta.cwiseAbs2());
  return kinetic + potential;
}

int default_substeps(double ts, const ArmParameters& params) {
  // Largest damping pole over a coarse grid of configurations.
  double fastest = 0.0;
  const Matrix3 D = params.joint_damping.asDiagonal();
  for (double a : {0.0, 1.5}) {
    for (double b : {0.0, 1.5, 3.0}) {
      const Matrix3 M = mass_matrix(Vector3(a, b, b), params);
      const Eigen::EigenSolver<Matrix3> es(M.llt().solve(D));
      fastest = std::max(fastest, es.eigenvalues().cwiseAbs().maxCoeff());
    }
  }
  // h * |lambda| <= 0.5 keeps RK4 accurate, not merely stable.
  return std::max(10, static_cast<int>(std::ceil(ts * fastest / 0.5)));
}

namespace {

// Uniform on [-1, 1] from the top 53 bits; identical on every platform.
double symmetric_unit(std::mt19937_64& rng) {
  return 2.0 * static_cast<double>(rng() >> 11) * 0x1.0p-53 - 1.0;
}

std::mt19937_64 episode_rng(std::uint64_t seed, std::uint64_t episode) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(episode), static_cast<std::uint32_t>(episode >> 32)};
  return std::mt19937_64(seq);
}

Vector3 random_vector(std::mt19937_64& rng, double amplitude) {
  Vector3 v;
  for (int i = 0; i < 3; ++i) v(i) = amplitude * symmetric_unit(rng);
  return v;
}

// Runs one random-excitation episode, calling `emit(p, q, u)` per step. A
// diverged episode is restarted from fresh draws of the same generator.
template <typename Emit>
void run_episode(const ArmParameters& params, const ExcitationConfig& ex, int steps, double ts, int substeps,
                 std::mt19937_64& rng, Emit&& emit) {
  for (int attempt = 0; attempt < 100; ++attempt) {
    std::vector<std::tuple<Vector6, Vector6, Vector3>> rows;
    rows.reserve(steps);
    PlantState s;
    s.theta = random_vector(rng, ex.init_angle_range);
    Vector3 torque = Vector3::Zero();
    bool ok = true;
    for (int k = 0; k < steps; ++k) {
      if (k % ex.hold_steps == 0) torque = random_vector(rng, ex.torque_amplitude);
      const Vector6 p = forward_kinematics(s.theta, params);
      try {
        s = simulate_interval(s, torque, ts, params, substeps);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::Divergence) throw;
        ok = false;
        break;
      }
      rows.emplace_back(p, forward_kinematics(s.theta, params), torque);
    }
    if (!ok) continue;
    for (const auto& [p, q, u] : rows) emit(p, q, u);
    return;
  }
  throw Error(ErrorCode::Divergence, "arm simulation diverged repeatedly");
}

}  // namespace

SnapshotDataset collect_snapshots(const ArmParameters& params, const ExcitationConfig& excitation,
                                  std::int64_t count, double ts, std::uint64_t seed) {
  params.validate();
  excitation.validate();
  require(count >= 1, ErrorCode::InvalidArgument, "collect_snapshots: count must be >= 1");
  require(ts > 0, ErrorCode::InvalidArgument, "collect_snapshots: ts must be positive");
  SnapshotDataset data;
  data.ts = ts;
  data.seed = seed;
  data.params = params;
  data.snapshots.reserve(static_cast<std::size_t>(count));
  const int substeps = default_substeps(ts, params);
  for (std::uint64_t episode = 0; static_cast<std::int64_t>(data.snapshots.size()) < count; ++episode) {
    auto rng = episode_rng(seed, episode);
    const auto remaining = count - static_cast<std::int64_t>(data.snapshots.size());
    const int steps = static_cast<int>(std::min<std::int64_t>(excitation.episode_length, remaining));
    run_episode(params, excitation, steps, ts, substeps, rng,
                [&](const Vector6& p, const Vector6& q, const Vector3& u) {
                  data.snapshots.push_back({p, q, u});
                });
  }
  return data;
}

std::vector<Trajectory> collect_trajectories(const ArmParameters& params, const ExcitationConfig& excitation,
                                             int episodes, int steps, double ts, std::uint64_t seed) {
  params.validate();
  excitation.validate();
  require(episodes >= 1 && steps >= 1, ErrorCode::InvalidArgument, "collect_trajectories: empty request");
  const int substeps = default_substeps(ts, params);
  std::vector<Trajectory> out(episodes);
  for (int e = 0; e < episodes; ++e) {
    auto rng = episode_rng(seed, static_cast<std::uint64_t>(e));
    auto& traj = out[e];
    run_episode(params, excitation, steps, ts, substeps, rng,
                [&](const Vector6& p, const Vector6& q, const Vector3& u) {
                  if (traj.outputs.empty()) traj.outputs.push_back(p);
                  traj.outputs.push_back(q);
                  traj.inputs.push_back(u);
                });
  }
  return out;
}

std::filesystem::path metadata_path(const std::filesystem::path& csv) {
  auto p = csv;
  p += ".meta.json";
  return p;
}

void write_snapshots_csv(const SnapshotDataset& data, const std::filesystem::path& path) {
  const int n = data.n(), m = data.m();
  std::ostringstream out;
  out << 'k';
  for (int i = 1; i <= n; ++i) out << ",p" << i;
  for (int i = 1; i <= n; ++i) out << ",q" << i;
  for (int i = 1; i <= m; ++i) out << ",u" << i;
  out << '\n';
  for (std::size_t k = 0; k < data.snapshots.size(); ++k) {
    const auto& s = data.snapshots[k];
    out << k;
    for (int i = 0; i < n; ++i) out << ',' << csv::format(s.p(i));
    for (int i = 0; i < n; ++i) out << ',' << csv::format(s.q(i));
    for (int i = 0; i < m; ++i) out << ',' << csv::format(s.u(i));
    out << '\n';
  }
  csv::write_atomic(path, out.str());
}

namespace {
nlohmann::json vec_json(const Vector3& v) { return {v(0), v(1), v(2)}; }
Vector3 json_vec(const nlohmann::json& j) {
  require(j.is_array() && j.size() == 3, ErrorCode::Parse, "expected a 3-vector");
  return Vector3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}
}  // namespace

void write_snapshots_metadata(const SnapshotDataset& data, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["ts"] = data.ts;
  j["seed"] = data.seed;
  j["count"] = data.snapshots.size();
  j["n"] = data.n();
  j["m"] = data.m();
  if (data.params) {
    const auto& p = *data.params;
    j["params"] = {{"link_masses", vec_json(p.link_masses)},
                   {"link_lengths", vec_json(p.link_lengths)},
                   {"joint_stiffness", vec_json(p.joint_stiffness)},
                   {"joint_damping", vec_json(p.joint_damping)},
                   {"gravity", p.gravity}};
  }
  csv::write_atomic(path, j.dump(2) + "\n");
}

SnapshotDataset read_snapshots(const std::filesystem::path& path) {
  const auto table = csv::read(path);
  int n = 0, m = 0;
  while (table.column("p" + std::to_string(n + 1)) >= 0) ++n;
  while (table.column("u" + std::to_string(m + 1)) >= 0) ++m;
  require(n >= 1 && table.column("q" + std::to_string(n)) >= 0, ErrorCode::Parse,
          path.string() + ": not a snapshot CSV");
  const int p0 = table.column("p1"), q0 = table.column("q1"), u0 = m > 0 ? table.column("u1") : 0;
  SnapshotDataset data;
  for (const auto& row : table.rows) {
    Snapshot s{Eigen::VectorXd(n), Eigen::VectorXd(n), Eigen::VectorXd(m)};
    for (int i = 0; i < n; ++i) {
      s.p(i) = row[p0 + i];
      s.q(i) = row[q0 + i];
    }
    for (int i = 0; i < m; ++i) s.u(i) = row[u0 + i];
    data.snapshots.push_back(std::move(s));
  }
  const auto meta = metadata_path(path);
  if (std::filesystem::exists(meta)) {
    std::ifstream in(meta);
    nlohmann::json j;
    try {
      in >> j;
      data.ts = j.at("ts").get<double>();
      data.seed = j.at("seed").get<std::uint64_t>();
      if (j.contains("params")) {
        const auto& pj = j["params"];
        ArmParameters p;
        p.link_masses = json_vec(pj.at("link_masses"));
        p.link_lengths = json_vec(pj.at("link_lengths"));
        p.joint_stiffness = json_vec(pj.at("joint_stiffness"));
        p.joint_damping = json_vec(pj.at("joint_damping"));
        p.gravity = pj.at("gravity").get<double>();
        data.params = p;
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::Parse, meta.string() + ": " + e.what());
    }
  }
  return data;
}

}  // namespace koopman
