#include "koopman/mpc.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

#include "koopman/csv.hpp"

namespace koopman {

void MpcConfig::validate() const {
  require(horizon >= 1, ErrorCode::InvalidArgument, "mpc: horizon must be >= 1");
  require(weight_ee > 0 && weight_u > 0, ErrorCode::InvalidArgument, "mpc: weights must be positive");
  require(ts > 0, ErrorCode::InvalidArgument, "mpc: ts must be positive");
  require(nmpc_max_iters >= 1 && nmpc_damping >= 0, ErrorCode::InvalidArgument, "mpc: invalid K-NMPC settings");
}

std::vector<int> MpcConfig::tracked_outputs(int n) const {
  if (!tracked.empty()) {
    for (int i : tracked) require(i >= 0 && i < n, ErrorCode::DimensionMismatch, "mpc: tracked output out of range");
    return tracked;
  }
  if (n < 2) {
    std::vector<int> all(n);
    for (int i = 0; i < n; ++i) all[i] = i;
    return all;
  }
  return {n - 2, n - 1};
}

// -- references --

std::vector<Eigen::Vector2d> block_m_vertices(double scale, const Eigen::Vector2d& center) {
  const double h = 0.5 * scale;
  return {center + Eigen::Vector2d(-h, -h), center + Eigen::Vector2d(-h, h), center,
          center + Eigen::Vector2d(h, h), center + Eigen::Vector2d(h, -h)};
}

ReferenceTrajectory polyline_reference(const std::vector<Eigen::Vector2d>& vertices, double duration, double ts,
                                       double reach) {
  require(!vertices.empty(), ErrorCode::InvalidArgument, "reference: empty polyline");
  require(duration > 0 && ts > 0, ErrorCode::InvalidArgument, "reference: duration and ts must be positive");
  const auto count = static_cast<std::size_t>(std::llround(duration / ts));
  require(count >= 1, ErrorCode::InvalidArgument, "reference: duration shorter than one sample");

  std::vector<double> cumulative{0.0};
  for (std::size_t i = 1; i < vertices.size(); ++i)
    cumulative.push_back(cumulative.back() + (vertices[i] - vertices[i - 1]).norm());
  const double length = cumulative.back();
  const double speed = length / duration;

  ReferenceTrajectory ref{{}, duration, ts};
  ref.samples.reserve(count);
  std::size_t seg = 1;
  for (std::size_t k = 0; k < count; ++k) {
    const double s = std::min(length, speed * ts * static_cast<double>(k));
    Eigen::Vector2d point = vertices.front();
    if (length > 0) {
      while (seg + 1 < vertices.size() && cumulative[seg] < s) ++seg;
      const double span = cumulative[seg] - cumulative[seg - 1];
      const double w = span > 0 ? (s - cumulative[seg - 1]) / span : 0.0;
      point = vertices[seg - 1] + w * (vertices[seg] - vertices[seg - 1]);
    }
    require(point.norm() <= reach + 1e-12, ErrorCode::Domain, "reference: sample outside the reachable disk");
    ref.samples.push_back(point);
  }
  return ref;
}

ReferenceTrajectory block_m_reference(double scale, const Eigen::Vector2d& center, double duration, double ts,
                                      double reach) {
  auto vertices = block_m_vertices(scale, center);
  const Eigen::Vector2d hanging(0.0, -reach);
  if ((vertices.back() - hanging).norm() < (vertices.front() - hanging).norm())
    std::reverse(vertices.begin(), vertices.end());
  return polyline_reference(vertices, duration, ts, reach);
}

ReferenceTrajectory block_m_reference(const BlockMSpec& spec, double ts) {
  return block_m_reference(spec.scale, spec.center, spec.duration, ts);
}

std::vector<Eigen::Vector2d> read_polyline_csv(const std::filesystem::path& path) {
  const auto table = csv::read(path);
  const int xc = table.column("x"), yc = table.column("y");
  require(xc >= 0 && yc >= 0, ErrorCode::Parse, path.string() + ": expected columns x,y");
  std::vector<Eigen::Vector2d> out;
  for (const auto& row : table.rows) out.emplace_back(row[xc], row[yc]);
  require(!out.empty(), ErrorCode::Parse, path.string() + ": no vertices");
  return out;
}

Sequence reference_window(const ReferenceTrajectory& ref, std::size_t k, int horizon) {
  require(!ref.samples.empty(), ErrorCode::InvalidArgument, "reference: no samples");
  Sequence out;
  out.reserve(horizon);
  for (int t = 1; t <= horizon; ++t) out.push_back(ref.samples[std::min(k + t, ref.samples.size() - 1)]);
  return out;
}

// -- condensed quadratic MPC --

namespace {

Eigen::MatrixXd tracked_rows(const Eigen::MatrixXd& C, const std::vector<int>& tracked) {
  Eigen::MatrixXd out(tracked.size(), C.cols());
  for (std::size_t i = 0; i < tracked.size(); ++i) out.row(i) = C.row(tracked[i]);
  return out;
}

Eigen::VectorXd stack(const Sequence& seq) {
  if (seq.empty()) return {};
  const auto d = seq.front().size();
  Eigen::VectorXd out(d * static_cast<Eigen::Index>(seq.size()));
  for (std::size_t t = 0; t < seq.size(); ++t) out.segment(d * t, d) = seq[t];
  return out;
}

Sequence unstack(const Eigen::VectorXd& v, Eigen::Index d) {
  Sequence out;
  for (Eigen::Index t = 0; d > 0 && t < v.size() / d; ++t) out.push_back(v.segment(t * d, d));
  return out;
}

void check_refs(const Sequence& refs, std::size_t p, const MpcConfig& cfg) {
  require(refs.size() >= static_cast<std::size_t>(cfg.horizon), ErrorCode::InvalidArgument,
          "mpc: reference window shorter than the horizon");
  for (int t = 0; t < cfg.horizon; ++t)
    require(static_cast<std::size_t>(refs[t].size()) == p, ErrorCode::DimensionMismatch,
            "mpc: reference dimension does not match tracked outputs");
}

MpcSolution solve_condensed(const CondensedPrediction& pred, const Eigen::VectorXd& z0, const Sequence& refs,
                            const MpcConfig& cfg) {
  Sequence window(refs.begin(), refs.begin() + cfg.horizon);
  const Eigen::VectorXd R = stack(window);
  const Eigen::Index nu = pred.Gamma.cols();
  const Eigen::VectorXd free_response = pred.Phi * z0;
  Eigen::MatrixXd hessian = cfg.weight_ee * pred.Gamma.transpose() * pred.Gamma;
  hessian.diagonal().array() += cfg.weight_u;
  const Eigen::VectorXd rhs = cfg.weight_ee * pred.Gamma.transpose() * (R - free_response);
  const Eigen::LLT<Eigen::MatrixXd> llt(hessian);
  if (llt.info() != Eigen::Success) throw Error(ErrorCode::Numerical, "mpc: reduced Hessian is not positive definite");
  MpcSolution sol;
  const Eigen::VectorXd U = llt.solve(rhs);
  sol.inputs = unstack(U, nu / cfg.horizon);
  const Eigen::VectorXd residual = free_response + pred.Gamma * U - R;
  sol.cost = cfg.weight_ee * residual.squaredNorm() + cfg.weight_u * U.squaredNorm();
  sol.iterations = 1;
  sol.ok = U.allFinite();
  return sol;
}

void check_powers(const OutputPowers& powers, const Eigen::MatrixXd& A, std::size_t p, const MpcConfig& cfg) {
  require(powers.horizon() == cfg.horizon, ErrorCode::DimensionMismatch,
          "mpc: output powers built for a different horizon");
  require(static_cast<std::size_t>(powers.CtA.front().rows()) == p && powers.CtA.front().cols() == A.rows(),
          ErrorCode::DimensionMismatch, "mpc: output powers do not match the model");
}

}  // namespace

OutputPowers output_powers(const Eigen::MatrixXd& A, const Eigen::MatrixXd& Ct, int horizon) {
  require(horizon >= 1, ErrorCode::InvalidArgument, "mpc: horizon must be positive");
  require(A.rows() == A.cols() && Ct.cols() == A.rows(), ErrorCode::DimensionMismatch,
          "mpc: inconsistent model dimensions");
  OutputPowers out;
  out.CtA.resize(horizon + 1);
  out.CtA[0] = Ct;
  for (int k = 1; k <= horizon; ++k) out.CtA[k].noalias() = out.CtA[k - 1] * A;
  return out;
}

CondensedPrediction condense(const OutputPowers& powers, const Eigen::MatrixXd& B) {
  const int horizon = powers.horizon();
  require(horizon >= 1 && B.rows() == powers.CtA.front().cols(), ErrorCode::DimensionMismatch,
          "mpc: inconsistent model dimensions");
  const Eigen::Index p = powers.CtA.front().rows(), N = B.rows(), m = B.cols();
  std::vector<Eigen::MatrixXd> markov(horizon);
  for (int k = 0; k < horizon; ++k) markov[k].noalias() = powers.CtA[k] * B;

  CondensedPrediction out{Eigen::MatrixXd(p * horizon, N), Eigen::MatrixXd::Zero(p * horizon, m * horizon)};
  for (int t = 1; t <= horizon; ++t) {
    out.Phi.middleRows(p * (t - 1), p) = powers.CtA[t];
    for (int k = 0; k < t; ++k) out.Gamma.block(p * (t - 1), m * k, p, m) = markov[t - 1 - k];
  }
  return out;
}

CondensedPrediction condense(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, const Eigen::MatrixXd& Ct,
                             int horizon) {
  require(B.rows() == A.rows(), ErrorCode::DimensionMismatch, "mpc: inconsistent model dimensions");
  return condense(output_powers(A, Ct, horizon), B);
}

double lifted_linear_cost(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, const Eigen::MatrixXd& Ct,
                          const Eigen::VectorXd& z0, const Sequence& refs, const Sequence& inputs,
                          const MpcConfig& cfg) {
  Eigen::VectorXd z = z0;
  double cost = 0.0;
  for (int t = 0; t < cfg.horizon; ++t) {
    z = A * z + B * inputs[t];
    cost += cfg.weight_ee * (Ct * z - refs[t]).squaredNorm() + cfg.weight_u * inputs[t].squaredNorm();
  }
  return cost;
}

MpcSolution solve_kmpc(const ModelLinear& model, const OutputPowers& powers, const Eigen::VectorXd& x_now,
                       const Sequence& refs, const MpcConfig& cfg) {
  cfg.validate();
  const auto tracked = cfg.tracked_outputs(model.basis.n());
  check_refs(refs, tracked.size(), cfg);
  check_powers(powers, model.A, tracked.size(), cfg);
  return solve_condensed(condense(powers, model.B), model.basis.lift_state(x_now), refs, cfg);
}

MpcSolution solve_kmpc(const ModelLinear& model, const Eigen::VectorXd& x_now, const Sequence& refs,
                       const MpcConfig& cfg) {
  cfg.validate();
  const auto powers = output_powers(model.A, tracked_rows(model.C, cfg.tracked_outputs(model.basis.n())), cfg.horizon);
  return solve_kmpc(model, powers, x_now, refs, cfg);
}

MpcSolution solve_kbmpc(const ModelBilinear& model, const OutputPowers& powers, const Eigen::VectorXd& x_now,
                        const Sequence& refs, const MpcConfig& cfg) {
  cfg.validate();
  const auto tracked = cfg.tracked_outputs(model.basis.n());
  check_refs(refs, tracked.size(), cfg);
  check_powers(powers, model.A, tracked.size(), cfg);
  const Eigen::VectorXd z0 = model.basis.lift_state(x_now);
  return solve_condensed(condense(powers, model.effective_input(z0)), z0, refs, cfg);
}

MpcSolution solve_kbmpc(const ModelBilinear& model, const Eigen::VectorXd& x_now, const Sequence& refs,
                        const MpcConfig& cfg) {
  cfg.validate();
  const auto powers = output_powers(model.A, tracked_rows(model.C, cfg.tracked_outputs(model.basis.n())), cfg.horizon);
  return solve_kbmpc(model, powers, x_now, refs, cfg);
}

// -- nonlinear MPC --

namespace {

struct NonlinearProblem {
  const ModelNonlinear& model;
  Eigen::VectorXd x_now;
  Sequence refs;
  MpcConfig cfg;
  std::vector<int> tracked;

  int n() const { return model.basis.n(); }
  int m() const { return model.basis.m(); }
  int p() const { return static_cast<int>(tracked.size()); }

  /// Stacked residual [sqrt(w_ee)(y_t - r_t); sqrt(w_u) u_t]; fills the
  /// Jacobian when requested. Returns false on a non-finite rollout.
  bool residual(const Eigen::VectorXd& U, Eigen::VectorXd& r, Eigen::MatrixXd* J) const {
    const int H = cfg.horizon, nn = n(), mm = m(), pp = p();
    const double se = std::sqrt(cfg.weight_ee), su = std::sqrt(cfg.weight_u);
    r.resize(pp * H + mm * H);
    if (J) J->setZero(pp * H + mm * H, mm * H);
    Eigen::VectorXd x = x_now;
    Eigen::MatrixXd sens = Eigen::MatrixXd::Zero(nn, mm * H);  // dx_t / dU
    Eigen::VectorXd psi;
    Eigen::MatrixXd dx, du;
    for (int t = 0; t < H; ++t) {
      const Eigen::VectorXd u = U.segment(mm * t, mm);
      if (J) {
        model.basis.lift_with_jacobians(x, u, psi, dx, du);
        const Eigen::MatrixXd gx = model.Crows * dx;  // n x n
        Eigen::MatrixXd next = gx * sens.leftCols(mm * t);
        sens.leftCols(mm * t) = next;
        sens.middleCols(mm * t, mm) = model.Crows * du;
      } else {
        psi = model.basis.lift(x, u);
      }
      x = model.Crows * psi;
      if (!x.allFinite()) return false;
      for (int i = 0; i < pp; ++i) {
        r(pp * t + i) = se * (x(tracked[i]) - refs[t](i));
        if (J) J->row(pp * t + i).head(mm * (t + 1)) = se * sens.row(tracked[i]).head(mm * (t + 1));
      }
    }
    r.tail(mm * H) = su * U;
    if (J) J->bottomRows(mm * H).diagonal().setConstant(su);
    return r.allFinite();
  }
};

NonlinearProblem make_problem(const ModelNonlinear& model, const Eigen::VectorXd& x_now, const Sequence& refs,
                              const MpcConfig& cfg) {
  cfg.validate();
  require(x_now.size() == model.basis.n(), ErrorCode::DimensionMismatch, "knmpc: state dimension mismatch");
  const auto tracked = cfg.tracked_outputs(model.basis.n());
  check_refs(refs, tracked.size(), cfg);
  return {model, x_now, Sequence(refs.begin(), refs.begin() + cfg.horizon), cfg, tracked};
}

}  // namespace

double nonlinear_cost(const ModelNonlinear& model, const Eigen::VectorXd& x_now, const Sequence& refs,
                      const Sequence& inputs, const MpcConfig& cfg) {
  const auto problem = make_problem(model, x_now, refs, cfg);
  Eigen::VectorXd r;
  if (!problem.residual(stack(inputs), r, nullptr)) return std::numeric_limits<double>::infinity();
  return r.squaredNorm();
}

Eigen::VectorXd nonlinear_cost_gradient(const ModelNonlinear& model, const Eigen::VectorXd& x_now,
                                        const Sequence& refs, const Sequence& inputs, const MpcConfig& cfg) {
  const auto problem = make_problem(model, x_now, refs, cfg);
  Eigen::VectorXd r;
  Eigen::MatrixXd J;
  if (!problem.residual(stack(inputs), r, &J)) throw Error(ErrorCode::Divergence, "knmpc: non-finite rollout");
  return 2.0 * J.transpose() * r;
}

MpcSolution solve_knmpc(const ModelNonlinear& model, const Eigen::VectorXd& x_now, const Sequence& refs,
                        const Sequence& warm_start, const MpcConfig& cfg) {
  const auto problem = make_problem(model, x_now, refs, cfg);
  const int mm = problem.m(), nu = mm * cfg.horizon;
  Eigen::VectorXd U = Eigen::VectorXd::Zero(nu);
  for (int t = 0; t < cfg.horizon && t < static_cast<int>(warm_start.size()); ++t) U.segment(mm * t, mm) = warm_start[t];

  MpcSolution sol;
  Eigen::VectorXd r;
  Eigen::MatrixXd J;
  if (!problem.residual(U, r, &J)) {
    sol.inputs = unstack(U, mm);
    sol.ok = false;
    sol.cost = std::numeric_limits<double>::infinity();
    return sol;
  }
  double cost = r.squaredNorm();
  sol.cost_history.push_back(cost);
  double lambda = std::max(cfg.nmpc_damping, 1e-12);
  Eigen::VectorXd grad = J.transpose() * r;
  Eigen::VectorXd trial_r;
  Eigen::MatrixXd trial_J;
  int iter = 0;
  for (; iter < cfg.nmpc_max_iters; ++iter) {
    if (2.0 * grad.norm() < 1e-8) break;
    Eigen::MatrixXd normal = J.transpose() * J;
    normal.diagonal().array() += lambda;
    const Eigen::VectorXd step = normal.llt().solve(-grad);
    const Eigen::VectorXd trial = U + step;
    if (problem.residual(trial, trial_r, &trial_J) && trial_r.squaredNorm() < cost) {
      U = trial;
      r.swap(trial_r);
      J.swap(trial_J);
      cost = r.squaredNorm();
      grad = J.transpose() * r;
      sol.cost_history.push_back(cost);
      lambda = std::max(lambda * 0.3, std::max(cfg.nmpc_damping, 1e-12));
    } else {
      lambda *= 10.0;
      if (lambda > 1e12) break;
    }
  }
  sol.inputs = unstack(U, mm);
  sol.cost = cost;
  sol.iterations = iter;
  sol.gradient_norm = 2.0 * grad.norm();
  return sol;
}

// -- closed loop --

std::string_view to_string(ControllerKind kind) {
  switch (kind) {
    case ControllerKind::KMpc: return "kmpc";
    case ControllerKind::KBMpc: return "kbmpc";
    case ControllerKind::KNMpc: return "knmpc";
  }
  return "unknown";
}

ControllerKind parse_controller(std::string_view name) {
  if (name == "kmpc") return ControllerKind::KMpc;
  if (name == "kbmpc") return ControllerKind::KBMpc;
  if (name == "knmpc") return ControllerKind::KNMpc;
  throw Error(ErrorCode::InvalidArgument, "unknown controller '" + std::string(name) + "'");
}

ControlLog run_closed_loop(const ArmParameters& params, ControllerKind kind, const Model& model,
                           const ReferenceTrajectory& ref, const MpcConfig& cfg) {
  params.validate();
  cfg.validate();
  const Basis& basis = model_basis(model);
  require(basis.n() == 6 && basis.m() == 3, ErrorCode::DimensionMismatch,
          "closed loop: model must map 6 arm outputs and 3 torques");
  const bool matches = (kind == ControllerKind::KMpc && std::holds_alternative<ModelLinear>(model)) ||
                       (kind == ControllerKind::KBMpc && std::holds_alternative<ModelBilinear>(model)) ||
                       (kind == ControllerKind::KNMpc && std::holds_alternative<ModelNonlinear>(model));
  require(matches, ErrorCode::InvalidArgument,
          "closed loop: controller " + std::string(to_string(kind)) + " cannot use a " +
              std::string(to_string(basis.family())) + " model");

  const int substeps = default_substeps(cfg.ts, params);
  OutputPowers powers;
  if (const auto* lin = std::get_if<ModelLinear>(&model))
    powers = output_powers(lin->A, tracked_rows(lin->C, cfg.tracked_outputs(6)), cfg.horizon);
  else if (const auto* bil = std::get_if<ModelBilinear>(&model))
    powers = output_powers(bil->A, tracked_rows(bil->C, cfg.tracked_outputs(6)), cfg.horizon);
  ControlLog log;
  PlantState state;
  Sequence warm(cfg.horizon, Eigen::VectorXd::Zero(basis.m()));
  double error_sum = 0.0, time_sum = 0.0;
  for (std::size_t k = 0; k < ref.samples.size(); ++k) {
    const Vector6 x = forward_kinematics(state.theta, params);
    const Sequence window = reference_window(ref, k, cfg.horizon);

    MpcSolution sol;
    const auto start = std::chrono::steady_clock::now();
    try {
      switch (kind) {
        case ControllerKind::KMpc: sol = solve_kmpc(std::get<ModelLinear>(model), powers, x, window, cfg); break;
        case ControllerKind::KBMpc: sol = solve_kbmpc(std::get<ModelBilinear>(model), powers, x, window, cfg); break;
        case ControllerKind::KNMpc: sol = solve_knmpc(std::get<ModelNonlinear>(model), x, window, warm, cfg); break;
      }
    } catch (const Error&) {
      sol.ok = false;
    }
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    ControlStep step;
    step.t = static_cast<double>(k) * cfg.ts;
    step.ref = ref.samples[k];
    step.ee = x.tail<2>();
    step.error = (step.ee - step.ref).norm();
    step.solve_time = elapsed;
    if (sol.ok && !sol.inputs.empty() && sol.inputs.front().allFinite()) {
      step.u = sol.inputs.front();
      warm.assign(sol.inputs.begin() + 1, sol.inputs.end());
      warm.push_back(Eigen::VectorXd::Zero(basis.m()));
    } else {
      step.u = Eigen::VectorXd::Zero(basis.m());
      step.flag = 1;
    }
    error_sum += step.error;
    time_sum += step.solve_time;

    try {
      state = simulate_interval(state, step.u, cfg.ts, params, substeps);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::Divergence) throw;
      log.steps.push_back(std::move(step));
      throw Error(ErrorCode::Divergence, "closed loop: plant diverged at step " + std::to_string(k));
    }
    log.steps.push_back(std::move(step));
  }
  if (!log.steps.empty()) {
    log.mean_error = error_sum / static_cast<double>(log.steps.size());
    log.mean_solve_time = time_sum / static_cast<double>(log.steps.size());
  }
  return log;
}

std::string control_log_csv(const ControlLog& log, bool include_timing) {
  std::ostringstream out;
  out << "t,ref_x,ref_y,ee_x,ee_y,err,u1,u2,u3,solve_time,flag\n";
  for (const auto& s : log.steps) {
    out << csv::format(s.t) << ',' << csv::format(s.ref.x()) << ',' << csv::format(s.ref.y()) << ','
        << csv::format(s.ee.x()) << ',' << csv::format(s.ee.y()) << ',' << csv::format(s.error);
    for (Eigen::Index i = 0; i < s.u.size(); ++i) out << ',' << csv::format(s.u(i));
    out << ',' << csv::format(include_timing ? s.solve_time : 0.0) << ',' << s.flag << '\n';
  }
  out << "# mean_error=" << csv::format(log.mean_error)
      << ",mean_solve_time=" << csv::format(include_timing ? log.mean_solve_time : 0.0) << '\n';
  return out.str();
}

}  // namespace koopman
