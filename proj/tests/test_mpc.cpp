#include <doctest.h>

#include <koopman/mpc.hpp>

#include <chrono>
#include <cmath>

#include "support.hpp"

using namespace koopman;

namespace {

Sequence constant_refs(const Eigen::VectorXd& r, int horizon) { return Sequence(horizon, r); }

// Affine plant x+ = Ad x + c + Bd u written both as a lifted linear model on
// (x, 1 | u) and as a nonlinear-family model on psi = (x, u, 1).
struct AffinePair {
  ModelLinear linear;
  ModelNonlinear nonlinear;
};

AffinePair affine_pair(std::mt19937_64& rng, int n, int m) {
  const Eigen::MatrixXd Ad = test::uniform_matrix(rng, n, n, -0.4, 0.4), Bd = test::uniform_matrix(rng, n, m);
  const Eigen::VectorXd c = test::uniform(rng, n, -0.1, 0.1);
  Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n + 1, n + 1), B = Eigen::MatrixXd::Zero(n + 1, m);
  A.topLeftCorner(n, n) = Ad;
  A.topRightCorner(n, 1) = c;
  B.topRows(n) = Bd;
  Eigen::MatrixXd Crows(n, n + 1 + m);
  Crows << Ad, Bd, c;
  return {{A, B, output_selector(n, n + 1), Basis({Family::Linear, n, m, 1}), 0.05},
          {Crows, Basis({Family::Nonlinear, n, m, 1}), 0.05}};
}

// Quadratic nonlinear-family model with mild coefficients.
ModelNonlinear quadratic_model(std::mt19937_64& rng, int n, int m) {
  const Basis basis({Family::Nonlinear, n, m, 2});
  Eigen::MatrixXd Crows = test::uniform_matrix(rng, n, basis.size(), -0.1, 0.1);
  Crows.leftCols(n) += 0.8 * Eigen::MatrixXd::Identity(n, n);
  return {Crows, basis, 0.05};
}

ModelLinear random_lifted(std::mt19937_64& rng, int n, int m, int rho) {
  const Basis basis({Family::Linear, n, m, rho});
  const int N = basis.state_dimension();
  return {test::uniform_matrix(rng, N, N, -0.25, 0.25), test::uniform_matrix(rng, N, m), output_selector(n, N), basis, 0.05};
}

Eigen::MatrixXd tracked_C(const ModelLinear& model, const MpcConfig& cfg) {
  const auto tracked = cfg.tracked_outputs(model.basis.n());
  Eigen::MatrixXd out(tracked.size(), model.C.cols());
  for (std::size_t i = 0; i < tracked.size(); ++i) out.row(i) = model.C.row(tracked[i]);
  return out;
}

}  // namespace

TEST_CASE("block_m_reference") {
  SUBCASE("sample count") {
    CHECK(block_m_reference(0.2, {0.0, -0.8}, 15.0, 0.05).samples.size() == 300);
    CHECK(block_m_reference(BlockMSpec{}, 0.05).samples.size() == 300);
  }
  SUBCASE("degenerate letter holds the centre") {
    const auto ref = block_m_reference(0.0, {0.1, -0.7}, 2.0, 0.05);
    for (const auto& s : ref.samples) CHECK(s == Eigen::Vector2d(0.1, -0.7));
  }
  SUBCASE("constant speed along the letter") {
    const double duration = 15.0, ts = 0.05;
    const auto ref = block_m_reference(0.3, {0.05, -0.6}, duration, ts);
    auto vertices = block_m_vertices(0.3, {0.05, -0.6});
    if ((ref.samples.front() - vertices.front()).norm() > 1e-12) std::reverse(vertices.begin(), vertices.end());
    REQUIRE((ref.samples.front() - vertices.front()).norm() < 1e-12);
    // Arc-length position of a point on the polyline by segment search.
    auto arc = [&](const Eigen::Vector2d& p) {
      double before = 0.0;
      for (std::size_t i = 1; i < vertices.size(); ++i) {
        const Eigen::Vector2d a = vertices[i - 1], d = vertices[i] - a;
        const double t = (p - a).dot(d) / d.squaredNorm();
        if (t >= -1e-12 && t <= 1 + 1e-12 && (a + t * d - p).norm() < 1e-12) return before + t * d.norm();
        before += d.norm();
      }
      return -1.0;
    };
    double length = 0.0;
    for (std::size_t i = 1; i < vertices.size(); ++i) length += (vertices[i] - vertices[i - 1]).norm();
    const double step = length / duration * ts;
    double worst = 0.0;
    for (std::size_t k = 1; k < ref.samples.size(); ++k)
      worst = std::max(worst, std::abs(arc(ref.samples[k]) - arc(ref.samples[k - 1]) - step));
    CHECK(worst < 1e-9);
  }
  SUBCASE("starts at the end nearest the hanging position") {
    const auto ref = block_m_reference(0.2, {0.3, -0.7}, 15.0, 0.05);
    const auto v = block_m_vertices(0.2, {0.3, -0.7});
    const Eigen::Vector2d hanging(0, -0.99);
    const Eigen::Vector2d nearest = (v.front() - hanging).norm() <= (v.back() - hanging).norm() ? v.front() : v.back();
    CHECK((ref.samples.front() - nearest).norm() < 1e-15);
  }
  SUBCASE("out-of-reach geometry") {
    try {
      block_m_reference(0.4, {0.0, -0.9}, 15.0, 0.05);
      FAIL("expected a domain error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::Domain);
    }
  }
  SUBCASE("window holds the final sample") {
    const auto ref = block_m_reference(0.2, {0.0, -0.8}, 1.0, 0.05);
    const Sequence w = reference_window(ref, ref.samples.size() - 3, 10);
    REQUIRE(w.size() == 10);
    CHECK(w[0] == ref.samples[ref.samples.size() - 2]);
    for (std::size_t t = 1; t < w.size(); ++t) CHECK(w[t] == ref.samples.back());
  }
}

TEST_CASE("solve_kmpc") {
  std::mt19937_64 rng(1);
  MpcConfig cfg;

  SUBCASE("free response reference needs no input") {
    const ModelLinear model = random_lifted(rng, 3, 2, 2);
    const Eigen::VectorXd x = test::uniform(rng, 3);
    const Eigen::MatrixXd Ct = tracked_C(model, cfg);
    Eigen::VectorXd z = model.basis.lift_state(x);
    Sequence refs;
    for (int t = 0; t < cfg.horizon; ++t) {
      z = model.A * z;
      refs.push_back(Ct * z);
    }
    const auto sol = solve_kmpc(model, x, refs, cfg);
    for (const auto& u : sol.inputs) CHECK(u.norm() < 1e-12);
    CHECK(sol.cost < 1e-20);
  }

  SUBCASE("input weight shrinks the solution monotonically") {
    const ModelLinear model = random_lifted(rng, 3, 2, 2);
    const Eigen::VectorXd x = test::uniform(rng, 3);
    const Sequence refs = constant_refs(test::uniform(rng, 2), cfg.horizon);
    double previous = std::numeric_limits<double>::infinity();
    for (double w : {1e-3, 1.0, 1e3}) {
      cfg.weight_u = w;
      double norm = 0.0;
      for (const auto& u : solve_kmpc(model, x, refs, cfg).inputs) norm += u.squaredNorm();
      CHECK(norm < previous);
      previous = norm;
    }
  }

  SUBCASE("one-step scalar problem matches the closed form") {
    const double a = 0.8, b = 0.5, rho = 0.3, x = 0.7, r = -0.4;
    const Basis basis({Family::Linear, 1, 1, 1});
    Eigen::MatrixXd A(2, 2), B(2, 1);
    A << a, 0, 0, 1;
    B << b, 0;
    const ModelLinear model{A, B, output_selector(1, 2), basis, 0.05};
    cfg.horizon = 1;
    cfg.weight_ee = 1.0;
    cfg.weight_u = rho;
    const auto sol = solve_kmpc(model, Eigen::VectorXd::Constant(1, x), constant_refs(Eigen::VectorXd::Constant(1, r), 1), cfg);
    CHECK(sol.inputs[0](0) == doctest::Approx(b * (r - a * x) / (b * b + rho)).epsilon(1e-14));
  }

  SUBCASE("solution is a minimizer") {
    const ModelLinear model = random_lifted(rng, 4, 3, 2);
    const Eigen::VectorXd x = test::uniform(rng, 4);
    Sequence refs;
    for (int t = 0; t < cfg.horizon; ++t) refs.push_back(test::uniform(rng, 2));
    const auto sol = solve_kmpc(model, x, refs, cfg);
    const Eigen::MatrixXd Ct = tracked_C(model, cfg);
    const Eigen::VectorXd z0 = model.basis.lift_state(x);
    const double best = lifted_linear_cost(model.A, model.B, Ct, z0, refs, sol.inputs, cfg);
    CHECK(best == doctest::Approx(sol.cost).epsilon(1e-10));
    for (int trial = 0; trial < 50; ++trial) {
      Sequence perturbed = sol.inputs;
      Eigen::VectorXd d = test::uniform(rng, 3 * cfg.horizon);
      d *= 1e-3 / d.norm();
      for (int t = 0; t < cfg.horizon; ++t) perturbed[t] += d.segment(3 * t, 3);
      CHECK(lifted_linear_cost(model.A, model.B, Ct, z0, refs, perturbed, cfg) >= best - 1e-12);
    }
  }

  SUBCASE("cached output powers give the same answer") {
    const ModelLinear model = random_lifted(rng, 3, 2, 2);
    const Eigen::VectorXd x = test::uniform(rng, 3);
    const Sequence refs = constant_refs(test::uniform(rng, 2), cfg.horizon);
    const auto powers = output_powers(model.A, tracked_C(model, cfg), cfg.horizon);
    const auto a = solve_kmpc(model, x, refs, cfg), b = solve_kmpc(model, powers, x, refs, cfg);
    for (int t = 0; t < cfg.horizon; ++t) CHECK(a.inputs[t] == b.inputs[t]);
    MpcConfig longer = cfg;
    longer.horizon = cfg.horizon + 1;
    CHECK_THROWS_AS(solve_kmpc(model, powers, x, constant_refs(refs[0], longer.horizon), longer), Error);
  }

  SUBCASE("argument errors") {
    const ModelLinear model = random_lifted(rng, 3, 2, 2);
    const Eigen::VectorXd x = test::uniform(rng, 3);
    CHECK_THROWS_AS(solve_kmpc(model, x, constant_refs(Eigen::Vector2d::Zero(), cfg.horizon - 1), cfg), Error);
    CHECK_THROWS_AS(solve_kmpc(model, x, constant_refs(Eigen::Vector3d::Zero(), cfg.horizon), cfg), Error);
    MpcConfig bad = cfg;
    bad.weight_u = 0.0;
    CHECK_THROWS_AS(solve_kmpc(model, x, constant_refs(Eigen::Vector2d::Zero(), cfg.horizon), bad), Error);
    bad = cfg;
    bad.horizon = 0;
    CHECK_THROWS_AS(bad.validate(), Error);
  }
}

TEST_CASE("condense matches the recursion") {
  std::mt19937_64 rng(2);
  const ModelLinear model = random_lifted(rng, 3, 2, 2);
  MpcConfig cfg;
  const Eigen::MatrixXd Ct = tracked_C(model, cfg);
  const auto pred = condense(model.A, model.B, Ct, cfg.horizon);
  const Eigen::VectorXd z0 = model.basis.lift_state(test::uniform(rng, 3));
  const Eigen::VectorXd U = test::uniform(rng, 2 * cfg.horizon);
  const Eigen::VectorXd Y = pred.Phi * z0 + pred.Gamma * U;
  Eigen::VectorXd z = z0;
  for (int t = 0; t < cfg.horizon; ++t) {
    z = model.A * z + model.B * U.segment(2 * t, 2);
    CHECK((Ct * z - Y.segment(2 * t, 2)).norm() < 1e-12);
  }
}

TEST_CASE("solve_kbmpc") {
  std::mt19937_64 rng(3);
  MpcConfig cfg;
  const ModelLinear lin = random_lifted(rng, 3, 2, 2);
  const int N = lin.A.rows();
  const Basis bil_basis({Family::Bilinear, 3, 2, 2});
  const Eigen::VectorXd x = test::uniform(rng, 3);
  const Sequence refs = constant_refs(test::uniform(rng, 2), cfg.horizon);

  SUBCASE("reduces to K-MPC when H = 0") {
    const ModelBilinear bil{lin.A, {Eigen::MatrixXd::Zero(N, N), Eigen::MatrixXd::Zero(N, N)}, lin.B, lin.C, bil_basis, 0.05};
    const auto a = solve_kmpc(lin, x, refs, cfg), b = solve_kbmpc(bil, x, refs, cfg);
    for (int t = 0; t < cfg.horizon; ++t) CHECK((a.inputs[t] - b.inputs[t]).norm() < 1e-10);
  }

  SUBCASE("is K-MPC on the effective input matrix") {
    const ModelBilinear bil{lin.A, {test::uniform_matrix(rng, N, N, -0.1, 0.1), test::uniform_matrix(rng, N, N, -0.1, 0.1)}, lin.B, lin.C,
                            bil_basis, 0.05};
    const Eigen::VectorXd z0 = bil_basis.lift_state(x);
    const ModelLinear frozen{lin.A, bil.effective_input(z0), lin.C, lin.basis, 0.05};
    const auto a = solve_kmpc(frozen, x, refs, cfg), b = solve_kbmpc(bil, x, refs, cfg);
    for (int t = 0; t < cfg.horizon; ++t) CHECK((a.inputs[t] - b.inputs[t]).norm() < 1e-10);
  }
}

TEST_CASE("solve_knmpc") {
  std::mt19937_64 rng(4);
  MpcConfig cfg;

  SUBCASE("matches K-MPC on an affine model") {
    const auto pair = affine_pair(rng, 3, 2);
    const Eigen::VectorXd x = test::uniform(rng, 3);
    Sequence refs;
    for (int t = 0; t < cfg.horizon; ++t) refs.push_back(test::uniform(rng, 2));
    const auto qp = solve_kmpc(pair.linear, x, refs, cfg);
    const auto gn = solve_knmpc(pair.nonlinear, x, refs, Sequence(cfg.horizon, Eigen::VectorXd::Zero(2)), cfg);
    CHECK(gn.ok);
    for (int t = 0; t < cfg.horizon; ++t) CHECK((qp.inputs[t] - gn.inputs[t]).norm() < 1e-6);
  }

  SUBCASE("reaches an attainable zero cost") {
    const ModelNonlinear model = quadratic_model(rng, 3, 2);
    const Eigen::VectorXd x = test::uniform(rng, 3, -0.5, 0.5);
    // The unforced response is the only zero-cost plan.
    Sequence refs;
    Eigen::VectorXd state = x;
    for (int t = 0; t < cfg.horizon; ++t) {
      state = model.Crows * model.basis.lift(state, Eigen::VectorXd::Zero(2));
      refs.push_back(state.tail(2));
    }
    Sequence warm;
    for (int t = 0; t < cfg.horizon; ++t) warm.push_back(test::uniform(rng, 2, -0.3, 0.3));
    const auto sol = solve_knmpc(model, x, refs, warm, cfg);
    CHECK(sol.cost < 1e-12);
  }

  SUBCASE("analytic gradient agrees with finite differences") {
    const ModelNonlinear model = quadratic_model(rng, 3, 2);
    double worst = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
      const Eigen::VectorXd x = test::uniform(rng, 3, -0.5, 0.5);
      Sequence refs, inputs;
      for (int t = 0; t < cfg.horizon; ++t) {
        refs.push_back(test::uniform(rng, 2));
        inputs.push_back(test::uniform(rng, 2, -0.5, 0.5));
      }
      if (trial % 2 == 1) inputs = solve_knmpc(model, x, refs, inputs, cfg).inputs;
      const Eigen::VectorXd g = nonlinear_cost_gradient(model, x, refs, inputs, cfg);
      Eigen::VectorXd fd(g.size());
      const double h = 1e-6;
      for (Eigen::Index i = 0; i < g.size(); ++i) {
        Sequence up = inputs, dn = inputs;
        up[i / 2](i % 2) += h;
        dn[i / 2](i % 2) -= h;
        fd(i) = (nonlinear_cost(model, x, refs, up, cfg) - nonlinear_cost(model, x, refs, dn, cfg)) / (2 * h);
      }
      // At the optimum the gradient vanishes, so compare against the scale of the cost.
      const double scale = std::max(g.norm(), nonlinear_cost(model, x, refs, inputs, cfg));
      worst = std::max(worst, (g - fd).norm() / scale);
    }
    CHECK(worst < 1e-4);
  }

  SUBCASE("accepted iterates never increase the cost") {
    const ModelNonlinear model = quadratic_model(rng, 3, 2);
    const Eigen::VectorXd x = test::uniform(rng, 3);
    Sequence refs;
    for (int t = 0; t < cfg.horizon; ++t) refs.push_back(test::uniform(rng, 2));
    const auto sol = solve_knmpc(model, x, refs, Sequence(cfg.horizon, Eigen::VectorXd::Zero(2)), cfg);
    REQUIRE(sol.cost_history.size() >= 2);
    for (std::size_t i = 1; i < sol.cost_history.size(); ++i) CHECK(sol.cost_history[i] <= sol.cost_history[i - 1]);
    CHECK(sol.cost == sol.cost_history.back());
  }

  SUBCASE("non-finite rollout returns the warm start flagged") {
    const Basis basis({Family::Nonlinear, 2, 1, 2});
    Eigen::MatrixXd Crows = Eigen::MatrixXd::Zero(2, basis.size());
    Crows.rightCols(1).setConstant(1e300);  // u^2 term
    const ModelNonlinear model{Crows, basis, 0.05};
    Sequence warm(cfg.horizon, Eigen::VectorXd::Constant(1, 1e10));
    const auto sol = solve_knmpc(model, Eigen::Vector2d(0.1, 0.2), constant_refs(Eigen::Vector2d::Zero(), cfg.horizon), warm, cfg);
    CHECK_FALSE(sol.ok);
    for (int t = 0; t < cfg.horizon; ++t) CHECK(sol.inputs[t] == warm[t]);
  }
}

TEST_CASE("closed loop on the arm") {
  const ArmParameters params;
  ExcitationConfig ex;
  const auto data = collect_snapshots(params, ex, 2000, 0.05, 5);
  const Model linear = extract_model(fit_koopman(data, Basis({Family::Linear, 6, 3, 2})));
  const MpcConfig cfg;

  SUBCASE("holding the hanging point") {
    const auto ref = block_m_reference(0.0, {0.0, -0.99}, 3.0, 0.05);
    const auto log = run_closed_loop(params, ControllerKind::KMpc, linear, ref, cfg);
    CHECK(log.mean_error < 1e-3);
  }

  SUBCASE("K-BMPC with H = 0 reproduces K-MPC") {
    const auto& lin = std::get<ModelLinear>(linear);
    const int N = lin.A.rows();
    const ModelBilinear bil{lin.A, std::vector<Eigen::MatrixXd>(3, Eigen::MatrixXd::Zero(N, N)), lin.B, lin.C,
                            Basis({Family::Bilinear, 6, 3, 2}), lin.ts};
    const auto ref = block_m_reference(BlockMSpec{}, 0.05);
    const auto a = run_closed_loop(params, ControllerKind::KMpc, linear, ref, cfg);
    const auto b = run_closed_loop(params, ControllerKind::KBMpc, bil, ref, cfg);
    REQUIRE(a.steps.size() == 300);
    REQUIRE(b.steps.size() == 300);
    double worst = 0.0;
    for (std::size_t k = 0; k < a.steps.size(); ++k) {
      worst = std::max(worst, (a.steps[k].u - b.steps[k].u).cwiseAbs().maxCoeff());
      worst = std::max(worst, (a.steps[k].ee - b.steps[k].ee).cwiseAbs().maxCoeff());
    }
    CHECK(worst < 1e-9);
  }

  SUBCASE("log invariants and timing boundary") {
    const auto ref = block_m_reference(BlockMSpec{}, 0.05);
    const auto start = std::chrono::steady_clock::now();
    const auto log = run_closed_loop(params, ControllerKind::KMpc, linear, ref, cfg);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    REQUIRE(log.steps.size() == 300);
    double error_sum = 0.0, time_sum = 0.0;
    for (std::size_t k = 0; k < log.steps.size(); ++k) {
      const auto& s = log.steps[k];
      CHECK(s.t == doctest::Approx(0.05 * static_cast<double>(k)));
      CHECK(s.error == doctest::Approx((s.ee - s.ref).norm()).epsilon(1e-15));
      CHECK(s.ref == ref.samples[k]);
      CHECK(s.solve_time > 0.0);
      error_sum += s.error;
      time_sum += s.solve_time;
    }
    CHECK(log.steps.front().ee == Eigen::Vector2d(0.0, -0.99));
    CHECK(log.mean_error == doctest::Approx(error_sum / 300));
    CHECK(log.mean_solve_time == doctest::Approx(time_sum / 300));
    // Plant simulation dominates the loop and is not counted.
    CHECK(time_sum < 0.5 * wall);
  }

  SUBCASE("controller and model must agree") {
    const auto ref = block_m_reference(BlockMSpec{}, 0.05);
    CHECK_THROWS_AS(run_closed_loop(params, ControllerKind::KBMpc, linear, ref, cfg), Error);
    CHECK_THROWS_AS(run_closed_loop(params, ControllerKind::KNMpc, linear, ref, cfg), Error);
  }

  SUBCASE("control log CSV") {
    const auto ref = block_m_reference(0.0, {0.0, -0.99}, 0.2, 0.05);
    const auto log = run_closed_loop(params, ControllerKind::KMpc, linear, ref, cfg);
    const std::string text = control_log_csv(log);
    CHECK(text.rfind("t,ref_x,ref_y,ee_x,ee_y,err,u1,u2,u3,solve_time,flag\n", 0) == 0);
    CHECK(text.find("# mean_error=") != std::string::npos);
    const std::string untimed = control_log_csv(log, false);
    CHECK(untimed == control_log_csv(run_closed_loop(params, ControllerKind::KMpc, linear, ref, cfg), false));
  }
}

TEST_CASE("controller names") {
  for (auto kind : {ControllerKind::KMpc, ControllerKind::KBMpc, ControllerKind::KNMpc})
    CHECK(parse_controller(to_string(kind)) == kind);
  CHECK_THROWS_AS(parse_controller("lqr"), Error);
}
