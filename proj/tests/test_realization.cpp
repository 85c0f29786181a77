#include <doctest.h>

#include <koopman/realization.hpp>

#include <cmath>

#include "support.hpp"

using namespace koopman;

namespace {

Sequence random_inputs(std::mt19937_64& rng, int m, int T) {
  Sequence u;
  for (int t = 0; t < T; ++t) u.push_back(test::uniform(rng, m));
  return u;
}

ModelLinear random_linear(std::mt19937_64& rng, const Basis& basis) {
  const int N = basis.state_dimension();
  return {test::uniform_matrix(rng, N, N, -0.3, 0.3), test::uniform_matrix(rng, N, basis.m()), output_selector(basis.n(), N), basis,
          0.05};
}

ModelBilinear as_bilinear(const ModelLinear& lin, std::vector<Eigen::MatrixXd> H) {
  const BasisSpec s = lin.basis.spec();
  return {lin.A, std::move(H), lin.B, lin.C, Basis({Family::Bilinear, s.n, s.m, s.rho}), lin.ts};
}

// x' = -x sampled at 0.05 s, as the exact lifted model on (x, 1).
ModelLinear decay_model() {
  Eigen::MatrixXd A = Eigen::MatrixXd::Identity(2, 2);
  A(0, 0) = std::exp(-0.05);
  return {A, Eigen::MatrixXd::Zero(2, 0), output_selector(1, 2), Basis({Family::Linear, 1, 0, 1}), 0.05};
}

}  // namespace

TEST_CASE("simulate_model: zero models") {
  std::mt19937_64 rng(1);
  const Eigen::VectorXd x0 = test::uniform(rng, 2);
  const Sequence u = random_inputs(rng, 1, 5);
  const Basis lin({Family::Linear, 2, 1, 2}), bil({Family::Bilinear, 2, 1, 2}), nl({Family::Nonlinear, 2, 1, 2});
  const int N = lin.state_dimension();
  const std::vector<Model> models{
      ModelLinear{Eigen::MatrixXd::Zero(N, N), Eigen::MatrixXd::Zero(N, 1), output_selector(2, N), lin, 0.05},
      ModelBilinear{Eigen::MatrixXd::Zero(N, N), {Eigen::MatrixXd::Zero(N, N)}, Eigen::MatrixXd::Zero(N, 1),
                    output_selector(2, N), bil, 0.05},
      ModelNonlinear{Eigen::MatrixXd::Zero(2, nl.size()), nl, 0.05}};
  for (const auto& model : models) {
    const Sequence x = simulate_model(model, x0, u);
    REQUIRE(x.size() == 6);
    CHECK(x[0] == x0);
    for (std::size_t t = 1; t < x.size(); ++t) CHECK(x[t].isZero(0));
  }
}

TEST_CASE("simulate_model: bilinear with zero H is the linear rollout") {
  std::mt19937_64 rng(2);
  const ModelLinear lin = random_linear(rng, Basis({Family::Linear, 3, 2, 2}));
  const int N = lin.A.rows();
  const ModelBilinear bil = as_bilinear(lin, {Eigen::MatrixXd::Zero(N, N), Eigen::MatrixXd::Zero(N, N)});
  for (int trial = 0; trial < 5; ++trial) {
    const Eigen::VectorXd x0 = test::uniform(rng, 3);
    const Sequence u = random_inputs(rng, 2, 30);
    const Sequence a = simulate_model(lin, x0, u), b = simulate_model(bil, x0, u);
    for (std::size_t t = 0; t < a.size(); ++t) CHECK(a[t] == b[t]);
  }
}

TEST_CASE("simulate_model: exact decay") {
  const Sequence x = simulate_model(decay_model(), Eigen::VectorXd::Ones(1), Sequence(20, Eigen::VectorXd(0)));
  CHECK(x[20](0) == doctest::Approx(std::exp(-1.0)).epsilon(1e-4));
}

TEST_CASE("simulate_model: lifted rollouts respect superposition") {
  // With rho = 1 the lift is affine, so affine combinations of initial states
  // propagate to the same combination of outputs.
  std::mt19937_64 rng(3);
  const ModelLinear lin = random_linear(rng, Basis({Family::Linear, 3, 2, 1}));
  const int N = lin.A.rows();
  const ModelBilinear bil = as_bilinear(lin, {test::uniform_matrix(rng, N, N, -0.2, 0.2), test::uniform_matrix(rng, N, N, -0.2, 0.2)});
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::VectorXd xa = test::uniform(rng, 3), xb = test::uniform(rng, 3);
    const double w = std::uniform_real_distribution<double>(-2, 2)(rng);
    const Sequence u = random_inputs(rng, 2, 25);
    for (const Model& model : {Model(lin), Model(bil)}) {
      const Sequence a = simulate_model(model, xa, u), b = simulate_model(model, xb, u);
      const Sequence c = simulate_model(model, w * xa + (1 - w) * xb, u);
      for (std::size_t t = 0; t < c.size(); ++t) CHECK((c[t] - (w * a[t] + (1 - w) * b[t])).norm() < 1e-10);
    }
  }
}

TEST_CASE("simulate_model: errors") {
  const ModelLinear model = decay_model();
  CHECK_THROWS_AS(simulate_model(model, Eigen::VectorXd::Ones(2), {}), Error);
  CHECK_THROWS_AS(simulate_model(model, Eigen::VectorXd::Ones(1), {Eigen::VectorXd::Ones(1)}), Error);

  ModelLinear blowup = model;
  blowup.A(0, 0) = 1e200;
  try {
    simulate_model(blowup, Eigen::VectorXd::Ones(1), Sequence(5, Eigen::VectorXd(0)));
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Divergence);
    CHECK(std::string(e.what()).find("step 2") != std::string::npos);
  }
}

TEST_CASE("prediction_error") {
  const ModelLinear model = decay_model();
  std::vector<PredictionEpisode> episodes;
  for (double x0 : {1.0, -0.5, 2.0}) {
    PredictionEpisode ep{Eigen::VectorXd::Constant(1, x0), Sequence(10, Eigen::VectorXd(0)), {}};
    for (int t = 0; t <= 10; ++t) ep.x_true.push_back(Eigen::VectorXd::Constant(1, x0 * std::exp(-0.05 * t)));
    episodes.push_back(ep);
  }

  SUBCASE("perfect model") {
    const auto report = prediction_error(model, episodes);
    CHECK(report.normalized_error < 1e-14);
    CHECK(report.normalized_one_step_error < 1e-14);
    CHECK(report.per_step.size() == 10);
  }
  SUBCASE("zero predictor") {
    const ModelNonlinear zero{Eigen::MatrixXd::Zero(1, 2), Basis({Family::Nonlinear, 1, 0, 1}), 0.05};
    const auto report = prediction_error(zero, episodes);
    CHECK(report.normalized_error == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(report.raw_mean_error == doctest::Approx(report.baseline_error).epsilon(1e-15));
  }
  SUBCASE("diverging model reports infinity") {
    ModelLinear blowup = model;
    blowup.A(0, 0) = 1e200;
    CHECK(std::isinf(prediction_error(blowup, episodes).normalized_error));
  }
  SUBCASE("degenerate data") {
    CHECK_THROWS_AS(prediction_error(model, {}), Error);
    PredictionEpisode zero{Eigen::VectorXd::Zero(1), Sequence(3, Eigen::VectorXd(0)), Sequence(4, Eigen::VectorXd::Zero(1))};
    CHECK_THROWS_AS(prediction_error(model, {zero}), Error);
    PredictionEpisode ragged = episodes.front();
    ragged.x_true.pop_back();
    CHECK_THROWS_AS(prediction_error(model, {ragged}), Error);
  }
}

TEST_CASE("identified models of an exactly linear plant") {
  std::mt19937_64 rng(4);
  const Eigen::MatrixXd Ad = test::uniform_matrix(rng, 3, 3, -0.4, 0.4);
  const Eigen::MatrixXd Bd = test::uniform_matrix(rng, 3, 1);
  SnapshotDataset data;
  data.ts = 0.05;
  for (int k = 0; k < 500; ++k) {
    const Eigen::VectorXd x = test::uniform(rng, 3), u = test::uniform(rng, 1);
    data.snapshots.push_back({x, Ad * x + Bd * u, u});
  }
  std::vector<PredictionEpisode> episodes;
  for (int e = 0; e < 5; ++e) {
    PredictionEpisode ep{test::uniform(rng, 3), random_inputs(rng, 1, 50), {}};
    ep.x_true.push_back(ep.x0);
    for (const auto& u : ep.u_seq) ep.x_true.push_back(Ad * ep.x_true.back() + Bd * u);
    episodes.push_back(ep);
  }

  const auto linear = extract_linear(fit_koopman(data, Basis({Family::Linear, 3, 1, 1})));
  CHECK(prediction_error(linear, episodes).normalized_error < 1e-6);

  const auto nonlinear = extract_nonlinear(fit_koopman(data, Basis({Family::Nonlinear, 3, 1, 1})));
  for (const auto& ep : episodes) {
    const Sequence a = simulate_model(linear, ep.x0, ep.u_seq), b = simulate_model(nonlinear, ep.x0, ep.u_seq);
    for (std::size_t t = 0; t < a.size(); ++t) CHECK((a[t] - b[t]).norm() < 1e-6);
  }
}
