#include "koopman/realization.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "koopman/csv.hpp"

namespace koopman {

void PredictionEpisode::validate() const {
  require(x_true.size() == u_seq.size() + 1, ErrorCode::DimensionMismatch,
          "prediction episode: need one more output than inputs");
  require(x_true.front().size() == x0.size(), ErrorCode::DimensionMismatch, "prediction episode: x0 dimension");
}

namespace {

void check_inputs(const Basis& basis, const Eigen::VectorXd& x0, const Sequence& u_seq) {
  require(x0.size() == basis.n(), ErrorCode::DimensionMismatch,
          "simulate_model: x0 has dimension " + std::to_string(x0.size()) + ", expected " +
              std::to_string(basis.n()));
  for (const auto& u : u_seq)
    require(u.size() == basis.m(), ErrorCode::DimensionMismatch, "simulate_model: input dimension mismatch");
}

void check_finite(const Eigen::VectorXd& v, std::size_t step) {
  if (!v.allFinite()) throw Error(ErrorCode::Divergence, "simulate_model: non-finite state at step " + std::to_string(step));
}

template <typename Advance>
Sequence lifted_rollout(const Eigen::MatrixXd& C, Eigen::VectorXd z, const Sequence& u_seq, Advance&& advance) {
  Sequence out;
  out.reserve(u_seq.size() + 1);
  out.push_back(C * z);
  for (std::size_t t = 0; t < u_seq.size(); ++t) {
    z = advance(z, u_seq[t]);
    check_finite(z, t + 1);
    out.push_back(C * z);
  }
  return out;
}

}  // namespace

Sequence simulate_model(const ModelLinear& model, const Eigen::VectorXd& x0, const Sequence& u_seq) {
  check_inputs(model.basis, x0, u_seq);
  return lifted_rollout(model.C, model.basis.lift_state(x0), u_seq,
                        [&](const Eigen::VectorXd& z, const Eigen::VectorXd& u) -> Eigen::VectorXd {
                          return model.A * z + model.B * u;
                        });
}

Sequence simulate_model(const ModelBilinear& model, const Eigen::VectorXd& x0, const Sequence& u_seq) {
  check_inputs(model.basis, x0, u_seq);
  return lifted_rollout(model.C, model.basis.lift_state(x0), u_seq,
                        [&](const Eigen::VectorXd& z, const Eigen::VectorXd& u) -> Eigen::VectorXd {
                          Eigen::VectorXd next = model.A * z + model.B * u;
                          for (std::size_t j = 0; j < model.H.size(); ++j)
                            next += u(static_cast<Eigen::Index>(j)) * (model.H[j] * z);
                          return next;
                        });
}

Sequence simulate_model(const ModelNonlinear& model, const Eigen::VectorXd& x0, const Sequence& u_seq) {
  check_inputs(model.basis, x0, u_seq);
  Sequence out;
  out.reserve(u_seq.size() + 1);
  out.push_back(x0);
  for (std::size_t t = 0; t < u_seq.size(); ++t) {
    Eigen::VectorXd next = model.Crows * model.basis.lift(out.back(), u_seq[t]);
    check_finite(next, t + 1);
    out.push_back(std::move(next));
  }
  return out;
}

Sequence simulate_model(const Model& model, const Eigen::VectorXd& x0, const Sequence& u_seq) {
  return std::visit([&](const auto& m) { return simulate_model(m, x0, u_seq); }, model);
}

Eigen::VectorXd predict_step(const Model& model, const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
  return simulate_model(model, x, Sequence{u}).back();
}

ErrorReport prediction_error(const Model& model, const std::vector<PredictionEpisode>& episodes) {
  require(!episodes.empty(), ErrorCode::InvalidArgument, "prediction_error: no episodes");
  ErrorReport report;
  double raw = 0.0, baseline = 0.0, one_step = 0.0;
  std::size_t count = 0;
  std::vector<double> per_step_sum;
  std::vector<std::size_t> per_step_count;
  for (const auto& ep : episodes) {
    ep.validate();
    Sequence pred;
    try {
      pred = simulate_model(model, ep.x0, ep.u_seq);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::Divergence) throw;
      pred.assign(ep.x_true.size(), Eigen::VectorXd::Constant(ep.x0.size(), std::numeric_limits<double>::infinity()));
    }
    const std::size_t T = ep.u_seq.size();
    if (per_step_sum.size() < T) {
      per_step_sum.resize(T, 0.0);
      per_step_count.resize(T, 0);
    }
    for (std::size_t t = 1; t <= T; ++t) {
      const double err = (pred[t] - ep.x_true[t]).norm();
      raw += err;
      baseline += ep.x_true[t].norm();
      per_step_sum[t - 1] += err;
      ++per_step_count[t - 1];
      try {
        one_step += (predict_step(model, ep.x_true[t - 1], ep.u_seq[t - 1]) - ep.x_true[t]).norm();
      } catch (const Error& e) {
        if (e.code() != ErrorCode::Divergence) throw;
        one_step = std::numeric_limits<double>::infinity();
      }
      ++count;
    }
  }
  require(count > 0, ErrorCode::InvalidArgument, "prediction_error: episodes contain no steps");
  report.raw_mean_error = raw / static_cast<double>(count);
  report.baseline_error = baseline / static_cast<double>(count);
  require(report.baseline_error > 0, ErrorCode::InvalidArgument,
          "prediction_error: zero-predictor baseline is zero (degenerate data)");
  report.normalized_error = report.raw_mean_error / report.baseline_error;
  report.raw_one_step_error = one_step / static_cast<double>(count);
  report.normalized_one_step_error = report.raw_one_step_error / report.baseline_error;
  for (std::size_t t = 0; t < per_step_sum.size(); ++t)
    report.per_step.push_back(per_step_sum[t] / static_cast<double>(per_step_count[t]));
  return report;
}

std::vector<PredictionEpisode> to_episodes(const std::vector<Trajectory>& trajectories) {
  std::vector<PredictionEpisode> out;
  out.reserve(trajectories.size());
  for (const auto& tr : trajectories) out.push_back({tr.outputs.front(), tr.inputs, tr.outputs});
  return out;
}

void write_episodes_csv(const std::vector<PredictionEpisode>& episodes, const std::filesystem::path& path) {
  require(!episodes.empty(), ErrorCode::InvalidArgument, "write_episodes_csv: no episodes");
  const auto n = episodes.front().x0.size();
  const auto m = episodes.front().u_seq.empty() ? 0 : episodes.front().u_seq.front().size();
  std::ostringstream out;
  out << "episode,t";
  for (Eigen::Index i = 1; i <= n; ++i) out << ",x" << i;
  for (Eigen::Index i = 1; i <= m; ++i) out << ",u" << i;
  out << '\n';
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    const auto& ep = episodes[e];
    ep.validate();
    for (std::size_t t = 0; t < ep.x_true.size(); ++t) {
      out << e << ',' << t;
      for (Eigen::Index i = 0; i < n; ++i) out << ',' << csv::format(ep.x_true[t](i));
      for (Eigen::Index i = 0; i < m; ++i) out << ',' << csv::format(t < ep.u_seq.size() ? ep.u_seq[t](i) : 0.0);
      out << '\n';
    }
  }
  csv::write_atomic(path, out.str());
}

std::vector<PredictionEpisode> read_episodes_csv(const std::filesystem::path& path) {
  const auto table = csv::read(path);
  const int ecol = table.column("episode"), tcol = table.column("t");
  require(ecol >= 0 && tcol >= 0, ErrorCode::Parse, path.string() + ": not an episode CSV");
  int n = 0, m = 0;
  while (table.column("x" + std::to_string(n + 1)) >= 0) ++n;
  while (table.column("u" + std::to_string(m + 1)) >= 0) ++m;
  require(n >= 1, ErrorCode::Parse, path.string() + ": no state columns");
  const int x1 = table.column("x1"), u1 = m > 0 ? table.column("u1") : 0;
  std::map<long, std::vector<const std::vector<double>*>> grouped;
  for (const auto& row : table.rows) grouped[std::lround(row[ecol])].push_back(&row);
  std::vector<PredictionEpisode> out;
  for (auto& [id, rows] : grouped) {
    std::sort(rows.begin(), rows.end(), [&](auto* a, auto* b) { return (*a)[tcol] < (*b)[tcol]; });
    PredictionEpisode ep;
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const auto& r = *rows[k];
      ep.x_true.push_back(Eigen::Map<const Eigen::VectorXd>(r.data() + x1, n));
      if (k + 1 < rows.size()) ep.u_seq.push_back(Eigen::Map<const Eigen::VectorXd>(r.data() + u1, m));
    }
    ep.x0 = ep.x_true.front();
    out.push_back(std::move(ep));
  }
  return out;
}

std::string error_report_csv(const std::vector<ErrorRow>& rows) {
  std::ostringstream out;
  out << "model,family,rho,M,raw_error,normalized_error,raw_error_1step,normalized_error_1step\n";
  for (const auto& r : rows)
    out << r.model << ',' << to_string(r.family) << ',' << r.rho << ',' << r.M << ','
        << csv::format(r.report.raw_mean_error) << ',' << csv::format(r.report.normalized_error) << ','
        << csv::format(r.report.raw_one_step_error) << ',' << csv::format(r.report.normalized_one_step_error)
        << '\n';
  return out.str();
}

}  // namespace koopman
