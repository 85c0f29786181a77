// koopman_cli: collect / fit / eval / control / theory.

#include <koopman/csv.hpp>
#include <koopman/mpc.hpp>
#include <koopman/realization.hpp>
#include <koopman/theory.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

using namespace koopman;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Every key accepted in a config file. Unknown keys are rejected.
struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string out = "run";
  double ts = 0.05;
  ArmParameters plant;
  ExcitationConfig excitation;
  double ridge_factor = 1e-5;
  std::optional<double> ridge;
  std::map<Family, std::vector<int>> sweep{
      {Family::Linear, {1, 2, 3, 4, 5, 6}}, {Family::Bilinear, {1, 2, 3}}, {Family::Nonlinear, {1, 2, 3, 4}}};
  int eval_episodes = 20;
  int eval_steps = 40;
  std::uint64_t eval_seed = 999;
  MpcConfig mpc;
  int control_rho = 3;
  BlockMSpec reference;
  std::string reference_csv;

  FitOptions fit_options() const {
    FitOptions o;
    o.ridge = ridge;
    o.ridge_factor = ridge_factor;
    return o;
  }
};

[[noreturn]] void config_error(const std::string& what) { throw Error(ErrorCode::Parse, "config: " + what); }

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) config_error(where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || key == a;
    if (!known) config_error("unknown key '" + (where.empty() ? key : where + "." + key) + "'");
  }
}

template <class T>
void read(const json& j, const char* key, T& target) {
  if (j.contains(key)) target = j.at(key).get<T>();
}

void read_vec3(const json& j, const char* key, Vector3& target) {
  if (!j.contains(key)) return;
  const auto v = j.at(key).get<std::vector<double>>();
  if (v.size() != 3) config_error(std::string(key) + " must have 3 entries");
  target = Vector3(v[0], v[1], v[2]);
}

ExperimentConfig load_config(const std::string& path) {
  ExperimentConfig c;
  if (path.empty()) return c;
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  json j;
  try {
    in >> j;
    check_keys(j, "", {"seed", "out", "ts", "plant", "excitation", "fit", "sweep", "eval", "mpc", "control", "reference"});
    read(j, "seed", c.seed);
    read(j, "out", c.out);
    read(j, "ts", c.ts);
    if (j.contains("plant")) {
      const auto& p = j["plant"];
      check_keys(p, "plant", {"link_masses", "link_lengths", "joint_stiffness", "joint_damping", "gravity"});
      read_vec3(p, "link_masses", c.plant.link_masses);
      read_vec3(p, "link_lengths", c.plant.link_lengths);
      read_vec3(p, "joint_stiffness", c.plant.joint_stiffness);
      read_vec3(p, "joint_damping", c.plant.joint_damping);
      read(p, "gravity", c.plant.gravity);
    }
    if (j.contains("excitation")) {
      const auto& e = j["excitation"];
      check_keys(e, "excitation", {"torque_amplitude", "hold_steps", "init_angle_range", "episode_length", "episodes"});
      read(e, "torque_amplitude", c.excitation.torque_amplitude);
      read(e, "hold_steps", c.excitation.hold_steps);
      read(e, "init_angle_range", c.excitation.init_angle_range);
      read(e, "episode_length", c.excitation.episode_length);
      read(e, "episodes", c.excitation.episodes);
    }
    if (j.contains("fit")) {
      const auto& f = j["fit"];
      check_keys(f, "fit", {"ridge_factor", "ridge"});
      read(f, "ridge_factor", c.ridge_factor);
      if (f.contains("ridge") && !f["ridge"].is_null()) c.ridge = f["ridge"].get<double>();
    }
    if (j.contains("sweep")) {
      const auto& s = j["sweep"];
      check_keys(s, "sweep", {"linear", "bilinear", "nonlinear"});
      c.sweep.clear();
      for (const auto& [key, value] : s.items()) c.sweep[parse_family(key)] = value.get<std::vector<int>>();
    }
    if (j.contains("eval")) {
      const auto& e = j["eval"];
      check_keys(e, "eval", {"episodes", "steps", "seed"});
      read(e, "episodes", c.eval_episodes);
      read(e, "steps", c.eval_steps);
      read(e, "seed", c.eval_seed);
    }
    if (j.contains("mpc")) {
      const auto& m = j["mpc"];
      check_keys(m, "mpc", {"horizon", "weight_ee", "weight_u", "nmpc_max_iters", "nmpc_damping"});
      read(m, "horizon", c.mpc.horizon);
      read(m, "weight_ee", c.mpc.weight_ee);
      read(m, "weight_u", c.mpc.weight_u);
      read(m, "nmpc_max_iters", c.mpc.nmpc_max_iters);
      read(m, "nmpc_damping", c.mpc.nmpc_damping);
    }
    if (j.contains("control")) {
      check_keys(j["control"], "control", {"rho"});
      read(j["control"], "rho", c.control_rho);
    }
    if (j.contains("reference")) {
      const auto& r = j["reference"];
      check_keys(r, "reference", {"scale", "center", "duration", "csv"});
      read(r, "scale", c.reference.scale);
      read(r, "duration", c.reference.duration);
      read(r, "csv", c.reference_csv);
      if (r.contains("center")) {
        const auto v = r["center"].get<std::vector<double>>();
        if (v.size() != 2) config_error("reference.center must have 2 entries");
        c.reference.center = Eigen::Vector2d(v[0], v[1]);
      }
    }
  } catch (const json::exception& e) {
    config_error(path + ": " + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::Parse) throw;
    config_error(e.what());
  }
  return c;
}

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out, family, ref, data, model, validation, field;
  std::optional<int> rho, episodes, steps;
  std::optional<double> ridge;
  std::vector<std::string> controllers;
};

ExperimentConfig resolve(const Flags& f) {
  ExperimentConfig c = load_config(f.config);
  if (f.seed) c.seed = *f.seed;
  if (f.out) c.out = *f.out;
  if (f.ref) c.reference_csv = *f.ref;
  if (f.ridge) c.ridge = *f.ridge;
  if (f.episodes) c.excitation.episodes = *f.episodes;
  if (f.steps) c.excitation.episode_length = *f.steps;
  c.mpc.ts = c.ts;
  c.plant.validate();
  c.excitation.validate();
  c.mpc.validate();
  return c;
}

// (family, rho) pairs selected by --family / --rho on top of the sweep.
std::vector<std::pair<Family, int>> selection(const ExperimentConfig& c, const Flags& f) {
  std::vector<std::pair<Family, int>> out;
  const std::optional<Family> only = f.family ? std::optional(parse_family(*f.family)) : std::nullopt;
  for (const auto& [family, rhos] : c.sweep) {
    if (only && family != *only) continue;
    if (f.rho) {
      out.emplace_back(family, *f.rho);
      continue;
    }
    for (int rho : rhos) out.emplace_back(family, rho);
  }
  if (only && out.empty()) out.emplace_back(*only, f.rho.value_or(1));
  return out;
}

std::string model_name(Family family, int rho) { return std::string(to_string(family)) + "_rho" + std::to_string(rho); }

fs::path data_path(const ExperimentConfig& c, const Flags& f) {
  return f.data ? fs::path(*f.data) : fs::path(c.out) / "snapshots.csv";
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  csv::write_atomic(path, text);
}

// -- commands --

void cmd_collect(const Flags& f) {
  const auto c = resolve(f);
  const std::int64_t count = static_cast<std::int64_t>(c.excitation.episodes) * c.excitation.episode_length;
  const auto data = collect_snapshots(c.plant, c.excitation, count, c.ts, c.seed);
  const fs::path path = fs::path(c.out) / "snapshots.csv";
  fs::create_directories(c.out);
  write_snapshots_csv(data, path);
  write_snapshots_metadata(data, metadata_path(path));
  std::printf("wrote %s (%zu snapshots, ts=%g)\n", path.string().c_str(), data.snapshots.size(), data.ts);
}

void cmd_fit(const Flags& f) {
  const auto c = resolve(f);
  const auto data = read_snapshots(data_path(c, f));
  for (const auto& [family, rho] : selection(c, f)) {
    const Basis basis({family, data.n(), data.m(), rho});
    const Model model = extract_model(fit_koopman(data, basis, c.fit_options()));
    const fs::path path = fs::path(c.out) / "models" / (model_name(family, rho) + ".json");
    fs::create_directories(path.parent_path());
    write_model(model, path);
    std::printf("wrote %s (M=%lld)\n", path.string().c_str(), static_cast<long long>(basis.size()));
  }
}

std::vector<PredictionEpisode> validation_set(const ExperimentConfig& c, const Flags& f, const SnapshotDataset& data) {
  if (f.validation) return read_episodes_csv(*f.validation);
  require(data.params.has_value(), ErrorCode::InvalidArgument,
          "eval: dataset carries no arm parameters; pass --validation");
  const auto episodes =
      to_episodes(collect_trajectories(*data.params, c.excitation, c.eval_episodes, c.eval_steps, data.ts, c.eval_seed));
  write_episodes_csv(episodes, fs::path(c.out) / "validation.csv");
  return episodes;
}

void cmd_eval(const Flags& f) {
  const auto c = resolve(f);
  fs::create_directories(c.out);
  std::vector<ErrorRow> rows;
  if (f.model) {
    const Model model = read_model(*f.model);
    const Basis& basis = model_basis(model);
    const auto validation = f.validation ? read_episodes_csv(*f.validation)
                                         : validation_set(c, f, read_snapshots(data_path(c, f)));
    rows.push_back({fs::path(*f.model).stem().string(), basis.family(), basis.rho(), static_cast<int>(basis.size()),
                    prediction_error(model, validation)});
  } else {
    const auto data = read_snapshots(data_path(c, f));
    const auto validation = validation_set(c, f, data);
    for (const auto& [family, rho] : selection(c, f)) {
      const Basis basis({family, data.n(), data.m(), rho});
      const Model model = extract_model(fit_koopman(data, basis, c.fit_options()));
      rows.push_back({model_name(family, rho), family, rho, static_cast<int>(basis.size()),
                      prediction_error(model, validation)});
      std::printf("%-14s M=%-4lld normalized_error=%.6g\n", rows.back().model.c_str(),
                  static_cast<long long>(basis.size()), rows.back().report.normalized_error);
    }
  }
  const fs::path path = fs::path(c.out) / "errors.csv";
  write_text(path, error_report_csv(rows));
  std::printf("wrote %s\n", path.string().c_str());
}

Family family_for(ControllerKind kind) {
  switch (kind) {
    case ControllerKind::KMpc: return Family::Linear;
    case ControllerKind::KBMpc: return Family::Bilinear;
    case ControllerKind::KNMpc: return Family::Nonlinear;
  }
  return Family::Linear;
}

void cmd_control(const Flags& f) {
  const auto c = resolve(f);
  fs::create_directories(c.out);
  const ReferenceTrajectory ref = c.reference_csv.empty()
                                      ? block_m_reference(c.reference, c.ts)
                                      : polyline_reference(read_polyline_csv(c.reference_csv), c.reference.duration,
                                                           c.ts, c.plant.reach());
  std::vector<ControllerKind> kinds;
  for (const auto& name : f.controllers) kinds.push_back(parse_controller(name));
  if (kinds.empty()) kinds = {ControllerKind::KMpc, ControllerKind::KBMpc, ControllerKind::KNMpc};
  require(!f.model || kinds.size() == 1, ErrorCode::InvalidArgument, "control: --model needs a single --controller");

  std::optional<SnapshotDataset> data;
  for (const auto kind : kinds) {
    if (!f.model && !data) data = read_snapshots(data_path(c, f));
    const Model model =
        f.model ? read_model(*f.model)
                : extract_model(fit_koopman(*data, Basis({family_for(kind), data->n(), data->m(), f.rho.value_or(c.control_rho)}),
                                            c.fit_options()));
    const auto log = run_closed_loop(c.plant, kind, model, ref, c.mpc);
    const fs::path path = fs::path(c.out) / ("control_" + std::string(to_string(kind)) + ".csv");
    write_text(path, control_log_csv(log));
    std::printf("%-5s mean_error=%.6g m mean_solve_time=%.6g s -> %s\n", std::string(to_string(kind)).c_str(),
                log.mean_error, log.mean_solve_time, path.string().c_str());
  }
}

void cmd_theory(const Flags& f) {
  require(f.field.has_value(), ErrorCode::InvalidArgument, "theory: --field is required");
  const auto field = read_field(*f.field);
  const int rho = f.rho.value_or(1);
  RealizationCertificate cert;
  if (!f.family)
    cert = classify(field, rho);
  else if (parse_family(*f.family) == Family::Linear)
    cert = check_linear(field, rho);
  else if (parse_family(*f.family) == Family::Bilinear)
    cert = check_bilinear(field, rho);
  else
    throw Error(ErrorCode::InvalidArgument, "theory: --family must be linear or bilinear");
  const std::string text = certificate_to_string(cert);
  std::cout << text;
  if (f.out) {
    const fs::path path = fs::path(*f.out) / "certificate.json";
    write_text(path, text);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Koopman identification and control of a planar arm"};
  app.require_subcommand(1);
  Flags flags;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", flags.config, "JSON experiment config")->check(CLI::ExistingFile);
    sub->add_option("--seed", flags.seed, "random seed");
    sub->add_option("--out", flags.out, "output directory");
  };
  auto* collect = app.add_subcommand("collect", "simulate the arm and write a snapshot CSV");
  common(collect);
  collect->add_option("--episodes", flags.episodes, "number of excitation episodes");
  collect->add_option("--steps", flags.steps, "snapshots per episode");

  auto* fit = app.add_subcommand("fit", "fit Koopman models and write model files");
  auto* eval = app.add_subcommand("eval", "open-loop prediction error report");
  for (auto* sub : {fit, eval}) {
    common(sub);
    sub->add_option("--data", flags.data, "snapshot CSV (default <out>/snapshots.csv)");
    sub->add_option("--family", flags.family, "linear | bilinear | nonlinear");
    sub->add_option("--rho", flags.rho, "maximum monomial degree");
    sub->add_option("--ridge", flags.ridge, "absolute ridge weight");
  }
  eval->add_option("--validation", flags.validation, "episode CSV");
  eval->add_option("--model", flags.model, "evaluate this model file instead of fitting");

  auto* control = app.add_subcommand("control", "closed-loop tracking on the simulated arm");
  common(control);
  control->add_option("--controller", flags.controllers, "kmpc | kbmpc | knmpc (repeatable, default all)");
  control->add_option("--ref", flags.ref, "reference polyline CSV with columns x,y");
  control->add_option("--data", flags.data, "snapshot CSV (default <out>/snapshots.csv)");
  control->add_option("--model", flags.model, "model file to use instead of fitting");
  control->add_option("--rho", flags.rho, "degree of the fitted models");
  control->add_option("--ridge", flags.ridge, "absolute ridge weight");

  auto* theory = app.add_subcommand("theory", "check linear/bilinear realizability of a polynomial field");
  theory->add_option("--field", flags.field, "field text file")->required();
  theory->add_option("--rho", flags.rho, "maximum monomial degree");
  theory->add_option("--family", flags.family, "check only linear or bilinear");
  theory->add_option("--out", flags.out, "directory for certificate.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: E_USAGE: %s\n", e.what());
    return 2;
  }

  try {
    if (*collect) cmd_collect(flags);
    if (*fit) cmd_fit(flags);
    if (*eval) cmd_eval(flags);
    if (*control) cmd_control(flags);
    if (*theory) cmd_theory(flags);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s: %s\n", std::string(to_string(e.code())).data(), e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: E_INTERNAL: %s\n", e.what());
    return 1;
  }
  return 0;
}
