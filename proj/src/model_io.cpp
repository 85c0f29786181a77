#include <fstream>
#include <sstream>

#include <json.hpp>

#include "koopman/csv.hpp"
#include "koopman/koopman_id.hpp"

namespace koopman {

namespace {

using json = nlohmann::ordered_json;

json matrix_json(const Eigen::MatrixXd& A) {
  json data = json::array();
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index j = 0; j < A.cols(); ++j) data.push_back(A(i, j));
  return {{"rows", A.rows()}, {"cols", A.cols()}, {"data", std::move(data)}};
}

Eigen::MatrixXd json_matrix(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto& data = j.at("data");
  require(rows >= 0 && cols >= 0 && data.size() == static_cast<std::size_t>(rows * cols), ErrorCode::Parse,
          "model file: matrix data length does not match its dimensions");
  Eigen::MatrixXd A(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index c = 0; c < cols; ++c) A(i, c) = data[k++].get<double>();
  return A;
}

json basis_json(const Basis& basis) {
  json entries = json::array();
  for (const auto& e : basis.entries()) entries.push_back(json::array({e.state.exponents(), e.input.exponents()}));
  return entries;
}

void check_shape(const Eigen::MatrixXd& A, Eigen::Index rows, Eigen::Index cols, const char* name) {
  require(A.rows() == rows && A.cols() == cols, ErrorCode::Parse,
          std::string("model file: matrix ") + name + " has the wrong shape");
}

}  // namespace

std::string model_to_string(const Model& model) {
  const Basis& basis = model_basis(model);
  json j;
  j["family"] = std::string(to_string(basis.family()));
  j["n"] = basis.n();
  j["m"] = basis.m();
  j["rho"] = basis.rho();
  j["M"] = basis.size();
  j["ts"] = model_ts(model);
  j["ordering_version"] = kOrderingVersion;
  j["entries"] = basis_json(basis);
  json matrices;
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, ModelLinear>) {
          matrices["A"] = matrix_json(m.A);
          matrices["B"] = matrix_json(m.B);
          matrices["C"] = matrix_json(m.C);
        } else if constexpr (std::is_same_v<T, ModelBilinear>) {
          matrices["A"] = matrix_json(m.A);
          json H = json::array();
          for (const auto& h : m.H) H.push_back(matrix_json(h));
          matrices["H"] = std::move(H);
          matrices["B"] = matrix_json(m.B);
          matrices["C"] = matrix_json(m.C);
        } else {
          matrices["Crows"] = matrix_json(m.Crows);
        }
      },
      model);
  j["matrices"] = std::move(matrices);
  return j.dump(1) + "\n";
}

Model model_from_string(const std::string& text) {
  try {
    const json j = json::parse(text);
    require(j.at("ordering_version").get<int>() == kOrderingVersion, ErrorCode::Parse,
            "model file: unsupported ordering version");
    BasisSpec spec{parse_family(j.at("family").get<std::string>()), j.at("n").get<int>(), j.at("m").get<int>(),
                   j.at("rho").get<int>()};
    Basis basis(spec);
    require(basis_json(basis) == j.at("entries"), ErrorCode::Parse,
            "model file: entry list does not match the canonical ordering");
    const double ts = j.at("ts").get<double>();
    const auto& mj = j.at("matrices");
    const int n = basis.n(), m = basis.m(), N = basis.state_dimension();
    switch (spec.family) {
      case Family::Linear: {
        ModelLinear model{json_matrix(mj.at("A")), json_matrix(mj.at("B")), json_matrix(mj.at("C")), basis, ts};
        check_shape(model.A, N, N, "A");
        check_shape(model.B, N, m, "B");
        check_shape(model.C, n, N, "C");
        return model;
      }
      case Family::Bilinear: {
        ModelBilinear model{json_matrix(mj.at("A")), {}, json_matrix(mj.at("B")), json_matrix(mj.at("C")), basis, ts};
        for (const auto& h : mj.at("H")) model.H.push_back(json_matrix(h));
        check_shape(model.A, N, N, "A");
        check_shape(model.B, N, m, "B");
        check_shape(model.C, n, N, "C");
        require(static_cast<int>(model.H.size()) == m, ErrorCode::Parse, "model file: expected one H per input");
        for (const auto& h : model.H) check_shape(h, N, N, "H");
        return model;
      }
      case Family::Nonlinear: {
        ModelNonlinear model{json_matrix(mj.at("Crows")), basis, ts};
        check_shape(model.Crows, n, basis.size(), "Crows");
        return model;
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("model file: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::Parse) throw;
    throw Error(ErrorCode::Parse, std::string("model file: ") + e.what());
  }
  throw Error(ErrorCode::Parse, "model file: unknown family");
}

void write_model(const Model& model, const std::filesystem::path& path) {
  csv::write_atomic(path, model_to_string(model));
}

Model read_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return model_from_string(buf.str());
}

}  // namespace koopman
