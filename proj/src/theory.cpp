#include "koopman/theory.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <regex>
#include <sstream>

#include <json.hpp>

namespace koopman {

// -- Polynomial --

Polynomial Polynomial::constant(int n, double c) {
  Polynomial p(n);
  p.add_term(MultiIndex::zero(n), c);
  return p;
}

Polynomial Polynomial::monomial(const MultiIndex& alpha, double c) {
  Polynomial p(alpha.size());
  p.add_term(alpha, c);
  return p;
}

int Polynomial::degree() const {
  int d = -1;
  for (const auto& [alpha, c] : terms_) d = std::max(d, alpha.degree());
  return d;
}

double Polynomial::coefficient(const MultiIndex& alpha) const {
  const auto it = terms_.find(alpha);
  return it == terms_.end() ? 0.0 : it->second;
}

double Polynomial::max_abs_coefficient() const {
  double out = 0.0;
  for (const auto& [alpha, c] : terms_) out = std::max(out, std::abs(c));
  return out;
}

void Polynomial::add_term(const MultiIndex& alpha, double c) {
  require(alpha.size() == n_, ErrorCode::DimensionMismatch, "polynomial: variable count mismatch");
  if (c == 0.0) return;
  auto [it, inserted] = terms_.emplace(alpha, c);
  if (!inserted) {
    it->second += c;
    if (it->second == 0.0) terms_.erase(it);
  }
}

Polynomial& Polynomial::operator+=(const Polynomial& other) {
  require(other.n_ == n_, ErrorCode::DimensionMismatch, "polynomial: variable count mismatch");
  for (const auto& [alpha, c] : other.terms_) add_term(alpha, c);
  return *this;
}

Polynomial Polynomial::operator+(const Polynomial& other) const {
  Polynomial out = *this;
  out += other;
  return out;
}

Polynomial Polynomial::operator-(const Polynomial& other) const { return *this + other * -1.0; }

Polynomial Polynomial::operator*(const Polynomial& other) const {
  require(other.n_ == n_, ErrorCode::DimensionMismatch, "polynomial: variable count mismatch");
  Polynomial out(n_);
  for (const auto& [a, ca] : terms_)
    for (const auto& [b, cb] : other.terms_) out.add_term(a + b, ca * cb);
  return out;
}

Polynomial Polynomial::operator*(double s) const {
  Polynomial out(n_);
  for (const auto& [alpha, c] : terms_) out.add_term(alpha, c * s);
  return out;
}

Polynomial Polynomial::derivative(int k) const {
  Polynomial out(n_);
  for (const auto& [alpha, c] : terms_) {
    if (alpha[k] == 0) continue;
    std::vector<int> e = alpha.exponents();
    const int power = e[k]--;
    out.add_term(MultiIndex(std::move(e)), c * power);
  }
  return out;
}

double Polynomial::evaluate(const Eigen::VectorXd& x) const {
  require(x.size() == n_, ErrorCode::DimensionMismatch, "polynomial: evaluation point dimension");
  double sum = 0.0;
  for (const auto& [alpha, c] : terms_) {
    double term = c;
    for (int k = 0; k < n_; ++k) term *= std::pow(x(k), alpha[k]);
    sum += term;
  }
  return sum;
}

Polynomial Polynomial::pruned(double relative_tol) const {
  const double cutoff = relative_tol * max_abs_coefficient();
  Polynomial out(n_);
  for (const auto& [alpha, c] : terms_)
    if (std::abs(c) > cutoff) out.terms_.emplace(alpha, c);
  return out;
}

std::string to_string(const Polynomial& p) {
  if (p.is_zero()) return "0";
  std::ostringstream out;
  bool first = true;
  for (const auto& [alpha, c] : p.terms()) {
    if (!first) out << " + ";
    first = false;
    out << c;
    if (alpha.degree() > 0) out << '*' << to_string(alpha);
  }
  return out.str();
}

// -- fields --

void PolyControlAffineField::validate() const {
  require(n >= 1 && m >= 0, ErrorCode::InvalidArgument, "field: invalid dimensions");
  require(static_cast<int>(drift.size()) == n && static_cast<int>(input.size()) == m, ErrorCode::DimensionMismatch,
          "field: component count mismatch");
  for (const auto& p : drift)
    require(p.variables() == n, ErrorCode::DimensionMismatch, "field: drift variable count mismatch");
  for (const auto& col : input) {
    require(static_cast<int>(col.size()) == n, ErrorCode::DimensionMismatch, "field: input column length");
    for (const auto& p : col)
      require(p.variables() == n, ErrorCode::DimensionMismatch, "field: input variable count mismatch");
  }
}

Eigen::VectorXd PolyControlAffineField::evaluate(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const {
  Eigen::VectorXd out(n);
  for (int k = 0; k < n; ++k) {
    out(k) = drift[k].evaluate(x);
    for (int j = 0; j < m; ++j) out(k) += input[j][k].evaluate(x) * u(j);
  }
  return out;
}

Polynomial lie_derivative(const Polynomial& z, const std::vector<Polynomial>& field_column) {
  require(static_cast<int>(field_column.size()) == z.variables(), ErrorCode::DimensionMismatch,
          "lie_derivative: field has " + std::to_string(field_column.size()) + " components for " +
              std::to_string(z.variables()) + " variables");
  Polynomial out(z.variables());
  for (int k = 0; k < z.variables(); ++k) out += z.derivative(k) * field_column[k];
  return out;
}

std::string_view to_string(Verdict verdict) {
  switch (verdict) {
    case Verdict::Linear: return "Linear";
    case Verdict::Bilinear: return "Bilinear";
    case Verdict::Neither: return "Neither";
  }
  return "Unknown";
}

// -- span membership --

namespace {

RealizationCertificate certify(const PolyControlAffineField& field, int rho, bool linear) {
  field.validate();
  require(rho >= 1, ErrorCode::InvalidArgument, "realization check: rho must be >= 1");
  RealizationCertificate cert;
  cert.rho = rho;
  cert.monomials = enumerate_monomials(field.n, rho);
  const int N = static_cast<int>(cert.monomials.size());
  std::map<MultiIndex, int> position;
  for (int i = 0; i < N; ++i) position.emplace(cert.monomials[i], i);

  cert.A = Eigen::MatrixXd::Zero(N, N);
  cert.B = Eigen::MatrixXd::Zero(N, field.m);
  cert.H.assign(field.m, Eigen::MatrixXd::Zero(N, N));

  for (int i = 0; i < N; ++i) {
    const Polynomial z = Polynomial::monomial(cert.monomials[i]);
    const Polynomial drift_part = lie_derivative(z, field.drift).pruned(kSpanTolerance);
    for (const auto& [alpha, c] : drift_part.terms()) {
      if (alpha.degree() <= rho)
        cert.A(i, position.at(alpha)) = c;
      else
        cert.residual_monomials.push_back({i, -1, alpha, c});
    }
    for (int j = 0; j < field.m; ++j) {
      const Polynomial input_part = lie_derivative(z, field.input[j]).pruned(kSpanTolerance);
      for (const auto& [alpha, c] : input_part.terms()) {
        if (alpha.degree() == 0)
          cert.B(i, j) = c;
        else if (!linear && alpha.degree() <= rho)
          cert.H[j](i, position.at(alpha)) = c;
        else
          cert.residual_monomials.push_back({i, j, alpha, c});
      }
    }
  }

  if (cert.residual_monomials.empty()) {
    cert.verdict = linear ? Verdict::Linear : Verdict::Bilinear;
  } else {
    cert.verdict = Verdict::Neither;
    cert.A.resize(0, 0);
    cert.B.resize(0, 0);
    cert.H.clear();
  }
  return cert;
}

}  // namespace

RealizationCertificate check_linear(const PolyControlAffineField& field, int rho) { return certify(field, rho, true); }

RealizationCertificate check_bilinear(const PolyControlAffineField& field, int rho) {
  return certify(field, rho, false);
}

RealizationCertificate classify(const PolyControlAffineField& field, int rho) {
  auto linear = check_linear(field, rho);
  if (linear.verdict == Verdict::Linear) return linear;
  return check_bilinear(field, rho);
}

double certificate_residual(const PolyControlAffineField& field, const RealizationCertificate& cert) {
  require(cert.verdict != Verdict::Neither, ErrorCode::InvalidArgument,
          "certificate_residual: certificate carries no coefficients");
  const int N = static_cast<int>(cert.monomials.size());
  double worst = 0.0;
  for (int i = 0; i < N; ++i) {
    const Polynomial z = Polynomial::monomial(cert.monomials[i]);
    Polynomial rebuilt(field.n);
    for (int k = 0; k < N; ++k) rebuilt.add_term(cert.monomials[k], cert.A(i, k));
    worst = std::max(worst, (lie_derivative(z, field.drift) - rebuilt).max_abs_coefficient());
    for (int j = 0; j < field.m; ++j) {
      Polynomial input_part = Polynomial::constant(field.n, cert.B(i, j));
      for (int k = 0; k < N; ++k) input_part.add_term(cert.monomials[k], cert.H[j](i, k));
      worst = std::max(worst, (lie_derivative(z, field.input[j]) - input_part).max_abs_coefficient());
    }
  }
  return worst;
}

// -- text format --

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

struct RawTerm {
  int component;
  double coefficient;
  std::map<int, int> powers;  // 1-based variable -> exponent
  int input;                  // 1-based, 0 for drift
};

}  // namespace

PolyControlAffineField parse_field(const std::string& text) {
  static const std::regex directive(R"(^\s*([nm])\s*=\s*(\d+)\s*$)");
  static const std::regex factor(R"(^(x|u)_?(\d+)(?:\^(\d+))?$)");
  std::istringstream in(text);
  std::string line;
  int lineno = 0, n = 0, m = 0;
  bool n_given = false, m_given = false;
  std::vector<RawTerm> raw;
  auto fail = [&](const std::string& why) {
    throw Error(ErrorCode::Parse, "field line " + std::to_string(lineno) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    std::smatch match;
    if (std::regex_match(line, match, directive)) {
      (match[1] == "n" ? n : m) = std::stoi(match[2]);
      (match[1] == "n" ? n_given : m_given) = true;
      continue;
    }
    const auto colon = line.find(':');
    if (colon == std::string::npos) fail("expected 'component : coefficient * monomial'");
    RawTerm term{0, 0.0, {}, 0};
    try {
      term.component = std::stoi(trim(line.substr(0, colon)));
    } catch (const std::exception&) {
      fail("bad component index");
    }
    if (term.component < 1) fail("component indices are 1-based");
    std::vector<std::string> factors;
    std::istringstream rest(line.substr(colon + 1));
    for (std::string f; std::getline(rest, f, '*');) factors.push_back(trim(f));
    if (factors.empty() || factors.front().empty()) fail("missing coefficient");
    const std::string& coeff = factors.front();
    auto [ptr, ec] = std::from_chars(coeff.data(), coeff.data() + coeff.size(), term.coefficient);
    if (ec != std::errc() || ptr != coeff.data() + coeff.size()) fail("bad coefficient '" + coeff + "'");
    for (std::size_t f = 1; f < factors.size(); ++f) {
      if (!std::regex_match(factors[f], match, factor)) fail("bad factor '" + factors[f] + "'");
      const int index = std::stoi(match[2]);
      const int power = match[3].matched ? std::stoi(match[3]) : 1;
      if (index < 1) fail("variable indices are 1-based");
      if (match[1] == "x") {
        term.powers[index] += power;
      } else {
        if (term.input != 0 || power != 1) fail("control-affine terms carry at most one input factor u_j");
        term.input = index;
      }
    }
    raw.push_back(std::move(term));
  }
  for (const auto& t : raw) {
    if (!n_given) n = std::max(n, t.component);
    if (!n_given && !t.powers.empty()) n = std::max(n, t.powers.rbegin()->first);
    if (!m_given) m = std::max(m, t.input);
  }
  require(n >= 1, ErrorCode::Parse, "field: no components");
  PolyControlAffineField field{n, m, std::vector<Polynomial>(n, Polynomial(n)),
                               std::vector<std::vector<Polynomial>>(m, std::vector<Polynomial>(n, Polynomial(n)))};
  for (const auto& t : raw) {
    require(t.component <= n && t.input <= m, ErrorCode::Parse, "field: index exceeds declared dimension");
    std::vector<int> e(n, 0);
    for (const auto& [k, p] : t.powers) {
      require(k <= n, ErrorCode::Parse, "field: variable index exceeds n");
      e[k - 1] = p;
    }
    auto& target = t.input == 0 ? field.drift[t.component - 1] : field.input[t.input - 1][t.component - 1];
    target.add_term(MultiIndex(std::move(e)), t.coefficient);
  }
  return field;
}

PolyControlAffineField read_field(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_field(buf.str());
}

std::string certificate_to_string(const RealizationCertificate& cert) {
  nlohmann::ordered_json j;
  j["verdict"] = std::string(to_string(cert.verdict));
  j["rho"] = cert.rho;
  auto names = nlohmann::json::array();
  for (const auto& a : cert.monomials) names.push_back(to_string(a));
  j["monomials"] = names;
  auto table = [](const Eigen::MatrixXd& M) {
    auto rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < M.rows(); ++i) {
      auto row = nlohmann::json::array();
      for (Eigen::Index k = 0; k < M.cols(); ++k) row.push_back(M(i, k));
      rows.push_back(row);
    }
    return rows;
  };
  if (cert.verdict != Verdict::Neither) {
    j["A"] = table(cert.A);
    j["B"] = table(cert.B);
    auto H = nlohmann::json::array();
    for (const auto& h : cert.H) H.push_back(table(h));
    j["H"] = H;
  }
  auto residual = nlohmann::ordered_json::array();
  for (const auto& r : cert.residual_monomials)
    residual.push_back(nlohmann::ordered_json{{"observable", to_string(cert.monomials[r.observable])},
                        {"source", r.input < 0 ? std::string("drift") : "u" + std::to_string(r.input + 1)},
                        {"monomial", to_string(r.monomial)},
                        {"coefficient", r.coefficient}});
  j["residual_monomials"] = residual;
  return j.dump(2) + "\n";
}

}  // namespace koopman
