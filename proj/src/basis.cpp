#include "koopman/basis.hpp"

#include <algorithm>
#include <numeric>

namespace koopman {

MultiIndex::MultiIndex(std::vector<int> exponents) : exponents_(std::move(exponents)) {
  for (int e : exponents_) require(e >= 0, ErrorCode::InvalidArgument, "negative exponent in multi-index");
  degree_ = std::accumulate(exponents_.begin(), exponents_.end(), 0);
}

MultiIndex MultiIndex::unit(int vars, int k) {
  std::vector<int> e(vars, 0);
  e[k] = 1;
  return MultiIndex(std::move(e));
}

MultiIndex MultiIndex::operator+(const MultiIndex& other) const {
  require(size() == other.size(), ErrorCode::DimensionMismatch, "multi-index length mismatch");
  std::vector<int> e(exponents_);
  for (int k = 0; k < size(); ++k) e[k] += other[k];
  return MultiIndex(std::move(e));
}

std::string to_string(const MultiIndex& index, std::string_view var) {
  std::string out;
  for (int k = 0; k < index.size(); ++k) {
    if (index[k] == 0) continue;
    if (!out.empty()) out += '*';
    out += std::string(var) + std::to_string(k + 1);
    if (index[k] > 1) out += '^' + std::to_string(index[k]);
  }
  return out.empty() ? "1" : out;
}

std::string_view to_string(Family family) {
  switch (family) {
    case Family::Linear: return "linear";
    case Family::Bilinear: return "bilinear";
    case Family::Nonlinear: return "nonlinear";
  }
  return "unknown";
}

Family parse_family(std::string_view name) {
  if (name == "linear") return Family::Linear;
  if (name == "bilinear") return Family::Bilinear;
  if (name == "nonlinear") return Family::Nonlinear;
  throw Error(ErrorCode::InvalidArgument, "unknown basis family '" + std::string(name) + "'");
}

namespace {

// Appends every exponent vector of exactly `degree` in lexicographically
// descending order (x1^d first).
void append_degree(int n, int degree, std::vector<int>& current, int k, std::vector<MultiIndex>& out) {
  if (k == n - 1) {
    current[k] = degree;
    out.emplace_back(current);
    current[k] = 0;
    return;
  }
  for (int e = degree; e >= 0; --e) {
    current[k] = e;
    append_degree(n, degree - e, current, k + 1, out);
  }
  current[k] = 0;
}

}  // namespace

std::vector<MultiIndex> enumerate_monomials(int n, int rho) {
  require(n >= 1, ErrorCode::InvalidArgument, "enumerate_monomials: n must be >= 1");
  require(rho >= 0 && rho <= kMaxDegree, ErrorCode::InvalidArgument,
          "enumerate_monomials: rho must be in [0, " + std::to_string(kMaxDegree) + "]");
  std::vector<MultiIndex> out;
  out.reserve(static_cast<std::size_t>(monomial_count(n, rho)));
  if (rho >= 1)
    for (int k = 0; k < n; ++k) out.push_back(MultiIndex::unit(n, k));
  out.push_back(MultiIndex::zero(n));
  std::vector<int> current(n, 0);
  for (int d = 2; d <= rho; ++d) append_degree(n, d, current, 0, out);
  return out;
}

std::int64_t monomial_count(int n, int rho) {
  // C(n + rho, rho) built incrementally; every partial product is itself a binomial.
  std::int64_t c = 1;
  for (int k = 1; k <= rho; ++k) c = c * (n + k) / k;
  return c;
}

std::int64_t basis_dimension(const BasisSpec& spec) {
  const std::int64_t N = monomial_count(spec.n, spec.rho);
  switch (spec.family) {
    case Family::Linear: return N + spec.m;
    case Family::Bilinear: return N * (spec.m + 1);
    case Family::Nonlinear: return monomial_count(spec.n + spec.m, spec.rho);
  }
  return 0;
}

Basis::Basis(const BasisSpec& spec) : spec_(spec) {
  require(spec.n >= 1, ErrorCode::InvalidArgument, "basis: n must be >= 1");
  require(spec.m >= 0, ErrorCode::InvalidArgument, "basis: m must be >= 0");
  require(spec.rho >= 1 && spec.rho <= kMaxDegree, ErrorCode::InvalidArgument,
          "basis: rho must be in [1, " + std::to_string(kMaxDegree) + "]");
  const int n = spec.n, m = spec.m;
  const MultiIndex no_input = MultiIndex::zero(m);

  if (spec.family == Family::Nonlinear) {
    for (const auto& joint : enumerate_monomials(n + m, spec.rho)) {
      const auto& e = joint.exponents();
      entries_.push_back({MultiIndex({e.begin(), e.begin() + n}), MultiIndex({e.begin() + n, e.end()})});
    }
    state_dim_ = static_cast<int>(std::count_if(entries_.begin(), entries_.end(),
                                                [](const BasisEntry& b) { return b.input.degree() == 0; }));
    return;
  }

  const auto monomials = enumerate_monomials(n, spec.rho);
  state_dim_ = static_cast<int>(monomials.size());
  for (const auto& z : monomials) entries_.push_back({z, no_input});
  if (spec.family == Family::Linear) {
    for (int j = 0; j < m; ++j) entries_.push_back({MultiIndex::zero(n), MultiIndex::unit(m, j)});
  } else {
    for (int j = 0; j < m; ++j)
      for (const auto& z : monomials) entries_.push_back({z, MultiIndex::unit(m, j)});
  }
}

void Basis::check_dims(Eigen::Index xs, Eigen::Index us) const {
  require(xs == spec_.n && us == spec_.m, ErrorCode::DimensionMismatch,
          "lift: expected x in R^" + std::to_string(spec_.n) + " and u in R^" + std::to_string(spec_.m) +
              ", got " + std::to_string(xs) + " and " + std::to_string(us));
}

Eigen::VectorXd Basis::lift_state(const Eigen::VectorXd& x) const {
  require(spec_.family != Family::Nonlinear, ErrorCode::InvalidArgument,
          "lift_state: nonlinear family has no separate state block");
  return lift(x, Eigen::VectorXd::Zero(spec_.m)).head(state_dim_);
}

void Basis::lift_with_jacobians(const Eigen::VectorXd& x, const Eigen::VectorXd& u, Eigen::VectorXd& psi,
                                Eigen::MatrixXd& dx, Eigen::MatrixXd& du) const {
  check_dims(x.size(), u.size());
  const int n = spec_.n, m = spec_.m, M = size();
  Eigen::MatrixXd xp, up;
  detail::power_table<double>(x, spec_.rho, xp);
  detail::power_table<double>(u, spec_.rho, up);
  psi.resize(M);
  dx.setZero(M, n);
  du.setZero(M, m);
  for (int i = 0; i < M; ++i) {
    const auto& e = entries_[i];
    double value = 1.0;
    for (int k = 0; k < n; ++k) value *= xp(k, e.state[k]);
    for (int j = 0; j < m; ++j) value *= up(j, e.input[j]);
    psi(i) = value;
    // Each partial is recomputed as a product so that zero components do not
    // require division.
    for (int k = 0; k < n; ++k) {
      if (e.state[k] == 0) continue;
      double d = e.state[k] * xp(k, e.state[k] - 1);
      for (int l = 0; l < n; ++l)
        if (l != k) d *= xp(l, e.state[l]);
      for (int j = 0; j < m; ++j) d *= up(j, e.input[j]);
      dx(i, k) = d;
    }
    for (int j = 0; j < m; ++j) {
      if (e.input[j] == 0) continue;
      double d = e.input[j] * up(j, e.input[j] - 1);
      for (int l = 0; l < m; ++l)
        if (l != j) d *= up(l, e.input[l]);
      for (int k = 0; k < n; ++k) d *= xp(k, e.state[k]);
      du(i, j) = d;
    }
  }
}

Basis::Jacobians Basis::lift_jacobians(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const {
  Jacobians J;
  Eigen::VectorXd psi;
  lift_with_jacobians(x, u, psi, J.dx, J.du);
  return J;
}

bool Basis::operator==(const Basis& other) const {
  return spec_.family == other.spec_.family && spec_.n == other.spec_.n && spec_.m == other.spec_.m &&
         spec_.rho == other.spec_.rho;
}

Eigen::VectorXd lift(const Basis& basis, const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
  return basis.lift(x, u);
}

Basis::Jacobians lift_jacobians(const Basis& basis, const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
  return basis.lift_jacobians(x, u);
}

}  // namespace koopman
