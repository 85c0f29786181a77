#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "koopman/error.hpp"

namespace koopman {

/// Exponent tuple of a monomial. The degree is always the sum of the exponents.
class MultiIndex {
 public:
  MultiIndex() = default;
  explicit MultiIndex(std::vector<int> exponents);
  static MultiIndex zero(int vars) { return MultiIndex(std::vector<int>(vars, 0)); }
  static MultiIndex unit(int vars, int k);

  int size() const { return static_cast<int>(exponents_.size()); }
  int degree() const { return degree_; }
  int operator[](int k) const { return exponents_[k]; }
  const std::vector<int>& exponents() const { return exponents_; }

  MultiIndex operator+(const MultiIndex& other) const;
  auto operator<=>(const MultiIndex&) const = default;

 private:
  std::vector<int> exponents_;
  int degree_ = 0;
};

std::string to_string(const MultiIndex& index, std::string_view var = "x");

enum class Family { Linear, Bilinear, Nonlinear };

std::string_view to_string(Family family);
Family parse_family(std::string_view name);

struct BasisSpec {
  Family family = Family::Linear;
  int n = 1;
  int m = 0;
  int rho = 1;
};

constexpr int kMaxDegree = 12;

/// All multi-indices in n variables with total degree <= rho. The n degree-one
/// indices come first, then the constant, then the remaining indices graded by
/// degree and lexicographically (larger leading exponent first) within a degree.
std::vector<MultiIndex> enumerate_monomials(int n, int rho);

/// (n + rho)! / (n! rho!) without overflow for the supported range.
std::int64_t monomial_count(int n, int rho);

std::int64_t basis_dimension(const BasisSpec& spec);

/// One observable: a state monomial times an input monomial.
struct BasisEntry {
  MultiIndex state;
  MultiIndex input;
};

/// Ordered monomial dictionary. Immutable after construction.
///
/// Linear:    [state monomials (N) | u_1 .. u_m]
/// Bilinear:  [state monomials (N) | state monomials * u_1 | ... | * u_m]
/// Nonlinear: monomials in (x, u) of degree <= rho, state projections first.
///
/// In every family entries 0..n-1 are the projections x_1..x_n.
class Basis {
 public:
  explicit Basis(const BasisSpec& spec);

  const BasisSpec& spec() const { return spec_; }
  Family family() const { return spec_.family; }
  int n() const { return spec_.n; }
  int m() const { return spec_.m; }
  int rho() const { return spec_.rho; }
  int size() const { return static_cast<int>(entries_.size()); }
  const std::vector<BasisEntry>& entries() const { return entries_; }
  const BasisEntry& entry(int i) const { return entries_[i]; }

  /// Number of leading state-only entries (N). For the nonlinear family this
  /// counts every entry whose input exponent is zero, which are not contiguous.
  int state_dimension() const { return state_dim_; }
  /// Position of the constant monomial among the state-only entries.
  int constant_index() const { return spec_.n; }

  template <typename Scalar>
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> lift(
      const Eigen::Ref<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>& x,
      const Eigen::Ref<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>& u) const;

  Eigen::VectorXd lift(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const {
    return lift<double>(x, u);
  }

  /// The N state-only observables, i.e. the leading block of lift for the
  /// linear and bilinear families.
  Eigen::VectorXd lift_state(const Eigen::VectorXd& x) const;

  struct Jacobians {
    Eigen::MatrixXd dx;  // M x n
    Eigen::MatrixXd du;  // M x m
  };
  Jacobians lift_jacobians(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const;

  /// Writes lift and both Jacobians in one pass over the entries.
  void lift_with_jacobians(const Eigen::VectorXd& x, const Eigen::VectorXd& u, Eigen::VectorXd& psi,
                           Eigen::MatrixXd& dx, Eigen::MatrixXd& du) const;

  bool operator==(const Basis& other) const;

 private:
  void check_dims(Eigen::Index xs, Eigen::Index us) const;

  BasisSpec spec_;
  std::vector<BasisEntry> entries_;
  int state_dim_ = 0;
};

Eigen::VectorXd lift(const Basis& basis, const Eigen::VectorXd& x, const Eigen::VectorXd& u);
Basis::Jacobians lift_jacobians(const Basis& basis, const Eigen::VectorXd& x, const Eigen::VectorXd& u);

// -- implementation of the templated evaluation --

namespace detail {
template <typename Scalar>
void power_table(const Eigen::Ref<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>& v, int rho,
                 Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& table) {
  table.resize(v.size(), rho + 1);
  for (Eigen::Index k = 0; k < v.size(); ++k) {
    table(k, 0) = Scalar(1);
    for (int p = 1; p <= rho; ++p) table(k, p) = table(k, p - 1) * v(k);
  }
}
}  // namespace detail

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> Basis::lift(
    const Eigen::Ref<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>& x,
    const Eigen::Ref<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>& u) const {
  check_dims(x.size(), u.size());
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> xp, up;
  detail::power_table<Scalar>(x, spec_.rho, xp);
  detail::power_table<Scalar>(u, spec_.rho, up);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> psi(size());
  for (int i = 0; i < size(); ++i) {
    const auto& e = entries_[i];
    Scalar value(1);
    for (int k = 0; k < spec_.n; ++k)
      if (e.state[k] != 0) value *= xp(k, e.state[k]);
    for (int j = 0; j < spec_.m; ++j)
      if (e.input[j] != 0) value *= up(j, e.input[j]);
    psi(i) = value;
  }
  return psi;
}

}  // namespace koopman
