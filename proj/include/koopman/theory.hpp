#pragma once

#include <Eigen/Dense>

#include <map>
#include <string>
#include <vector>

#include "koopman/basis.hpp"

namespace koopman {

/// Real polynomial in n state variables, stored sparsely. Zero coefficients
/// are never stored.
class Polynomial {
 public:
  explicit Polynomial(int n = 1) : n_(n) {}
  static Polynomial constant(int n, double c);
  static Polynomial monomial(const MultiIndex& alpha, double c = 1.0);
  static Polynomial variable(int n, int k) { return monomial(MultiIndex::unit(n, k)); }

  int variables() const { return n_; }
  const std::map<MultiIndex, double>& terms() const { return terms_; }
  bool is_zero() const { return terms_.empty(); }
  int degree() const;  // -1 for the zero polynomial
  double coefficient(const MultiIndex& alpha) const;
  double max_abs_coefficient() const;

  void add_term(const MultiIndex& alpha, double c);
  Polynomial& operator+=(const Polynomial& other);
  Polynomial operator+(const Polynomial& other) const;
  Polynomial operator-(const Polynomial& other) const;
  Polynomial operator*(const Polynomial& other) const;
  Polynomial operator*(double s) const;

  Polynomial derivative(int k) const;
  double evaluate(const Eigen::VectorXd& x) const;

  /// Drops coefficients with |c| <= tol * max |c|.
  Polynomial pruned(double relative_tol) const;

 private:
  int n_;
  std::map<MultiIndex, double> terms_;
};

std::string to_string(const Polynomial& p);

/// x' = Fx(x) + sum_j Fu[j](x) u_j.
struct PolyControlAffineField {
  int n = 1;
  int m = 0;
  std::vector<Polynomial> drift;               // n entries
  std::vector<std::vector<Polynomial>> input;  // m columns of n entries

  void validate() const;
  Eigen::VectorXd evaluate(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const;
};

/// sum_k dz/dx_k * field_k.
Polynomial lie_derivative(const Polynomial& z, const std::vector<Polynomial>& field_column);

enum class Verdict { Linear, Bilinear, Neither };
std::string_view to_string(Verdict verdict);

/// A Lie-derivative monomial that escapes the span of the dictionary.
struct ResidualMonomial {
  int observable;  // index into monomials
  int input;       // -1 for the drift, otherwise the input index j
  MultiIndex monomial;
  double coefficient;
};

/// Coefficients of d/dt z = A z + B u + sum_j H_j z u_j over the degree-rho
/// monomials z (continuous time). Present whenever verdict != Neither.
struct RealizationCertificate {
  Verdict verdict = Verdict::Neither;
  int rho = 1;
  std::vector<MultiIndex> monomials;
  Eigen::MatrixXd A;
  Eigen::MatrixXd B;
  std::vector<Eigen::MatrixXd> H;
  std::vector<ResidualMonomial> residual_monomials;
};

constexpr double kSpanTolerance = 1e-12;

/// Linear iff every drift Lie derivative stays within degree rho and every
/// input Lie derivative is constant.
RealizationCertificate check_linear(const PolyControlAffineField& field, int rho);

/// Bilinear iff every drift and input Lie derivative stays within degree rho.
RealizationCertificate check_bilinear(const PolyControlAffineField& field, int rho);

/// Linear if check_linear holds, else Bilinear if check_bilinear holds, else Neither.
RealizationCertificate classify(const PolyControlAffineField& field, int rho);

/// Largest coefficient mismatch between each symbolic Lie derivative and its
/// reconstruction from the certificate.
double certificate_residual(const PolyControlAffineField& field, const RealizationCertificate& cert);

/// Text format, one term per line:
///   component_index : coefficient * x1^e1 * ... * xn^en [* u_j]
/// with 1-based component and variable indices, `#` comments and optional
/// `n = <int>` / `m = <int>` lines (otherwise inferred).
PolyControlAffineField parse_field(const std::string& text);
PolyControlAffineField read_field(const std::string& path);

/// JSON document with verdict, monomials, coefficient tables and residuals.
std::string certificate_to_string(const RealizationCertificate& cert);

}  // namespace koopman
