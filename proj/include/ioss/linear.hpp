#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ioss/comparison.hpp"
#include "ioss/dynamics.hpp"

namespace ioss {

// x' = Ax + Bu, y = Cx
struct LinearSystem {
  Mat A, B, C;

  int n() const { return static_cast<int>(A.rows()); }
  int m() const { return static_cast<int>(B.cols()); }
  int p() const { return static_cast<int>(C.rows()); }
  void validate() const;
};

LinearSystem double_integrator();

SystemModel to_model(const LinearSystem& sys, const std::string& name);

class SingularSystemError : public std::runtime_error {
 public:
  explicit SingularSystemError(const std::string& what) : std::runtime_error(what) {}
};

// Solves M'P + PM = -Q for symmetric P by elimination on the n(n+1)/2
// unknowns of the upper triangle. Throws SingularSystemError.
Mat solve_lyapunov(const Mat& M, const Mat& Q);

struct HurwitzCertificate {
  bool hurwitz = false;
  // The vectorized system was singular: some pair of eigenvalues sums to
  // zero, so M has an eigenvalue with nonnegative real part.
  bool degenerate = false;
  Mat P;
  double residual = 0.0;  // ||M'P + PM + I||_inf
  std::string diagnostic;
};

HurwitzCertificate is_hurwitz(const Mat& M);

// Largest singular value by power iteration on M'M.
double spectral_norm(const Mat& M);

struct QuadraticCertificate {
  Mat P, L;
  double residual = 0.0;
  double lambda_min = 0.0, lambda_max = 0.0;
  double norm_P = 0.0, norm_B = 0.0, norm_L = 0.0;
  // grad V . f <= -alpha(|x|) + sigma1(|u|) + sigma2(|y|) with
  // alpha(r) = r^2/2, sigma1(r) = 4|P|^2|B|^2 r^2, sigma2(r) = 4|P|^2|L|^2 r^2.
  ComparisonFn alpha, sigma1, sigma2;
  // lambda_min r^2 <= V(x) <= lambda_max r^2
  ComparisonFn alpha1, alpha2;
  // ||exp(t(A+LC))|| <= K e^{-delta t}
  double K = 0.0, delta = 0.0;
  double K_certified = 0.0;
  std::vector<double> fit_times;
};

struct CertificateOptions {
  int fit_points = 2000;
  // The fit grid spans [0, fit_horizon_factor / delta].
  double fit_horizon_factor = 20.0;
};

QuadraticCertificate synthesize_certificate(const LinearSystem& sys, const Mat& L,
                                            const CertificateOptions& opts = {});

// Max-form UIOSS gains from the observer representation
// |x| <= K e^{-delta t}|xi| + (K|B|/delta)||u|| + (K|L|/delta)||y||,
// bounding the sum of three terms by three times the largest:
// beta(r,t) = 3K r e^{-delta t}, gamma1(r) = 3K|B| r/delta, gamma2(r) = 3K|L| r/delta.
struct LinearIossGains {
  KLFn beta;
  ComparisonFn gamma1, gamma2;
};
LinearIossGains linear_ioss_gains(const QuadraticCertificate& c);

struct DetectabilityVerdict {
  bool detectable = false;
  std::optional<Mat> L;
  int observable_dim = 0;
  std::string diagnostic;
};

DetectabilityVerdict detectability_check(const LinearSystem& sys,
                                         const std::optional<Mat>& L = std::nullopt);

}  // namespace ioss
