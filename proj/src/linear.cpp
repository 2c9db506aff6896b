#include "ioss/linear.hpp"

#include <Eigen/Cholesky>
#include <Eigen/SVD>
#include <unsupported/Eigen/MatrixFunctions>
#include <cmath>
#include <sstream>

namespace ioss {

void LinearSystem::validate() const {
  const auto n = A.rows();
  if (n < 1 || A.cols() != n) throw std::invalid_argument("linear system: A must be square");
  if (n > 32) throw std::invalid_argument("linear system: n > 32 is not supported");
  if (B.rows() != n) throw std::invalid_argument("linear system: B must have n rows");
  if (C.cols() != n) throw std::invalid_argument("linear system: C must have n columns");
  if (!A.allFinite() || !B.allFinite() || !C.allFinite())
    throw std::invalid_argument("linear system: non-finite entries");
}

LinearSystem double_integrator() {
  LinearSystem s;
  s.A = Mat{{0.0, 1.0}, {0.0, 0.0}};
  s.B = Mat{{0.0}, {1.0}};
  s.C = Mat{{1.0, 0.0}};
  return s;
}

SystemModel to_model(const LinearSystem& sys, const std::string& name) {
  sys.validate();
  SystemDef d;
  d.name = name;
  d.n = sys.n();
  d.m_u = sys.m();
  d.m_w = 0;
  d.p = sys.p();
  Mat A = sys.A, B = sys.B, C = sys.C;
  d.f = [A, B](const Vec& x, const Vec& u, const Vec&) { return Vec(A * x + B * u); };
  d.h = [C](const Vec& x) { return Vec(C * x); };
  d.affine = AffineStructure{[A](const Vec& x) { return Vec(A * x); },
                             [B](const Vec&) { return B; }};
  return SystemModel(std::move(d));
}

namespace {

// Index of the upper-triangle unknown P(i,j), i <= j.
int sym_index(int i, int j, int n) {
  if (i > j) std::swap(i, j);
  return i * n - i * (i - 1) / 2 + (j - i);
}

// Gaussian elimination with partial pivoting; throws on a negligible pivot.
Vec eliminate(Mat K, Vec rhs) {
  const int N = static_cast<int>(K.rows());
  const double scale = std::max(K.cwiseAbs().maxCoeff(), 1e-300);
  for (int c = 0; c < N; ++c) {
    int piv = c;
    for (int r = c + 1; r < N; ++r)
      if (std::abs(K(r, c)) > std::abs(K(piv, c))) piv = r;
    if (std::abs(K(piv, c)) <= 1e-10 * scale)
      throw SingularSystemError("eigenvalue on imaginary axis or solver degeneracy");
    if (piv != c) {
      K.row(c).swap(K.row(piv));
      std::swap(rhs[c], rhs[piv]);
    }
    for (int r = c + 1; r < N; ++r) {
      double f = K(r, c) / K(c, c);
      if (f == 0.0) continue;
      K.row(r).tail(N - c) -= f * K.row(c).tail(N - c);
      rhs[r] -= f * rhs[c];
    }
  }
  Vec x(N);
  for (int r = N - 1; r >= 0; --r) {
    double s = rhs[r];
    for (int c = r + 1; c < N; ++c) s -= K(r, c) * x[c];
    x[r] = s / K(r, r);
  }
  return x;
}

double inf_norm(const Mat& M) { return M.cwiseAbs().rowwise().sum().maxCoeff(); }

}  // namespace

Mat solve_lyapunov(const Mat& M, const Mat& Q) {
  const int n = static_cast<int>(M.rows());
  if (M.cols() != n || Q.rows() != n || Q.cols() != n)
    throw std::invalid_argument("solve_lyapunov: dimension mismatch");
  const int N = n * (n + 1) / 2;
  Mat K = Mat::Zero(N, N);
  Vec rhs(N);
  // Row for entry (i,j): sum_k M(k,i) P(k,j) + sum_k P(i,k) M(k,j) = -Q(i,j).
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      int row = sym_index(i, j, n);
      for (int k = 0; k < n; ++k) {
        K(row, sym_index(k, j, n)) += M(k, i);
        K(row, sym_index(i, k, n)) += M(k, j);
      }
      rhs[row] = -0.5 * (Q(i, j) + Q(j, i));
    }
  Vec p = eliminate(K, rhs);
  Mat P(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) P(i, j) = p[sym_index(i, j, n)];
  return P;
}

HurwitzCertificate is_hurwitz(const Mat& M) {
  if (M.rows() != M.cols() || M.rows() < 1)
    throw std::invalid_argument("is_hurwitz: matrix must be square");
  const auto n = M.rows();
  HurwitzCertificate cert;
  try {
    cert.P = solve_lyapunov(M, Mat::Identity(n, n));
  } catch (const SingularSystemError& e) {
    cert.degenerate = true;
    cert.diagnostic = e.what();
    return cert;
  }
  cert.residual = inf_norm(M.transpose() * cert.P + cert.P * M + Mat::Identity(n, n));
  Eigen::LLT<Mat> llt(cert.P);
  cert.hurwitz = llt.info() == Eigen::Success;
  cert.diagnostic = cert.hurwitz ? "Lyapunov solution is positive definite"
                                 : "Lyapunov solution is not positive definite";
  return cert;
}

double spectral_norm(const Mat& M) {
  if (M.size() == 0) return 0.0;
  Mat S = M.transpose() * M;
  const auto n = S.rows();
  if (S.cwiseAbs().maxCoeff() == 0.0) return 0.0;
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = 1.0 + 0.1 * static_cast<double>(i) + 0.01 * (i % 3);
  v.normalize();
  double lambda = 0.0;
  for (int it = 0; it < 20000; ++it) {
    Vec w = S * v;
    double nw = w.norm();
    if (nw == 0.0) break;
    double next = v.dot(w);
    v = w / nw;
    if (it > 10 && std::abs(next - lambda) <= 1e-15 * std::abs(next)) {
      lambda = next;
      break;
    }
    lambda = next;
  }
  lambda = std::max(lambda, v.dot(S * v));
  return std::sqrt(std::max(lambda, 0.0));
}

QuadraticCertificate synthesize_certificate(const LinearSystem& sys, const Mat& L,
                                            const CertificateOptions& opts) {
  sys.validate();
  if (L.rows() != sys.n() || L.cols() != sys.p())
    throw std::invalid_argument("synthesize_certificate: L must be n x p");
  const Mat M = sys.A + L * sys.C;
  HurwitzCertificate h = is_hurwitz(M);
  if (!h.hurwitz)
    throw std::domain_error("synthesize_certificate: A+LC is not Hurwitz (" + h.diagnostic + ")");

  QuadraticCertificate c;
  c.P = 0.5 * (h.P + h.P.transpose());
  c.L = L;
  c.residual = h.residual;
  c.norm_P = spectral_norm(c.P);
  c.norm_B = spectral_norm(sys.B);
  c.norm_L = spectral_norm(L);
  c.lambda_max = c.norm_P;
  Eigen::LLT<Mat> llt(c.P);
  Mat Pinv = llt.solve(Mat::Identity(sys.n(), sys.n()));
  c.lambda_min = 1.0 / spectral_norm(0.5 * (Pinv + Pinv.transpose()));

  const double p2 = c.norm_P * c.norm_P;
  c.alpha = ComparisonFn::power(0.5, 2.0);
  c.sigma1 = ComparisonFn::power(4.0 * p2 * c.norm_B * c.norm_B, 2.0);
  c.sigma2 = ComparisonFn::power(4.0 * p2 * c.norm_L * c.norm_L, 2.0);
  c.alpha1 = ComparisonFn::power(c.lambda_min, 2.0);
  c.alpha2 = ComparisonFn::power(c.lambda_max, 2.0);

  // V' = -|x|^2 <= -V/lambda_max along x' = Mx.
  c.delta = 1.0 / (2.0 * c.lambda_max);
  c.K_certified = std::sqrt(c.lambda_max / c.lambda_min);
  const double T = opts.fit_horizon_factor / c.delta;
  double sampled = 0.0;
  for (int k = 0; k < opts.fit_points; ++k) {
    double t = T * k / (opts.fit_points - 1);
    c.fit_times.push_back(t);
    Mat E = (t * M).exp();
    sampled = std::max(sampled, spectral_norm(E) * std::exp(c.delta * t));
  }
  c.K = std::min(c.K_certified, 1.001 * sampled);
  return c;
}

DetectabilityVerdict detectability_check(const LinearSystem& sys, const std::optional<Mat>& L) {
  sys.validate();
  const int n = sys.n(), p = sys.p();
  DetectabilityVerdict v;
  if (L) {
    if (L->rows() != n || L->cols() != p)
      throw std::invalid_argument("detectability_check: L must be n x p");
    HurwitzCertificate h = is_hurwitz(sys.A + *L * sys.C);
    v.detectable = h.hurwitz;
    v.L = *L;
    v.diagnostic = "user gain: " + h.diagnostic;
    return v;
  }

  // Observability map and its kernel (the unobservable subspace).
  Mat O(std::max(p, 1) * n, n);
  O.setZero();
  if (p > 0) {
    Mat blk = sys.C;
    for (int k = 0; k < n; ++k) {
      O.block(k * p, 0, p, n) = blk;
      blk = blk * sys.A;
    }
  }
  Eigen::JacobiSVD<Mat> svd(O, Eigen::ComputeFullV);
  const Vec& sv = svd.singularValues();
  int r = 0;
  const double smax = sv.size() ? sv[0] : 0.0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (smax > 0.0 && sv[i] > 1e-9 * smax) ++r;
  v.observable_dim = r;
  const Mat V = svd.matrixV();
  const Mat To = V.leftCols(r), Tu = V.rightCols(n - r);

  if (r < n) {
    Mat Auu = Tu.transpose() * sys.A * Tu;
    HurwitzCertificate hu = is_hurwitz(Auu);
    if (!hu.hurwitz) {
      v.detectable = false;
      v.diagnostic = "unobservable block is not Hurwitz (" + hu.diagnostic + ")";
      return v;
    }
  }
  if (r == 0) {
    v.detectable = true;
    v.L = Mat::Zero(n, p);
    v.diagnostic = "no observable modes; A is Hurwitz";
    return v;
  }

  const Mat Aoo = To.transpose() * sys.A * To;
  const Mat Co = sys.C * To;
  // Single-output reduction: try output combinations until the pair is
  // observable with acceptable conditioning.
  std::vector<Vec> candidates;
  for (int i = 0; i < p; ++i) candidates.push_back(Vec::Unit(p, i));
  candidates.push_back(Vec::Ones(p));
  for (int s = 1; s <= 4; ++s) {
    Vec w(p);
    for (int i = 0; i < p; ++i) w[i] = std::cos(1.0 + 2.3 * s * (i + 1));
    candidates.push_back(w);
  }
  for (const Vec& w : candidates) {
    Eigen::RowVectorXd c = w.transpose() * Co;
    Mat Oc(r, r);
    Eigen::RowVectorXd row = c;
    for (int k = 0; k < r; ++k) {
      Oc.row(k) = row;
      row = row * Aoo;
    }
    Eigen::JacobiSVD<Mat> s2(Oc);
    const Vec& q = s2.singularValues();
    if (q[r - 1] <= 0.0 || q[0] / q[r - 1] > 1e12) continue;
    Mat phi = Mat::Identity(r, r);
    Mat base = Aoo + Mat::Identity(r, r);
    for (int k = 0; k < r; ++k) phi = phi * base;
    Vec er = Vec::Unit(r, r - 1);
    Vec l = -phi * Oc.fullPivLu().solve(er);
    Mat Lfull = To * l * w.transpose();
    HurwitzCertificate h = is_hurwitz(sys.A + Lfull * sys.C);
    if (!h.hurwitz) continue;
    v.detectable = true;
    v.L = Lfull;
    std::ostringstream os;
    os << "observable dimension " << r << ", poles placed at -1";
    v.diagnostic = os.str();
    return v;
  }
  v.detectable = true;
  v.diagnostic = "detectable, but pole placement failed on every output combination "
                 "(ill-conditioned); supply L";
  return v;
}

LinearIossGains linear_ioss_gains(const QuadraticCertificate& c) {
  // 3K r e^{-delta t} = mu1(mu2(r) e^{-t}) with mu1(s) = 3K s^delta, mu2(r) = r^{1/delta}
  KLFn beta = KLFn::factored(ComparisonFn::power(3.0 * c.K, c.delta),
                             ComparisonFn::power(1.0, 1.0 / c.delta));
  return {beta, ComparisonFn::linear(3.0 * c.K * c.norm_B / c.delta),
          ComparisonFn::linear(3.0 * c.K * c.norm_L / c.delta)};
}

}  // namespace ioss
