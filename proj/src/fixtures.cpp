#include "ioss/fixtures.hpp"

#include <cmath>
#include <stdexcept>

#include "ioss/linear.hpp"

namespace ioss {

double bump(double x, double eps) {
  double a = std::abs(x);
  if (a >= eps) return 0.0;
  return std::exp(-a * a / (eps * eps - a * a));
}

double sigma_eps_h() { return 0.3 * (1.0 - kSigmaEpsF) * std::exp(-1.0); }

namespace {

// g(x) [1_{x<=-1}(1-b(x+1)) + 1_{x>=1}(1-b(x-1))] - x [1_{|x|<1}(1-b(x+1))(1-b(x-1))]
double gated_field(double x, double outer, double eps) {
  if (x <= -1.0) return outer * (1.0 - bump(x + 1.0, eps));
  if (x >= 1.0) return outer * (1.0 - bump(x - 1.0, eps));
  return -x * (1.0 - bump(x + 1.0, eps)) * (1.0 - bump(x - 1.0, eps));
}

Vec scalar(double v) { return Vec::Constant(1, v); }

SystemDef scalar_def(std::string name, std::function<double(double)> f,
                     std::function<double(double)> h) {
  SystemDef d;
  d.name = std::move(name);
  d.n = 1;
  d.p = 1;
  d.f = [f](const Vec& x, const Vec&, const Vec&) { return scalar(f(x[0])); };
  d.h = [h](const Vec& x) { return scalar(h(x[0])); };
  return d;
}

}  // namespace

std::vector<std::string> fixture_names() {
  return {"linear-double-integrator", "remark-3-10",  "example-6-3-sigma1",
          "example-6-3-sigma2",       "scalar-decay", "scalar-decay-blind",
          "scalar-input",             "scalar-disturbed"};
}

SystemModel make_fixture(const std::string& name) {
  if (name == "linear-double-integrator") return to_model(double_integrator(), name);

  if (name == "remark-3-10") {
    return SystemModel(scalar_def(
        name, [](double x) { return gated_field(x, x * x * x, kRemarkEps); },
        [](double x) { return x * (1.0 - smooth_step(std::abs(x) - 2.0)); }));
  }
  if (name == "example-6-3-sigma1") {
    const double eh = sigma_eps_h();
    return SystemModel(scalar_def(
        name, [](double x) { return gated_field(x, x, kSigmaEpsF); },
        [eh](double x) { return 1.0 - bump(x, eh); }));
  }
  if (name == "example-6-3-sigma2") {
    SystemDef d = scalar_def(name, [](double x) { return x; }, [](double) { return 1.0; });
    d.zero_check_waiver = "output is identically 1; comparison system only";
    return SystemModel(std::move(d));
  }
  if (name == "scalar-decay")
    return SystemModel(scalar_def(name, [](double x) { return -x; }, [](double x) { return x; }));
  if (name == "scalar-decay-blind") {
    SystemDef d = scalar_def(name, [](double x) { return -x; }, [](double) { return 0.0; });
    return SystemModel(std::move(d));
  }
  if (name == "scalar-input") {
    SystemDef d;
    d.name = name;
    d.n = 1;
    d.m_u = 1;
    d.p = 1;
    d.f = [](const Vec& x, const Vec& u, const Vec&) { return scalar(-x[0] + u[0]); };
    d.h = [](const Vec& x) { return x; };
    d.affine = AffineStructure{[](const Vec& x) { return Vec(-x); },
                               [](const Vec&) { return Mat::Ones(1, 1); }};
    return SystemModel(std::move(d));
  }
  if (name == "scalar-disturbed") {
    SystemDef d;
    d.name = name;
    d.n = 1;
    d.m_w = 1;
    d.p = 1;
    d.f = [](const Vec& x, const Vec&, const Vec& w) { return scalar(-x[0] + 0.5 * w[0] * x[0]); };
    d.h = [](const Vec& x) { return x; };
    return SystemModel(std::move(d));
  }
  throw std::invalid_argument("unknown fixture '" + name + "'");
}

}  // namespace ioss
