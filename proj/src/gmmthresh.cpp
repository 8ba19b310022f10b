#include "borrowdet/gmmthresh.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "borrowdet/common.hpp"

namespace borrowdet::gmmthresh {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kEmTol = 1e-6;
constexpr int kEmMaxIters = 200;

double normal_logpdf(double x, double mean, double variance) {
  const double d = x - mean;
  return -0.5 * (std::log(2.0 * kPi * variance) + d * d / variance);
}

double normal_pdf(double x, double mean, double variance) {
  return std::exp(normal_logpdf(x, mean, variance));
}

double sample_mean(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double population_variance(const std::vector<double>& xs, double mean) {
  double s = 0.0;
  for (double x : xs) s += (x - mean) * (x - mean);
  return s / static_cast<double>(xs.size());
}

// Linear-interpolation percentile on a sorted copy, q in [0, 1].
double percentile(std::vector<double> xs, double q) {
  std::sort(xs.begin(), xs.end());
  const double pos = q * static_cast<double>(xs.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, xs.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return xs[lo] + frac * (xs[hi] - xs[lo]);
}

double mixture_loglik(const std::vector<double>& xs,
                      const std::vector<GmmComponent>& comps) {
  double ll = 0.0;
  for (double x : xs) {
    double m = -std::numeric_limits<double>::infinity();
    for (const auto& c : comps) m = std::max(m, std::log(c.weight) + normal_logpdf(x, c.mean, c.variance));
    double s = 0.0;
    for (const auto& c : comps) s += std::exp(std::log(c.weight) + normal_logpdf(x, c.mean, c.variance) - m);
    ll += m + std::log(s);
  }
  return ll;
}

// One E+M sweep in place; reports whether the variance floor was applied
// (the floor can break EM's monotonicity guarantee when it binds).
bool em_step(const std::vector<double>& xs, std::vector<GmmComponent>& comps,
             double variance_floor) {
  const std::size_t n = xs.size();
  const std::size_t k = comps.size();
  std::vector<double> resp(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) {
      resp[i * k + j] = std::log(comps[j].weight) + normal_logpdf(xs[i], comps[j].mean, comps[j].variance);
      m = std::max(m, resp[i * k + j]);
    }
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(resp[i * k + j] - m);
    const double log_norm = m + std::log(s);
    for (std::size_t j = 0; j < k; ++j) resp[i * k + j] = std::exp(resp[i * k + j] - log_norm);
  }

  bool floored = false;
  for (std::size_t j = 0; j < k; ++j) {
    double nj = 0.0;
    for (std::size_t i = 0; i < n; ++i) nj += resp[i * k + j];
    if (nj < 1e-12) {
      comps[j].weight = nj / static_cast<double>(n);  // dying component: keep its shape
      continue;
    }
    double mu = 0.0;
    for (std::size_t i = 0; i < n; ++i) mu += resp[i * k + j] * xs[i];
    mu /= nj;
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += resp[i * k + j] * (xs[i] - mu) * (xs[i] - mu);
    var /= nj;
    if (var < variance_floor) {
      var = variance_floor;
      floored = true;
    }
    comps[j].weight = nj / static_cast<double>(n);
    comps[j].mean = mu;
    comps[j].variance = var;
  }
  return floored;
}

std::string report_field(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string();
}

}  // namespace

std::string method_name(ThresholdMethod method) {
  switch (method) {
    case ThresholdMethod::kGmmIntersection: return "gmm_intersection";
    case ThresholdMethod::kFallbackMeanStd: return "fallback_mean_std";
    case ThresholdMethod::kManual: return "manual";
  }
  throw std::logic_error("unreachable threshold method");
}

double brent_root(const std::function<double(double)>& f, double lo, double hi,
                  double xtol, double ftol, int max_iter) {
  double a = lo, b = hi;
  double fa = f(a), fb = f(b);
  if (fa == 0.0) return a;
  if (fb == 0.0) return b;
  if ((fa > 0.0) == (fb > 0.0)) {
    throw std::invalid_argument("brent_root: interval does not bracket a root");
  }
  double c = a, fc = fa;
  double d = b - a, e = d;
  for (int it = 0; it < max_iter; ++it) {
    if (std::abs(fc) < std::abs(fb)) {
      a = b; b = c; c = a;
      fa = fb; fb = fc; fc = fa;
    }
    const double tol = 2.0 * std::numeric_limits<double>::epsilon() * std::abs(b) + 0.5 * xtol;
    const double mid = 0.5 * (c - b);
    if (std::abs(mid) <= tol || std::abs(fb) <= ftol) return b;
    if (std::abs(e) >= tol && std::abs(fa) > std::abs(fb)) {
      // inverse quadratic interpolation, or secant when only two points differ
      const double s = fb / fa;
      double p, q;
      if (a == c) {
        p = 2.0 * mid * s;
        q = 1.0 - s;
      } else {
        const double qq = fa / fc;
        const double r = fb / fc;
        p = s * (2.0 * mid * qq * (qq - r) - (b - a) * (r - 1.0));
        q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
      }
      if (p > 0.0) q = -q;
      p = std::abs(p);
      if (2.0 * p < std::min(3.0 * mid * q - std::abs(tol * q), std::abs(e * q))) {
        e = d;
        d = p / q;
      } else {
        d = mid;
        e = d;
      }
    } else {
      d = mid;
      e = d;
    }
    a = b;
    fa = fb;
    b += (std::abs(d) > tol) ? d : (mid > 0.0 ? tol : -tol);
    fb = f(b);
    if ((fb > 0.0) == (fc > 0.0)) {
      c = a;
      fc = fa;
      d = b - a;
      e = d;
    }
  }
  return b;
}

GmmFit fit_gmm(const std::vector<double>& samples, int k, std::uint64_t seed) {
  (void)seed;  // initialization is deterministic (percentile-based)
  if (k != 1 && k != 2) throw ValidationError("fit_gmm: k must be 1 or 2");
  const std::size_t n = samples.size();
  if (n < static_cast<std::size_t>(10 * k)) {
    throw ValidationError("fit_gmm: need at least " + std::to_string(10 * k) +
                          " samples for k=" + std::to_string(k) + ", got " + std::to_string(n));
  }
  const double mean = sample_mean(samples);
  const double var = population_variance(samples, mean);
  if (var <= 0.0) throw ValidationError("fit_gmm: zero sample variance");

  GmmFit fit;
  fit.n = n;
  if (k == 1) {
    fit.components = {{1.0, mean, var}};
    fit.log_likelihood = mixture_loglik(samples, fit.components);
  } else {
    const double floor = 1e-6 * var;
    fit.components = {{0.5, percentile(samples, 0.25), var},
                      {0.5, percentile(samples, 0.75), var}};
    double ll = mixture_loglik(samples, fit.components);
    for (int it = 0; it < kEmMaxIters; ++it) {
      const auto snapshot = fit.components;
      const bool floored = em_step(samples, fit.components, floor);
      const double next_ll = mixture_loglik(samples, fit.components);
      if (next_ll + 1e-9 * (1.0 + std::abs(ll)) < ll) {
        if (floored) {  // keep the better pre-floor state and stop
          fit.components = snapshot;
          break;
        }
        throw std::logic_error("fit_gmm: EM log-likelihood decreased");
      }
      const bool converged = next_ll - ll < kEmTol;
      ll = next_ll;
      if (converged) break;
    }
    fit.log_likelihood = mixture_loglik(samples, fit.components);
    std::sort(fit.components.begin(), fit.components.end(),
              [](const GmmComponent& a, const GmmComponent& b) { return a.mean < b.mean; });
  }
  const int n_params = 3 * k - 1;
  fit.bic = n_params * std::log(static_cast<double>(n)) - 2.0 * fit.log_likelihood;
  return fit;
}

GmmFit select_model(const GmmFit& fit1, const GmmFit& fit2) {
  if (std::abs(fit1.bic - fit2.bic) < 1e-9) return fit1;
  return fit1.bic < fit2.bic ? fit1 : fit2;
}

std::optional<double> intersection_threshold(const GmmFit& fit) {
  if (fit.components.size() != 2) {
    throw ValidationError("intersection_threshold: fit must have exactly 2 components");
  }
  const auto& c1 = fit.components[0];
  const auto& c2 = fit.components[1];
  if (c1.mean == c2.mean) {
    throw ValidationError("intersection_threshold: degenerate fit with equal means");
  }
  const double lo = std::min(c1.mean, c2.mean);
  const double hi = std::max(c1.mean, c2.mean);
  const auto g = [&](double x) {
    return c1.weight * normal_pdf(x, c1.mean, c1.variance) -
           c2.weight * normal_pdf(x, c2.mean, c2.variance);
  };
  const double glo = g(lo), ghi = g(hi);
  if (glo == 0.0) return lo;
  if (ghi == 0.0) return hi;
  if ((glo > 0.0) == (ghi > 0.0)) return std::nullopt;
  // Sign-driven convergence only (ftol 0): with well-separated components the
  // density difference sits inside any absolute tolerance over a wide span,
  // and stopping there would bias the threshold toward one component.
  return brent_root(g, lo, hi, 1e-9, 0.0);
}

double fallback_threshold(const std::vector<double>& samples) {
  if (samples.size() < 2) throw ValidationError("fallback_threshold: need at least 2 samples");
  const double mean = sample_mean(samples);
  return mean + std::sqrt(population_variance(samples, mean));
}

ThresholdDecision auto_threshold(const std::vector<double>& samples, std::uint64_t seed) {
  if (samples.size() < 20) {
    throw ValidationError("auto_threshold: need at least 20 samples, got " +
                          std::to_string(samples.size()));
  }
  const GmmFit fit1 = fit_gmm(samples, 1, seed);
  const GmmFit fit2 = fit_gmm(samples, 2, seed);
  const GmmFit chosen = select_model(fit1, fit2);

  ThresholdDecision decision;
  decision.bic1 = fit1.bic;
  decision.bic2 = fit2.bic;
  decision.fit = chosen;
  if (chosen.components.size() == 2 &&
      chosen.components[0].mean != chosen.components[1].mean) {
    if (const auto root = intersection_threshold(chosen)) {
      decision.value = *root;
      decision.method = ThresholdMethod::kGmmIntersection;
      return decision;
    }
  }
  decision.value = fallback_threshold(samples);
  decision.method = ThresholdMethod::kFallbackMeanStd;
  return decision;
}

void write_threshold_report(const std::vector<ThresholdDecision>& decisions,
                            const std::string& path) {
  std::ostringstream out;
  out << "LANGUAGE\tMETHOD\tTHRESHOLD\tBIC1\tBIC2\tW1\tMU1\tVAR1\tW2\tMU2\tVAR2\n";
  for (const auto& d : decisions) {
    std::optional<double> w1, mu1, var1, w2, mu2, var2;
    if (d.fit && !d.fit->components.empty()) {
      w1 = d.fit->components[0].weight;
      mu1 = d.fit->components[0].mean;
      var1 = d.fit->components[0].variance;
      if (d.fit->components.size() > 1) {
        w2 = d.fit->components[1].weight;
        mu2 = d.fit->components[1].mean;
        var2 = d.fit->components[1].variance;
      }
    }
    out << d.language << '\t' << method_name(d.method) << '\t' << format_double(d.value)
        << '\t' << report_field(d.bic1) << '\t' << report_field(d.bic2) << '\t'
        << report_field(w1) << '\t' << report_field(mu1) << '\t' << report_field(var1) << '\t'
        << report_field(w2) << '\t' << report_field(mu2) << '\t' << report_field(var2) << '\n';
  }
  write_file(path, out.str());
}

}  // namespace borrowdet::gmmthresh
