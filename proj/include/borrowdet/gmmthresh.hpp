#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace borrowdet::gmmthresh {

struct GmmComponent {
  double weight = 0.0;
  double mean = 0.0;
  double variance = 0.0;
};

struct GmmFit {
  std::vector<GmmComponent> components;  // sorted by mean, ascending
  double log_likelihood = 0.0;
  double bic = 0.0;
  std::size_t n = 0;
};

enum class ThresholdMethod { kGmmIntersection, kFallbackMeanStd, kManual };

std::string method_name(ThresholdMethod method);

struct ThresholdDecision {
  double value = 0.0;
  ThresholdMethod method = ThresholdMethod::kManual;
  std::optional<GmmFit> fit;  // the BIC-winning fit; absent for manual
  std::optional<double> bic1, bic2;
  std::string language;
};

// Classic Brent root finder on a bracketing interval [lo, hi].
double brent_root(const std::function<double(double)>& f, double lo, double hi,
                  double xtol, double ftol, int max_iter = 200);

// k = 1 solves in closed form (sample mean / population variance); k = 2
// runs EM from a 25th/75th-percentile initialization with equal weights and
// shared sample variance, to an absolute log-likelihood improvement of 1e-6
// or 200 iterations, with a variance floor of 1e-6 * sample variance.
// BIC = (3k - 1) ln n - 2 log_likelihood.
GmmFit fit_gmm(const std::vector<double>& samples, int k, std::uint64_t seed);

// Lower BIC wins; ties within 1e-9 go to the first (1-component) fit.
GmmFit select_model(const GmmFit& fit1, const GmmFit& fit2);

// Root of w1*N(x;m1,v1) - w2*N(x;m2,v2) strictly between the two component
// means; nullopt when the difference has the same sign at both means.
std::optional<double> intersection_threshold(const GmmFit& fit);

// Sample mean plus one population standard deviation.
double fallback_threshold(const std::vector<double>& samples);

// Full procedure: fit both models, BIC-select, use the component
// intersection when the 2-component model wins and one exists, otherwise
// fall back to mean + std.
ThresholdDecision auto_threshold(const std::vector<double>& samples, std::uint64_t seed);

// TSV report: LANGUAGE, METHOD, THRESHOLD, BIC1, BIC2, W1, MU1, VAR1, W2, MU2, VAR2.
void write_threshold_report(const std::vector<ThresholdDecision>& decisions,
                            const std::string& path);

}  // namespace borrowdet::gmmthresh
