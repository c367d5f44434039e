#ifndef SARSEG_GAMMA_MODEL_HPP
#define SARSEG_GAMMA_MODEL_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "sarseg/errors.hpp"
#include "sarseg/special.hpp"

namespace sarseg {

/// Gamma density with shape a and rate lambda: mean a/lambda, variance a/lambda^2.
struct GammaMode {
  double shape = 1.0;
  double rate = 1.0;

  double mean() const { return shape / rate; }
  double variance() const { return shape / (rate * rate); }

  /// Moment inversion: a = m^2 / s^2, lambda = m / s^2.
  static GammaMode from_mean_sigma(double mean, double sigma) {
    if (!(mean > 0.0) || !(sigma > 0.0))
      throw std::invalid_argument("gamma mode: mean and sigma must be positive");
    const double var = sigma * sigma;
    return {mean * mean / var, mean / var};
  }

  friend bool operator==(const GammaMode&, const GammaMode&) = default;
};

inline void check_mode(const GammaMode& m) {
  if (!(m.shape > 0.0) || !(m.rate > 0.0) || !std::isfinite(m.shape) || !std::isfinite(m.rate))
    throw std::invalid_argument("gamma mode: shape and rate must be positive and finite");
}

/// log of lambda^a / Gamma(a) * y^(a-1) * exp(-lambda y). At y = 0 this is
/// +inf for a < 1, log(lambda) for a = 1 and -inf for a > 1.
inline double gamma_log_pdf(double y, const GammaMode& m) {
  if (!std::isfinite(y)) throw std::invalid_argument("gamma pdf: non-finite argument");
  if (y < 0.0) return -std::numeric_limits<double>::infinity();
  if (y == 0.0) {
    if (m.shape < 1.0) return std::numeric_limits<double>::infinity();
    if (m.shape == 1.0) return std::log(m.rate);
    return -std::numeric_limits<double>::infinity();
  }
  return m.shape * std::log(m.rate) - std::lgamma(m.shape) + (m.shape - 1.0) * std::log(y) - m.rate * y;
}

inline double gamma_pdf(double y, const GammaMode& m) { return std::exp(gamma_log_pdf(y, m)); }

/// Finite Gamma mixture. Weights are strictly positive and sum to one.
class GammaMixture {
 public:
  GammaMixture() = default;

  GammaMixture(std::vector<GammaMode> modes, std::vector<double> weights)
      : modes_(std::move(modes)), weights_(std::move(weights)) {
    if (modes_.empty()) throw std::invalid_argument("gamma mixture: no modes");
    if (modes_.size() != weights_.size())
      throw std::invalid_argument("gamma mixture: mode/weight count mismatch");
    double total = 0.0;
    for (std::size_t s = 0; s < modes_.size(); ++s) {
      check_mode(modes_[s]);
      if (!(weights_[s] > 0.0)) throw std::invalid_argument("gamma mixture: weights must be positive");
      total += weights_[s];
    }
    if (std::fabs(total - 1.0) > 1e-9) throw std::invalid_argument("gamma mixture: weights must sum to 1");
  }

  explicit GammaMixture(const GammaMode& single) : GammaMixture({single}, {1.0}) {}

  std::size_t size() const { return modes_.size(); }
  bool empty() const { return modes_.empty(); }
  const std::vector<GammaMode>& modes() const { return modes_; }
  const std::vector<double>& weights() const { return weights_; }

  double mean() const {
    double m = 0.0;
    for (std::size_t s = 0; s < size(); ++s) m += weights_[s] * modes_[s].mean();
    return m;
  }

  double variance() const {
    const double mu = mean();
    double second = 0.0;
    for (std::size_t s = 0; s < size(); ++s) {
      const double ms = modes_[s].mean();
      second += weights_[s] * (modes_[s].variance() + ms * ms);
    }
    return second - mu * mu;
  }

  friend bool operator==(const GammaMixture&, const GammaMixture&) = default;

 private:
  std::vector<GammaMode> modes_;
  std::vector<double> weights_;
};

inline double log_sum_exp(std::span<const double> v) {
  double hi = -std::numeric_limits<double>::infinity();
  for (double x : v) hi = std::max(hi, x);
  if (!std::isfinite(hi)) return hi;
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - hi);
  return hi + std::log(acc);
}

inline double mixture_log_pdf(double y, const GammaMixture& mix) {
  if (mix.empty()) throw std::invalid_argument("mixture pdf: empty mixture");
  double terms[64];
  std::vector<double> heap;
  double* t = terms;
  if (mix.size() > 64) {
    heap.resize(mix.size());
    t = heap.data();
  }
  for (std::size_t s = 0; s < mix.size(); ++s)
    t[s] = std::log(mix.weights()[s]) + gamma_log_pdf(y, mix.modes()[s]);
  return log_sum_exp({t, mix.size()});
}

inline double mixture_pdf(double y, const GammaMixture& mix) { return std::exp(mixture_log_pdf(y, mix)); }

inline double log_likelihood(std::span<const double> samples, const GammaMixture& mix) {
  double ll = 0.0;
  for (double y : samples) ll += mixture_log_pdf(y, mix);
  return ll;
}

struct EmConfig {
  int max_iters = 200;
  double loglik_rel_tol = 1e-7;
  double weight_prune_threshold = 1e-3;
  double min_intensity_clamp = 1e-6;
  // Span of the equidistant initial modes.
  double quantile_low = 0.01;
  double quantile_high = 0.99;
  // Shapes outside this range mark a collapsed mode.
  double min_shape = 1e-4;
  double max_shape = 1e6;
  // true: the coupled rate/shape updates are iterated to their fixed point
  // inside each M-step. false: one rate update then one shape update.
  bool converge_m_step = true;
};

/// Row-major N x K matrix of mode posteriors P(z_i = s | y_i).
struct Responsibilities {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> w;

  double operator()(std::size_t i, std::size_t s) const { return w[i * cols + s]; }
};

struct EmResult {
  GammaMixture mixture;
  int iterations = 0;
  bool converged = false;
  /// Observed-data log-likelihood of the parameters entering each E-step.
  std::vector<double> loglik_trace;
  /// Indices into loglik_trace after which a mode was removed.
  std::vector<int> prune_events;
};

inline std::vector<double> clamp_samples(std::span<const double> samples, double floor) {
  std::vector<double> y(samples.begin(), samples.end());
  for (double& v : y) {
    if (!std::isfinite(v)) throw std::invalid_argument("gamma fit: non-finite sample");
    v = std::max(v, floor);
  }
  return y;
}

/// Linear-interpolated quantile of sorted data.
inline double sorted_quantile(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("quantile of empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

/// E-step: responsibilities and the observed-data log-likelihood.
inline Responsibilities compute_responsibilities(std::span<const double> y, const GammaMixture& mix,
                                                 double* loglik = nullptr) {
  const std::size_t n = y.size();
  const std::size_t k = mix.size();
  Responsibilities r{n, k, std::vector<double>(n * k)};
  std::vector<double> log_norm(k);
  std::vector<double> log_weight(k);
  for (std::size_t s = 0; s < k; ++s) {
    const GammaMode& m = mix.modes()[s];
    log_norm[s] = m.shape * std::log(m.rate) - std::lgamma(m.shape);
    log_weight[s] = std::log(mix.weights()[s]);
  }
  double ll = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double* row = &r.w[i * k];
    const double logy = std::log(y[i]);
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < k; ++s) {
      const GammaMode& m = mix.modes()[s];
      row[s] = log_weight[s] + log_norm[s] + (m.shape - 1.0) * logy - m.rate * y[i];
      hi = std::max(hi, row[s]);
    }
    double total = 0.0;
    for (std::size_t s = 0; s < k; ++s) {
      row[s] = std::exp(row[s] - hi);
      total += row[s];
    }
    for (std::size_t s = 0; s < k; ++s) row[s] /= total;
    ll += hi + std::log(total);
  }
  if (loglik) *loglik = ll;
  return r;
}

/// Solves log a - digamma(a) = s for a > 0 (s > 0) by Newton from Minka's
/// closed-form guess.
inline double solve_gamma_shape(double s) {
  if (!(s > 0.0) || !std::isfinite(s)) throw std::domain_error("gamma shape: statistic must be positive");
  double a = (3.0 - s + std::sqrt((s - 3.0) * (s - 3.0) + 24.0 * s)) / (12.0 * s);
  for (int it = 0; it < 100; ++it) {
    const double f = log_minus_digamma(a) - s;
    const double fp = 1.0 / a - trigamma(a);
    double next = a - f / fp;
    if (!(next > 0.0)) next = 0.5 * a;
    const bool done = std::fabs(next - a) <= 1e-13 * a;
    a = next;
    if (done) return a;
  }
  throw ConvergenceError("gamma shape: Newton iteration did not converge");
}

/// ML fit of a single Gamma: log a - digamma(a) = log(mean) - mean(log y),
/// then lambda = a / mean.
inline GammaMode fit_single_gamma_ml(std::span<const double> samples, double clamp = 1e-6) {
  if (samples.size() < 2) throw std::invalid_argument("single gamma fit: need at least 2 samples");
  const std::vector<double> y = clamp_samples(samples, clamp);
  const auto [lo, hi] = std::minmax_element(y.begin(), y.end());
  if (*lo == *hi) throw DegenerateDataError("single gamma fit: samples have zero variance");
  double sum = 0.0;
  double sum_log = 0.0;
  for (double v : y) {
    sum += v;
    sum_log += std::log(v);
  }
  const double n = static_cast<double>(y.size());
  const double mean = sum / n;
  const double s = std::log(mean) - sum_log / n;
  if (!(s > 1e-12)) throw DegenerateDataError("single gamma fit: samples have zero variance");
  const double a = solve_gamma_shape(s);
  return {a, a / mean};
}

/// K equidistant Gammas spanning the [quantile_low, quantile_high] sample
/// range with equal weights. Each mode gets variance var(y) / K^2 so the
/// modes tile the span instead of all covering the whole histogram.
inline GammaMixture em_initialize(std::span<const double> samples, std::size_t k,
                                  const EmConfig& cfg = {}) {
  if (k < 1) throw std::invalid_argument("em_initialize: K must be at least 1");
  const std::vector<double> y = clamp_samples(samples, cfg.min_intensity_clamp);
  if (y.size() < 2) throw std::invalid_argument("em_initialize: need at least 2 samples");
  std::vector<double> sorted = y;
  std::sort(sorted.begin(), sorted.end());
  const double q_lo = sorted_quantile(sorted, cfg.quantile_low);
  const double q_hi = sorted_quantile(sorted, cfg.quantile_high);
  double sum = 0.0;
  for (double v : y) sum += v;
  const double mean = sum / static_cast<double>(y.size());
  double ss = 0.0;
  for (double v : y) ss += (v - mean) * (v - mean);
  double var = ss / static_cast<double>(y.size() - 1);
  if (!(var > 0.0)) throw DegenerateDataError("em_initialize: samples have zero variance");
  const double kd = static_cast<double>(k);
  const double mode_var = var / (kd * kd);
  std::vector<GammaMode> modes;
  std::vector<double> weights(k, 1.0 / kd);
  for (std::size_t s = 0; s < k; ++s) {
    double m = k == 1 ? 0.5 * (q_lo + q_hi)
                      : q_lo + (q_hi - q_lo) * static_cast<double>(s) / (kd - 1.0);
    m = std::max(m, cfg.min_intensity_clamp);
    modes.push_back({m * m / mode_var, m / mode_var});
  }
  return GammaMixture(std::move(modes), std::move(weights));
}

struct MStepResult {
  std::vector<GammaMode> modes;
  std::vector<double> weights;
};

/// One M-step from responsibilities: alpha_s = mean_i w_si; then
/// lambda_s = a_s sum_i w_si / sum_i w_si y_i and
/// a_s = psi^-1(log lambda_s + sum_i w_si log y_i / sum_i w_si).
/// Single pass: lambda from the current shape, then a from the new lambda.
/// Converged: the alternation's fixed point, a solving
/// log a - psi(a) = log(ybar_w) - mean_w(log y), with lambda = a / ybar_w.
/// Returns raw per-mode parameters; pruning happens in the caller.
inline MStepResult em_m_step(std::span<const double> y, std::span<const double> logy,
                             const Responsibilities& r, const GammaMixture& current,
                             bool converge = true) {
  const std::size_t n = r.rows;
  const std::size_t k = r.cols;
  std::vector<double> sw(k, 0.0);
  std::vector<double> swy(k, 0.0);
  std::vector<double> swlogy(k, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = &r.w[i * k];
    for (std::size_t s = 0; s < k; ++s) {
      sw[s] += row[s];
      swy[s] += row[s] * y[i];
      swlogy[s] += row[s] * logy[i];
    }
  }
  MStepResult out;
  out.modes.resize(k);
  out.weights.resize(k);
  for (std::size_t s = 0; s < k; ++s) {
    out.weights[s] = sw[s] / static_cast<double>(n);
    if (!(sw[s] > 0.0) || !(swy[s] > 0.0)) {
      out.weights[s] = 0.0;
      out.modes[s] = current.modes()[s];
      continue;
    }
    const double ybar = swy[s] / sw[s];
    const double stat = std::log(ybar) - swlogy[s] / sw[s];
    if (converge && stat > 1e-12) {
      const double shape = solve_gamma_shape(stat);
      out.modes[s] = {shape, shape / ybar};
      continue;
    }
    // A zero statistic means the mode sits on a single value; the collapse
    // shows up as a huge shape and is pruned by the caller.
    const double rate = current.modes()[s].shape * sw[s] / swy[s];
    const double shape = inverse_psi(std::log(rate) + swlogy[s] / sw[s]);
    out.modes[s] = {shape, rate};
  }
  return out;
}

/// EM for a K-mode Gamma mixture with free shape and rate per mode. Modes
/// whose weight drops below the prune threshold, or whose shape collapses,
/// are removed and the remaining weights renormalized.
inline EmResult em_fit_mixture(std::span<const double> samples, std::size_t k_init,
                               const EmConfig& cfg = {}) {
  if (samples.empty()) throw std::invalid_argument("em_fit_mixture: empty sample set");
  if (k_init < 1) throw std::invalid_argument("em_fit_mixture: K must be at least 1");
  const std::vector<double> y = clamp_samples(samples, cfg.min_intensity_clamp);
  std::vector<double> logy(y.size());
  std::transform(y.begin(), y.end(), logy.begin(), [](double v) { return std::log(v); });

  EmResult result;
  result.mixture = em_initialize(y, k_init, cfg);
  double prev = 0.0;
  for (int it = 0;; ++it) {
    double ll = 0.0;
    const Responsibilities r = compute_responsibilities(y, result.mixture, &ll);
    result.loglik_trace.push_back(ll);
    if (it > 0 && std::fabs(ll - prev) <= cfg.loglik_rel_tol * std::fabs(prev)) {
      result.converged = true;
      break;
    }
    if (it >= cfg.max_iters) break;
    prev = ll;

    MStepResult m = em_m_step(y, logy, r, result.mixture, cfg.converge_m_step);
    std::vector<GammaMode> kept;
    std::vector<double> kept_w;
    for (std::size_t s = 0; s < m.modes.size(); ++s) {
      const GammaMode& g = m.modes[s];
      const bool collapsed = !(g.shape >= cfg.min_shape && g.shape <= cfg.max_shape) ||
                             !std::isfinite(g.rate) || !(g.rate > 0.0);
      if (m.weights[s] < cfg.weight_prune_threshold || collapsed) continue;
      kept.push_back(g);
      kept_w.push_back(m.weights[s]);
    }
    if (kept.empty()) throw DegenerateDataError("em_fit_mixture: every mode collapsed");
    if (kept.size() != m.modes.size())
      result.prune_events.push_back(static_cast<int>(result.loglik_trace.size()) - 1);
    const double total = std::accumulate(kept_w.begin(), kept_w.end(), 0.0);
    for (double& w : kept_w) w /= total;
    result.mixture = GammaMixture(std::move(kept), std::move(kept_w));
    result.iterations = it + 1;
  }
  return result;
}

}  // namespace sarseg

#endif  // SARSEG_GAMMA_MODEL_HPP
