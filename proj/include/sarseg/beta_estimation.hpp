#ifndef SARSEG_BETA_ESTIMATION_HPP
#define SARSEG_BETA_ESTIMATION_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "sarseg/energy.hpp"
#include "sarseg/errors.hpp"
#include "sarseg/grid.hpp"
#include "sarseg/lbp.hpp"
#include "sarseg/rng.hpp"

namespace sarseg {

enum class BetaMethod { kLsf, kCd, kLoopy };

inline const char* to_string(BetaMethod m) {
  switch (m) {
    case BetaMethod::kLsf: return "LSF";
    case BetaMethod::kCd: return "CD";
    case BetaMethod::kLoopy: return "LOOPY";
  }
  return "?";
}

inline BetaMethod parse_beta_method(const std::string& s) {
  if (s == "LSF" || s == "lsf") return BetaMethod::kLsf;
  if (s == "CD" || s == "cd") return BetaMethod::kCd;
  if (s == "LOOPY" || s == "loopy") return BetaMethod::kLoopy;
  throw std::invalid_argument("unknown beta method: " + s);
}

inline constexpr double kBetaMax = 10.0;

struct BetaEstimate {
  double beta = 0.0;
  BetaMethod method = BetaMethod::kLsf;
  int iterations = 0;
  double residual = 0.0;   // LSF: RMS row residual; CD: |d logPL / d beta|; LOOPY: g / |C|
  double raw_beta = 0.0;   // before clamping to [0, beta_max]
  bool clamped = false;
  bool boundary = false;   // LOOPY: no sign change of g on [0, beta_max]
  bool no_contrast = false;
  bool converged = true;   // LOOPY: every LBP run met its tolerance
  std::size_t rows = 0;    // LSF equation count
  std::vector<double> per_coding;
  std::vector<double> trace;  // LOOPY: bracket midpoints
};

/// How the local conditionals in LSF and CD treat the data.
/// kPosterior: p(x_p | x_N, y_p, beta), which involves the unary costs.
/// kLabels: p(x_p | x_N, beta), the label-field conditional alone.
enum class LocalModel { kPosterior, kLabels };

struct EstimatorConfig {
  LocalModel local_model = LocalModel::kPosterior;
  double beta_max = kBetaMax;
  std::size_t lsf_min_count = 5;
  double cd_tol = 1e-7;
};

// ---------------------------------------------------------------------------
// Gibbs sampler for the MLL prior

/// Single-site Gibbs sampler for p(x | beta) from a uniform random start,
/// raster-order sweeps. Deterministic in `seed`.
inline LabelField gibbs_sample_mll(GridDims dims, double beta, int c, int sweeps, std::uint64_t seed) {
  check_dims(dims);
  if (!(beta >= 0.0)) throw std::invalid_argument("gibbs: beta must be >= 0");
  if (c < 2) throw std::invalid_argument("gibbs: need at least two classes");
  if (sweeps < 0) throw std::invalid_argument("gibbs: negative sweep count");
  CounterRng rng(seed, 0x6B1B5);
  std::vector<int> x(dims.size());
  for (int& v : x) v = static_cast<int>(rng.below(static_cast<std::uint64_t>(c))) + 1;
  const auto w = static_cast<long>(dims.width);
  const auto h = static_cast<long>(dims.height);
  std::vector<double> weight(static_cast<std::size_t>(c));
  std::vector<int> count(static_cast<std::size_t>(c));
  // exp(beta * n) for n = 0..8
  std::array<double, 9> boltz{};
  for (int n = 0; n <= 8; ++n) boltz[static_cast<std::size_t>(n)] = std::exp(beta * n);
  for (int s = 0; s < sweeps; ++s) {
    for (long r = 0; r < h; ++r) {
      for (long col = 0; col < w; ++col) {
        std::fill(count.begin(), count.end(), 0);
        for (long dr = -1; dr <= 1; ++dr)
          for (long dc = -1; dc <= 1; ++dc) {
            if (dr == 0 && dc == 0) continue;
            const long rr = r + dr;
            const long cc = col + dc;
            if (rr < 0 || rr >= h || cc < 0 || cc >= w) continue;
            ++count[static_cast<std::size_t>(x[static_cast<std::size_t>(rr * w + cc)] - 1)];
          }
        double z = 0.0;
        for (std::size_t l = 0; l < weight.size(); ++l) {
          weight[l] = boltz[static_cast<std::size_t>(count[l])];
          z += weight[l];
        }
        double u = rng.uniform() * z;
        std::size_t pick = 0;
        while (pick + 1 < weight.size() && u > weight[pick]) {
          u -= weight[pick];
          ++pick;
        }
        x[static_cast<std::size_t>(r * w + col)] = static_cast<int>(pick) + 1;
      }
    }
  }
  return LabelField(dims, c, std::move(x));
}

// ---------------------------------------------------------------------------
// Shared helpers

/// Number of 8-neighbours of p carrying each label (index l-1).
inline void neighbour_label_counts(const LabelField& x, std::size_t p, std::vector<int>& counts) {
  const GridDims& d = x.dims();
  counts.assign(static_cast<std::size_t>(x.num_classes()), 0);
  const auto r = static_cast<long>(d.row(p));
  const auto c = static_cast<long>(d.col(p));
  const auto w = static_cast<long>(d.width);
  const auto h = static_cast<long>(d.height);
  for (long dr = -1; dr <= 1; ++dr)
    for (long dc = -1; dc <= 1; ++dc) {
      if (dr == 0 && dc == 0) continue;
      const long rr = r + dr;
      const long cc = c + dc;
      if (rr < 0 || rr >= h || cc < 0 || cc >= w) continue;
      ++counts[static_cast<std::size_t>(x[static_cast<std::size_t>(rr * w + cc)] - 1)];
    }
}

inline void check_estimator_inputs(const LabelField& x, const UnaryCostTable& unary) {
  if (x.dims() != unary.dims()) throw std::invalid_argument("beta estimation: dimension mismatch");
  if (x.num_classes() != unary.num_classes()) throw std::invalid_argument("beta estimation: class count mismatch");
  const auto counts = x.class_counts();
  const auto used = std::count_if(counts.begin(), counts.end(), [](std::size_t n) { return n > 0; });
  if (used < 2) throw EstimationUndefinedError("beta estimation: labeling is homogeneous");
}

// ---------------------------------------------------------------------------
// Least-squares fit

/// Observed (centre label, neighbour configuration) statistics over interior
/// pixels. The key packs the 8 neighbour labels in raster order, base c.
class ConfigurationHistogram {
 public:
  struct Entry {
    std::vector<std::size_t> count;  // per centre label
    std::vector<double> weight;      // per centre label, data-adjusted counts
    std::vector<int> same;           // n_l: neighbours equal to label l
  };

  ConfigurationHistogram(const LabelField& x, const UnaryCostTable* unary) : c_(x.num_classes()) {
    const GridDims& d = x.dims();
    const auto c = static_cast<std::size_t>(c_);
    for (std::size_t r = 1; r + 1 < d.height; ++r) {
      for (std::size_t col = 1; col + 1 < d.width; ++col) {
        const std::size_t p = d.index(r, col);
        std::uint64_t key = 0;
        for (long dr = -1; dr <= 1; ++dr)
          for (long dc = -1; dc <= 1; ++dc) {
            if (dr == 0 && dc == 0) continue;
            const std::size_t q = d.index(static_cast<std::size_t>(static_cast<long>(r) + dr),
                                          static_cast<std::size_t>(static_cast<long>(col) + dc));
            key = key * c + static_cast<std::uint64_t>(x[q] - 1);
          }
        auto [it, fresh] = entries_.try_emplace(key);
        Entry& e = it->second;
        if (fresh) {
          e.count.assign(c, 0);
          e.weight.assign(c, 0.0);
          neighbour_label_counts(x, p, e.same);
        }
        const auto l = static_cast<std::size_t>(x[p] - 1);
        ++e.count[l];
        if (unary) {
          // Importance weight 1 / p(l | y_p) up to a per-pixel constant.
          const auto row = unary->row(p);
          const double lo = *std::min_element(row.begin(), row.end());
          e.weight[l] += std::exp(std::min(row[l] - lo, 700.0));
        } else {
          e.weight[l] += 1.0;
        }
        ++total_;
      }
    }
  }

  int num_classes() const { return c_; }
  std::size_t total() const { return total_; }
  const std::map<std::uint64_t, Entry>& entries() const { return entries_; }

 private:
  int c_;
  std::size_t total_ = 0;
  std::map<std::uint64_t, Entry> entries_;
};

/// For each observed configuration with enough support and each label pair
/// (l, l') with n_l != n_l' and both centre labels observed:
///   beta (n_l - n_l') = log(H(l | kappa) / H(l' | kappa)).
/// With the posterior local model H is the likelihood-reweighted count,
/// which makes the ratio estimate the label-field conditional ratio when x
/// is drawn jointly with y. Solved by one-parameter least squares.
inline BetaEstimate lsf_estimate(const LabelField& x, const UnaryCostTable& unary, const EstimatorConfig& cfg = {}) {
  check_estimator_inputs(x, unary);
  if (x.width() < 3 || x.height() < 3) throw EstimationUndefinedError("LSF: no interior pixels");
  const ConfigurationHistogram hist(x, cfg.local_model == LocalModel::kPosterior ? &unary : nullptr);
  double saa = 0.0;
  double sab = 0.0;
  std::vector<std::pair<double, double>> rows;
  const auto c = static_cast<std::size_t>(x.num_classes());
  for (const auto& [key, e] : hist.entries()) {
    std::size_t n = 0;
    for (std::size_t v : e.count) n += v;
    if (n < cfg.lsf_min_count) continue;
    for (std::size_t l = 0; l < c; ++l)
      for (std::size_t m = l + 1; m < c; ++m) {
        const double a = e.same[l] - e.same[m];
        if (a == 0.0 || e.count[l] == 0 || e.count[m] == 0) continue;
        const double b = std::log(e.weight[l] / e.weight[m]);
        rows.emplace_back(a, b);
        saa += a * a;
        sab += a * b;
      }
  }
  if (rows.empty()) throw EstimationUndefinedError("LSF: no usable configuration pairs");
  BetaEstimate out;
  out.method = BetaMethod::kLsf;
  out.rows = rows.size();
  out.raw_beta = sab / saa;
  double ss = 0.0;
  for (const auto& [a, b] : rows) ss += (b - out.raw_beta * a) * (b - out.raw_beta * a);
  out.residual = std::sqrt(ss / static_cast<double>(rows.size()));
  out.beta = std::clamp(out.raw_beta, 0.0, cfg.beta_max);
  out.clamped = out.beta != out.raw_beta;
  out.iterations = 1;
  return out;
}

// ---------------------------------------------------------------------------
// Coding method

/// Coding index of pixel p: the four 2x2-periodic colour classes, no two of
/// which contain 8-neighbours.
inline int coding_of(const GridDims& d, std::size_t p) {
  return static_cast<int>((d.row(p) % 2) * 2 + d.col(p) % 2);
}

inline std::array<std::vector<std::size_t>, 4> codings(const GridDims& d) {
  std::array<std::vector<std::size_t>, 4> out;
  for (std::size_t p = 0; p < d.size(); ++p) out[static_cast<std::size_t>(coding_of(d, p))].push_back(p);
  return out;
}

namespace detail {

/// Per-pixel sufficient data for the coding log-likelihood: the neighbour
/// counts and (optionally) the unary costs of every label.
struct CodingSite {
  int label;
  std::vector<int> same;
  std::vector<double> cost;
};

inline double coding_log_pl(const std::vector<CodingSite>& sites, double beta) {
  double ll = 0.0;
  for (const CodingSite& s : sites) {
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t l = 0; l < s.same.size(); ++l) hi = std::max(hi, beta * s.same[l] - s.cost[l]);
    double z = 0.0;
    for (std::size_t l = 0; l < s.same.size(); ++l) z += std::exp(beta * s.same[l] - s.cost[l] - hi);
    const auto k = static_cast<std::size_t>(s.label - 1);
    ll += beta * s.same[k] - s.cost[k] - hi - std::log(z);
  }
  return ll;
}

inline double coding_score(const std::vector<CodingSite>& sites, double beta) {
  double g = 0.0;
  for (const CodingSite& s : sites) {
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t l = 0; l < s.same.size(); ++l) hi = std::max(hi, beta * s.same[l] - s.cost[l]);
    double z = 0.0;
    double zn = 0.0;
    for (std::size_t l = 0; l < s.same.size(); ++l) {
      const double e = std::exp(beta * s.same[l] - s.cost[l] - hi);
      z += e;
      zn += e * s.same[l];
    }
    g += s.same[static_cast<std::size_t>(s.label - 1)] - zn / z;
  }
  return g;
}

/// Golden-section maximization of a unimodal f on [lo, hi].
template <typename F>
double golden_max(F f, double lo, double hi, double tol, int& iters) {
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo;
  double b = hi;
  double x1 = b - inv_phi * (b - a);
  double x2 = a + inv_phi * (b - a);
  double f1 = f(x1);
  double f2 = f(x2);
  iters = 0;
  while (b - a > tol) {
    ++iters;
    if (f1 < f2) {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + inv_phi * (b - a);
      f2 = f(x2);
    } else {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - inv_phi * (b - a);
      f1 = f(x1);
    }
  }
  return 0.5 * (a + b);
}

}  // namespace detail

/// Coding estimate: for each of the four codings, maximize
/// sum_p log p(x_p | x_N, beta [, y_p]) over beta in [-beta_max, beta_max]
/// (the log pseudo-likelihood is concave in beta), then average the four
/// estimates. The negative half of the range lets an i.i.d. field report a
/// slightly negative raw estimate; the returned beta is clamped to >= 0.
inline BetaEstimate cd_estimate(const LabelField& x, const UnaryCostTable& unary, const EstimatorConfig& cfg = {}) {
  check_estimator_inputs(x, unary);
  const GridDims& d = x.dims();
  const auto c = static_cast<std::size_t>(x.num_classes());
  std::array<std::vector<detail::CodingSite>, 4> sites;
  for (std::size_t p = 0; p < d.size(); ++p) {
    detail::CodingSite s;
    s.label = x[p];
    neighbour_label_counts(x, p, s.same);
    s.cost.assign(c, 0.0);
    if (cfg.local_model == LocalModel::kPosterior) {
      const auto row = unary.row(p);
      const double lo = *std::min_element(row.begin(), row.end());
      for (std::size_t l = 0; l < c; ++l) s.cost[l] = row[l] - lo;
    }
    sites[static_cast<std::size_t>(coding_of(d, p))].push_back(std::move(s));
  }
  BetaEstimate out;
  out.method = BetaMethod::kCd;
  double sum = 0.0;
  int used = 0;
  for (const auto& set : sites) {
    if (set.empty()) continue;
    int iters = 0;
    const double b = detail::golden_max([&](double beta) { return detail::coding_log_pl(set, beta); },
                                        -cfg.beta_max, cfg.beta_max, cfg.cd_tol, iters);
    out.per_coding.push_back(b);
    out.iterations += iters;
    out.residual = std::max(out.residual, std::fabs(detail::coding_score(set, b)));
    sum += b;
    ++used;
  }
  out.raw_beta = sum / used;
  out.beta = std::clamp(out.raw_beta, 0.0, cfg.beta_max);
  out.clamped = out.beta != out.raw_beta;
  return out;
}

// ---------------------------------------------------------------------------
// Loopy beta estimation

struct LoopyConfig {
  double beta_max = kBetaMax;
  double g_tol = 1e-4;        // on g / |C|: dead band around 0
  double bracket_tol = 1e-4;  // on the bisection bracket width
  int max_iters = 100;
  LbpConfig lbp{};
  /// Prior-only runs start from messages mildly biased towards label 1 so
  /// LBP can leave the symmetric (paramagnetic) fixed point, which is an
  /// unstable stationary point of the Bethe free energy above the critical
  /// coupling. 0 disables the bias.
  double prior_bias = 0.05;
};

/// True when every pixel's unary costs are equal across labels: the
/// evidence carries no label information and g vanishes identically.
inline bool unary_has_no_contrast(const UnaryCostTable& unary, double tol = 1e-12) {
  for (std::size_t p = 0; p < unary.size(); ++p) {
    const auto row = unary.row(p);
    const auto [lo, hi] = std::minmax_element(row.begin(), row.end());
    if (*hi - *lo > tol) return false;
  }
  return true;
}

/// Evaluates g(beta) = sum_ij sum_k b^y_ij(k, k) - b_ij(k, k), the
/// stationarity condition of the EM objective with both belief sets at the
/// same beta. Both solvers restart at every evaluation, the posterior from
/// uniform messages and the prior from the biased ones, so g is a function
/// of beta alone: a warm start from a fixed point of another beta can stay
/// in the wrong phase and make g depend on the evaluation order.
class LoopyObjective {
 public:
  LoopyObjective(const UnaryCostTable& unary, const CliqueSet& cliques, const LoopyConfig& cfg)
      : unary_(&unary), cliques_(&cliques), cfg_(cfg), post_(cliques, unary.num_classes()),
        prior_(cliques, unary.num_classes()) {
    if (unary.dims() != cliques.dims()) throw std::invalid_argument("loopy estimate: dimension mismatch");
  }

  struct Value {
    double g = 0.0;
    double posterior_sum = 0.0;
    double prior_sum = 0.0;
    bool converged = true;
  };

  Value operator()(double beta) {
    const PairPotential psi = PairPotential::potts(unary_->num_classes(), beta);
    post_.reset();
    const PairwiseBeliefs bp = post_.run(*unary_, psi, cfg_.lbp);
    bias_prior();
    const PairwiseBeliefs pr = prior_.run_prior(psi, cfg_.lbp);
    Value v;
    v.posterior_sum = equal_label_belief_sum(bp);
    v.prior_sum = equal_label_belief_sum(pr);
    v.g = v.posterior_sum - v.prior_sum;
    v.converged = bp.converged && pr.converged;
    return v;
  }

 private:
  void bias_prior() {
    if (cfg_.prior_bias <= 0.0) {
      prior_.reset();
      return;
    }
    const auto c = static_cast<std::size_t>(unary_->num_classes());
    std::vector<double> m(2 * cliques_->size() * c, (1.0 - cfg_.prior_bias) / static_cast<double>(c));
    for (std::size_t e = 0; e < m.size(); e += c) m[e] += cfg_.prior_bias;
    prior_.set_messages(m);
  }

  const UnaryCostTable* unary_;
  const CliqueSet* cliques_;
  LoopyConfig cfg_;
  LbpSolver post_;
  LbpSolver prior_;
};

/// One-shot estimate from the evidence: bisection for the root of g on
/// [0, beta_max]. g(0) > 0 > g(beta_max) brackets a root where g crosses
/// from positive to negative, i.e. a maximum of the EM objective.
inline BetaEstimate loopy_beta_estimate(const UnaryCostTable& unary, const CliqueSet& cliques,
                                        const LoopyConfig& cfg = {}) {
  BetaEstimate out;
  out.method = BetaMethod::kLoopy;
  if (unary_has_no_contrast(unary)) {
    out.no_contrast = true;
    return out;
  }
  const double nc = static_cast<double>(std::max<std::size_t>(cliques.size(), 1));
  LoopyObjective g(unary, cliques, cfg);
  double lo = 0.0;
  double hi = cfg.beta_max;
  const auto g_lo = g(lo);
  out.converged = g_lo.converged;
  if (g_lo.g <= 0.0) {
    out.boundary = true;
    out.residual = g_lo.g / nc;
    return out;
  }
  const auto g_hi = g(hi);
  out.converged = out.converged && g_hi.converged;
  if (g_hi.g >= 0.0) {
    out.boundary = true;
    out.beta = out.raw_beta = hi;
    out.residual = g_hi.g / nc;
    return out;
  }
  double mid = 0.5 * (lo + hi);
  for (out.iterations = 1; out.iterations <= cfg.max_iters; ++out.iterations) {
    mid = 0.5 * (lo + hi);
    const auto v = g(mid);
    out.trace.push_back(mid);
    out.converged = out.converged && v.converged;
    out.residual = v.g / nc;
    // Past the root both sums saturate and g sits within rounding of 0, so
    // a small |g| does not locate the root; only g above the dead band
    // counts as positive.
    (v.g / nc > cfg.g_tol ? lo : hi) = mid;
    if (hi - lo < cfg.bracket_tol) break;
  }
  out.beta = out.raw_beta = mid;
  return out;
}

/// Dispatch for the label-based estimators used inside Algorithms 1 and 3.
inline BetaEstimate estimate_beta(BetaMethod method, const LabelField& x, const UnaryCostTable& unary,
                                  const CliqueSet& cliques, const EstimatorConfig& ecfg = {},
                                  const LoopyConfig& lcfg = {}) {
  switch (method) {
    case BetaMethod::kLsf: return lsf_estimate(x, unary, ecfg);
    case BetaMethod::kCd: return cd_estimate(x, unary, ecfg);
    case BetaMethod::kLoopy: return loopy_beta_estimate(unary, cliques, lcfg);
  }
  throw std::invalid_argument("estimate_beta: unknown method");
}

}  // namespace sarseg

#endif  // SARSEG_BETA_ESTIMATION_HPP
