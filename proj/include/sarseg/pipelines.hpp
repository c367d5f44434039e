#ifndef SARSEG_PIPELINES_HPP
#define SARSEG_PIPELINES_HPP

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <exception>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "sarseg/beta_estimation.hpp"
#include "sarseg/energy.hpp"
#include "sarseg/errors.hpp"
#include "sarseg/gamma_model.hpp"
#include "sarseg/graphcut.hpp"
#include "sarseg/grid.hpp"

namespace sarseg {

/// Training pixels per class. `pixels[l-1]` lists the pixel indices marked
/// for label l; a class may be made of several disconnected parts.
struct RoiSpec {
  GridDims dims;
  std::vector<std::vector<std::size_t>> pixels;

  int num_classes() const { return static_cast<int>(pixels.size()); }

  /// One mask per class, nonzero = selected.
  static RoiSpec from_masks(GridDims dims, const std::vector<std::vector<int>>& masks) {
    RoiSpec roi;
    roi.dims = dims;
    for (const auto& m : masks) {
      if (m.size() != dims.size()) throw std::invalid_argument("ROI: mask size does not match image");
      std::vector<std::size_t> px;
      for (std::size_t p = 0; p < m.size(); ++p)
        if (m[p] != 0) px.push_back(p);
      roi.pixels.push_back(std::move(px));
    }
    return roi;
  }

  void validate(const GridDims& image, int c) const {
    if (dims != image) throw std::invalid_argument("ROI: dimensions do not match image");
    if (num_classes() != c) throw std::invalid_argument("ROI: need one region per class");
    std::vector<int> owner(dims.size(), 0);
    for (int l = 1; l <= c; ++l) {
      const auto& px = pixels[static_cast<std::size_t>(l - 1)];
      if (px.empty()) throw std::invalid_argument("ROI: class " + std::to_string(l) + " has no pixels");
      for (std::size_t p : px) {
        if (p >= dims.size()) throw std::out_of_range("ROI: pixel outside image");
        if (owner[p] != 0 && owner[p] != l) throw std::invalid_argument("ROI: regions overlap");
        owner[p] = l;
      }
    }
  }
};

struct PipelineConfig {
  int num_classes = 2;
  std::size_t modes_per_class = 1;  // K for each class density
  std::size_t init_modes = 0;       // Algorithm 3 whole-image mixture; 0 means num_classes
  BetaMethod beta_method = BetaMethod::kLoopy;
  double beta0 = 1.0;
  double beta_tol = 1e-3;           // on |delta beta|
  double param_tol = 1e-3;          // relative, on class means and standard deviations
  int max_iters = 30;
  bool single_gamma = false;
  std::size_t small_class_pixels = 500;  // below this a class refit uses one Gamma
  std::optional<double> beta_override;   // skip estimation and use this beta
  double overlap_threshold = 0.9;        // Algorithm 3: class densities overlapping more are flagged
  double min_class_fraction = 0.01;      // Algorithm 3: a final class smaller than this is flagged
  EmConfig em{};
  EstimatorConfig estimator{};
  LoopyConfig loopy{};

  void validate() const {
    if (num_classes < 2) throw std::invalid_argument("pipeline: need at least two classes");
    if (num_classes > 255) throw std::invalid_argument("pipeline: at most 255 classes");
    if (modes_per_class < 1) throw std::invalid_argument("pipeline: K must be at least 1");
    if (!(beta_tol > 0.0) || !(param_tol > 0.0)) throw std::invalid_argument("pipeline: tolerances must be positive");
    if (max_iters < 1) throw std::invalid_argument("pipeline: max_iters must be at least 1");
    if (!(overlap_threshold > 0.0) || !(min_class_fraction >= 0.0))
      throw std::invalid_argument("pipeline: bad Algorithm 3 flag thresholds");
    if (!(beta0 >= 0.0)) throw std::invalid_argument("pipeline: beta0 must be >= 0");
    if (beta_override && !(*beta_override >= 0.0)) throw std::invalid_argument("pipeline: beta must be >= 0");
  }
};

struct IterationRecord {
  int iteration = 0;
  double beta = 0.0;         // beta used for this iteration's segmentation
  double beta_next = 0.0;    // estimate produced from that segmentation
  double energy = 0.0;
  double param_delta = 0.0;  // Algorithm 3 only
  bool estimator_failed = false;
};

struct RunReport {
  std::string algorithm;
  double beta = 0.0;
  std::optional<BetaEstimate> last_estimate;
  std::vector<GammaMixture> class_models;
  std::vector<IterationRecord> trace;
  int iterations = 0;
  bool converged = false;
  double energy = 0.0;
  std::size_t estimator_fallbacks = 0;
  std::size_t reseeded_classes = 0;
  bool init_fallback = false;   // Algorithm 3: mixture gave fewer modes than classes
  bool meaningful = true;       // Algorithm 3: no reseeds, no vanishing class, distinguishable densities
  double class_overlap = 0.0;   // largest pairwise Bhattacharyya coefficient of class densities
  std::size_t fit_pixels = 0;   // pixels that entered the initial class fits
  double seconds = 0.0;         // wall time of the run
};

// ---------------------------------------------------------------------------
// Shared steps

/// Class density from samples: one ML Gamma when K = 1 or single_gamma is
/// set, an EM mixture otherwise. EM failure falls back to one Gamma.
inline GammaMixture fit_class_model(std::span<const double> samples, std::size_t k, bool single_gamma,
                                    const EmConfig& em = {}) {
  if (single_gamma || k == 1) return GammaMixture(fit_single_gamma_ml(samples, em.min_intensity_clamp));
  try {
    return em_fit_mixture(samples, k, em).mixture;
  } catch (const DegenerateDataError&) {
    return GammaMixture(fit_single_gamma_ml(samples, em.min_intensity_clamp));
  }
}

inline std::vector<double> gather(const IntensityGrid& grid, std::span<const std::size_t> pixels) {
  std::vector<double> out;
  out.reserve(pixels.size());
  for (std::size_t p : pixels) out.push_back(grid[p]);
  return out;
}

struct Segmentation {
  LabelField labels;
  double energy = 0.0;
};

/// MAP labeling at beta: exact cut for two classes, alpha-expansion from the
/// per-pixel argmin otherwise.
inline Segmentation segment_at(const UnaryCostTable& unary, double beta, const CliqueSet& cliques) {
  const PottsPrior prior(beta);
  if (unary.num_classes() == 2) {
    LabelField x = binary_map(unary, prior, cliques);
    const double e = total_energy(x, unary, prior, cliques);
    return {std::move(x), e};
  }
  ExpansionState s = alpha_expansion(unary, prior, cliques, unary.argmin());
  return {std::move(s.labels), s.energy};
}

/// Bhattacharyya coefficient of two mixture densities by the trapezoid rule
/// on a log-spaced grid covering both.
inline double density_overlap(const GammaMixture& a, const GammaMixture& b) {
  auto span_of = [](const GammaMixture& m) {
    const double mu = m.mean();
    const double sd = std::sqrt(m.variance());
    return std::pair{std::max(mu - 8.0 * sd, mu * 1e-4), mu + 12.0 * sd};
  };
  const auto [la, ha] = span_of(a);
  const auto [lb, hb] = span_of(b);
  const double lo = std::log(std::min(la, lb));
  const double hi = std::log(std::max(ha, hb));
  const int n = 4000;
  double sum = 0.0;
  double prev = 0.0;
  for (int k = 0; k <= n; ++k) {
    const double t = lo + (hi - lo) * k / n;
    const double y = std::exp(t);
    const double f = std::exp(0.5 * (mixture_log_pdf(y, a) + mixture_log_pdf(y, b))) * y;
    if (k > 0) sum += 0.5 * (f + prev) * (hi - lo) / n;
    prev = f;
  }
  return sum;
}

inline double max_class_overlap(const std::vector<GammaMixture>& models) {
  double worst = 0.0;
  for (std::size_t i = 0; i < models.size(); ++i)
    for (std::size_t j = i + 1; j < models.size(); ++j) worst = std::max(worst, density_overlap(models[i], models[j]));
  return worst;
}

/// Largest relative change of any class mean or standard deviation.
inline double class_param_delta(const std::vector<GammaMixture>& before, const std::vector<GammaMixture>& after) {
  double d = 0.0;
  for (std::size_t l = 0; l < before.size(); ++l) {
    const double m0 = before[l].mean();
    const double m1 = after[l].mean();
    const double s0 = std::sqrt(before[l].variance());
    const double s1 = std::sqrt(after[l].variance());
    d = std::max({d, std::fabs(m1 - m0) / m0, std::fabs(s1 - s0) / s0});
  }
  return d;
}

namespace detail {

inline BetaEstimate run_estimator(const PipelineConfig& cfg, const LabelField& x, const UnaryCostTable& unary,
                                  const CliqueSet& cliques) {
  return estimate_beta(cfg.beta_method, x, unary, cliques, cfg.estimator, cfg.loopy);
}

using Clock = std::chrono::steady_clock;

inline void finish(RunReport& r, const Segmentation& s, double beta, Clock::time_point start) {
  r.beta = beta;
  r.energy = s.energy;
  r.seconds = std::chrono::duration<double>(Clock::now() - start).count();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Algorithm 1: supervised, alternating segmentation and LSF/CD estimation

inline std::pair<LabelField, RunReport> algorithm1_supervised(const IntensityGrid& grid, const RoiSpec& roi,
                                                              const PipelineConfig& cfg) {
  const auto start = detail::Clock::now();
  cfg.validate();
  if (cfg.beta_method == BetaMethod::kLoopy)
    throw std::invalid_argument("algorithm 1: beta method must be LSF or CD");
  roi.validate(grid.dims(), cfg.num_classes);
  RunReport report;
  report.algorithm = "algorithm1";
  for (const auto& px : roi.pixels) {
    report.class_models.push_back(fit_class_model(gather(grid, px), cfg.modes_per_class, cfg.single_gamma, cfg.em));
    report.fit_pixels += px.size();
  }
  const ClassModelSet models(report.class_models);
  const UnaryCostTable unary = unary_costs(grid, models);
  const CliqueSet cliques = build_cliques(grid.dims());

  double beta = cfg.beta_override.value_or(cfg.beta0);
  Segmentation seg = segment_at(unary, beta, cliques);
  if (cfg.beta_override) {
    report.converged = true;
    detail::finish(report, seg, beta, start);
    return {std::move(seg.labels), std::move(report)};
  }
  for (int it = 1; it <= cfg.max_iters; ++it) {
    IterationRecord rec;
    rec.iteration = it;
    rec.beta = beta;
    rec.energy = seg.energy;
    double next = beta;
    try {
      const BetaEstimate e = detail::run_estimator(cfg, seg.labels, unary, cliques);
      next = e.beta;
      report.last_estimate = e;
    } catch (const EstimationUndefinedError&) {
      rec.estimator_failed = true;
      ++report.estimator_fallbacks;
    }
    rec.beta_next = next;
    report.trace.push_back(rec);
    report.iterations = it;
    const double change = std::fabs(next - beta);
    beta = next;
    seg = segment_at(unary, beta, cliques);
    if (change < cfg.beta_tol) {
      report.converged = true;
      break;
    }
  }
  detail::finish(report, seg, beta, start);
  return {std::move(seg.labels), std::move(report)};
}

// ---------------------------------------------------------------------------
// Algorithm 2: supervised, one LOOPY estimate then one MAP segmentation

inline std::pair<LabelField, RunReport> algorithm2_supervised(const IntensityGrid& grid, const RoiSpec& roi,
                                                              const PipelineConfig& cfg) {
  const auto start = detail::Clock::now();
  cfg.validate();
  roi.validate(grid.dims(), cfg.num_classes);
  RunReport report;
  report.algorithm = "algorithm2";
  for (const auto& px : roi.pixels) {
    report.class_models.push_back(fit_class_model(gather(grid, px), cfg.modes_per_class, cfg.single_gamma, cfg.em));
    report.fit_pixels += px.size();
  }
  const UnaryCostTable unary = unary_costs(grid, ClassModelSet(report.class_models));
  const CliqueSet cliques = build_cliques(grid.dims());
  double beta = 0.0;
  if (cfg.beta_override) {
    beta = *cfg.beta_override;
  } else {
    const BetaEstimate e = loopy_beta_estimate(unary, cliques, cfg.loopy);
    beta = e.beta;
    report.last_estimate = e;
  }
  Segmentation seg = segment_at(unary, beta, cliques);
  IterationRecord rec;
  rec.iteration = 1;
  rec.beta = beta;
  rec.beta_next = beta;
  rec.energy = seg.energy;
  report.trace.push_back(rec);
  report.iterations = 1;
  report.converged = true;  // one shot; LBP convergence is in last_estimate
  detail::finish(report, seg, beta, start);
  return {std::move(seg.labels), std::move(report)};
}

// ---------------------------------------------------------------------------
// Algorithm 3: unsupervised

/// Splits a whole-image mixture into per-class densities. Modes are sorted
/// by mean. With c = 2 the lowest mode is class 1 and the rest form class 2;
/// with c > 2 mode s goes to class s and any extra modes join the last
/// class. Returns nullopt when there are fewer modes than classes.
inline std::optional<std::vector<GammaMixture>> assign_modes_to_classes(const GammaMixture& mix, int c) {
  if (static_cast<int>(mix.size()) < c) return std::nullopt;
  std::vector<std::size_t> order(mix.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return mix.modes()[a].mean() < mix.modes()[b].mean(); });
  std::vector<GammaMixture> out;
  for (int l = 0; l < c; ++l) {
    const std::size_t first = static_cast<std::size_t>(l);
    const std::size_t last = l + 1 == c ? order.size() : first + 1;
    std::vector<GammaMode> modes;
    std::vector<double> w;
    double total = 0.0;
    for (std::size_t k = first; k < last; ++k) {
      modes.push_back(mix.modes()[order[k]]);
      w.push_back(mix.weights()[order[k]]);
      total += w.back();
    }
    for (double& v : w) v /= total;
    out.emplace_back(std::move(modes), std::move(w));
  }
  return out;
}

/// Fallback initialization: class l gets one Gamma fitted to the l-th of c
/// equal-count intensity slices.
inline std::vector<GammaMixture> quantile_class_models(const IntensityGrid& grid, int c, const EmConfig& em) {
  std::vector<double> sorted(grid.values().begin(), grid.values().end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<GammaMixture> out;
  const std::size_t n = sorted.size();
  for (int l = 0; l < c; ++l) {
    const std::size_t a = n * static_cast<std::size_t>(l) / static_cast<std::size_t>(c);
    const std::size_t b = n * static_cast<std::size_t>(l + 1) / static_cast<std::size_t>(c);
    out.emplace_back(fit_single_gamma_ml(std::span<const double>(sorted).subspan(a, b - a), em.min_intensity_clamp));
  }
  return out;
}

/// Refits every class from the pixels currently carrying its label. An empty
/// (or too small) class is reseeded from the lowest-likelihood pixels of the
/// largest class. Returns the number of reseeded classes.
inline std::size_t refit_classes(const IntensityGrid& grid, const LabelField& x, const PipelineConfig& cfg,
                                 std::vector<GammaMixture>& models) {
  const int c = cfg.num_classes;
  std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(c));
  for (std::size_t p = 0; p < x.size(); ++p) members[static_cast<std::size_t>(x[p] - 1)].push_back(p);
  std::size_t reseeded = 0;
  const std::size_t min_pixels = 10;
  for (int l = 0; l < c; ++l) {
    auto& mine = members[static_cast<std::size_t>(l)];
    if (mine.size() >= min_pixels) continue;
    const auto donor_it = std::max_element(members.begin(), members.end(),
                                           [](const auto& a, const auto& b) { return a.size() < b.size(); });
    const auto donor = static_cast<std::size_t>(donor_it - members.begin());
    auto& pool = *donor_it;
    const GammaMixture& dm = models[donor];
    std::stable_sort(pool.begin(), pool.end(), [&](std::size_t a, std::size_t b) {
      return mixture_log_pdf(grid[a], dm) < mixture_log_pdf(grid[b], dm);
    });
    const std::size_t take = std::max(min_pixels, pool.size() / 20);
    if (pool.size() < take + min_pixels) throw DegenerateDataError("algorithm 3: not enough pixels to reseed a class");
    mine.insert(mine.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(take));
    pool.erase(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(take));
    std::sort(pool.begin(), pool.end());
    ++reseeded;
  }
  for (int l = 0; l < c; ++l) {
    const auto& px = members[static_cast<std::size_t>(l)];
    const bool small = px.size() < cfg.small_class_pixels;
    try {
      models[static_cast<std::size_t>(l)] =
          fit_class_model(gather(grid, px), small ? 1 : cfg.modes_per_class, cfg.single_gamma || small, cfg.em);
    } catch (const DegenerateDataError&) {
      // Constant-valued class: keep the previous density.
    }
  }
  return reseeded;
}

inline std::pair<LabelField, RunReport> algorithm3_unsupervised(const IntensityGrid& grid,
                                                                const PipelineConfig& cfg) {
  const auto start = detail::Clock::now();
  cfg.validate();
  const int c = cfg.num_classes;
  RunReport report;
  report.algorithm = "algorithm3";
  const std::size_t k = cfg.init_modes == 0 ? static_cast<std::size_t>(c) : cfg.init_modes;
  report.fit_pixels = grid.size();
  std::optional<std::vector<GammaMixture>> init;
  try {
    init = assign_modes_to_classes(em_fit_mixture(grid.values(), k, cfg.em).mixture, c);
  } catch (const DegenerateDataError&) {
  }
  if (!init) {
    report.init_fallback = true;
    init = quantile_class_models(grid, c, cfg.em);
  }
  std::vector<GammaMixture> models = std::move(*init);
  const CliqueSet cliques = build_cliques(grid.dims());
  double beta = cfg.beta_override.value_or(cfg.beta0);
  UnaryCostTable unary = unary_costs(grid, ClassModelSet(models));
  Segmentation seg = segment_at(unary, beta, cliques);
  for (int it = 1; it <= cfg.max_iters; ++it) {
    IterationRecord rec;
    rec.iteration = it;
    rec.beta = beta;
    const std::vector<GammaMixture> before = models;
    report.reseeded_classes += refit_classes(grid, seg.labels, cfg, models);
    rec.param_delta = class_param_delta(before, models);
    unary = unary_costs(grid, ClassModelSet(models));
    seg = segment_at(unary, beta, cliques);
    rec.energy = seg.energy;
    double next = beta;
    if (!cfg.beta_override) {
      try {
        const BetaEstimate e = detail::run_estimator(cfg, seg.labels, unary, cliques);
        next = e.beta;
        report.last_estimate = e;
      } catch (const EstimationUndefinedError&) {
        rec.estimator_failed = true;
        ++report.estimator_fallbacks;
      }
    }
    rec.beta_next = next;
    report.trace.push_back(rec);
    report.iterations = it;
    const double change = std::fabs(next - beta);
    beta = next;
    if (change < cfg.beta_tol && rec.param_delta < cfg.param_tol) {
      report.converged = true;
      break;
    }
  }
  // Final labeling is the optimum for the final (beta, class densities).
  seg = segment_at(unary, beta, cliques);
  report.class_models = models;
  report.class_overlap = max_class_overlap(models);
  const auto counts = seg.labels.class_counts();
  const auto smallest = *std::min_element(counts.begin(), counts.end());
  report.meaningful = report.reseeded_classes == 0 &&
                      static_cast<double>(smallest) >= cfg.min_class_fraction * static_cast<double>(seg.labels.size()) &&
                      report.class_overlap < cfg.overlap_threshold;
  detail::finish(report, seg, beta, start);
  return {std::move(seg.labels), std::move(report)};
}

// ---------------------------------------------------------------------------
// Tiling

struct TileRect {
  std::size_t row0 = 0;
  std::size_t col0 = 0;
  std::size_t height = 0;
  std::size_t width = 0;
};

/// ceil(extent / tile_size) tiles per axis with near-equal sizes, none
/// larger than tile_size.
inline std::vector<TileRect> tile_layout(const GridDims& d, std::size_t tile_size) {
  if (tile_size < 32) throw std::invalid_argument("tiling: tile size must be at least 32");
  check_dims(d);
  auto cuts = [&](std::size_t extent) {
    const std::size_t n = (extent + tile_size - 1) / tile_size;
    std::vector<std::size_t> c(n + 1);
    for (std::size_t k = 0; k <= n; ++k) c[k] = extent * k / n;
    return c;
  };
  const auto rows = cuts(d.height);
  const auto cols = cuts(d.width);
  std::vector<TileRect> out;
  for (std::size_t r = 0; r + 1 < rows.size(); ++r)
    for (std::size_t c = 0; c + 1 < cols.size(); ++c)
      out.push_back({rows[r], cols[c], rows[r + 1] - rows[r], cols[c + 1] - cols[c]});
  return out;
}

struct TiledResult {
  LabelField labels;
  std::vector<TileRect> tiles;
  std::vector<RunReport> reports;
};

/// Runs Algorithm 3 on each tile independently and pastes the results; no
/// blending across tile borders. Tiles run on up to `threads` workers; the
/// output does not depend on the worker count.
inline TiledResult tile_segment(const IntensityGrid& grid, std::size_t tile_size, const PipelineConfig& cfg,
                                unsigned threads = 1) {
  cfg.validate();
  TiledResult out;
  out.tiles = tile_layout(grid.dims(), tile_size);
  const std::size_t n = out.tiles.size();
  std::vector<std::optional<LabelField>> parts(n);
  out.reports.resize(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t t = next++; t < n; t = next++) {
      try {
        const TileRect& r = out.tiles[t];
        auto [x, rep] = algorithm3_unsupervised(grid.crop(r.row0, r.col0, r.height, r.width), cfg);
        parts[t] = std::move(x);
        out.reports[t] = std::move(rep);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    }
  };
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(std::max(1u, threads), n));
  std::vector<std::thread> pool;
  for (unsigned w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& th : pool) th.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::vector<int> labels(grid.size());
  const GridDims& d = grid.dims();
  for (std::size_t t = 0; t < n; ++t) {
    const TileRect& r = out.tiles[t];
    for (std::size_t y = 0; y < r.height; ++y)
      for (std::size_t x = 0; x < r.width; ++x) labels[d.index(r.row0 + y, r.col0 + x)] = (*parts[t])[y * r.width + x];
  }
  out.labels = LabelField(d, cfg.num_classes, std::move(labels));
  return out;
}

}  // namespace sarseg

#endif  // SARSEG_PIPELINES_HPP
