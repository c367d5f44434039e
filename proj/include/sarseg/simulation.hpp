#ifndef SARSEG_SIMULATION_HPP
#define SARSEG_SIMULATION_HPP

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <map>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "sarseg/gamma_model.hpp"
#include "sarseg/grid.hpp"
#include "sarseg/pipelines.hpp"
#include "sarseg/rng.hpp"

namespace sarseg {

// ---------------------------------------------------------------------------
// Ground-truth masks. Label 1 is the dark class (slick), label 2 the bright
// background (water).

/// Nested rectangles: a large dark block holding a bright block holding a
/// small dark block, plus a separate dark bar.
inline LabelField truth_two_region(GridDims d) {
  check_dims(d);
  std::vector<int> x(d.size(), 2);
  auto frac_rect = [&](double r0, double c0, double r1, double c1, int label) {
    const auto R0 = static_cast<std::size_t>(std::lround(r0 * static_cast<double>(d.height)));
    const auto R1 = static_cast<std::size_t>(std::lround(r1 * static_cast<double>(d.height)));
    const auto C0 = static_cast<std::size_t>(std::lround(c0 * static_cast<double>(d.width)));
    const auto C1 = static_cast<std::size_t>(std::lround(c1 * static_cast<double>(d.width)));
    for (std::size_t r = R0; r < R1 && r < d.height; ++r)
      for (std::size_t c = C0; c < C1 && c < d.width; ++c) x[d.index(r, c)] = label;
  };
  frac_rect(0.125, 0.125, 0.75, 0.625, 1);
  frac_rect(0.25, 0.25, 0.625, 0.5, 2);
  frac_rect(0.375, 0.34375, 0.5, 0.40625, 1);
  frac_rect(0.125, 0.75, 0.875, 0.875, 1);
  frac_rect(0.8125, 0.125, 0.875, 0.625, 1);
  return LabelField(d, 2, std::move(x));
}

/// Thin diagonal dark band.
inline LabelField truth_linear_slick(GridDims d) {
  check_dims(d);
  std::vector<int> x(d.size(), 2);
  const double w = static_cast<double>(d.width);
  const double h = static_cast<double>(d.height);
  const double half = 0.06 * std::min(w, h);
  // Line through (0.15 h, 0.1 w) and (0.85 h, 0.9 w).
  const double r0 = 0.15 * h;
  const double c0 = 0.1 * w;
  const double dr = 0.7 * h;
  const double dc = 0.8 * w;
  const double len = std::hypot(dr, dc);
  for (std::size_t p = 0; p < d.size(); ++p) {
    const double r = static_cast<double>(d.row(p)) + 0.5 - r0;
    const double c = static_cast<double>(d.col(p)) + 0.5 - c0;
    const double t = (r * dr + c * dc) / (len * len);
    const double dist = std::fabs(r * dc - c * dr) / len;
    if (t >= 0.0 && t <= 1.0 && dist <= half) x[p] = 1;
  }
  return LabelField(d, 2, std::move(x));
}

/// Irregular dark blob: a lobed radius around an off-centre point, plus a
/// small satellite patch.
inline LabelField truth_patch_slick(GridDims d) {
  check_dims(d);
  std::vector<int> x(d.size(), 2);
  const double s = static_cast<double>(std::min(d.width, d.height));
  const double cr = 0.45 * static_cast<double>(d.height);
  const double cc = 0.42 * static_cast<double>(d.width);
  for (std::size_t p = 0; p < d.size(); ++p) {
    const double r = static_cast<double>(d.row(p)) + 0.5 - cr;
    const double c = static_cast<double>(d.col(p)) + 0.5 - cc;
    const double th = std::atan2(r, c);
    const double rad = s * (0.24 + 0.05 * std::sin(3.0 * th + 0.4) + 0.03 * std::cos(5.0 * th) +
                            0.02 * std::sin(8.0 * th + 1.1));
    if (std::hypot(r / 0.8, c) <= rad) x[p] = 1;
    const double r2 = static_cast<double>(d.row(p)) + 0.5 - 0.8 * static_cast<double>(d.height);
    const double c2 = static_cast<double>(d.col(p)) + 0.5 - 0.78 * static_cast<double>(d.width);
    if (std::hypot(r2, c2 / 1.6) <= 0.07 * s) x[p] = 1;
  }
  return LabelField(d, 2, std::move(x));
}

inline LabelField make_truth(const std::string& name, GridDims d) {
  if (name == "two_region") return truth_two_region(d);
  if (name == "linear_slick") return truth_linear_slick(d);
  if (name == "patch_slick") return truth_patch_slick(d);
  throw std::invalid_argument("unknown ground truth: " + name);
}

// ---------------------------------------------------------------------------
// Image synthesis

struct SimSpec {
  LabelField truth;
  std::vector<GammaMixture> classes;  // index l-1 for label l
  std::uint64_t seed = 0;
};

inline double sample_mixture(const GammaMixture& m, CounterRng& rng) {
  std::size_t s = 0;
  if (m.size() > 1) {
    double u = rng.uniform();
    while (s + 1 < m.size() && u > m.weights()[s]) u -= m.weights()[s++];
  }
  return rng.gamma(m.modes()[s].shape, m.modes()[s].rate);
}

/// Draws every pixel independently from its class density, in raster order
/// from one seeded stream.
inline IntensityGrid simulate_image(const SimSpec& spec) {
  if (static_cast<int>(spec.classes.size()) != spec.truth.num_classes())
    throw std::invalid_argument("simulate: class density count must match the truth's class count");
  CounterRng rng(spec.seed, 0x51A);
  std::vector<double> y(spec.truth.size());
  for (std::size_t p = 0; p < y.size(); ++p)
    y[p] = sample_mixture(spec.classes[static_cast<std::size_t>(spec.truth[p] - 1)], rng);
  return IntensityGrid(spec.truth.dims(), std::move(y));
}

/// One Gamma per class with the given means and a shared standard deviation.
inline std::vector<GammaMixture> classes_from_means(const std::vector<double>& means, double sigma) {
  std::vector<GammaMixture> out;
  for (double m : means) out.emplace_back(GammaMode::from_mean_sigma(m, sigma));
  return out;
}

/// Training pixels from the truth: pixels whose whole 3x3 block carries the
/// same class, thinned by a fixed stride to at most `per_class` per class.
inline RoiSpec roi_from_truth(const LabelField& truth, std::size_t per_class) {
  const GridDims& d = truth.dims();
  RoiSpec roi;
  roi.dims = d;
  roi.pixels.resize(static_cast<std::size_t>(truth.num_classes()));
  std::vector<std::vector<std::size_t>> interior(roi.pixels.size());
  for (std::size_t p = 0; p < d.size(); ++p) {
    bool inside = true;
    for (std::size_t q : neighbors(p, d)) inside = inside && truth[q] == truth[p];
    if (inside && neighbors(p, d).size() == 8) interior[static_cast<std::size_t>(truth[p] - 1)].push_back(p);
  }
  for (std::size_t l = 0; l < interior.size(); ++l) {
    const auto& src = interior[l];
    if (src.empty()) continue;
    const std::size_t stride = std::max<std::size_t>(1, (src.size() + per_class - 1) / per_class);
    for (std::size_t k = 0; k < src.size(); k += stride) roi.pixels[l].push_back(src[k]);
  }
  return roi;
}

/// Sarle's bimodality coefficient (g^2 + 1) / (k + 3 (n-1)^2 / ((n-2)(n-3)))
/// with sample skewness g and excess kurtosis k. Values above 5/9 (the
/// uniform distribution's value) suggest a bimodal histogram.
inline double bimodality_coefficient(std::span<const double> y) {
  const double n = static_cast<double>(y.size());
  if (y.size() < 4) throw std::invalid_argument("bimodality: need at least 4 samples");
  double mean = 0.0;
  for (double v : y) mean += v;
  mean /= n;
  double m2 = 0.0;
  double m3 = 0.0;
  double m4 = 0.0;
  for (double v : y) {
    const double e = v - mean;
    m2 += e * e;
    m3 += e * e * e;
    m4 += e * e * e * e;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  if (!(m2 > 0.0)) throw DegenerateDataError("bimodality: zero variance");
  const double g1 = m3 / std::pow(m2, 1.5);
  const double skew = g1 * std::sqrt(n * (n - 1.0)) / (n - 2.0);
  const double g2 = m4 / (m2 * m2) - 3.0;
  const double kurt = (n - 1.0) / ((n - 2.0) * (n - 3.0)) * ((n + 1.0) * g2 + 6.0);
  return (skew * skew + 1.0) / (kurt + 3.0 * (n - 1.0) * (n - 1.0) / ((n - 2.0) * (n - 3.0)));
}

inline constexpr double kBimodalThreshold = 5.0 / 9.0;

// ---------------------------------------------------------------------------
// OA sweep

/// TM: best OA over a beta grid. LE: Algorithm 2. LSF, CD: Algorithm 1.
/// NP: Algorithm 2 with beta = 0. UNS: Algorithm 3 with LOOPY.
inline const std::vector<std::string>& sweep_method_names() {
  static const std::vector<std::string> names{"TM", "LE", "LSF", "CD", "NP", "UNS"};
  return names;
}

struct SweepSpec {
  std::string truth = "two_region";
  GridDims dims{64, 64};
  std::vector<double> sigmas{1.0, 1.8, 2.6};
  std::vector<double> means{5.0, 9.0};
  std::vector<std::string> methods = sweep_method_names();
  int reps = 3;
  std::uint64_t seed = 1;
  std::vector<double> tm_grid = [] {
    std::vector<double> g;
    for (int k = 0; k <= 16; ++k) g.push_back(0.25 * k);
    return g;
  }();
  std::size_t roi_per_class = 200;
  PipelineConfig pipeline{};

  void validate() const {
    if (sigmas.empty()) throw std::invalid_argument("sweep: no sigma values");
    for (double s : sigmas)
      if (!(s > 0.0)) throw std::invalid_argument("sweep: sigma must be positive");
    if (means.size() < 2) throw std::invalid_argument("sweep: need at least two class means");
    if (reps < 1) throw std::invalid_argument("sweep: reps must be at least 1");
    if (methods.empty()) throw std::invalid_argument("sweep: no methods");
    for (const auto& m : methods)
      if (std::find(sweep_method_names().begin(), sweep_method_names().end(), m) == sweep_method_names().end())
        throw std::invalid_argument("sweep: unknown method " + m);
    if (tm_grid.empty()) throw std::invalid_argument("sweep: empty TM beta grid");
  }
};

struct SweepRow {
  std::string method;
  double sigma = 0.0;
  int rep = 0;
  double oa = 0.0;
  double beta = 0.0;
};

struct SweepResult {
  std::vector<SweepRow> rows;  // sigma-major, then rep, then method order
  /// Mean OA per (method, sigma index).
  std::map<std::string, std::vector<double>> mean_oa;
};

/// Seed of repetition `rep` at sigma index `s`.
inline std::uint64_t sweep_seed(std::uint64_t base, std::size_t s, int rep) {
  return mix64(base ^ mix64(0x5EED0000ULL + s * 1000003ULL + static_cast<std::uint64_t>(rep)));
}

/// All methods on one simulated image.
inline std::vector<SweepRow> run_sweep_point(const SweepSpec& spec, double sigma, int rep, std::uint64_t seed) {
  SimSpec sim;
  sim.truth = make_truth(spec.truth, spec.dims);
  if (static_cast<int>(spec.means.size()) != sim.truth.num_classes())
    throw std::invalid_argument("sweep: mean count must match the truth's class count");
  sim.classes = classes_from_means(spec.means, sigma);
  sim.seed = seed;
  const IntensityGrid img = simulate_image(sim);
  const RoiSpec roi = roi_from_truth(sim.truth, spec.roi_per_class);
  PipelineConfig cfg = spec.pipeline;
  cfg.num_classes = sim.truth.num_classes();
  std::vector<SweepRow> out;
  for (const auto& m : spec.methods) {
    SweepRow row;
    row.method = m;
    row.sigma = sigma;
    row.rep = rep;
    if (m == "TM") {
      std::vector<GammaMixture> models;
      for (const auto& px : roi.pixels)
        models.push_back(fit_class_model(gather(img, px), cfg.modes_per_class, cfg.single_gamma, cfg.em));
      const UnaryCostTable unary = unary_costs(img, ClassModelSet(models));
      const CliqueSet cliques = build_cliques(img.dims());
      row.oa = -1.0;
      for (double b : spec.tm_grid) {
        const double oa = overall_accuracy(segment_at(unary, b, cliques).labels, sim.truth);
        if (oa > row.oa) {
          row.oa = oa;
          row.beta = b;
        }
      }
    } else if (m == "LE" || m == "NP") {
      PipelineConfig c = cfg;
      c.beta_method = BetaMethod::kLoopy;
      if (m == "NP") c.beta_override = 0.0;
      auto [x, rep_out] = algorithm2_supervised(img, roi, c);
      row.oa = overall_accuracy(x, sim.truth);
      row.beta = rep_out.beta;
    } else if (m == "LSF" || m == "CD") {
      PipelineConfig c = cfg;
      c.beta_method = m == "LSF" ? BetaMethod::kLsf : BetaMethod::kCd;
      auto [x, rep_out] = algorithm1_supervised(img, roi, c);
      row.oa = overall_accuracy(x, sim.truth);
      row.beta = rep_out.beta;
    } else {
      PipelineConfig c = cfg;
      c.beta_method = BetaMethod::kLoopy;
      auto [x, rep_out] = algorithm3_unsupervised(img, c);
      row.oa = permutation_accuracy(x, sim.truth);
      row.beta = rep_out.beta;
    }
    out.push_back(row);
  }
  return out;
}

/// Runs every (sigma, rep) point on up to `threads` workers. Each point has
/// its own seed, so the rows do not depend on the worker count.
inline SweepResult run_sweep(const SweepSpec& spec, unsigned threads = 1) {
  spec.validate();
  struct Task {
    std::size_t s;
    int rep;
  };
  std::vector<Task> tasks;
  for (std::size_t s = 0; s < spec.sigmas.size(); ++s)
    for (int r = 0; r < spec.reps; ++r) tasks.push_back({s, r});
  std::vector<std::vector<SweepRow>> parts(tasks.size());
  std::vector<std::exception_ptr> errors(tasks.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t t = next++; t < tasks.size(); t = next++) {
      try {
        const Task& k = tasks[t];
        parts[t] = run_sweep_point(spec, spec.sigmas[k.s], k.rep, sweep_seed(spec.seed, k.s, k.rep));
      } catch (...) {
        errors[t] = std::current_exception();
      }
    }
  };
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(std::max(1u, threads), tasks.size()));
  std::vector<std::thread> pool;
  for (unsigned w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& th : pool) th.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  SweepResult out;
  for (const auto& m : spec.methods) out.mean_oa[m].assign(spec.sigmas.size(), 0.0);
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    for (const auto& row : parts[t]) out.mean_oa[row.method][tasks[t].s] += row.oa / spec.reps;
    out.rows.insert(out.rows.end(), parts[t].begin(), parts[t].end());
  }
  return out;
}

}  // namespace sarseg

#endif  // SARSEG_SIMULATION_HPP
