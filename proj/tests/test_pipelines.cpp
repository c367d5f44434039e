#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "sarseg/pipelines.hpp"
#include "sarseg/simulation.hpp"
#include "sarseg/special.hpp"

using namespace sarseg;

namespace {

struct Scene {
  LabelField truth;
  IntensityGrid image;
  RoiSpec roi;
};

Scene scene(const LabelField& truth, const std::vector<double>& means, double sigma, std::uint64_t seed) {
  SimSpec s{truth, classes_from_means(means, sigma), seed};
  IntensityGrid img = simulate_image(s);
  return {truth, std::move(img), roi_from_truth(truth, 200)};
}

Scene scene(const std::string& truth, const std::vector<double>& means, double sigma, std::uint64_t seed) {
  return scene(make_truth(truth, {64, 64}), means, sigma, seed);
}

UnaryCostTable random_unary(GridDims d, int c, std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  std::vector<double> v(d.size() * static_cast<std::size_t>(c));
  for (double& x : v) x = u(eng);
  return UnaryCostTable(d, c, std::move(v));
}

PipelineConfig config(BetaMethod m) {
  PipelineConfig cfg;
  cfg.beta_method = m;
  return cfg;
}

// Energy of x under the report's class models and final beta.
double report_energy(const IntensityGrid& img, const LabelField& x, const RunReport& r) {
  const UnaryCostTable unary = unary_costs(img, ClassModelSet(r.class_models));
  return total_energy(x, unary, PottsPrior(r.beta), build_cliques(img.dims()));
}

void expect_trace_well_formed(const RunReport& r, const PipelineConfig& cfg) {
  ASSERT_EQ(r.trace.size(), static_cast<std::size_t>(r.iterations));
  for (std::size_t k = 0; k < r.trace.size(); ++k) EXPECT_EQ(r.trace[k].iteration, static_cast<int>(k) + 1);
  if (r.converged) {
    ASSERT_FALSE(r.trace.empty());
    EXPECT_LT(std::fabs(r.trace.back().beta_next - r.trace.back().beta), cfg.beta_tol);
  } else {
    EXPECT_EQ(r.iterations, cfg.max_iters);
  }
}

// 1 + (p mod 7): any run of whole periods has the same sample multiset.
IntensityGrid periodic_image(GridDims d) {
  std::vector<double> y(d.size());
  for (std::size_t p = 0; p < y.size(); ++p) y[p] = 1.0 + static_cast<double>(p % 7);
  return IntensityGrid(d, std::move(y));
}

LabelField thirds_truth(GridDims d) {
  std::vector<int> x(d.size());
  for (std::size_t p = 0; p < d.size(); ++p) x[p] = 1 + static_cast<int>(3 * d.col(p) / d.width);
  return LabelField(d, 3, std::move(x));
}

LabelField side_by_side(const LabelField& a) {
  const GridDims d{2 * a.width(), a.height()};
  std::vector<int> x(d.size());
  for (std::size_t p = 0; p < d.size(); ++p) x[p] = a.at(d.row(p), d.col(p) % a.width());
  return LabelField(d, a.num_classes(), std::move(x));
}

}  // namespace

// ---------------------------------------------------------------------------
// Inputs

TEST(RoiSpec, FromMasksCollectsNonzeroPixels) {
  const GridDims d{3, 2};
  const RoiSpec roi = RoiSpec::from_masks(d, {{1, 0, 0, 0, 0, 7}, {0, 1, 1, 0, 0, 0}});
  ASSERT_EQ(roi.num_classes(), 2);
  EXPECT_EQ(roi.pixels[0], (std::vector<std::size_t>{0, 5}));
  EXPECT_EQ(roi.pixels[1], (std::vector<std::size_t>{1, 2}));
  EXPECT_NO_THROW(roi.validate(d, 2));
  EXPECT_THROW(RoiSpec::from_masks(d, {{1, 0}}), std::invalid_argument);
}

TEST(RoiSpec, RejectsInvalidRegions) {
  const GridDims d{3, 2};
  EXPECT_THROW(RoiSpec::from_masks(d, {{1, 0, 0, 0, 0, 0}, {0, 0, 0, 0, 0, 0}}).validate(d, 2), std::invalid_argument);
  EXPECT_THROW(RoiSpec::from_masks(d, {{1, 1, 0, 0, 0, 0}, {0, 1, 0, 0, 0, 0}}).validate(d, 2), std::invalid_argument);
  const RoiSpec ok = RoiSpec::from_masks(d, {{1, 0, 0, 0, 0, 0}, {0, 1, 0, 0, 0, 0}});
  EXPECT_THROW(ok.validate({2, 3}, 2), std::invalid_argument);
  EXPECT_THROW(ok.validate(d, 3), std::invalid_argument);
  RoiSpec out = ok;
  out.pixels[1].push_back(6);
  EXPECT_THROW(out.validate(d, 2), std::out_of_range);
}

TEST(PipelineConfig, Validates) {
  EXPECT_NO_THROW(PipelineConfig{}.validate());
  auto bad = [](auto mutate) {
    PipelineConfig c;
    mutate(c);
    return c;
  };
  EXPECT_THROW(bad([](auto& c) { c.num_classes = 1; }).validate(), std::invalid_argument);
  EXPECT_THROW(bad([](auto& c) { c.num_classes = 256; }).validate(), std::invalid_argument);
  EXPECT_THROW(bad([](auto& c) { c.modes_per_class = 0; }).validate(), std::invalid_argument);
  EXPECT_THROW(bad([](auto& c) { c.beta_tol = 0.0; }).validate(), std::invalid_argument);
  EXPECT_THROW(bad([](auto& c) { c.param_tol = -1.0; }).validate(), std::invalid_argument);
  EXPECT_THROW(bad([](auto& c) { c.max_iters = 0; }).validate(), std::invalid_argument);
  EXPECT_THROW(bad([](auto& c) { c.beta_override = -0.5; }).validate(), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Shared steps

TEST(SegmentAt, ZeroBetaIsPerPixelArgmin) {
  for (int c : {2, 3}) {
    const UnaryCostTable u = random_unary({9, 7}, c, 11 + static_cast<std::uint64_t>(c));
    const CliqueSet cl = build_cliques(u.dims());
    const Segmentation s = segment_at(u, 0.0, cl);
    EXPECT_EQ(s.labels, u.argmin()) << "c=" << c;
    EXPECT_NEAR(s.energy, total_energy(s.labels, u, PottsPrior(0.0), cl), 1e-9);
  }
}

TEST(SegmentAt, ReportedEnergyMatchesRecomputation) {
  for (int c : {2, 3}) {
    const UnaryCostTable u = random_unary({12, 10}, c, 5);
    const CliqueSet cl = build_cliques(u.dims());
    for (double b : {0.3, 1.0, 2.5}) {
      const Segmentation s = segment_at(u, b, cl);
      EXPECT_NEAR(s.energy, total_energy(s.labels, u, PottsPrior(b), cl), 1e-9);
    }
  }
}

TEST(DensityOverlap, IdenticalDensitiesGiveOne) {
  const GammaMixture m(GammaMode::from_mean_sigma(5.0, 1.0));
  EXPECT_NEAR(density_overlap(m, m), 1.0, 1e-6);
  const GammaMixture two({GammaMode{3.0, 1.0}, GammaMode{9.0, 0.5}}, {0.4, 0.6});
  EXPECT_NEAR(density_overlap(two, two), 1.0, 1e-6);
}

TEST(DensityOverlap, SameRateClosedForm) {
  // With equal rates the Bhattacharyya integral is Gamma((a+b)/2) / sqrt(Gamma(a) Gamma(b)).
  for (auto [a, b] : {std::pair{2.0, 5.0}, std::pair{10.0, 14.0}, std::pair{1.5, 30.0}}) {
    const GammaMixture ma(GammaMode{a, 0.7});
    const GammaMixture mb(GammaMode{b, 0.7});
    const double exact = std::exp(std::lgamma(0.5 * (a + b)) - 0.5 * (std::lgamma(a) + std::lgamma(b)));
    EXPECT_NEAR(density_overlap(ma, mb), exact, 1e-5) << a << " " << b;
    EXPECT_NEAR(density_overlap(ma, mb), density_overlap(mb, ma), 1e-12);
  }
}

TEST(DensityOverlap, DecreasesWithSeparation) {
  const GammaMixture base(GammaMode::from_mean_sigma(5.0, 1.0));
  double prev = 1.0;
  for (double m : {6.0, 7.0, 9.0, 15.0}) {
    const double o = density_overlap(base, GammaMixture(GammaMode::from_mean_sigma(m, 1.0)));
    EXPECT_LT(o, prev);
    prev = o;
  }
  EXPECT_LT(prev, 1e-3);
}

TEST(AssignModes, LowestModeIsClassOneRestMerged) {
  const GammaMixture mix({GammaMode{90.0, 10.0}, GammaMode{10.0, 10.0}, GammaMode{40.0, 10.0}}, {0.5, 0.2, 0.3});
  const auto two = assign_modes_to_classes(mix, 2);
  ASSERT_TRUE(two.has_value());
  ASSERT_EQ(two->size(), 2u);
  EXPECT_EQ((*two)[0].modes(), (std::vector<GammaMode>{{10.0, 10.0}}));
  EXPECT_EQ((*two)[1].modes(), (std::vector<GammaMode>{{40.0, 10.0}, {90.0, 10.0}}));
  EXPECT_NEAR((*two)[1].weights()[0], 0.375, 1e-12);
  EXPECT_NEAR((*two)[1].weights()[1], 0.625, 1e-12);

  const auto three = assign_modes_to_classes(mix, 3);
  ASSERT_TRUE(three.has_value());
  for (int l = 0; l < 3; ++l) EXPECT_EQ((*three)[static_cast<std::size_t>(l)].size(), 1u);
  EXPECT_LT((*three)[0].mean(), (*three)[1].mean());
  EXPECT_LT((*three)[1].mean(), (*three)[2].mean());
  EXPECT_FALSE(assign_modes_to_classes(mix, 4).has_value());
}

TEST(QuantileModels, OrderedByIntensity) {
  const Scene s = scene("two_region", {5.0, 9.0}, 1.0, 3);
  const auto m = quantile_class_models(s.image, 3, {});
  ASSERT_EQ(m.size(), 3u);
  EXPECT_LT(m[0].mean(), m[1].mean());
  EXPECT_LT(m[1].mean(), m[2].mean());
}

TEST(RefitClasses, EmptyClassIsReseeded) {
  const Scene s = scene("two_region", {5.0, 9.0}, 1.0, 4);
  PipelineConfig cfg;
  std::vector<GammaMixture> models = classes_from_means({5.0, 9.0}, 1.0);
  const LabelField all_one = LabelField::uniform(s.image.dims(), 2, 1);
  EXPECT_EQ(refit_classes(s.image, all_one, cfg, models), 1u);
  // The reseeded pixels are the least likely under the donor class: the
  // extremes of the intensity distribution, so class 2 differs from class 1.
  EXPECT_GT(density_overlap(models[0], models[1]), 0.0);
  EXPECT_LT(density_overlap(models[0], models[1]), 0.99);
}

TEST(RefitClasses, UsesCurrentMembers) {
  const Scene s = scene("two_region", {5.0, 9.0}, 1.0, 5);
  PipelineConfig cfg;
  std::vector<GammaMixture> models = classes_from_means({1.0, 2.0}, 1.0);
  EXPECT_EQ(refit_classes(s.image, s.truth, cfg, models), 0u);
  EXPECT_NEAR(models[0].mean(), 5.0, 0.15);
  EXPECT_NEAR(models[1].mean(), 9.0, 0.15);
}

// ---------------------------------------------------------------------------
// Algorithm 1

TEST(Algorithm1, RejectsLoopy) {
  const Scene s = scene("two_region", {5.0, 9.0}, 1.0, 6);
  EXPECT_THROW(algorithm1_supervised(s.image, s.roi, config(BetaMethod::kLoopy)), std::invalid_argument);
}

TEST(Algorithm1, RejectsEmptyRoiClass) {
  Scene s = scene("two_region", {5.0, 9.0}, 1.0, 6);
  s.roi.pixels[1].clear();
  EXPECT_THROW(algorithm1_supervised(s.image, s.roi, config(BetaMethod::kLsf)), std::invalid_argument);
}

TEST(Algorithm1, ZeroBetaIsMaximumLikelihoodClassification) {
  const Scene s = scene("two_region", {5.0, 9.0}, 1.8, 7);
  PipelineConfig cfg = config(BetaMethod::kLsf);
  cfg.beta_override = 0.0;
  const auto [x, r] = algorithm1_supervised(s.image, s.roi, cfg);
  EXPECT_EQ(x, unary_costs(s.image, ClassModelSet(r.class_models)).argmin());
  EXPECT_EQ(r.beta, 0.0);
}

TEST(Algorithm1, LowNoiseFixtureAccurateAndConverged) {
  const Scene s = scene("two_region", {5.0, 9.0}, 1.0, 2024);
  for (BetaMethod m : {BetaMethod::kLsf, BetaMethod::kCd}) {
    const PipelineConfig cfg = config(m);
    const auto [x, r] = algorithm1_supervised(s.image, s.roi, cfg);
    SCOPED_TRACE(to_string(m));
    EXPECT_GE(overall_accuracy(x, s.truth), 0.95);
    EXPECT_TRUE(r.converged);
    EXPECT_LE(r.iterations, 20);
    expect_trace_well_formed(r, cfg);
    EXPECT_NEAR(r.energy, report_energy(s.image, x, r), 1e-9);
  }
}

TEST(Algorithm1, PerfectLabelingFallsBackFlagged) {
  // Classes so far apart that the first segmentation has no disagreeing
  // neighbourhoods: LSF is undefined and beta stays at beta0.
  const Scene s = scene("two_region", {5.0, 30.0}, 0.5, 8);
  const PipelineConfig cfg = config(BetaMethod::kLsf);
  const auto [x, r] = algorithm1_supervised(s.image, s.roi, cfg);
  EXPECT_EQ(overall_accuracy(x, s.truth), 1.0);
  EXPECT_GT(r.estimator_fallbacks, 0u);
  ASSERT_FALSE(r.trace.empty());
  EXPECT_TRUE(r.trace.front().estimator_failed);
  EXPECT_EQ(r.beta, cfg.beta0);
  expect_trace_well_formed(r, cfg);
}

TEST(Algorithm1, IterationCapIsReported) {
  const Scene s = scene("two_region", {5.0, 9.0}, 1.8, 9);
  PipelineConfig cfg = config(BetaMethod::kCd);
  cfg.max_iters = 2;
  cfg.beta0 = 0.1;
  const auto [x, r] = algorithm1_supervised(s.image, s.roi, cfg);
  expect_trace_well_formed(r, cfg);
  EXPECT_LE(r.iterations, 2);
  EXPECT_NEAR(r.energy, report_energy(s.image, x, r), 1e-9);
}

// ---------------------------------------------------------------------------
// Class models come from ROI pixels only

TEST(Supervised, ClassModelsUseOnlyRoiPixels) {
  const Scene s = scene("two_region", {5.0, 9.0}, 1.8, 10);
  std::vector<char> in_roi(s.image.size(), 0);
  std::size_t n_roi = 0;
  for (const auto& px : s.roi.pixels) {
    n_roi += px.size();
    for (std::size_t p : px) in_roi[p] = 1;
  }
  std::vector<double> y(s.image.values().begin(), s.image.values().end());
  for (std::size_t p = 0; p < y.size(); ++p)
    if (!in_roi[p]) y[p] = 100.0 + static_cast<double>(p % 13);
  const IntensityGrid changed(s.image.dims(), std::move(y));

  PipelineConfig cfg = config(BetaMethod::kLoopy);
  cfg.beta_override = 1.0;
  const auto [x0, r0] = algorithm2_supervised(s.image, s.roi, cfg);
  const auto [x1, r1] = algorithm2_supervised(changed, s.roi, cfg);
  EXPECT_EQ(r0.class_models, r1.class_models);
  EXPECT_EQ(r0.fit_pixels, n_roi);

  cfg.beta_method = BetaMethod::kLsf;
  const auto [x2, r2] = algorithm1_supervised(s.image, s.roi, cfg);
  const auto [x3, r3] = algorithm1_supervised(changed, s.roi, cfg);
  EXPECT_EQ(r2.class_models, r3.class_models);
  EXPECT_EQ(r2.fit_pixels, n_roi);
}

// ---------------------------------------------------------------------------
// Algorithm 2

TEST(Algorithm2, HighNoiseGainOverNoPriorAndAlgorithm1) {
  const Scene s = scene("two_region", {5.0, 9.0}, 2.6, 2024);
  const PipelineConfig cfg = config(BetaMethod::kLoopy);
  const auto [x, r] = algorithm2_supervised(s.image, s.roi, cfg);
  PipelineConfig np = cfg;
  np.beta_override = 0.0;
  const auto [x0, r0] = algorithm2_supervised(s.image, s.roi, np);
  const double oa = overall_accuracy(x, s.truth);
  const double oa_np = overall_accuracy(x0, s.truth);
  EXPECT_GE(oa, oa_np + 0.10) << "LE " << oa << " NP " << oa_np;

  ASSERT_EQ(r.trace.size(), 1u);
  ASSERT_TRUE(r.last_estimate.has_value());
  EXPECT_EQ(r.beta, r.last_estimate->beta);
  EXPECT_GT(r.beta, 0.0);
  EXPECT_NEAR(r.energy, report_energy(s.image, x, r), 1e-9);

  for (BetaMethod m : {BetaMethod::kLsf, BetaMethod::kCd}) {
    const auto [x1, r1] = algorithm1_supervised(s.image, s.roi, config(m));
    EXPECT_GE(oa, overall_accuracy(x1, s.truth) - 0.01) << to_string(m);
  }
}

TEST(Algorithm2, ContrastlessUnaryGivesZeroBetaAndArgmin) {
  const GridDims d{20, 14};
  const IntensityGrid img = periodic_image(d);
  RoiSpec roi;
  roi.dims = d;
  roi.pixels.resize(2);
  for (std::size_t p = 0; p < 70; ++p) roi.pixels[0].push_back(p);
  for (std::size_t p = 70; p < 140; ++p) roi.pixels[1].push_back(p);
  const auto [x, r] = algorithm2_supervised(img, roi, config(BetaMethod::kLoopy));
  EXPECT_EQ(r.class_models[0], r.class_models[1]);
  EXPECT_EQ(r.beta, 0.0);
  EXPECT_EQ(x, unary_costs(img, ClassModelSet(r.class_models)).argmin());
}

TEST(Algorithm2, ThreeClassesUseExpansion) {
  const LabelField truth = thirds_truth({48, 48});
  const Scene s = scene(truth, {4.0, 9.0, 16.0}, 1.5, 12);
  PipelineConfig cfg = config(BetaMethod::kLoopy);
  cfg.num_classes = 3;
  const auto [x, r] = algorithm2_supervised(s.image, s.roi, cfg);
  EXPECT_GE(overall_accuracy(x, truth), 0.95);
  EXPECT_NEAR(r.energy, report_energy(s.image, x, r), 1e-9);
}

// ---------------------------------------------------------------------------
// Algorithm 3

TEST(Algorithm3, SeparableFixtureCloseToSupervised) {
  const Scene s = scene("patch_slick", {5.0, 9.0}, 0.8, 2024);
  const PipelineConfig cfg = config(BetaMethod::kLoopy);
  const auto [x2, r2] = algorithm2_supervised(s.image, s.roi, cfg);
  const auto [x3, r3] = algorithm3_unsupervised(s.image, cfg);
  const double a2 = overall_accuracy(x2, s.truth);
  const double a3 = permutation_accuracy(x3, s.truth);
  EXPECT_GE(a3, a2 - 0.02) << "A2 " << a2 << " A3 " << a3;
  EXPECT_TRUE(r3.converged);
  EXPECT_LE(r3.iterations, 10);
  EXPECT_TRUE(r3.meaningful);
  EXPECT_EQ(r3.reseeded_classes, 0u);
  EXPECT_EQ(r3.fit_pixels, s.image.size());
  expect_trace_well_formed(r3, cfg);
  EXPECT_NEAR(r3.energy, report_energy(s.image, x3, r3), 1e-9);
}

TEST(Algorithm3, OverlappingHistogramsFlaggedNotMeaningful) {
  const Scene s = scene("patch_slick", {5.0, 6.5}, 1.8, 2024);
  const auto [x, r] = algorithm3_unsupervised(s.image, config(BetaMethod::kLoopy));
  EXPECT_FALSE(r.meaningful) << "overlap " << r.class_overlap << " reseeds " << r.reseeded_classes;
  EXPECT_NEAR(r.energy, report_energy(s.image, x, r), 1e-9);
}

TEST(Algorithm3, ThreeClasses) {
  const LabelField truth = thirds_truth({48, 48});
  const Scene s = scene(truth, {4.0, 9.0, 16.0}, 1.0, 13);
  PipelineConfig cfg = config(BetaMethod::kLoopy);
  cfg.num_classes = 3;
  const auto [x, r] = algorithm3_unsupervised(s.image, cfg);
  EXPECT_GE(permutation_accuracy(x, truth), 0.95);
  EXPECT_TRUE(r.converged);
  EXPECT_NEAR(r.energy, report_energy(s.image, x, r), 1e-9);
}

TEST(Algorithm3, FixedBetaStopsOnClassParameters) {
  const Scene s = scene("linear_slick", {5.0, 9.0}, 1.0, 14);
  PipelineConfig cfg = config(BetaMethod::kLoopy);
  cfg.beta_override = 0.8;
  const auto [x, r] = algorithm3_unsupervised(s.image, cfg);
  EXPECT_EQ(r.beta, 0.8);
  EXPECT_FALSE(r.last_estimate.has_value());
  expect_trace_well_formed(r, cfg);
  if (r.converged) {
    EXPECT_LT(r.trace.back().param_delta, cfg.param_tol);
  }
}

// ---------------------------------------------------------------------------
// Tiling

TEST(TileLayout, CoversImageOnce) {
  for (GridDims d : {GridDims{100, 70}, GridDims{64, 64}, GridDims{33, 200}, GridDims{10, 10}}) {
    for (std::size_t t : {32u, 50u, 64u}) {
      const auto tiles = tile_layout(d, t);
      EXPECT_EQ(tiles.size(), ((d.width + t - 1) / t) * ((d.height + t - 1) / t));
      std::vector<int> hits(d.size(), 0);
      for (const TileRect& r : tiles) {
        EXPECT_LE(r.width, t);
        EXPECT_LE(r.height, t);
        for (std::size_t y = 0; y < r.height; ++y)
          for (std::size_t x = 0; x < r.width; ++x) ++hits[d.index(r.row0 + y, r.col0 + x)];
      }
      EXPECT_TRUE(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
    }
  }
  EXPECT_THROW(tile_layout({64, 64}, 31), std::invalid_argument);
}

TEST(TileSegment, SmallImageEqualsDirectCall) {
  const Scene s = scene(make_truth("linear_slick", {40, 40}), {5.0, 9.0}, 1.0, 15);
  const PipelineConfig cfg = config(BetaMethod::kLoopy);
  const TiledResult t = tile_segment(s.image, 64, cfg, 2);
  const auto [x, r] = algorithm3_unsupervised(s.image, cfg);
  ASSERT_EQ(t.tiles.size(), 1u);
  EXPECT_EQ(t.labels, x);
  EXPECT_EQ(t.reports[0].beta, r.beta);
}

TEST(TileSegment, HomogeneousSceneConsistentAcrossTilesAndThreads) {
  const LabelField truth = side_by_side(make_truth("two_region", {64, 64}));
  const Scene s = scene(truth, {5.0, 9.0}, 1.0, 16);
  const PipelineConfig cfg = config(BetaMethod::kLoopy);
  const TiledResult one = tile_segment(s.image, 64, cfg, 1);
  const TiledResult four = tile_segment(s.image, 64, cfg, 4);
  ASSERT_EQ(one.tiles.size(), 2u);
  EXPECT_EQ(one.labels, four.labels);
  const double b0 = one.reports[0].beta;
  const double b1 = one.reports[1].beta;
  EXPECT_GT(b0, 0.0);
  EXPECT_LE(std::fabs(b0 - b1), 0.3 * std::max(b0, b1)) << b0 << " " << b1;
  EXPECT_GE(permutation_accuracy(one.labels, truth), 0.95);
}
