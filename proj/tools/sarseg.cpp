// sarseg: batch front end for Gamma-mixture / MRF segmentation.

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "sarseg/io.hpp"
#include "sarseg/sarseg.hpp"

#ifndef SARSEG_VERSION
#define SARSEG_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using sarseg::io::json;

namespace {

constexpr int kOk = 0;
constexpr int kNumerical = 1;
constexpr int kUsage = 2;

/// Exit status 2: bad arguments or files.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Common {
  std::uint64_t seed = 1;
  unsigned threads = std::max(1u, std::thread::hardware_concurrency());
  std::string manifest;
  bool no_manifest = false;
};

struct Outcome {
  int code = kOk;
  std::vector<fs::path> inputs;
  std::vector<fs::path> outputs;
  std::vector<std::string> warnings;
};

class Command {
 public:
  virtual ~Command() = default;
  virtual void add_options(CLI::App& app) = 0;
  virtual Outcome run(const Common& common) = 0;
};

fs::path sibling(const fs::path& out, const std::string& ext) {
  fs::path p = out;
  p.replace_extension(ext);
  if (p == out) p += ext;
  return p;
}

sarseg::BetaMethod method_of(const std::string& s) {
  try {
    return sarseg::parse_beta_method(s);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

/// ROI-fitted class densities and their unary table.
struct SupervisedModel {
  std::vector<sarseg::GammaMixture> models;
  sarseg::UnaryCostTable unary;
};

SupervisedModel fit_from_roi(const sarseg::IntensityGrid& img, const sarseg::RoiSpec& roi, std::size_t k,
                             bool single_gamma) {
  SupervisedModel m;
  for (const auto& px : roi.pixels)
    m.models.push_back(sarseg::fit_class_model(sarseg::gather(img, px), k, single_gamma));
  m.unary = sarseg::unary_costs(img, sarseg::ClassModelSet(m.models));
  return m;
}

// ---------------------------------------------------------------------------
// fit-mixture

class FitMixture : public Command {
 public:
  void add_options(CLI::App& app) override {
    app.add_option("-i,--input", input_, "Image (P5 PGM or RAWF32) or text file of samples")->required();
    app.add_option("-k,--modes", k_, "Number of initial modes K")->check(CLI::PositiveNumber);
    app.add_option("-o,--out", out_, "Mixture JSON with histogram-fit report")->required();
    app.add_option("--bins", bins_, "Histogram bins in the report")->check(CLI::PositiveNumber);
    app.add_option("--max-iters", max_iters_, "EM iteration cap")->check(CLI::PositiveNumber);
  }

  Outcome run(const Common&) override {
    Outcome o;
    o.inputs.push_back(input_);
    const std::vector<double> y = sarseg::io::read_samples(input_);
    sarseg::EmConfig em;
    em.max_iters = max_iters_;
    const sarseg::EmResult r = sarseg::em_fit_mixture(y, k_, em);
    json j{{"samples", y.size()},
           {"requested_modes", k_},
           {"mixture", sarseg::io::to_json(r.mixture)},
           {"log_likelihood", sarseg::log_likelihood(y, r.mixture)},
           {"em",
            {{"iterations", r.iterations},
             {"converged", r.converged},
             {"loglik_trace", r.loglik_trace},
             {"prune_events", r.prune_events}}},
           {"histogram", sarseg::io::histogram_fit(y, r.mixture, bins_)}};
    sarseg::io::write_json(out_, j);
    o.outputs.push_back(out_);
    if (!r.converged) {
      o.warnings.push_back("EM stopped at the iteration cap");
      o.code = kNumerical;
    }
    return o;
  }

 private:
  std::string input_;
  std::size_t k_ = 2;
  std::string out_;
  std::size_t bins_ = 64;
  int max_iters_ = 200;
};

// ---------------------------------------------------------------------------
// segment

class Segment : public Command {
 public:
  void add_options(CLI::App& app) override {
    app.add_option("-i,--input", input_, "Image (P5 PGM or RAWF32)")->required();
    app.add_option("--mode", mode_, "supervised or unsupervised")
        ->check(CLI::IsMember({"supervised", "unsupervised"}));
    app.add_option("--roi", roi_, "Training mask per class (PGM, nonzero = selected), in label order");
    app.add_option("-c,--classes", classes_, "Number of classes");
    app.add_option("-K,--modes-per-class", k_, "Gamma modes per class density")->check(CLI::PositiveNumber);
    app.add_flag("--single-gamma", single_gamma_, "One Gamma per class");
    app.add_option("--beta-method", beta_method_, "lsf, cd or loopy")
        ->check(CLI::IsMember({"lsf", "cd", "loopy"}, CLI::ignore_case));
    app.add_option("--beta", beta_, "Fixed beta; skips estimation");
    app.add_option("--beta0", beta0_, "Initial beta of the iterative algorithms");
    app.add_option("--beta-tol", beta_tol_, "Stop when |delta beta| is below this");
    app.add_option("--param-tol", param_tol_, "Unsupervised: relative class-parameter tolerance");
    app.add_option("--max-iters", max_iters_, "Iteration cap")->check(CLI::PositiveNumber);
    app.add_option("--tile-size", tile_size_, "Unsupervised: run tiles of this size independently (0 = off)");
    app.add_option("-o,--out", out_, "Label map (8-bit PGM)")->required();
    app.add_option("--report", report_, "Run report JSON (default: <out>.json)");
  }

  Outcome run(const Common& common) override {
    Outcome o;
    if (classes_ < 2 || classes_ > 255) throw UsageError("--classes must be in [2, 255]");
    const sarseg::IntensityGrid img = sarseg::io::read_image(input_);
    o.inputs.push_back(input_);
    sarseg::PipelineConfig cfg;
    cfg.num_classes = classes_;
    cfg.modes_per_class = k_;
    cfg.single_gamma = single_gamma_;
    cfg.beta_method = method_of(beta_method_);
    cfg.beta_override = beta_;
    cfg.beta0 = beta0_;
    cfg.beta_tol = beta_tol_;
    cfg.param_tol = param_tol_;
    cfg.max_iters = max_iters_;
    try {
      cfg.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    const fs::path report_path = report_.empty() ? sibling(out_, ".json") : fs::path(report_);
    json report;
    std::optional<sarseg::LabelField> labels;
    bool converged = true;
    auto note = [&](const sarseg::RunReport& r) {
      converged = converged && r.converged;
      if (r.last_estimate && !r.last_estimate->converged)
        o.warnings.push_back("loopy belief propagation hit its sweep cap during beta estimation");
      if (r.algorithm == "algorithm3" && !r.meaningful)
        o.warnings.push_back("unsupervised run flagged as not meaningful (overlapping classes or reseeding)");
      if (r.estimator_fallbacks > 0) o.warnings.push_back("beta estimator undefined at some iteration; beta kept");
    };
    if (mode_ == "supervised") {
      if (static_cast<int>(roi_.size()) != classes_)
        throw UsageError("supervised mode needs one --roi mask per class (" + std::to_string(classes_) + ")");
      if (tile_size_ > 0) throw UsageError("--tile-size applies to unsupervised mode only");
      std::vector<fs::path> paths(roi_.begin(), roi_.end());
      const sarseg::RoiSpec roi = sarseg::io::read_roi_masks(paths, img.dims());
      for (const auto& p : paths) o.inputs.push_back(p);
      try {
        roi.validate(img.dims(), classes_);
      } catch (const std::exception& e) {
        throw UsageError(e.what());
      }
      auto [x, r] = cfg.beta_method == sarseg::BetaMethod::kLoopy
                        ? sarseg::algorithm2_supervised(img, roi, cfg)
                        : sarseg::algorithm1_supervised(img, roi, cfg);
      note(r);
      report = sarseg::io::to_json(r);
      labels = std::move(x);
    } else if (tile_size_ > 0) {
      sarseg::TiledResult t = sarseg::tile_segment(img, tile_size_, cfg, common.threads);
      json tiles = json::array();
      for (std::size_t i = 0; i < t.tiles.size(); ++i) {
        note(t.reports[i]);
        const auto& rect = t.tiles[i];
        tiles.push_back({{"row0", rect.row0},
                         {"col0", rect.col0},
                         {"height", rect.height},
                         {"width", rect.width},
                         {"report", sarseg::io::to_json(t.reports[i])}});
      }
      report = {{"algorithm", "algorithm3-tiled"}, {"tile_size", tile_size_}, {"tiles", std::move(tiles)}};
      labels = std::move(t.labels);
    } else {
      auto [x, r] = sarseg::algorithm3_unsupervised(img, cfg);
      note(r);
      report = sarseg::io::to_json(r);
      labels = std::move(x);
    }
    report["mode"] = mode_;
    report["width"] = img.width();
    report["height"] = img.height();
    report["class_counts"] = labels->class_counts();
    sarseg::io::write_label_pgm(out_, *labels);
    sarseg::io::write_json(report_path, report);
    o.outputs = {out_, report_path};
    if (!converged) {
      o.warnings.push_back("iteration cap reached before beta/parameters converged");
      o.code = kNumerical;
    }
    return o;
  }

 private:
  std::string input_;
  std::string mode_ = "supervised";
  std::vector<std::string> roi_;
  int classes_ = 2;
  std::size_t k_ = 1;
  bool single_gamma_ = false;
  std::string beta_method_ = "loopy";
  std::optional<double> beta_;
  double beta0_ = 1.0;
  double beta_tol_ = 1e-3;
  double param_tol_ = 1e-3;
  int max_iters_ = 30;
  std::size_t tile_size_ = 0;
  std::string out_;
  std::string report_;
};

// ---------------------------------------------------------------------------
// estimate-beta

class EstimateBeta : public Command {
 public:
  void add_options(CLI::App& app) override {
    app.add_option("-i,--input", input_, "Image (P5 PGM or RAWF32)")->required();
    app.add_option("--roi", roi_, "Training mask per class (PGM), in label order")->required();
    app.add_option("--method", method_, "lsf, cd or loopy")
        ->check(CLI::IsMember({"lsf", "cd", "loopy"}, CLI::ignore_case));
    app.add_option("--labels", labels_, "Label map (PGM) for lsf and cd");
    app.add_option("-K,--modes-per-class", k_, "Gamma modes per class density")->check(CLI::PositiveNumber);
    app.add_flag("--single-gamma", single_gamma_, "One Gamma per class");
    app.add_option("-o,--out", out_, "Estimate JSON")->required();
  }

  Outcome run(const Common&) override {
    Outcome o;
    const sarseg::IntensityGrid img = sarseg::io::read_image(input_);
    o.inputs.push_back(input_);
    std::vector<fs::path> paths(roi_.begin(), roi_.end());
    const sarseg::RoiSpec roi = sarseg::io::read_roi_masks(paths, img.dims());
    for (const auto& p : paths) o.inputs.push_back(p);
    const int c = static_cast<int>(paths.size());
    if (c < 2) throw UsageError("need one --roi mask per class, at least two");
    try {
      roi.validate(img.dims(), c);
    } catch (const std::exception& e) {
      throw UsageError(e.what());
    }
    const sarseg::BetaMethod method = method_of(method_);
    const SupervisedModel m = fit_from_roi(img, roi, k_, single_gamma_);
    const sarseg::CliqueSet cliques = sarseg::build_cliques(img.dims());
    sarseg::BetaEstimate e;
    if (method == sarseg::BetaMethod::kLoopy) {
      e = sarseg::loopy_beta_estimate(m.unary, cliques);
      if (!e.converged) o.warnings.push_back("loopy belief propagation hit its sweep cap during beta estimation");
    } else {
      if (labels_.empty()) throw UsageError("--labels is required for lsf and cd");
      const sarseg::LabelField x = sarseg::io::read_label_pgm(labels_, c);
      o.inputs.push_back(labels_);
      if (x.dims() != img.dims()) throw UsageError("label map size does not match the image");
      e = sarseg::estimate_beta(method, x, m.unary, cliques);
    }
    json j = sarseg::io::to_json(e);
    json models = json::array();
    for (const auto& cm : m.models) models.push_back(sarseg::io::to_json(cm));
    j["class_models"] = std::move(models);
    sarseg::io::write_json(out_, j);
    o.outputs.push_back(out_);
    return o;
  }

 private:
  std::string input_;
  std::vector<std::string> roi_;
  std::string method_ = "loopy";
  std::string labels_;
  std::size_t k_ = 1;
  bool single_gamma_ = false;
  std::string out_;
};

// ---------------------------------------------------------------------------
// simulate

sarseg::LabelField load_truth(const std::string& truth, sarseg::GridDims dims, std::vector<fs::path>& inputs) {
  if (truth == "two_region" || truth == "linear_slick" || truth == "patch_slick")
    return sarseg::make_truth(truth, dims);
  if (!fs::exists(truth)) throw UsageError("--truth must be two_region, linear_slick, patch_slick or a label PGM");
  inputs.push_back(truth);
  return sarseg::io::read_label_pgm(truth);
}

class Simulate : public Command {
 public:
  void add_options(CLI::App& app) override {
    app.add_option("--truth", truth_, "two_region, linear_slick, patch_slick or a label PGM");
    app.add_option("--width", width_, "Width of a built-in truth")->check(CLI::PositiveNumber);
    app.add_option("--height", height_, "Height of a built-in truth")->check(CLI::PositiveNumber);
    app.add_option("--means", means_, "Class means, in label order");
    app.add_option("--sigma", sigma_, "Standard deviation shared by all classes")->check(CLI::PositiveNumber);
    app.add_option("-o,--out", out_, "Simulated image (RAWF32)")->required();
    app.add_option("--truth-out", truth_out_, "Write the ground truth as a label PGM");
    app.add_option("--roi-prefix", roi_prefix_, "Write training masks <prefix><label>.pgm taken from the truth");
    app.add_option("--roi-per-class", roi_per_class_, "Training pixels per class")->check(CLI::PositiveNumber);
    app.add_option("--report", report_, "Simulation report JSON (default: <out>.json)");
  }

  Outcome run(const Common& common) override {
    Outcome o;
    sarseg::SimSpec sim;
    sim.truth = load_truth(truth_, {width_, height_}, o.inputs);
    if (static_cast<int>(means_.size()) != sim.truth.num_classes())
      throw UsageError("--means needs one value per class (" + std::to_string(sim.truth.num_classes()) + ")");
    try {
      sim.classes = sarseg::classes_from_means(means_, sigma_);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    sim.seed = common.seed;
    const sarseg::IntensityGrid img = sarseg::simulate_image(sim);
    sarseg::io::write_raw_float(out_, img);
    o.outputs.push_back(out_);
    if (!truth_out_.empty()) {
      sarseg::io::write_label_pgm(truth_out_, sim.truth);
      o.outputs.push_back(truth_out_);
    }
    if (!roi_prefix_.empty()) {
      const sarseg::RoiSpec roi = sarseg::roi_from_truth(sim.truth, roi_per_class_);
      for (int l = 1; l <= roi.num_classes(); ++l) {
        const fs::path p = roi_prefix_ + std::to_string(l) + ".pgm";
        sarseg::io::write_roi_mask(p, img.dims(), roi.pixels[static_cast<std::size_t>(l - 1)]);
        o.outputs.push_back(p);
      }
    }
    // The report describes the image as written (float32).
    const sarseg::IntensityGrid stored = sarseg::io::read_image(out_);
    const double bc = sarseg::bimodality_coefficient(stored.values());
    json classes = json::array();
    for (const auto& c : sim.classes) classes.push_back(sarseg::io::to_json(c));
    const json report{{"truth", truth_},
                      {"width", img.width()},
                      {"height", img.height()},
                      {"seed", sim.seed},
                      {"classes", std::move(classes)},
                      {"class_counts", sim.truth.class_counts()},
                      {"bimodality_coefficient", bc},
                      {"bimodal_threshold", sarseg::kBimodalThreshold},
                      {"bimodal", bc > sarseg::kBimodalThreshold}};
    const fs::path report_path = report_.empty() ? sibling(out_, ".json") : fs::path(report_);
    sarseg::io::write_json(report_path, report);
    o.outputs.push_back(report_path);
    return o;
  }

 private:
  std::string truth_ = "two_region";
  std::size_t width_ = 64;
  std::size_t height_ = 64;
  std::vector<double> means_{5.0, 9.0};
  double sigma_ = 1.0;
  std::string out_;
  std::string truth_out_;
  std::string roi_prefix_;
  std::size_t roi_per_class_ = 200;
  std::string report_;
};

// ---------------------------------------------------------------------------
// sweep

class Sweep : public Command {
 public:
  void add_options(CLI::App& app) override {
    app.add_option("--truth", spec_.truth, "two_region, linear_slick or patch_slick")
        ->check(CLI::IsMember({"two_region", "linear_slick", "patch_slick"}));
    app.add_option("--width", spec_.dims.width, "Image width")->check(CLI::PositiveNumber);
    app.add_option("--height", spec_.dims.height, "Image height")->check(CLI::PositiveNumber);
    app.add_option("--sigmas", spec_.sigmas, "Noise standard deviations");
    app.add_option("--means", spec_.means, "Class means, in label order");
    app.add_option("--methods", spec_.methods, "Subset of TM LE LSF CD NP UNS");
    app.add_option("--reps", spec_.reps, "Images per sigma")->check(CLI::PositiveNumber);
    app.add_option("--roi-per-class", spec_.roi_per_class, "Training pixels per class")
        ->check(CLI::PositiveNumber);
    app.add_option("--tm-max", tm_max_, "Largest beta of the manual-tuning grid");
    app.add_option("--tm-step", tm_step_, "Step of the manual-tuning grid")->check(CLI::PositiveNumber);
    app.add_option("-o,--out", out_, "Per-run CSV")->required();
    app.add_option("--dat", dat_, "gnuplot table of mean OA per sigma (default: <out>.dat)");
    app.add_option("--summary", summary_, "Summary JSON (default: <out>.summary.json)");
  }

  Outcome run(const Common& common) override {
    Outcome o;
    spec_.seed = common.seed;
    spec_.tm_grid.clear();
    for (int k = 0; k * tm_step_ <= tm_max_ + 1e-12; ++k) spec_.tm_grid.push_back(k * tm_step_);
    try {
      spec_.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    const sarseg::SweepResult r = sarseg::run_sweep(spec_, common.threads);
    sarseg::io::write_file(out_, sarseg::io::sweep_csv(r));
    const fs::path dat = dat_.empty() ? sibling(out_, ".dat") : fs::path(dat_);
    sarseg::io::write_file(dat, sarseg::io::sweep_gnuplot(spec_, r));
    const fs::path summary = summary_.empty() ? sibling(out_, ".summary.json") : fs::path(summary_);
    sarseg::io::write_json(summary, sarseg::io::sweep_summary(spec_, r));
    o.outputs = {out_, dat, summary};
    return o;
  }

 private:
  sarseg::SweepSpec spec_;
  double tm_max_ = 4.0;
  double tm_step_ = 0.25;
  std::string out_;
  std::string dat_;
  std::string summary_;
};

// ---------------------------------------------------------------------------
// Dispatch

struct Verb {
  const char* name;
  const char* help;
  std::function<std::unique_ptr<Command>()> make;
};

const std::vector<Verb>& verbs() {
  static const std::vector<Verb> v{
      {"fit-mixture", "Fit a Gamma mixture by EM", [] { return std::make_unique<FitMixture>(); }},
      {"segment", "MAP segmentation (Algorithms 1-3)", [] { return std::make_unique<Segment>(); }},
      {"estimate-beta", "Estimate the smoothness parameter", [] { return std::make_unique<EstimateBeta>(); }},
      {"simulate", "Gamma-noise image from a ground truth", [] { return std::make_unique<Simulate>(); }},
      {"sweep", "OA-versus-sigma benchmark", [] { return std::make_unique<Sweep>(); }},
  };
  return v;
}

void print_usage(std::ostream& os) {
  os << "sarseg " << SARSEG_VERSION << "\n\nusage: sarseg <command> [options]\n       sarseg <command> --help\n\n"
     << "commands:\n";
  for (const auto& v : verbs()) os << "  " << std::left << std::setw(15) << v.name << v.help << "\n";
  os << "  " << std::left << std::setw(15) << "replay"
     << "Re-run a manifest and compare output hashes\n";
}

/// Flat key=value text of every resolved option, minus the ones that only
/// steer this invocation.
std::string resolved_config(const CLI::App& app) {
  std::istringstream in(app.config_to_str(true, false));
  std::string out;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    const std::string key = line.substr(0, eq);
    if (key == "config" || key == "manifest" || key == "no-manifest" || key == "seed" || key == "threads") continue;
    // Unset optionals and empty lists do not read back; defaults cover them.
    const std::string value = eq == std::string::npos ? "" : line.substr(eq + 1);
    if (value == "\"\"" || value == "\"{}\"") continue;
    out += line + "\n";
  }
  return out;
}

json hashes(const std::vector<fs::path>& paths) {
  json a = json::array();
  for (const auto& p : paths) a.push_back({{"path", p.generic_string()}, {"fnv1a", sarseg::io::file_hash(p)}});
  return a;
}

struct Invocation {
  int code = kOk;
  Outcome outcome;
  json manifest;
};

bool on_command_line(const std::vector<std::string>& args, const std::string& flag) {
  for (const auto& a : args)
    if (a == flag || a.starts_with(flag + "=")) return true;
  return false;
}

/// Parses and runs one verb. `args` excludes the program name.
Invocation invoke(const std::vector<std::string>& args) {
  Invocation inv;
  const std::string name = args.at(0);
  const Verb* verb = nullptr;
  for (const auto& v : verbs())
    if (name == v.name) verb = &v;
  if (!verb) {
    std::cerr << "sarseg: unknown command '" << name << "'\n\n";
    print_usage(std::cerr);
    inv.code = kUsage;
    return inv;
  }
  CLI::App app{verb->help, "sarseg " + name};
  app.option_defaults()->always_capture_default();
  app.set_config("--config", "", "Flat key=value file; command-line flags win");
  app.allow_config_extras(CLI::config_extras_mode::error);
  Common common;
  app.add_option("--seed", common.seed, "Random seed (env SARSEG_SEED overrides the config file)");
  app.add_option("--threads", common.threads, "Worker threads (default: available cores)")
      ->check(CLI::PositiveNumber);
  app.add_option("--manifest", common.manifest, "Manifest path (default: <first output>.manifest.json)");
  app.add_flag("--no-manifest", common.no_manifest, "Do not write a manifest");
  std::unique_ptr<Command> cmd = verb->make();
  cmd->add_options(app);

  std::vector<std::string> rev(args.rbegin(), args.rend() - 1);
  try {
    app.parse(std::move(rev));
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    inv.code = rc == 0 ? kOk : kUsage;
    return inv;
  }
  if (!on_command_line(args, "--seed")) {
    if (const char* env = std::getenv("SARSEG_SEED")) {
      try {
        std::size_t used = 0;
        common.seed = std::stoull(env, &used);
        if (used != std::string(env).size()) throw std::invalid_argument(env);
      } catch (const std::exception&) {
        std::cerr << "sarseg: SARSEG_SEED is not an unsigned integer\n";
        inv.code = kUsage;
        return inv;
      }
    }
  }

  const auto t0 = std::chrono::steady_clock::now();
  try {
    inv.outcome = cmd->run(common);
    inv.code = inv.outcome.code;
  } catch (const UsageError& e) {
    std::cerr << "sarseg " << name << ": " << e.what() << "\n";
    inv.code = kUsage;
  } catch (const sarseg::IoError& e) {
    std::cerr << "sarseg " << name << ": " << e.what() << "\n";
    inv.code = kUsage;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "sarseg " << name << ": " << e.what() << "\n";
    inv.code = kUsage;
  } catch (const sarseg::Error& e) {
    std::cerr << "sarseg " << name << ": numerical failure: " << e.what() << "\n";
    inv.code = kNumerical;
  } catch (const std::invalid_argument& e) {
    std::cerr << "sarseg " << name << ": " << e.what() << "\n";
    inv.code = kUsage;
  } catch (const std::out_of_range& e) {
    std::cerr << "sarseg " << name << ": " << e.what() << "\n";
    inv.code = kUsage;
  } catch (const std::exception& e) {
    std::cerr << "sarseg " << name << ": " << e.what() << "\n";
    inv.code = kNumerical;
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (const auto& w : inv.outcome.warnings) std::cerr << "sarseg " << name << ": warning: " << w << "\n";
  if (inv.outcome.outputs.empty()) return inv;

  inv.manifest = {{"tool", "sarseg"},
                  {"version", SARSEG_VERSION},
                  {"command", name},
                  {"config", resolved_config(app)},
                  {"seed", common.seed},
                  {"threads", common.threads},
                  {"inputs", hashes(inv.outcome.inputs)},
                  {"outputs", hashes(inv.outcome.outputs)},
                  {"exit_code", inv.code},
                  {"warnings", inv.outcome.warnings},
                  {"timing_seconds", seconds}};
  if (!common.no_manifest) {
    const fs::path path =
        common.manifest.empty() ? sibling(inv.outcome.outputs.front(), ".manifest.json") : fs::path(common.manifest);
    try {
      sarseg::io::write_json(path, inv.manifest);
    } catch (const std::exception& e) {
      std::cerr << "sarseg " << name << ": " << e.what() << "\n";
      inv.code = kUsage;
    }
  }
  return inv;
}

/// Re-runs a manifest's command with its resolved configuration and seed,
/// then compares every output hash with the recorded one.
int replay(const std::vector<std::string>& args) {
  CLI::App app{"Re-run a manifest and compare output hashes", "sarseg replay"};
  std::string manifest_path;
  std::optional<unsigned> threads;
  app.add_option("manifest", manifest_path, "Manifest JSON")->required();
  app.add_option("--threads", threads, "Override the recorded thread count")->check(CLI::PositiveNumber);
  std::vector<std::string> rev(args.rbegin(), args.rend() - 1);
  try {
    app.parse(std::move(rev));
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }
  json m;
  std::string command;
  std::string config;
  std::uint64_t seed = 0;
  unsigned recorded_threads = 1;
  try {
    m = sarseg::io::read_json(manifest_path);
    command = m.at("command").get<std::string>();
    config = m.at("config").get<std::string>();
    seed = m.at("seed").get<std::uint64_t>();
    recorded_threads = m.at("threads").get<unsigned>();
    for (const auto& in : m.at("inputs")) {
      const std::string p = in.at("path").get<std::string>();
      if (sarseg::io::file_hash(p) != in.at("fnv1a").get<std::string>()) {
        std::cerr << "sarseg replay: input changed since the manifest was written: " << p << "\n";
        return kUsage;
      }
    }
  } catch (const json::exception& e) {
    std::cerr << "sarseg replay: malformed manifest: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "sarseg replay: " << e.what() << "\n";
    return kUsage;
  }
  const fs::path cfg = fs::temp_directory_path() /
                       ("sarseg-replay-" + sarseg::io::hex64(sarseg::io::fnv1a(manifest_path + config)) + ".ini");
  try {
    sarseg::io::write_file(cfg, config);
  } catch (const std::exception& e) {
    std::cerr << "sarseg replay: " << e.what() << "\n";
    return kUsage;
  }
  const Invocation inv = invoke({command, "--config", cfg.string(), "--seed", std::to_string(seed), "--threads",
                                 std::to_string(threads.value_or(recorded_threads)), "--no-manifest"});
  fs::remove(cfg);
  int rc = inv.code == m.value("exit_code", 0) ? kOk : kNumerical;
  for (const auto& out : m.at("outputs")) {
    const std::string p = out.at("path").get<std::string>();
    std::string now = "missing";
    if (fs::exists(p)) now = sarseg::io::file_hash(p);
    const bool same = now == out.at("fnv1a").get<std::string>();
    std::cout << (same ? "identical " : "DIFFERS   ") << p << "\n";
    if (!same) rc = kNumerical;
  }
  return rc;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  if (args.empty()) {
    print_usage(std::cerr);
    return kUsage;
  }
  if (args[0] == "-h" || args[0] == "--help") {
    print_usage(std::cout);
    return kOk;
  }
  if (args[0] == "--version") {
    std::cout << "sarseg " << SARSEG_VERSION << "\n";
    return kOk;
  }
  if (args[0] == "replay") return replay(args);
  return invoke(args).code;
}
