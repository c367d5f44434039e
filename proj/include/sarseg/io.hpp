#ifndef SARSEG_IO_HPP
#define SARSEG_IO_HPP

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sarseg/beta_estimation.hpp"
#include "sarseg/gamma_model.hpp"
#include "sarseg/grid.hpp"
#include "sarseg/pipelines.hpp"
#include "sarseg/simulation.hpp"

namespace sarseg {

/// Unreadable, malformed or unwritable files.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace io {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Raw bytes and hashing

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << v;
  return ss.str();
}

inline std::string file_hash(const std::filesystem::path& path) { return hex64(fnv1a(read_file(path))); }

// ---------------------------------------------------------------------------
// PGM (binary P5, 8 or 16 bit)

struct PgmImage {
  GridDims dims;
  unsigned maxval = 255;
  std::vector<std::uint16_t> pixels;
  std::vector<std::string> comments;
};

namespace detail {

class HeaderReader {
 public:
  HeaderReader(std::string_view data, std::string what) : data_(data), what_(std::move(what)) {}

  /// Next whitespace-delimited token; '#' starts a comment to end of line.
  std::string token(std::vector<std::string>* comments = nullptr) {
    while (pos_ < data_.size()) {
      const char ch = data_[pos_];
      if (ch == '#') {
        const std::size_t eol = data_.find('\n', pos_);
        const std::size_t end = eol == std::string_view::npos ? data_.size() : eol;
        if (comments) comments->emplace_back(data_.substr(pos_ + 1, end - pos_ - 1));
        pos_ = end;
      } else if (std::isspace(static_cast<unsigned char>(ch))) {
        ++pos_;
      } else {
        break;
      }
    }
    const std::size_t start = pos_;
    while (pos_ < data_.size() && !std::isspace(static_cast<unsigned char>(data_[pos_])) && data_[pos_] != '#') ++pos_;
    if (start == pos_) throw IoError(what_ + ": truncated header");
    return std::string(data_.substr(start, pos_ - start));
  }

  std::size_t number(std::vector<std::string>* comments = nullptr) {
    const std::string t = token(comments);
    std::size_t v = 0;
    for (char ch : t) {
      if (ch < '0' || ch > '9') throw IoError(what_ + ": bad header field '" + t + "'");
      v = v * 10 + static_cast<std::size_t>(ch - '0');
      if (v > (std::size_t{1} << 40)) throw IoError(what_ + ": header value too large");
    }
    return v;
  }

  /// Consumes the single whitespace byte that ends a header.
  std::size_t end_of_header() {
    if (pos_ >= data_.size() || !std::isspace(static_cast<unsigned char>(data_[pos_])))
      throw IoError(what_ + ": malformed header");
    return pos_ + 1;
  }

 private:
  std::string_view data_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline PgmImage parse_pgm(std::string_view data, const std::string& what = "PGM") {
  if (data.size() < 2 || data.substr(0, 2) != "P5") throw IoError(what + ": not a binary PGM (P5)");
  detail::HeaderReader h(data.substr(2), what);
  PgmImage img;
  img.dims.width = h.number(&img.comments);
  img.dims.height = h.number(&img.comments);
  const std::size_t maxval = h.number(&img.comments);
  if (img.dims.width == 0 || img.dims.height == 0) throw IoError(what + ": zero dimension");
  if (maxval == 0 || maxval > 65535) throw IoError(what + ": maxval must be in [1, 65535]");
  img.maxval = static_cast<unsigned>(maxval);
  const std::size_t offset = 2 + h.end_of_header();
  const std::size_t bpp = maxval < 256 ? 1 : 2;
  const std::size_t n = img.dims.size();
  if (data.size() - offset < n * bpp) throw IoError(what + ": truncated pixel data");
  img.pixels.resize(n);
  const auto* p = reinterpret_cast<const unsigned char*>(data.data() + offset);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned v = bpp == 1 ? p[i] : (static_cast<unsigned>(p[2 * i]) << 8) | p[2 * i + 1];
    if (v > maxval) throw IoError(what + ": pixel exceeds maxval");
    img.pixels[i] = static_cast<std::uint16_t>(v);
  }
  return img;
}

inline PgmImage read_pgm(const std::filesystem::path& path) { return parse_pgm(read_file(path), path.string()); }

inline std::string encode_pgm(const PgmImage& img) {
  if (img.maxval == 0 || img.maxval > 65535) throw std::invalid_argument("PGM: maxval must be in [1, 65535]");
  if (img.pixels.size() != img.dims.size()) throw std::invalid_argument("PGM: pixel count does not match size");
  std::string out = "P5\n";
  for (const auto& c : img.comments) out += "#" + c + "\n";
  out += std::to_string(img.dims.width) + " " + std::to_string(img.dims.height) + "\n" +
         std::to_string(img.maxval) + "\n";
  const bool wide = img.maxval > 255;
  for (std::uint16_t v : img.pixels) {
    if (v > img.maxval) throw std::invalid_argument("PGM: pixel exceeds maxval");
    if (wide) out.push_back(static_cast<char>(v >> 8));
    out.push_back(static_cast<char>(v & 0xFF));
  }
  return out;
}

inline void write_pgm(const std::filesystem::path& path, const PgmImage& img) { write_file(path, encode_pgm(img)); }

// ---------------------------------------------------------------------------
// Raw little-endian float32 grid: "RAWF32 <width> <height>\n" then data

inline constexpr std::string_view kRawMagic = "RAWF32";

inline IntensityGrid parse_raw_float(std::string_view data, const std::string& what = "raw float") {
  if (data.substr(0, kRawMagic.size()) != kRawMagic) throw IoError(what + ": missing RAWF32 header");
  detail::HeaderReader h(data.substr(kRawMagic.size()), what);
  GridDims d;
  d.width = h.number();
  d.height = h.number();
  if (d.width == 0 || d.height == 0) throw IoError(what + ": zero dimension");
  const std::size_t offset = kRawMagic.size() + h.end_of_header();
  const std::size_t n = d.size();
  if (data.size() - offset < 4 * n) throw IoError(what + ": truncated pixel data");
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t bits = 0;
    for (int b = 3; b >= 0; --b)
      bits = (bits << 8) | static_cast<unsigned char>(data[offset + 4 * i + static_cast<std::size_t>(b)]);
    const float f = std::bit_cast<float>(bits);
    if (!std::isfinite(f) || f < 0.0f) throw IoError(what + ": intensities must be finite and nonnegative");
    v[i] = static_cast<double>(f);
  }
  return IntensityGrid(d, std::move(v));
}

inline std::string encode_raw_float(const IntensityGrid& g) {
  std::string out = std::string(kRawMagic) + " " + std::to_string(g.width()) + " " + std::to_string(g.height()) + "\n";
  out.reserve(out.size() + 4 * g.size());
  for (double v : g.values()) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
  }
  return out;
}

inline void write_raw_float(const std::filesystem::path& path, const IntensityGrid& g) {
  write_file(path, encode_raw_float(g));
}

/// Reads a P5 PGM (gray levels taken as intensities) or a RAWF32 grid,
/// chosen by the file's magic bytes.
inline IntensityGrid read_image(const std::filesystem::path& path) {
  const std::string data = read_file(path);
  if (data.empty()) throw IoError(path.string() + ": empty file");
  if (data.starts_with("P5")) {
    const PgmImage img = parse_pgm(data, path.string());
    return IntensityGrid(img.dims, std::vector<double>(img.pixels.begin(), img.pixels.end()));
  }
  if (data.starts_with(kRawMagic)) return parse_raw_float(data, path.string());
  throw IoError(path.string() + ": unknown image format (expected P5 PGM or RAWF32)");
}

/// Whitespace-separated nonnegative numbers.
inline std::vector<double> parse_samples(std::string_view text, const std::string& what = "samples") {
  std::vector<double> out;
  std::istringstream in{std::string(text)};
  std::string tok;
  while (in >> tok) {
    if (tok.starts_with("#")) {
      std::getline(in, tok);
      continue;
    }
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      throw IoError(what + ": not a number: '" + tok + "'");
    }
    if (used != tok.size() || !std::isfinite(v) || v < 0.0)
      throw IoError(what + ": bad sample '" + tok + "'");
    out.push_back(v);
  }
  if (out.empty()) throw IoError(what + ": no samples");
  return out;
}

/// Intensity samples from an image file or a text file of numbers.
inline std::vector<double> read_samples(const std::filesystem::path& path) {
  const std::string data = read_file(path);
  if (data.empty()) throw IoError(path.string() + ": empty file");
  if (data.starts_with("P5") || data.starts_with(kRawMagic)) {
    const IntensityGrid g = read_image(path);
    return {g.values().begin(), g.values().end()};
  }
  return parse_samples(data, path.string());
}

// ---------------------------------------------------------------------------
// Label maps: labels 1..c on evenly spaced gray levels 0..255

inline std::uint16_t label_gray(int label, int c) {
  return static_cast<std::uint16_t>(std::lround(255.0 * (label - 1) / (c - 1)));
}

inline PgmImage label_pgm(const LabelField& x) {
  const int c = x.num_classes();
  if (c > 255) throw std::invalid_argument("label map: at most 255 classes");
  PgmImage img;
  img.dims = x.dims();
  img.maxval = 255;
  img.comments.push_back(" classes " + std::to_string(c));
  img.pixels.resize(x.size());
  for (std::size_t p = 0; p < x.size(); ++p) img.pixels[p] = label_gray(x[p], c);
  return img;
}

inline void write_label_pgm(const std::filesystem::path& path, const LabelField& x) { write_pgm(path, label_pgm(x)); }

/// Inverse of label_pgm. The class count comes from the "classes" comment
/// when present, else from `c`, else from the number of distinct levels.
inline LabelField labels_from_pgm(const PgmImage& img, std::optional<int> c = std::nullopt) {
  std::optional<int> from_comment;
  for (const auto& line : img.comments) {
    std::istringstream in(line);
    std::string key;
    int v = 0;
    if (in >> key >> v && key == "classes") from_comment = v;
  }
  int classes = 0;
  if (from_comment) {
    classes = *from_comment;
  } else if (c) {
    classes = *c;
  } else {
    std::vector<std::uint16_t> levels(img.pixels);
    std::sort(levels.begin(), levels.end());
    classes = static_cast<int>(std::unique(levels.begin(), levels.end()) - levels.begin());
  }
  if (classes < 2 || classes > 255) throw IoError("label map: class count must be in [2, 255]");
  if (img.maxval != 255) throw IoError("label map: expected an 8-bit PGM");
  std::vector<int> gray_to_label(256, 0);
  for (int l = 1; l <= classes; ++l) gray_to_label[label_gray(l, classes)] = l;
  std::vector<int> labels(img.pixels.size());
  for (std::size_t p = 0; p < labels.size(); ++p) {
    const int l = gray_to_label[img.pixels[p]];
    if (l == 0) throw IoError("label map: gray level " + std::to_string(img.pixels[p]) + " is not a class level");
    labels[p] = l;
  }
  return LabelField(img.dims, classes, std::move(labels));
}

inline LabelField read_label_pgm(const std::filesystem::path& path, std::optional<int> c = std::nullopt) {
  return labels_from_pgm(read_pgm(path), c);
}

/// One PGM mask per class, nonzero = selected.
inline RoiSpec read_roi_masks(const std::vector<std::filesystem::path>& paths, const GridDims& dims) {
  std::vector<std::vector<int>> masks;
  for (const auto& path : paths) {
    const PgmImage m = read_pgm(path);
    if (m.dims != dims) throw IoError(path.string() + ": mask size does not match the image");
    masks.emplace_back(m.pixels.begin(), m.pixels.end());
  }
  return RoiSpec::from_masks(dims, masks);
}

inline void write_roi_mask(const std::filesystem::path& path, const GridDims& dims,
                           const std::vector<std::size_t>& pixels) {
  PgmImage m;
  m.dims = dims;
  m.pixels.assign(dims.size(), 0);
  for (std::size_t p : pixels) m.pixels.at(p) = 255;
  write_pgm(path, m);
}

// ---------------------------------------------------------------------------
// JSON

inline json to_json(const GammaMode& m) {
  return {{"shape", m.shape}, {"rate", m.rate}, {"mean", m.mean()}, {"variance", m.variance()}};
}

inline json to_json(const GammaMixture& mix) {
  json modes = json::array();
  for (std::size_t s = 0; s < mix.size(); ++s) {
    json j = to_json(mix.modes()[s]);
    j["weight"] = mix.weights()[s];
    modes.push_back(std::move(j));
  }
  return {{"modes", std::move(modes)}, {"mean", mix.mean()}, {"variance", mix.variance()}};
}

inline GammaMixture mixture_from_json(const json& j) {
  try {
    std::vector<GammaMode> modes;
    std::vector<double> w;
    for (const auto& m : j.at("modes")) {
      modes.push_back({m.at("shape").get<double>(), m.at("rate").get<double>()});
      w.push_back(m.at("weight").get<double>());
    }
    return GammaMixture(std::move(modes), std::move(w));
  } catch (const json::exception& e) {
    throw IoError(std::string("mixture JSON: ") + e.what());
  }
}

inline json to_json(const BetaEstimate& e) {
  json j{{"beta", e.beta},
         {"method", to_string(e.method)},
         {"iterations", e.iterations},
         {"residual", e.residual},
         {"raw_beta", e.raw_beta},
         {"clamped", e.clamped},
         {"boundary", e.boundary},
         {"no_contrast", e.no_contrast},
         {"converged", e.converged}};
  if (e.method == BetaMethod::kLsf) j["rows"] = e.rows;
  if (!e.per_coding.empty()) j["per_coding"] = e.per_coding;
  if (!e.trace.empty()) j["trace"] = e.trace;
  return j;
}

/// Everything except the wall time, which would make reports differ
/// between otherwise identical runs.
inline json to_json(const RunReport& r) {
  json models = json::array();
  for (const auto& m : r.class_models) models.push_back(to_json(m));
  json trace = json::array();
  for (const auto& t : r.trace)
    trace.push_back({{"iteration", t.iteration},
                     {"beta", t.beta},
                     {"beta_next", t.beta_next},
                     {"energy", t.energy},
                     {"param_delta", t.param_delta},
                     {"estimator_failed", t.estimator_failed}});
  json j{{"algorithm", r.algorithm},
         {"beta", r.beta},
         {"energy", r.energy},
         {"iterations", r.iterations},
         {"converged", r.converged},
         {"class_models", std::move(models)},
         {"trace", std::move(trace)},
         {"estimator_fallbacks", r.estimator_fallbacks},
         {"reseeded_classes", r.reseeded_classes},
         {"init_fallback", r.init_fallback},
         {"meaningful", r.meaningful},
         {"class_overlap", r.class_overlap},
         {"fit_pixels", r.fit_pixels}};
  j["last_estimate"] = r.last_estimate ? to_json(*r.last_estimate) : json(nullptr);
  return j;
}

inline json to_json(const EmResult& r) {
  return {{"mixture", to_json(r.mixture)},
          {"iterations", r.iterations},
          {"converged", r.converged},
          {"loglik_trace", r.loglik_trace},
          {"prune_events", r.prune_events}};
}

/// Histogram of the samples with the fitted density at the bin centres,
/// both as densities so they overlay directly.
inline json histogram_fit(std::span<const double> samples, const GammaMixture& mix, std::size_t bins) {
  if (bins < 1) throw std::invalid_argument("histogram: need at least one bin");
  const auto [mn, mx] = std::minmax_element(samples.begin(), samples.end());
  const double lo = *mn;
  const double hi = *mx > lo ? *mx : lo + 1.0;
  const double width = (hi - lo) / static_cast<double>(bins);
  std::vector<std::size_t> counts(bins, 0);
  for (double v : samples) {
    auto b = static_cast<std::size_t>((v - lo) / width);
    ++counts[std::min(b, bins - 1)];
  }
  std::vector<double> centers(bins);
  std::vector<double> density(bins);
  std::vector<double> fitted(bins);
  const double n = static_cast<double>(samples.size());
  for (std::size_t b = 0; b < bins; ++b) {
    centers[b] = lo + (static_cast<double>(b) + 0.5) * width;
    density[b] = static_cast<double>(counts[b]) / (n * width);
    fitted[b] = mixture_pdf(centers[b], mix);
  }
  return {{"lo", lo}, {"hi", hi},           {"bin_width", width}, {"centers", centers},
          {"counts", counts}, {"density", density}, {"fitted_pdf", fitted}};
}

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

inline void write_json(const std::filesystem::path& path, const json& j) { write_file(path, dump(j)); }

inline json read_json(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Sweep tables

/// Shortest text that reads back to the same double.
inline std::string fmt_double(double v) {
  char buf[32];
  for (int prec = 6; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

inline std::string sweep_csv(const SweepResult& r) {
  std::string out = "method,sigma,rep,oa,beta\n";
  for (const auto& row : r.rows)
    out += row.method + "," + fmt_double(row.sigma) + "," + std::to_string(row.rep) + "," + fmt_double(row.oa) +
           "," + fmt_double(row.beta) + "\n";
  return out;
}

/// gnuplot table: sigma, then the mean OA of each method.
inline std::string sweep_gnuplot(const SweepSpec& spec, const SweepResult& r) {
  std::string out = "# sigma";
  for (const auto& m : spec.methods) out += " " + m;
  out += "\n";
  for (std::size_t s = 0; s < spec.sigmas.size(); ++s) {
    out += fmt_double(spec.sigmas[s]);
    for (const auto& m : spec.methods) out += " " + fmt_double(r.mean_oa.at(m)[s]);
    out += "\n";
  }
  return out;
}

/// Sweep settings and the mean OA of each method per sigma.
inline json sweep_summary(const SweepSpec& spec, const SweepResult& r) {
  json mean = json::object();
  for (const auto& m : spec.methods) mean[m] = r.mean_oa.at(m);
  return {{"truth", spec.truth},
          {"width", spec.dims.width},
          {"height", spec.dims.height},
          {"means", spec.means},
          {"sigmas", spec.sigmas},
          {"methods", spec.methods},
          {"reps", spec.reps},
          {"seed", spec.seed},
          {"tm_grid", spec.tm_grid},
          {"roi_per_class", spec.roi_per_class},
          {"runs", r.rows.size()},
          {"mean_oa", std::move(mean)}};
}

}  // namespace io
}  // namespace sarseg

#endif  // SARSEG_IO_HPP
