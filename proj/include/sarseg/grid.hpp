#ifndef SARSEG_GRID_HPP
#define SARSEG_GRID_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sarseg {

/// Width/height of a row-major pixel lattice. Pixel index = row * width + col.
struct GridDims {
  std::size_t width = 0;
  std::size_t height = 0;

  std::size_t size() const { return width * height; }
  std::size_t index(std::size_t row, std::size_t col) const { return row * width + col; }
  std::size_t row(std::size_t p) const { return p / width; }
  std::size_t col(std::size_t p) const { return p % width; }

  friend bool operator==(const GridDims&, const GridDims&) = default;
};

inline void check_dims(const GridDims& dims) {
  if (dims.width == 0 || dims.height == 0)
    throw std::invalid_argument("grid dimensions must be at least 1x1");
}

/// Nonnegative backscatter intensities, linear units.
class IntensityGrid {
 public:
  IntensityGrid() = default;

  IntensityGrid(GridDims dims, std::vector<double> values)
      : dims_(dims), values_(std::move(values)) {
    check_dims(dims_);
    if (values_.size() != dims_.size())
      throw std::invalid_argument("intensity grid: value count does not match dimensions");
    for (double v : values_) {
      if (!std::isfinite(v) || v < 0.0)
        throw std::invalid_argument("intensity grid: values must be finite and nonnegative");
    }
  }

  const GridDims& dims() const { return dims_; }
  std::size_t width() const { return dims_.width; }
  std::size_t height() const { return dims_.height; }
  std::size_t size() const { return values_.size(); }

  double operator[](std::size_t p) const { return values_[p]; }
  double at(std::size_t row, std::size_t col) const { return values_.at(dims_.index(row, col)); }
  std::span<const double> values() const { return values_; }

  /// Copies the rectangle [row0, row0+h) x [col0, col0+w).
  IntensityGrid crop(std::size_t row0, std::size_t col0, std::size_t h, std::size_t w) const {
    if (row0 + h > height() || col0 + w > width())
      throw std::out_of_range("intensity grid: crop outside image");
    std::vector<double> out;
    out.reserve(h * w);
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c) out.push_back(values_[dims_.index(row0 + r, col0 + c)]);
    return IntensityGrid({w, h}, std::move(out));
  }

 private:
  GridDims dims_;
  std::vector<double> values_;
};

/// A labeling x: one class in [1, c] per pixel. Labels are 1-based on every
/// interface.
class LabelField {
 public:
  LabelField() = default;

  LabelField(GridDims dims, int num_classes, std::vector<int> labels)
      : dims_(dims), num_classes_(num_classes), labels_(std::move(labels)) {
    check_dims(dims_);
    if (num_classes_ < 2) throw std::invalid_argument("label field: need at least two classes");
    if (labels_.size() != dims_.size())
      throw std::invalid_argument("label field: label count does not match dimensions");
    for (int l : labels_) {
      if (l < 1 || l > num_classes_)
        throw std::invalid_argument("label field: label " + std::to_string(l) + " outside [1, " +
                                    std::to_string(num_classes_) + "]");
    }
  }

  /// Every pixel set to `label`.
  static LabelField uniform(GridDims dims, int num_classes, int label) {
    return LabelField(dims, num_classes, std::vector<int>(dims.size(), label));
  }

  const GridDims& dims() const { return dims_; }
  std::size_t width() const { return dims_.width; }
  std::size_t height() const { return dims_.height; }
  std::size_t size() const { return labels_.size(); }
  int num_classes() const { return num_classes_; }

  int operator[](std::size_t p) const { return labels_[p]; }
  int at(std::size_t row, std::size_t col) const { return labels_.at(dims_.index(row, col)); }
  std::span<const int> labels() const { return labels_; }

  /// Returns a copy with pixel p relabeled.
  LabelField with(std::size_t p, int label) const {
    LabelField out = *this;
    if (label < 1 || label > num_classes_) throw std::invalid_argument("label field: bad label");
    out.labels_.at(p) = label;
    return out;
  }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> counts(static_cast<std::size_t>(num_classes_), 0);
    for (int l : labels_) ++counts[static_cast<std::size_t>(l - 1)];
    return counts;
  }

  friend bool operator==(const LabelField&, const LabelField&) = default;

 private:
  GridDims dims_;
  int num_classes_ = 2;
  std::vector<int> labels_;
};

/// Unordered neighboring pair stored with i > j.
struct Clique {
  std::size_t i;
  std::size_t j;
  friend bool operator==(const Clique&, const Clique&) = default;
};

/// All pairwise cliques of the 8-connected lattice, each listed once.
class CliqueSet {
 public:
  CliqueSet() = default;
  CliqueSet(GridDims dims, std::vector<Clique> pairs) : dims_(dims), pairs_(std::move(pairs)) {}

  const GridDims& dims() const { return dims_; }
  std::size_t size() const { return pairs_.size(); }
  const Clique& operator[](std::size_t k) const { return pairs_[k]; }
  auto begin() const { return pairs_.begin(); }
  auto end() const { return pairs_.end(); }
  std::span<const Clique> pairs() const { return pairs_; }

 private:
  GridDims dims_;
  std::vector<Clique> pairs_;
};

/// In-bounds 8-neighbors of p in ascending index order.
inline std::vector<std::size_t> neighbors(std::size_t p, const GridDims& dims) {
  if (p >= dims.size()) throw std::out_of_range("neighbors: pixel index out of range");
  const auto r = static_cast<long>(dims.row(p));
  const auto c = static_cast<long>(dims.col(p));
  const auto h = static_cast<long>(dims.height);
  const auto w = static_cast<long>(dims.width);
  std::vector<std::size_t> out;
  out.reserve(8);
  for (long dr = -1; dr <= 1; ++dr) {
    for (long dc = -1; dc <= 1; ++dc) {
      if (dr == 0 && dc == 0) continue;
      const long rr = r + dr;
      const long cc = c + dc;
      if (rr < 0 || rr >= h || cc < 0 || cc >= w) continue;
      out.push_back(static_cast<std::size_t>(rr * w + cc));
    }
  }
  return out;
}

/// (W-1)H + W(H-1) + 2(W-1)(H-1)
inline std::size_t expected_clique_count(const GridDims& d) {
  const std::size_t w = d.width;
  const std::size_t h = d.height;
  return (w - 1) * h + w * (h - 1) + 2 * (w - 1) * (h - 1);
}

inline CliqueSet build_cliques(const GridDims& dims) {
  check_dims(dims);
  std::vector<Clique> pairs;
  pairs.reserve(expected_clique_count(dims));
  const std::size_t w = dims.width;
  for (std::size_t r = 0; r < dims.height; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const std::size_t p = dims.index(r, c);
      // Earlier neighbors only: left, up-left, up, up-right.
      if (c > 0) pairs.push_back({p, p - 1});
      if (r > 0) {
        if (c > 0) pairs.push_back({p, p - w - 1});
        pairs.push_back({p, p - w});
        if (c + 1 < w) pairs.push_back({p, p - w + 1});
      }
    }
  }
  return CliqueSet(dims, std::move(pairs));
}

inline void check_same_shape(const LabelField& a, const LabelField& b) {
  if (a.dims() != b.dims()) throw std::invalid_argument("label fields differ in dimensions");
  if (a.num_classes() != b.num_classes())
    throw std::invalid_argument("label fields differ in class count");
}

/// Fraction of pixels with identical labels. No label matching.
inline double overall_accuracy(const LabelField& estimate, const LabelField& truth) {
  check_same_shape(estimate, truth);
  std::size_t agree = 0;
  for (std::size_t p = 0; p < truth.size(); ++p) agree += estimate[p] == truth[p] ? 1 : 0;
  return static_cast<double>(agree) / static_cast<double>(truth.size());
}

/// Applies perm (0-based: new label = perm[old - 1] + 1) to every pixel.
inline LabelField permute_labels(const LabelField& x, std::span<const int> perm) {
  if (perm.size() != static_cast<std::size_t>(x.num_classes()))
    throw std::invalid_argument("permutation size does not match class count");
  std::vector<int> out(x.size());
  for (std::size_t p = 0; p < x.size(); ++p) out[p] = perm[static_cast<std::size_t>(x[p] - 1)] + 1;
  return LabelField(x.dims(), x.num_classes(), std::move(out));
}

/// Overall accuracy after the best relabeling of `estimate`. Used for
/// unsupervised runs, whose class indices are not anchored to the truth.
/// Exhaustive over permutations, so limited to c <= 8.
inline double permutation_accuracy(const LabelField& estimate, const LabelField& truth) {
  check_same_shape(estimate, truth);
  const auto c = static_cast<std::size_t>(truth.num_classes());
  if (c > 8) throw std::invalid_argument("permutation_accuracy: at most 8 classes");
  // confusion[e][t]
  std::vector<std::size_t> confusion(c * c, 0);
  for (std::size_t p = 0; p < truth.size(); ++p)
    ++confusion[static_cast<std::size_t>(estimate[p] - 1) * c + static_cast<std::size_t>(truth[p] - 1)];
  std::vector<int> perm(c);
  std::iota(perm.begin(), perm.end(), 0);
  std::size_t best = 0;
  do {
    std::size_t agree = 0;
    for (std::size_t e = 0; e < c; ++e) agree += confusion[e * c + static_cast<std::size_t>(perm[e])];
    best = std::max(best, agree);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return static_cast<double>(best) / static_cast<double>(truth.size());
}

}  // namespace sarseg

#endif  // SARSEG_GRID_HPP
