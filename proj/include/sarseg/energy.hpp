#ifndef SARSEG_ENERGY_HPP
#define SARSEG_ENERGY_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "sarseg/gamma_model.hpp"
#include "sarseg/grid.hpp"

namespace sarseg {

/// One class-conditional density per label; index 0 is label 1.
class ClassModelSet {
 public:
  ClassModelSet() = default;
  explicit ClassModelSet(std::vector<GammaMixture> classes) : classes_(std::move(classes)) {
    if (classes_.size() < 2) throw std::invalid_argument("class models: need at least two classes");
    for (const auto& m : classes_)
      if (m.empty()) throw std::invalid_argument("class models: empty mixture");
  }

  int num_classes() const { return static_cast<int>(classes_.size()); }
  const GammaMixture& operator[](int label) const { return classes_.at(static_cast<std::size_t>(label - 1)); }
  const std::vector<GammaMixture>& mixtures() const { return classes_; }

 private:
  std::vector<GammaMixture> classes_;
};

/// Finite stand-in for -log 0 and -log inf.
inline constexpr double kUnaryClamp = 1e8;

/// Per-pixel, per-label data energies E_i(l) = -log p(y_i | phi_l), row-major
/// N x c. Labels are 1-based in the accessor.
class UnaryCostTable {
 public:
  UnaryCostTable() = default;
  UnaryCostTable(GridDims dims, int num_classes, std::vector<double> costs)
      : dims_(dims), num_classes_(num_classes), costs_(std::move(costs)) {
    check_dims(dims_);
    if (num_classes_ < 2) throw std::invalid_argument("unary table: need at least two classes");
    if (costs_.size() != dims_.size() * static_cast<std::size_t>(num_classes_))
      throw std::invalid_argument("unary table: size mismatch");
    for (double v : costs_)
      if (!std::isfinite(v)) throw std::invalid_argument("unary table: non-finite cost");
  }

  const GridDims& dims() const { return dims_; }
  std::size_t size() const { return dims_.size(); }
  int num_classes() const { return num_classes_; }

  double operator()(std::size_t p, int label) const {
    return costs_[p * static_cast<std::size_t>(num_classes_) + static_cast<std::size_t>(label - 1)];
  }
  std::span<const double> row(std::size_t p) const {
    const auto c = static_cast<std::size_t>(num_classes_);
    return {costs_.data() + p * c, c};
  }
  std::span<const double> costs() const { return costs_; }

  /// Label with the lowest cost at every pixel (ties go to the smaller label).
  LabelField argmin() const {
    std::vector<int> out(size());
    for (std::size_t p = 0; p < size(); ++p) {
      const auto r = row(p);
      out[p] = static_cast<int>(std::min_element(r.begin(), r.end()) - r.begin()) + 1;
    }
    return LabelField(dims_, num_classes_, std::move(out));
  }

 private:
  GridDims dims_;
  int num_classes_ = 2;
  std::vector<double> costs_;
};

/// Isotropic multi-level logistic prior with clique potential -beta * delta.
struct PottsPrior {
  double beta = 0.0;

  explicit PottsPrior(double b = 0.0) : beta(b) {
    if (!(beta >= 0.0) || !std::isfinite(beta)) throw std::invalid_argument("Potts prior: beta must be >= 0");
  }
};

inline double clamp_cost(double v) {
  if (std::isnan(v)) return kUnaryClamp;
  return std::clamp(v, -kUnaryClamp, kUnaryClamp);
}

inline UnaryCostTable unary_costs(const IntensityGrid& grid, const ClassModelSet& models) {
  const auto c = static_cast<std::size_t>(models.num_classes());
  std::vector<double> costs(grid.size() * c);
  for (std::size_t p = 0; p < grid.size(); ++p)
    for (std::size_t l = 0; l < c; ++l)
      costs[p * c + l] = clamp_cost(-mixture_log_pdf(grid[p], models.mixtures()[l]));
  return UnaryCostTable(grid.dims(), models.num_classes(), std::move(costs));
}

inline void check_energy_inputs(const LabelField& x, const UnaryCostTable& unary, const CliqueSet& cliques) {
  if (x.dims() != unary.dims() || x.dims() != cliques.dims())
    throw std::invalid_argument("energy: dimension mismatch");
  if (x.num_classes() != unary.num_classes()) throw std::invalid_argument("energy: class count mismatch");
}

inline std::size_t count_equal_cliques(const LabelField& x, const CliqueSet& cliques) {
  std::size_t n = 0;
  for (const Clique& q : cliques) n += x[q.i] == x[q.j] ? 1 : 0;
  return n;
}

/// sum_i E_i(x_i) - beta * #{equal-label cliques}
inline double total_energy(const LabelField& x, const UnaryCostTable& unary, const PottsPrior& prior,
                           const CliqueSet& cliques) {
  check_energy_inputs(x, unary, cliques);
  double e = 0.0;
  for (std::size_t p = 0; p < x.size(); ++p) e += unary(p, x[p]);
  return e - prior.beta * static_cast<double>(count_equal_cliques(x, cliques));
}

/// beta * #{equal-label cliques}; log p(x | beta) up to -log Z(beta).
inline double gibbs_log_prior(const LabelField& x, const PottsPrior& prior, const CliqueSet& cliques) {
  if (x.dims() != cliques.dims()) throw std::invalid_argument("log prior: dimension mismatch");
  return prior.beta * static_cast<double>(count_equal_cliques(x, cliques));
}

}  // namespace sarseg

#endif  // SARSEG_ENERGY_HPP
