#ifndef SARSEG_GRAPHCUT_HPP
#define SARSEG_GRAPHCUT_HPP

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "sarseg/energy.hpp"
#include "sarseg/grid.hpp"
#include "sarseg/maxflow.hpp"

namespace sarseg {

/// Quadratic pseudo-boolean energy over n binary variables, minimized exactly
/// by one min cut when every pairwise term is submodular. Variable value 1
/// corresponds to the sink side of the cut.
class BinaryEnergy {
 public:
  explicit BinaryEnergy(std::size_t n) : cost0_(n, 0.0), cost1_(n, 0.0) {}

  void add_unary(std::size_t i, double e0, double e1) {
    cost0_[i] += e0;
    cost1_[i] += e1;
  }

  /// Adds E(x_i, x_j) with table (A, B, C, D) = (E00, E01, E10, E11), using
  /// E = A + (C-A) x_i + (D-C) x_j + (B+C-A-D) (1-x_i) x_j.
  void add_pairwise(std::size_t i, std::size_t j, double e00, double e01, double e10, double e11) {
    constant_ += e00;
    cost1_[i] += e10 - e00;
    cost1_[j] += e11 - e10;
    const double w = e01 + e10 - e00 - e11;
#ifndef NDEBUG
    if (w < -1e-9) throw std::logic_error("binary energy: non-submodular pairwise term");
#endif
    if (w > 0.0) edges_.push_back({i, j, w});
  }

  /// Minimizes the energy. Returns the minimum value; `labels[i]` is 1 when
  /// variable i takes value 1.
  double minimize(std::vector<char>& labels) const {
    const std::size_t n = cost0_.size();
    FlowNetwork net(n);
    double constant = constant_;
    for (std::size_t i = 0; i < n; ++i) {
      const double m = std::min(cost0_[i], cost1_[i]);
      constant += m;
      // Source arc is cut when i ends on the sink side (value 1).
      net.add_terminal(i, cost1_[i] - m, cost0_[i] - m);
    }
    for (const Edge& e : edges_) net.add_edge(e.i, e.j, e.w, 0.0);
    const double flow = net.max_flow();
    labels.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) labels[i] = net.in_source_set(i) ? 0 : 1;
    return constant + flow;
  }

 private:
  struct Edge {
    std::size_t i;
    std::size_t j;
    double w;
  };
  std::vector<double> cost0_;
  std::vector<double> cost1_;
  std::vector<Edge> edges_;
  double constant_ = 0.0;
};

inline void check_solver_inputs(const UnaryCostTable& unary, const CliqueSet& cliques) {
  if (unary.dims() != cliques.dims()) throw std::invalid_argument("graph cut: dimension mismatch");
}

/// Exact MAP labeling for two classes. Internally the Potts term is
/// beta * [x_i != x_j], which differs from -beta * delta by a constant.
/// Ties resolve towards label 1 (source side).
inline LabelField binary_map(const UnaryCostTable& unary, const PottsPrior& prior, const CliqueSet& cliques) {
  if (unary.num_classes() != 2) throw std::invalid_argument("binary_map: exactly two classes required");
  check_solver_inputs(unary, cliques);
  BinaryEnergy energy(unary.size());
  for (std::size_t p = 0; p < unary.size(); ++p) energy.add_unary(p, unary(p, 1), unary(p, 2));
  for (const Clique& q : cliques) energy.add_pairwise(q.i, q.j, 0.0, prior.beta, prior.beta, 0.0);
  std::vector<char> bits;
  energy.minimize(bits);
  std::vector<int> labels(bits.size());
  for (std::size_t p = 0; p < bits.size(); ++p) labels[p] = bits[p] ? 2 : 1;
  return LabelField(unary.dims(), 2, std::move(labels));
}

/// Snapshot of an alpha-expansion run.
struct ExpansionState {
  LabelField labels;
  double energy = 0.0;          // total_energy(labels), -beta * delta convention
  std::vector<int> order;       // label visit order within a cycle
  int cycles = 0;
  int accepted_moves = 0;
  bool converged = false;       // a full cycle ran without an improving move
};

struct ExpansionConfig {
  int max_cycles = 20;
  double min_improvement = 1e-12;
};

/// Best alpha-expansion of `current`: every pixel either keeps its label
/// (value 0) or switches to alpha (value 1).
inline LabelField expansion_move(const LabelField& current, int alpha, const UnaryCostTable& unary,
                                 const PottsPrior& prior, const CliqueSet& cliques) {
  const double beta = prior.beta;
  BinaryEnergy energy(current.size());
  for (std::size_t p = 0; p < current.size(); ++p) energy.add_unary(p, unary(p, current[p]), unary(p, alpha));
  for (const Clique& q : cliques) {
    const int li = current[q.i];
    const int lj = current[q.j];
    const double keep_keep = li == lj ? 0.0 : beta;
    const double keep_alpha = li == alpha ? 0.0 : beta;
    const double alpha_keep = lj == alpha ? 0.0 : beta;
    if (keep_keep == 0.0 && keep_alpha == 0.0 && alpha_keep == 0.0) continue;
    energy.add_pairwise(q.i, q.j, keep_keep, keep_alpha, alpha_keep, 0.0);
  }
  std::vector<char> bits;
  energy.minimize(bits);
  std::vector<int> labels(current.labels().begin(), current.labels().end());
  for (std::size_t p = 0; p < bits.size(); ++p)
    if (bits[p]) labels[p] = alpha;
  return LabelField(current.dims(), current.num_classes(), std::move(labels));
}

/// Cycles through labels in ascending order, accepting an expansion only
/// when it lowers the energy, until a cycle makes no progress or the cycle
/// cap is reached.
inline ExpansionState alpha_expansion(const UnaryCostTable& unary, const PottsPrior& prior,
                                      const CliqueSet& cliques, const LabelField& init,
                                      const ExpansionConfig& cfg = {}) {
  check_solver_inputs(unary, cliques);
  check_energy_inputs(init, unary, cliques);
  ExpansionState state;
  state.labels = init;
  state.energy = total_energy(init, unary, prior, cliques);
  state.order.resize(static_cast<std::size_t>(unary.num_classes()));
  std::iota(state.order.begin(), state.order.end(), 1);
  while (state.cycles < cfg.max_cycles) {
    ++state.cycles;
    bool improved = false;
    for (int alpha : state.order) {
      LabelField candidate = expansion_move(state.labels, alpha, unary, prior, cliques);
      const double e = total_energy(candidate, unary, prior, cliques);
      if (e < state.energy - cfg.min_improvement) {
        state.labels = std::move(candidate);
        state.energy = e;
        ++state.accepted_moves;
        improved = true;
      }
    }
    if (!improved) {
      state.converged = true;
      break;
    }
  }
  return state;
}

/// MAP segmentation: exact cut for two classes, alpha-expansion from the
/// per-pixel argmin otherwise.
inline LabelField map_segmentation(const UnaryCostTable& unary, const PottsPrior& prior, const CliqueSet& cliques) {
  if (unary.num_classes() == 2) return binary_map(unary, prior, cliques);
  return alpha_expansion(unary, prior, cliques, unary.argmin()).labels;
}

}  // namespace sarseg

#endif  // SARSEG_GRAPHCUT_HPP
