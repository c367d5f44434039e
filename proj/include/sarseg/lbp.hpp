#ifndef SARSEG_LBP_HPP
#define SARSEG_LBP_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "sarseg/energy.hpp"
#include "sarseg/grid.hpp"

namespace sarseg {

struct LbpConfig {
  int max_sweeps = 200;
  double message_tol = 1e-6;  // max absolute change of any message entry
  double damping = 0.5;       // weight kept from the previous message

  void validate() const {
    if (max_sweeps < 1) throw std::invalid_argument("lbp: max_sweeps must be >= 1");
    if (!(message_tol > 0.0)) throw std::invalid_argument("lbp: message_tol must be positive");
    if (!(damping >= 0.0 && damping < 1.0)) throw std::invalid_argument("lbp: damping must lie in [0, 1)");
  }
};

/// Pairwise compatibility psi(x_i, x_j) for a clique (i, j), stored as a
/// c x c table of logs. Entry (a, b) refers to x_i = a, x_j = b (0-based).
class PairPotential {
 public:
  PairPotential(int num_classes, std::vector<double> log_table)
      : c_(num_classes), log_(std::move(log_table)) {
    if (c_ < 2) throw std::invalid_argument("pair potential: need at least two classes");
    if (log_.size() != static_cast<std::size_t>(c_ * c_)) throw std::invalid_argument("pair potential: size mismatch");
    for (double v : log_)
      if (!std::isfinite(v)) throw std::invalid_argument("pair potential: entries must be positive and finite");
  }

  /// psi(a, b) = exp(beta * [a == b]).
  static PairPotential potts(int num_classes, double beta) {
    if (!(beta >= 0.0) || !std::isfinite(beta)) throw std::invalid_argument("pair potential: beta must be >= 0");
    std::vector<double> t(static_cast<std::size_t>(num_classes * num_classes), 0.0);
    for (int a = 0; a < num_classes; ++a) t[static_cast<std::size_t>(a * num_classes + a)] = beta;
    return PairPotential(num_classes, std::move(t));
  }

  /// Builds from positive (linear-scale) entries.
  static PairPotential from_table(int num_classes, std::span<const double> table) {
    std::vector<double> t(table.size());
    for (std::size_t k = 0; k < table.size(); ++k) {
      if (!(table[k] > 0.0)) throw std::invalid_argument("pair potential: entries must be positive");
      t[k] = std::log(table[k]);
    }
    return PairPotential(num_classes, std::move(t));
  }

  int num_classes() const { return c_; }
  double log_value(int a, int b) const { return log_[static_cast<std::size_t>(a * c_ + b)]; }

 private:
  int c_;
  std::vector<double> log_;
};

/// One normalized c x c table per clique, in clique order. Entry (a, b) is
/// the belief that x_i = a + 1 and x_j = b + 1.
struct PairwiseBeliefs {
  int num_classes = 2;
  std::vector<double> tables;
  bool evidence_used = false;
  bool converged = false;
  int sweeps = 0;
  double final_delta = 0.0;

  std::size_t size() const { return tables.size() / static_cast<std::size_t>(num_classes * num_classes); }
  std::span<const double> table(std::size_t k) const {
    const auto cc = static_cast<std::size_t>(num_classes * num_classes);
    return {tables.data() + k * cc, cc};
  }
  double operator()(std::size_t k, int a, int b) const {
    return tables[k * static_cast<std::size_t>(num_classes * num_classes) +
                  static_cast<std::size_t>(a * num_classes + b)];
  }
};

/// Sum over cliques of the table trace: the expected number of equal-label
/// cliques under the beliefs.
inline double equal_label_belief_sum(const PairwiseBeliefs& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < b.size(); ++k)
    for (int l = 0; l < b.num_classes; ++l) s += b(k, l, l);
  return s;
}

/// Loopy BP on a clique set with a synchronous, damped flood schedule.
///
/// Messages are kept normalized. A normalized message through a pairwise
/// table with finite log entries is bounded below by min(psi) / (c max(psi)),
/// so messages are stored on the linear scale without underflow risk. The
/// evidence is the part with unbounded dynamic range; it is normalized per
/// node in the log domain before it enters the products. Messages persist
/// between runs so a later run can warm-start from an earlier fixed point.
class LbpSolver {
 public:
  LbpSolver(const CliqueSet& cliques, int num_classes) : cliques_(&cliques), c_(num_classes) {
    if (c_ < 2) throw std::invalid_argument("lbp: need at least two classes");
    reset();
  }

  int num_classes() const { return c_; }

  void reset() { msg_.assign(2 * cliques_->size() * static_cast<std::size_t>(c_), 1.0 / static_cast<double>(c_)); }

  /// Messages laid out as [clique][direction][label]; direction 0 is
  /// i -> j (a message about x_j), direction 1 is j -> i.
  std::span<const double> messages() const { return msg_; }

  void set_messages(std::span<const double> m) {
    if (m.size() != msg_.size()) throw std::invalid_argument("lbp: message size mismatch");
    msg_.assign(m.begin(), m.end());
  }

  /// Runs with evidence phi_i(l) = exp(-unary(i, l)).
  PairwiseBeliefs run(const UnaryCostTable& unary, const PairPotential& psi, const LbpConfig& cfg = {}) {
    if (unary.num_classes() != c_) throw std::invalid_argument("lbp: class count mismatch");
    if (unary.dims() != cliques_->dims()) throw std::invalid_argument("lbp: dimension mismatch");
    const auto c = static_cast<std::size_t>(c_);
    std::vector<double> phi(unary.costs().size());
    for (std::size_t p = 0; p < unary.size(); ++p) {
      const auto row = unary.row(p);
      const double lo = *std::min_element(row.begin(), row.end());
      for (std::size_t l = 0; l < c; ++l) phi[p * c + l] = std::exp(lo - row[l]);
    }
    PairwiseBeliefs b = iterate(phi, psi, cfg);
    b.evidence_used = true;
    return b;
  }

  /// Runs with constant evidence: the beliefs depend on the prior only.
  PairwiseBeliefs run_prior(const PairPotential& psi, const LbpConfig& cfg = {}) {
    const std::vector<double> phi(cliques_->dims().size() * static_cast<std::size_t>(c_), 1.0);
    PairwiseBeliefs b = iterate(phi, psi, cfg);
    b.evidence_used = false;
    return b;
  }

 private:
  std::size_t at(std::size_t k, int dir) const {
    return (2 * k + static_cast<std::size_t>(dir)) * static_cast<std::size_t>(c_);
  }

  // total[i*c + l] = phi_i(l) * product of incoming messages, rescaled so the
  // largest entry of each node is 1.
  void node_totals(const std::vector<double>& phi, std::vector<double>& total) const {
    total = phi;
    const auto c = static_cast<std::size_t>(c_);
    for (std::size_t k = 0; k < cliques_->size(); ++k) {
      const Clique& q = (*cliques_)[k];
      for (std::size_t l = 0; l < c; ++l) {
        total[q.j * c + l] *= msg_[at(k, 0) + l];
        total[q.i * c + l] *= msg_[at(k, 1) + l];
      }
    }
    for (std::size_t p = 0; p < total.size(); p += c) {
      const double hi = *std::max_element(total.begin() + static_cast<std::ptrdiff_t>(p),
                                          total.begin() + static_cast<std::ptrdiff_t>(p + c));
      for (std::size_t l = 0; l < c; ++l) total[p + l] /= hi;
    }
  }

  // out(b) = sum_a psi(a, b) cav(a), normalized. `transpose` swaps the roles
  // of a and b for the j -> i direction.
  void send(const double* cav, const std::vector<double>& psi, bool transpose, double* out) const {
    double z = 0.0;
    for (int b = 0; b < c_; ++b) {
      double m = 0.0;
      for (int a = 0; a < c_; ++a) m += cav[a] * (transpose ? psi[b * c_ + a] : psi[a * c_ + b]);
      out[b] = m;
      z += m;
    }
    for (int b = 0; b < c_; ++b) out[b] /= z;
  }

  static std::vector<double> linear_table(const PairPotential& psi) {
    const int c = psi.num_classes();
    double hi = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < c; ++a)
      for (int b = 0; b < c; ++b) hi = std::max(hi, psi.log_value(a, b));
    std::vector<double> t(static_cast<std::size_t>(c * c));
    for (int a = 0; a < c; ++a)
      for (int b = 0; b < c; ++b) t[static_cast<std::size_t>(a * c + b)] = std::exp(psi.log_value(a, b) - hi);
    return t;
  }

  PairwiseBeliefs iterate(const std::vector<double>& phi, const PairPotential& psi_log, const LbpConfig& cfg) {
    cfg.validate();
    if (psi_log.num_classes() != c_) throw std::invalid_argument("lbp: pair potential class count mismatch");
    const std::vector<double> psi = linear_table(psi_log);
    const auto c = static_cast<std::size_t>(c_);
    std::vector<double> total;
    std::vector<double> next(msg_.size());
    std::vector<double> cav(c);
    PairwiseBeliefs out;
    out.num_classes = c_;
    const double keep = cfg.damping;
    for (int sweep = 1; sweep <= cfg.max_sweeps; ++sweep) {
      node_totals(phi, total);
      double delta = 0.0;
      for (std::size_t k = 0; k < cliques_->size(); ++k) {
        const Clique& q = (*cliques_)[k];
        for (int dir = 0; dir < 2; ++dir) {
          const std::size_t from = dir == 0 ? q.i : q.j;
          const std::size_t back = at(k, 1 - dir);
          for (std::size_t l = 0; l < c; ++l) cav[l] = total[from * c + l] / msg_[back + l];
          double* m = &next[at(k, dir)];
          send(cav.data(), psi, dir == 1, m);
          const double* old = &msg_[at(k, dir)];
          for (std::size_t l = 0; l < c; ++l) {
            m[l] = (1.0 - keep) * m[l] + keep * old[l];
            delta = std::max(delta, std::fabs(m[l] - old[l]));
          }
        }
      }
      msg_.swap(next);
      out.sweeps = sweep;
      out.final_delta = delta;
      if (delta < cfg.message_tol) {
        out.converged = true;
        break;
      }
    }
    beliefs(phi, psi, out);
    return out;
  }

  // b_ij(a, b) proportional to psi(a, b) cav_i(a) cav_j(b).
  void beliefs(const std::vector<double>& phi, const std::vector<double>& psi, PairwiseBeliefs& out) const {
    const auto c = static_cast<std::size_t>(c_);
    std::vector<double> total;
    node_totals(phi, total);
    out.tables.assign(cliques_->size() * c * c, 0.0);
    for (std::size_t k = 0; k < cliques_->size(); ++k) {
      const Clique& q = (*cliques_)[k];
      double* t = &out.tables[k * c * c];
      double z = 0.0;
      for (std::size_t a = 0; a < c; ++a) {
        const double ci = total[q.i * c + a] / msg_[at(k, 1) + a];
        for (std::size_t b = 0; b < c; ++b) {
          const double cj = total[q.j * c + b] / msg_[at(k, 0) + b];
          t[a * c + b] = psi[a * c + b] * ci * cj;
          z += t[a * c + b];
        }
      }
      for (std::size_t e = 0; e < c * c; ++e) t[e] /= z;
    }
  }

  const CliqueSet* cliques_;
  int c_;
  std::vector<double> msg_;
};

/// One-shot LBP with evidence from a unary cost table.
inline PairwiseBeliefs run_lbp(const UnaryCostTable& unary, const PairPotential& psi, const CliqueSet& cliques,
                               const LbpConfig& cfg = {}) {
  LbpSolver solver(cliques, unary.num_classes());
  return solver.run(unary, psi, cfg);
}

/// One-shot LBP with uniform evidence.
inline PairwiseBeliefs run_lbp_prior(int num_classes, const PairPotential& psi, const CliqueSet& cliques,
                                     const LbpConfig& cfg = {}) {
  LbpSolver solver(cliques, num_classes);
  return solver.run_prior(psi, cfg);
}

}  // namespace sarseg

#endif  // SARSEG_LBP_HPP
