#ifndef SARSEG_MAXFLOW_HPP
#define SARSEG_MAXFLOW_HPP

#include <algorithm>
#include <cstddef>
#include <deque>
#include <limits>
#include <stdexcept>
#include <vector>

namespace sarseg {

/// s-t flow network over `n` non-terminal nodes. Terminal arcs are kept as a
/// single signed residual per node (positive: residual from the source,
/// negative: residual to the sink), as in the Boykov-Kolmogorov solver.
///
/// max_flow() runs the BK augmenting-path algorithm: two search trees grow
/// from the terminals, paths are augmented where they touch, and orphaned
/// subtrees are re-adopted instead of rebuilding the trees from scratch.
/// A network is solved once; it is not re-entrant.
class FlowNetwork {
 public:
  explicit FlowNetwork(std::size_t n) : nodes_(n) {}

  std::size_t num_nodes() const { return nodes_.size(); }

  /// Adds capacities source->i and i->sink. Repeated calls accumulate.
  void add_terminal(std::size_t i, double cap_source, double cap_sink) {
    check_node(i);
    if (cap_source < 0.0 || cap_sink < 0.0) throw std::invalid_argument("flow network: negative capacity");
    Node& n = nodes_[i];
    // Push the common part straight through; only the difference stays residual.
    double delta = n.tr_cap;
    if (delta > 0.0) cap_source += delta;
    else cap_sink -= delta;
    flow_ += std::min(cap_source, cap_sink);
    n.tr_cap = cap_source - cap_sink;
  }

  /// Adds arc i->j with capacity `cap` and j->i with capacity `rev_cap`.
  void add_edge(std::size_t i, std::size_t j, double cap, double rev_cap = 0.0) {
    check_node(i);
    check_node(j);
    if (i == j) throw std::invalid_argument("flow network: self loop");
    if (cap < 0.0 || rev_cap < 0.0) throw std::invalid_argument("flow network: negative capacity");
    const int a = static_cast<int>(arcs_.size());
    arcs_.push_back({static_cast<int>(j), nodes_[i].first, a + 1, cap});
    nodes_[i].first = a;
    arcs_.push_back({static_cast<int>(i), nodes_[j].first, a, rev_cap});
    nodes_[j].first = a + 1;
  }

  /// Returns the maximum flow value. Afterwards in_source_set() describes a
  /// minimum cut: the source side is every node still reachable from the
  /// source in the residual graph, plus nodes reachable from neither terminal.
  double max_flow() {
    if (solved_) throw std::logic_error("flow network: already solved");
    solved_ = true;
    init_trees();
    int current = -1;
    while (true) {
      int i = current;
      if (i >= 0) {
        nodes_[i].in_queue = false;  // re-queued below if still useful
        if (nodes_[i].parent == kNone) i = -1;
      }
      if (i < 0) {
        i = next_active();
        if (i < 0) break;
      }
      const int path_arc = grow(i);
      ++time_;
      if (path_arc >= 0) {
        // i stays current: it may still touch the other tree.
        nodes_[i].in_queue = true;
        current = i;
        augment(path_arc);
        adopt_orphans();
      } else {
        current = -1;
      }
    }
    return flow_;
  }

  bool in_source_set(std::size_t i) const {
    check_node(i);
    const Node& n = nodes_[i];
    return !(n.parent != kNone && n.is_sink);
  }

  std::vector<bool> source_side() const {
    std::vector<bool> out(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) out[i] = in_source_set(i);
    return out;
  }

 private:
  static constexpr int kNone = -1;
  static constexpr int kTerminal = -2;
  static constexpr int kOrphan = -3;
  static constexpr int kInfDist = std::numeric_limits<int>::max();

  struct Arc {
    int head;
    int next;    // next arc leaving the same tail
    int sister;  // reverse arc
    double r_cap;
  };

  struct Node {
    int first = -1;      // first outgoing arc
    int parent = kNone;  // arc towards the parent, or a marker
    bool is_sink = false;
    bool in_queue = false;
    long ts = 0;
    int dist = 0;
    double tr_cap = 0.0;
  };

  void check_node(std::size_t i) const {
    if (i >= nodes_.size()) throw std::out_of_range("flow network: node index out of range");
  }

  void set_active(int i) {
    if (!nodes_[i].in_queue) {
      nodes_[i].in_queue = true;
      active_.push_back(i);
    }
  }

  int next_active() {
    while (!active_.empty()) {
      const int i = active_.front();
      active_.pop_front();
      nodes_[i].in_queue = false;
      if (nodes_[i].parent != kNone) return i;
    }
    return -1;
  }

  void init_trees() {
    time_ = 0;
    for (std::size_t k = 0; k < nodes_.size(); ++k) {
      Node& n = nodes_[k];
      n.ts = 0;
      if (n.tr_cap > 0.0) {
        n.is_sink = false;
        n.parent = kTerminal;
        n.dist = 1;
        set_active(static_cast<int>(k));
      } else if (n.tr_cap < 0.0) {
        n.is_sink = true;
        n.parent = kTerminal;
        n.dist = 1;
        set_active(static_cast<int>(k));
      } else {
        n.parent = kNone;
      }
    }
  }

  /// Expands the tree containing i by one layer. Returns an arc going from
  /// the source tree into the sink tree if the trees meet, else -1.
  int grow(int i) {
    Node& ni = nodes_[i];
    for (int a = ni.first; a >= 0; a = arcs_[a].next) {
      const bool open = ni.is_sink ? arcs_[arcs_[a].sister].r_cap > 0.0 : arcs_[a].r_cap > 0.0;
      if (!open) continue;
      const int j = arcs_[a].head;
      Node& nj = nodes_[j];
      if (nj.parent == kNone) {
        nj.is_sink = ni.is_sink;
        nj.parent = arcs_[a].sister;
        nj.ts = ni.ts;
        nj.dist = ni.dist + 1;
        set_active(j);
      } else if (nj.is_sink != ni.is_sink) {
        return ni.is_sink ? arcs_[a].sister : a;
      } else if (nj.ts <= ni.ts && nj.dist > ni.dist) {
        // Shorter route to the terminal through i.
        nj.parent = arcs_[a].sister;
        nj.ts = ni.ts;
        nj.dist = ni.dist + 1;
      }
    }
    return -1;
  }

  void make_orphan(int i) {
    nodes_[i].parent = kOrphan;
    orphans_.push_front(i);
  }

  void augment(int middle) {
    // Bottleneck along source tree, middle arc, sink tree.
    double bottleneck = arcs_[middle].r_cap;
    for (int i = arcs_[arcs_[middle].sister].head;;) {
      const int a = nodes_[i].parent;
      if (a == kTerminal) {
        bottleneck = std::min(bottleneck, nodes_[i].tr_cap);
        break;
      }
      bottleneck = std::min(bottleneck, arcs_[arcs_[a].sister].r_cap);
      i = arcs_[a].head;
    }
    for (int i = arcs_[middle].head;;) {
      const int a = nodes_[i].parent;
      if (a == kTerminal) {
        bottleneck = std::min(bottleneck, -nodes_[i].tr_cap);
        break;
      }
      bottleneck = std::min(bottleneck, arcs_[a].r_cap);
      i = arcs_[a].head;
    }

    arcs_[arcs_[middle].sister].r_cap += bottleneck;
    arcs_[middle].r_cap -= bottleneck;
    for (int i = arcs_[arcs_[middle].sister].head;;) {
      const int a = nodes_[i].parent;
      if (a == kTerminal) {
        nodes_[i].tr_cap -= bottleneck;
        if (nodes_[i].tr_cap == 0.0) make_orphan(i);
        break;
      }
      arcs_[a].r_cap += bottleneck;
      arcs_[arcs_[a].sister].r_cap -= bottleneck;
      if (arcs_[arcs_[a].sister].r_cap == 0.0) make_orphan(i);
      i = arcs_[a].head;
    }
    for (int i = arcs_[middle].head;;) {
      const int a = nodes_[i].parent;
      if (a == kTerminal) {
        nodes_[i].tr_cap += bottleneck;
        if (nodes_[i].tr_cap == 0.0) make_orphan(i);
        break;
      }
      arcs_[arcs_[a].sister].r_cap += bottleneck;
      arcs_[a].r_cap -= bottleneck;
      if (arcs_[a].r_cap == 0.0) make_orphan(i);
      i = arcs_[a].head;
    }
    flow_ += bottleneck;
  }

  void adopt_orphans() {
    while (!orphans_.empty()) {
      const int i = orphans_.front();
      orphans_.pop_front();
      process_orphan(i);
    }
  }

  void process_orphan(int i) {
    Node& ni = nodes_[i];
    const bool sink = ni.is_sink;
    int best_arc = kNone;
    int best_dist = kInfDist;
    for (int a = ni.first; a >= 0; a = arcs_[a].next) {
      // Residual capacity from the would-be parent towards i.
      const double cap = sink ? arcs_[a].r_cap : arcs_[arcs_[a].sister].r_cap;
      if (!(cap > 0.0)) continue;
      const int j = arcs_[a].head;
      if (nodes_[j].is_sink != sink || nodes_[j].parent == kNone) continue;
      // Walk to the root to check j still hangs off a terminal.
      int d = 0;
      int k = j;
      while (true) {
        if (nodes_[k].ts == time_) {
          d += nodes_[k].dist;
          break;
        }
        const int p = nodes_[k].parent;
        ++d;
        if (p == kTerminal) {
          nodes_[k].ts = time_;
          nodes_[k].dist = 1;
          break;
        }
        if (p == kOrphan) {
          d = kInfDist;
          break;
        }
        k = arcs_[p].head;
      }
      if (d == kInfDist) continue;
      if (d < best_dist) {
        best_arc = a;
        best_dist = d;
      }
      // Cache distances along the verified path.
      for (k = j; nodes_[k].ts != time_; k = arcs_[nodes_[k].parent].head) {
        nodes_[k].ts = time_;
        nodes_[k].dist = d--;
      }
    }

    if (best_arc != kNone) {
      ni.parent = best_arc;
      ni.ts = time_;
      ni.dist = best_dist + 1;
      return;
    }

    // No valid parent: i becomes free; neighbours that fed it go active and
    // its children become orphans in turn.
    ni.parent = kNone;
    for (int a = ni.first; a >= 0; a = arcs_[a].next) {
      const int j = arcs_[a].head;
      Node& nj = nodes_[j];
      if (nj.is_sink != sink || nj.parent == kNone) continue;
      const double cap = sink ? arcs_[a].r_cap : arcs_[arcs_[a].sister].r_cap;
      if (cap > 0.0) set_active(j);
      if (nj.parent != kTerminal && nj.parent != kOrphan && arcs_[nj.parent].head == i) make_orphan_rear(j);
    }
  }

  void make_orphan_rear(int i) {
    nodes_[i].parent = kOrphan;
    orphans_.push_back(i);
  }

  std::vector<Node> nodes_;
  std::vector<Arc> arcs_;
  std::deque<int> active_;
  std::deque<int> orphans_;
  double flow_ = 0.0;
  long time_ = 0;
  bool solved_ = false;
};

/// Result of a minimum s-t cut: flow value and, per node, whether it lies on
/// the source side.
struct MinCut {
  double flow = 0.0;
  std::vector<bool> source_side;
};

inline MinCut max_flow_min_cut(FlowNetwork& net) {
  MinCut cut;
  cut.flow = net.max_flow();
  cut.source_side = net.source_side();
  return cut;
}

}  // namespace sarseg

#endif  // SARSEG_MAXFLOW_HPP
