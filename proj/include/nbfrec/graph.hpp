#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "nbfrec/common.hpp"

namespace nbfrec {

using NodeId = std::uint32_t;
using EdgeId = std::uint32_t;

/// One observed user-item interaction with its raw feature vector.
struct EdgeRecord {
  NodeId user = 0;
  NodeId item = 0;  // item index, not node id
  std::vector<double> features;

  bool operator==(const EdgeRecord&) const = default;
};

/// Bipartite interaction graph. Node ids place users at [0, num_users) and
/// items at [num_users, num_users + num_items).
///
/// The directed-arc adjacency (two arcs per interaction, one per direction)
/// is produced by with_inverse_arcs(); arcs are stored grouped by target
/// node (in-arc CSR) in edge order within each target. Arc 2e is the
/// user->item arc of edge e (direction flag +1), arc 2e+1 the reverse
/// (flag -1); the CSR keeps a permutation of these ids.
class InteractionGraph {
 public:
  InteractionGraph(std::size_t num_users, std::size_t num_items, std::size_t d_raw,
                   std::vector<EdgeRecord> edges)
      : num_users_(num_users), num_items_(num_items), d_raw_(d_raw), edges_(std::move(edges)) {
    std::unordered_set<std::uint64_t> seen;
    seen.reserve(edges_.size() * 2);
    for (const EdgeRecord& e : edges_) {
      if (e.user >= num_users_) throw DataError("edge user index out of range");
      if (e.item >= num_items_) throw DataError("edge item index out of range");
      if (e.features.size() != d_raw_) throw DataError("edge feature width mismatch");
      if (!seen.insert(pair_key(e.user, e.item)).second)
        throw DataError("duplicate (user,item) edge");
    }
  }

  std::size_t num_users() const noexcept { return num_users_; }
  std::size_t num_items() const noexcept { return num_items_; }
  std::size_t num_nodes() const noexcept { return num_users_ + num_items_; }
  std::size_t d_raw() const noexcept { return d_raw_; }
  std::size_t num_edges() const noexcept { return edges_.size(); }

  const std::vector<EdgeRecord>& edges() const noexcept { return edges_; }
  const EdgeRecord& edge(EdgeId e) const { return edges_.at(e); }

  NodeId item_node(NodeId item_index) const { return NodeId(num_users_ + item_index); }
  bool is_user_node(NodeId v) const { return v < num_users_; }
  bool is_item_node(NodeId v) const { return v >= num_users_ && v < num_nodes(); }
  NodeId item_index(NodeId v) const { return NodeId(v - num_users_); }

  static std::uint64_t pair_key(NodeId user, NodeId item) {
    return (std::uint64_t(user) << 32) | std::uint64_t(item);
  }

  // ---- directed-arc adjacency ------------------------------------------

  bool has_adjacency() const noexcept { return !arc_offsets_.empty(); }
  std::size_t arc_count() const noexcept { return arc_src_.size(); }

  NodeId arc_src(std::size_t a) const { return arc_src_[a]; }
  NodeId arc_dst(std::size_t a) const { return arc_dst_[a]; }
  EdgeId arc_edge(std::size_t a) const { return arc_edge_[a]; }
  double arc_dir(std::size_t a) const { return arc_dir_[a]; }

  const std::vector<NodeId>& arc_src_array() const noexcept { return arc_src_; }
  const std::vector<NodeId>& arc_dst_array() const noexcept { return arc_dst_; }
  const std::vector<EdgeId>& arc_edge_array() const noexcept { return arc_edge_; }
  const std::vector<double>& arc_dir_array() const noexcept { return arc_dir_; }

  /// Arc positions targeting node v: [first, last) into the arc arrays.
  std::pair<std::size_t, std::size_t> arcs_of(NodeId v) const {
    require_adjacency();
    return {arc_offsets_[v], arc_offsets_[v + 1]};
  }

  std::size_t in_degree(NodeId v) const {
    auto [first, last] = arcs_of(v);
    return last - first;
  }

  /// Raw feature vector of an arc: source edge features plus the direction
  /// flag (+1 user->item, -1 item->user).
  std::vector<double> arc_features(std::size_t a) const {
    const EdgeRecord& e = edges_[arc_edge_[a]];
    std::vector<double> f = e.features;
    f.push_back(arc_dir_[a]);
    return f;
  }

  friend InteractionGraph with_inverse_arcs(const InteractionGraph& g);

 private:
  void require_adjacency() const {
    if (!has_adjacency()) throw std::logic_error("graph adjacency not built; call with_inverse_arcs");
  }

  std::size_t num_users_;
  std::size_t num_items_;
  std::size_t d_raw_;
  std::vector<EdgeRecord> edges_;

  // in-arc CSR, filled by with_inverse_arcs
  std::vector<std::size_t> arc_offsets_;  // size num_nodes+1
  std::vector<NodeId> arc_src_;
  std::vector<NodeId> arc_dst_;
  std::vector<EdgeId> arc_edge_;
  std::vector<double> arc_dir_;
};

/// Expands every interaction into its two directed arcs and builds the
/// in-arc CSR. Within one target node, arcs appear in edge order, which
/// pins the floating-point summation order downstream.
inline InteractionGraph with_inverse_arcs(const InteractionGraph& g) {
  InteractionGraph out = g;
  const std::size_t num_nodes = g.num_nodes();
  const std::size_t num_arcs = 2 * g.num_edges();

  std::vector<std::size_t> counts(num_nodes + 1, 0);
  for (const EdgeRecord& e : g.edges_) {
    counts[g.item_node(e.item) + 1]++;  // user -> item arc targets the item
    counts[e.user + 1]++;               // item -> user arc targets the user
  }
  for (std::size_t v = 0; v < num_nodes; ++v) counts[v + 1] += counts[v];

  out.arc_offsets_ = counts;
  out.arc_src_.assign(num_arcs, 0);
  out.arc_dst_.assign(num_arcs, 0);
  out.arc_edge_.assign(num_arcs, 0);
  out.arc_dir_.assign(num_arcs, 0.0);

  std::vector<std::size_t> cursor(counts.begin(), counts.end() - 1);
  for (EdgeId e = 0; e < g.num_edges(); ++e) {
    const EdgeRecord& rec = g.edges_[e];
    const NodeId item = g.item_node(rec.item);
    std::size_t fwd = cursor[item]++;
    out.arc_src_[fwd] = rec.user;
    out.arc_dst_[fwd] = item;
    out.arc_edge_[fwd] = e;
    out.arc_dir_[fwd] = 1.0;
    std::size_t rev = cursor[rec.user]++;
    out.arc_src_[rev] = item;
    out.arc_dst_[rev] = rec.user;
    out.arc_edge_[rev] = e;
    out.arc_dir_[rev] = -1.0;
  }
  return out;
}

/// The arc subset a message-passing pass actually iterates.
struct ActiveArcs {
  std::vector<NodeId> src;
  std::vector<NodeId> dst;
  std::vector<EdgeId> edge;
  std::vector<double> dir;
  std::vector<std::uint32_t> arc_pos;  // positions into the graph's CSR arrays
  std::size_t size() const noexcept { return src.size(); }
};

/// Read-only convolution view of a graph with some edges masked out.
///
/// Creation costs O(masked edges): the underlying graph is shared, and a
/// view may layer on top of a base mask (shared set) so that per-batch
/// views over an already-restricted graph stay cheap. The filtered arc
/// arrays are materialized lazily, once, on first use.
class GraphView {
 public:
  explicit GraphView(const InteractionGraph& g) : graph_(&g) { check(); }

  GraphView(const InteractionGraph& g, const std::vector<EdgeId>& masked) : graph_(&g) {
    check();
    add_masked(masked);
  }

  GraphView(const InteractionGraph& g, std::shared_ptr<const std::unordered_set<EdgeId>> base,
            const std::vector<EdgeId>& masked)
      : graph_(&g), base_mask_(std::move(base)) {
    check();
    if (base_mask_)
      for (EdgeId e : *base_mask_) validate_edge(e);
    add_masked(masked);
  }

  const InteractionGraph& graph() const noexcept { return *graph_; }

  bool edge_masked(EdgeId e) const {
    return mask_.count(e) != 0 || (base_mask_ && base_mask_->count(e) != 0);
  }

  std::size_t masked_count() const {
    if (!base_mask_) return mask_.size();
    std::size_t n = base_mask_->size();
    for (EdgeId e : mask_)
      if (!base_mask_->count(e)) ++n;
    return n;
  }

  /// Filtered arc arrays in CSR order. Built lazily on first use; call once
  /// before sharing a view across reader threads.
  const ActiveArcs& active() const {
    if (!built_) {
      build();
      built_ = true;
    }
    return active_;
  }

  /// Arc positions removed by the mask (complement of active().arc_pos).
  std::vector<std::uint32_t> masked_arc_positions() const {
    const InteractionGraph& g = *graph_;
    std::vector<std::uint32_t> out;
    for (std::size_t a = 0; a < g.arc_count(); ++a)
      if (edge_masked(g.arc_edge(a))) out.push_back(std::uint32_t(a));
    return out;
  }

  std::size_t active_in_degree(NodeId v) const {
    auto [first, last] = graph_->arcs_of(v);
    std::size_t n = 0;
    for (std::size_t a = first; a < last; ++a)
      if (!edge_masked(graph_->arc_edge(a))) ++n;
    return n;
  }

 private:
  void check() const {
    if (!graph_->has_adjacency())
      throw std::logic_error("GraphView requires a graph with built adjacency");
  }

  void validate_edge(EdgeId e) const {
    if (e >= graph_->num_edges())
      throw DataError("mask_edges: unknown edge id " + std::to_string(e));
  }

  void add_masked(const std::vector<EdgeId>& masked) {
    mask_.reserve(masked.size() * 2);
    for (EdgeId e : masked) {
      validate_edge(e);
      mask_.insert(e);
    }
  }

  void build() const {
    const InteractionGraph& g = *graph_;
    const std::size_t total = g.arc_count();
    for (std::size_t a = 0; a < total; ++a) {
      const EdgeId e = g.arc_edge(a);
      if (edge_masked(e)) continue;
      active_.src.push_back(g.arc_src(a));
      active_.dst.push_back(g.arc_dst(a));
      active_.edge.push_back(e);
      active_.dir.push_back(g.arc_dir(a));
      active_.arc_pos.push_back(std::uint32_t(a));
    }
  }

  const InteractionGraph* graph_;
  std::shared_ptr<const std::unordered_set<EdgeId>> base_mask_;
  std::unordered_set<EdgeId> mask_;
  mutable bool built_ = false;
  mutable ActiveArcs active_;
};

/// View of g with the given edges (both arc directions) removed.
inline GraphView mask_edges(const InteractionGraph& g, const std::vector<EdgeId>& edge_ids) {
  return GraphView(g, edge_ids);
}

/// Disjoint train/valid/test edge-id sets covering the whole edge list.
struct DatasetSplit {
  std::vector<EdgeId> train;
  std::vector<EdgeId> valid;
  std::vector<EdgeId> test;
};

/// Seeded shuffle split. Sizes follow the ratios with train absorbing the
/// rounding remainder.
inline DatasetSplit split_edges(const InteractionGraph& g, std::array<double, 3> ratios,
                                std::uint64_t seed) {
  double sum = ratios[0] + ratios[1] + ratios[2];
  if (ratios[0] < 0 || ratios[1] < 0 || ratios[2] < 0 || std::abs(sum - 1.0) > 1e-9)
    throw DataError("split_edges: ratios must be nonnegative and sum to 1");

  const std::size_t n = g.num_edges();
  std::vector<EdgeId> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = EdgeId(i);
  Rng rng = make_rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);

  const std::size_t n_valid = std::size_t(std::llround(ratios[1] * double(n)));
  const std::size_t n_test = std::size_t(std::llround(ratios[2] * double(n)));
  if (n_valid + n_test > n) throw DataError("split_edges: rounding exceeded edge count");
  const std::size_t n_train = n - n_valid - n_test;

  auto check_nonempty = [&](std::size_t size, double ratio, const char* which) {
    if (ratio > 0 && size == 0 && n >= 3)
      throw DataError(std::string("split_edges: ") + which + " split received zero edges");
  };
  check_nonempty(n_train, ratios[0], "train");
  check_nonempty(n_valid, ratios[1], "valid");
  check_nonempty(n_test, ratios[2], "test");

  DatasetSplit split;
  split.train.assign(ids.begin(), ids.begin() + n_train);
  split.valid.assign(ids.begin() + n_train, ids.begin() + n_train + n_valid);
  split.test.assign(ids.begin() + n_train + n_valid, ids.end());
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.valid.begin(), split.valid.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

}  // namespace nbfrec
