#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nbfrec/common.hpp"
#include "nbfrec/graph.hpp"
#include "nbfrec/nn.hpp"
#include "nbfrec/param_store.hpp"
#include "nbfrec/tape.hpp"
#include "nbfrec/tensor.hpp"

namespace nbfrec {

/// Architecture of the message-passing model.
///
/// `structural_only` swaps the edge-embedding path for a single learned
/// constant vector, reducing the model to a structure-only variant whose
/// output ignores raw edge feature values entirely.
struct ModelConfig {
  std::size_t d = 32;       // hidden state width
  std::size_t d_proj = 16;  // shared projected feature width
  std::size_t T = 4;        // message-passing layers
  std::vector<std::size_t> proj_hidden{};    // dataset head MLP
  std::vector<std::size_t> emb_hidden{32};   // backbone embedding MLP
  std::vector<std::size_t> msg_hidden{};     // per-layer edge MLP
  std::vector<std::size_t> score_hidden{32};
  bool structural_only = false;
  double ln_eps = 1e-5;

  void validate() const {
    if (d < 1 || d_proj < 1 || T < 1) throw DataError("ModelConfig: d, d_proj, T must be >= 1");
  }

  static ModelConfig make(std::size_t d, std::size_t d_proj, std::size_t T,
                          bool structural = false) {
    ModelConfig cfg;
    cfg.d = d;
    cfg.d_proj = d_proj;
    cfg.T = T;
    cfg.emb_hidden = {d};
    cfg.score_hidden = {d};
    cfg.structural_only = structural;
    return cfg;
  }

  MlpSpec proj_spec(std::size_t d_raw) const {
    return MlpSpec::with_hidden(d_raw + 1, proj_hidden, d_proj);
  }
  MlpSpec emb_spec() const { return MlpSpec::with_hidden(d_proj, emb_hidden, d); }
  MlpSpec msg_spec() const { return MlpSpec::with_hidden(d, msg_hidden, d); }
  MlpSpec score_spec() const { return MlpSpec::with_hidden(2 * d, score_hidden, 1); }
};

/// All dataset-agnostic learnable state. No tensor dimension depends on the
/// node or edge counts of any graph, which is what makes the model
/// node-inductive.
template <class Real>
struct BackboneParams {
  ModelConfig cfg;
  ParamStore<Real> store;
};

template <class Real>
BackboneParams<Real> make_backbone(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  BackboneParams<Real> bb{cfg, {}};
  Rng rng = make_rng(seed, /*stream=*/1);

  const double bound = std::sqrt(3.0 / double(cfg.d));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<Real> boundary({cfg.d});
  for (std::size_t i = 0; i < cfg.d; ++i) boundary[i] = Real(dist(rng));
  bb.store.add("boundary", std::move(boundary));

  if (cfg.structural_only) {
    Tensor<Real> c({cfg.d});
    for (std::size_t i = 0; i < cfg.d; ++i) c[i] = Real(dist(rng));
    bb.store.add("edge_const", std::move(c));
  } else {
    init_mlp(bb.store, cfg.emb_spec(), "emb", rng);
  }
  for (std::size_t t = 1; t <= cfg.T; ++t) {
    init_mlp(bb.store, cfg.msg_spec(), "msg" + std::to_string(t), rng);
    const std::string upd = "upd" + std::to_string(t);
    bb.store.add(upd + ".w", kaiming_uniform<Real>(2 * cfg.d, cfg.d, rng));
    bb.store.add(upd + ".b", Tensor<Real>({cfg.d}));
    init_layer_norm(bb.store, cfg.d, upd + ".ln");
  }
  init_mlp(bb.store, cfg.score_spec(), "score", rng);
  return bb;
}

/// Per-column standardization statistics over a dataset's train edges.
struct FeatureStats {
  std::vector<double> mean;
  std::vector<double> stdev;
};

inline FeatureStats compute_feature_stats(const InteractionGraph& g,
                                          const std::vector<EdgeId>& train_edges) {
  const std::size_t d = g.d_raw();
  FeatureStats stats{std::vector<double>(d, 0.0), std::vector<double>(d, 1.0)};
  if (train_edges.empty() || d == 0) return stats;
  for (EdgeId e : train_edges)
    for (std::size_t k = 0; k < d; ++k) stats.mean[k] += g.edge(e).features[k];
  for (std::size_t k = 0; k < d; ++k) stats.mean[k] /= double(train_edges.size());
  for (std::size_t k = 0; k < d; ++k) {
    double var = 0;
    for (EdgeId e : train_edges) {
      const double c = g.edge(e).features[k] - stats.mean[k];
      var += c * c;
    }
    var /= double(train_edges.size());
    stats.stdev[k] = var < 1e-24 ? 1.0 : std::sqrt(var);
  }
  return stats;
}

/// Dataset-specific projection MLP plus the standardization statistics it
/// expects its inputs to be normalized with. Input width is the dataset's
/// raw feature dimension plus one for the arc direction flag.
template <class Real>
struct ProjectionHead {
  std::size_t d_raw = 0;
  FeatureStats stats;
  ParamStore<Real> store;
};

template <class Real>
ProjectionHead<Real> make_head(const ModelConfig& cfg, std::size_t d_raw, FeatureStats stats,
                               std::uint64_t seed) {
  ProjectionHead<Real> head{d_raw, std::move(stats), {}};
  Rng rng = make_rng(seed, /*stream=*/2);
  init_mlp(head.store, cfg.proj_spec(d_raw), "proj", rng);
  return head;
}

/// Standardized per-arc feature matrix [arcs, d_raw+1]: raw features
/// z-scored with the head statistics, then the direction flag.
template <class Real>
Tensor<Real> standardized_arc_features(const ActiveArcs& arcs, const InteractionGraph& g,
                                       const FeatureStats& stats) {
  const std::size_t d_raw = g.d_raw();
  Tensor<Real> x({arcs.size(), d_raw + 1});
  for (std::size_t a = 0; a < arcs.size(); ++a) {
    const EdgeRecord& e = g.edge(arcs.edge[a]);
    Real* row = x.data() + a * (d_raw + 1);
    for (std::size_t k = 0; k < d_raw; ++k)
      row[k] = Real((e.features[k] - stats.mean[k]) / stats.stdev[k]);
    row[d_raw] = Real(arcs.dir[a]);
  }
  return x;
}

/// Edge embedding: backbone embedding MLP applied to the head projection of
/// standardized arc features. One row per directed arc; computed once per
/// forward pass and shared across layers.
template <class Real>
Var embed_arc_features(Tape<Real>& tape, const ModelConfig& cfg, BackboneParams<Real>& backbone,
                       ProjectionHead<Real>& head, Var standardized) {
  if (tape.value(standardized).cols() != head.d_raw + 1)
    throw std::invalid_argument("embed_arc_features: head width does not match arc features");
  Var projected = mlp_apply(tape, cfg.proj_spec(head.d_raw), head.store, "proj", standardized);
  return mlp_apply(tape, cfg.emb_spec(), backbone.store, "emb", projected);
}

/// Boundary-condition state matrix: row u carries the learned boundary
/// vector, every other node starts at zero.
template <class Real>
Tensor<Real> init_states(std::size_t num_nodes, const Tensor<Real>& boundary, NodeId u) {
  if (u >= num_nodes) throw std::invalid_argument("init_states: query node out of range");
  Tensor<Real> h({num_nodes, boundary.size()});
  for (std::size_t k = 0; k < boundary.size(); ++k) h(u, k) = boundary[k];
  return h;
}

/// Element-wise product message (DistMult).
template <class Real>
std::vector<Real> distmult_message(const std::vector<Real>& h, const std::vector<Real>& w) {
  if (h.size() != w.size()) throw std::invalid_argument("distmult_message: length mismatch");
  std::vector<Real> out(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) out[i] = h[i] * w[i];
  return out;
}

/// One (query, candidate-node) pair to score.
struct ScoreRequest {
  std::uint32_t query;  // index into the forward pass's query list
  NodeId node;
};

/// One message-passing layer over the active arcs.
///
/// For each node v (and each of the q interleaved query slices):
///   aggregate_v = sum over in-arcs (x,r,v) of h_x * MLP_t(g(r)) + h0_v
///   h'_v        = relu(layer_norm(linear([h_v ; aggregate_v])))
/// The per-layer MLP re-projects the shared arc embeddings; messages are
/// element-wise products; the per-node sum runs in arc storage order.
template <class Real>
Var propagate_layer(Tape<Real>& tape, const ModelConfig& cfg, BackboneParams<Real>& backbone,
                    std::size_t t, Var h_prev, Var h0, const ActiveArcs& arcs, Var arc_embed,
                    std::size_t q) {
  if (t < 1 || t > cfg.T) throw std::invalid_argument("propagate_layer: layer index out of range");
  const std::string tn = std::to_string(t);
  Var w_t = mlp_apply(tape, cfg.msg_spec(), backbone.store, "msg" + tn, arc_embed);
  Var messages = tape.edge_mul_scatter(h_prev, w_t, &arcs.src, &arcs.dst, q);
  Var aggregate = tape.add(messages, h0);
  Var update_in = tape.concat_cols(h_prev, aggregate);
  Var lin = tape.add_rowwise(tape.matmul(update_in, tape.param(backbone.store, "upd" + tn + ".w")),
                             tape.param(backbone.store, "upd" + tn + ".b"));
  Var normed = apply_layer_norm(tape, backbone.store, "upd" + tn + ".ln", lin, Real(cfg.ln_eps));
  return tape.relu(normed);
}

/// Taped forward pass shared by several queries over one convolution view.
///
/// States live in a [num_nodes * Q, d] tensor, row (v*Q + q) holding node
/// v's state for query q. Per layer: gather/multiply/scatter messages with
/// per-arc weights, add the boundary states, then the learned update
/// (linear on [h_prev ; aggregate], layer norm, relu). Scores are the score
/// MLP on [h_T ; h_0] rows of the requested pairs.
///
/// If `traversal_log` is set, the edge id of every arc each layer iterates
/// is appended (T entries per active arc per pass).
template <class Real>
Var nbf_score_on_tape(Tape<Real>& tape, const ModelConfig& cfg, BackboneParams<Real>& backbone,
                      ProjectionHead<Real>& head, const GraphView& view,
                      const std::vector<NodeId>& query_users,
                      const std::vector<ScoreRequest>& requests,
                      std::vector<EdgeId>* traversal_log = nullptr) {
  const InteractionGraph& g = view.graph();
  if (!cfg.structural_only && head.d_raw != g.d_raw())
    throw std::invalid_argument("projection head width does not match graph feature dimension");
  for (NodeId u : query_users)
    if (!g.is_user_node(u))
      throw std::invalid_argument("query node " + std::to_string(u) + " is not a user node");
  for (const ScoreRequest& r : requests)
    if (r.query >= query_users.size())
      throw std::invalid_argument("score request references unknown query index");

  const ActiveArcs& arcs = view.active();
  const std::size_t Q = query_users.size();
  const std::size_t V = g.num_nodes();

  // Arc embeddings g(r), or the learned constant in structural mode.
  Var arc_embed;
  if (cfg.structural_only) {
    arc_embed = tape.broadcast_rows(tape.param(backbone.store, "edge_const"), arcs.size());
  } else {
    Var x = tape.constant(standardized_arc_features<Real>(arcs, g, head.stats));
    arc_embed = embed_arc_features(tape, cfg, backbone, head, x);
  }

  // Boundary states for every query slice.
  std::vector<std::uint32_t> boundary_rows(Q);
  for (std::size_t q = 0; q < Q; ++q)
    boundary_rows[q] = std::uint32_t(std::size_t(query_users[q]) * Q + q);
  Var boundary = tape.param(backbone.store, "boundary");
  Var h0 = tape.broadcast_to_rows(boundary, boundary_rows, V * Q);

  Var h = h0;
  for (std::size_t t = 1; t <= cfg.T; ++t) {
    h = propagate_layer(tape, cfg, backbone, t, h, h0, arcs, arc_embed, Q);
    if (traversal_log)
      traversal_log->insert(traversal_log->end(), arcs.edge.begin(), arcs.edge.end());
  }

  std::vector<std::uint32_t> request_rows(requests.size());
  for (std::size_t i = 0; i < requests.size(); ++i)
    request_rows[i] = std::uint32_t(std::size_t(requests[i].node) * Q + requests[i].query);
  Var h_final = tape.gather_rows(h, request_rows);
  Var h_init = tape.gather_rows(h0, std::move(request_rows));
  Var features = tape.concat_cols(h_final, h_init);
  return mlp_apply(tape, cfg.score_spec(), backbone.store, "score", features);
}

/// Scores for all candidate item nodes of one query user. One message
/// passing pass serves every candidate.
template <class Real>
std::vector<Real> score_candidates(const ModelConfig& cfg, BackboneParams<Real>& backbone,
                                   ProjectionHead<Real>& head, const GraphView& view, NodeId u,
                                   const std::vector<NodeId>& candidates) {
  const InteractionGraph& g = view.graph();
  if (!g.is_user_node(u)) throw std::invalid_argument("score_candidates: query must be a user node");
  for (NodeId c : candidates)
    if (!g.is_item_node(c))
      throw std::invalid_argument("score_candidates: candidates must be item nodes");
  if (candidates.empty()) return {};

  Tape<Real> tape;
  tape.set_grad_enabled(false);
  std::vector<ScoreRequest> requests;
  requests.reserve(candidates.size());
  for (NodeId c : candidates) requests.push_back(ScoreRequest{0, c});
  Var scores = nbf_score_on_tape(tape, cfg, backbone, head, view, {u}, requests);
  const Tensor<Real>& t = tape.value(scores);
  std::vector<Real> out(candidates.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = t[i];
  return out;
}

}  // namespace nbfrec
