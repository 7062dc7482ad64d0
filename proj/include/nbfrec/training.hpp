#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "nbfrec/adam.hpp"
#include "nbfrec/common.hpp"
#include "nbfrec/eval.hpp"
#include "nbfrec/graph.hpp"
#include "nbfrec/model.hpp"

namespace nbfrec {

template <class Real>
struct TrainConfig {
  std::size_t batch_size = 256;
  std::size_t n_negatives = 8;
  AdamConfig<Real> adam;
  std::size_t epochs = 20;
  std::uint64_t seed = 0;
  std::size_t patience = 5;      // early stopping on valid hits@eval_k
  std::size_t eval_k = 10;
  std::size_t query_chunk = 64;  // positives per taped forward/backward pass
};

/// O(1) membership index over the training edge set.
class TrainEdgeIndex {
 public:
  TrainEdgeIndex(const InteractionGraph& g, const std::vector<EdgeId>& train) : graph_(&g) {
    pairs_.reserve(train.size() * 2);
    for (EdgeId e : train)
      pairs_.insert(InteractionGraph::pair_key(g.edge(e).user, g.edge(e).item));
  }

  bool contains(NodeId user, NodeId item) const {
    return pairs_.count(InteractionGraph::pair_key(user, item)) != 0;
  }

  const InteractionGraph& graph() const noexcept { return *graph_; }
  std::size_t size() const noexcept { return pairs_.size(); }

 private:
  const InteractionGraph* graph_;
  std::unordered_set<std::uint64_t> pairs_;
};

/// Strict negatives for one positive interaction: each sample corrupts
/// exactly one side (fair coin), drawing the replacement uniformly and
/// rejecting pairs present in the training set. Gives up with an error
/// after 100*n rejections (a side with no non-neighbors).
inline std::vector<std::pair<NodeId, NodeId>> sample_strict_negatives(
    const InteractionGraph& g, const TrainEdgeIndex& train, const EdgeRecord& positive,
    std::size_t n, Rng& rng) {
  std::vector<std::pair<NodeId, NodeId>> out;
  out.reserve(n);
  std::uniform_int_distribution<int> coin(0, 1);
  std::uniform_int_distribution<NodeId> item_pick(0, NodeId(g.num_items() - 1));
  std::uniform_int_distribution<NodeId> user_pick(0, NodeId(g.num_users() - 1));
  std::size_t rejections = 0;
  const std::size_t budget = 100 * n;
  while (out.size() < n) {
    NodeId user = positive.user, item = positive.item;
    if (coin(rng)) item = item_pick(rng);  // corrupt the tail
    else user = user_pick(rng);            // corrupt the head
    if (train.contains(user, item)) {
      if (++rejections > budget)
        throw DataError(
            "sample_strict_negatives: exceeded " + std::to_string(budget) +
            " rejections; a corrupted side of (" + std::to_string(positive.user) + "," +
            std::to_string(positive.item) + ") has no strict negatives left");
      continue;
    }
    out.emplace_back(user, item);
  }
  return out;
}

/// Per-positive loss terms of the batch objective:
///   -log p(positive) - (1/n) * sum_i log(1 - p(negative_i))
/// with probabilities clamped to [1e-12, 1 - 1e-12]. Head-corrupted
/// negatives query from their corrupted user; tail-corrupted ones reuse
/// the positive's query. Queries are deduplicated across the whole pass.
inline constexpr double kProbabilityClamp = 1e-12;

template <class Real>
double batch_loss(const ModelConfig& cfg, BackboneParams<Real>& backbone,
                  ProjectionHead<Real>& head, const GraphView& view,
                  const std::vector<const EdgeRecord*>& positives,
                  const std::vector<std::vector<std::pair<NodeId, NodeId>>>& negatives,
                  bool with_grads, std::size_t query_chunk, double loss_denominator = 0,
                  std::vector<EdgeId>* traversal_log = nullptr) {
  if (positives.empty()) return 0.0;
  if (negatives.size() != positives.size())
    throw std::invalid_argument("batch_loss: negatives must align with positives");
  const InteractionGraph& g = view.graph();
  const double denom = loss_denominator > 0 ? loss_denominator : double(positives.size());
  const Real cap = Real(-std::log(kProbabilityClamp));
  const std::size_t chunk = query_chunk == 0 ? positives.size() : query_chunk;

  double total = 0;
  for (std::size_t begin = 0; begin < positives.size(); begin += chunk) {
    const std::size_t end = std::min(begin + chunk, positives.size());

    std::vector<NodeId> queries;
    std::unordered_map<NodeId, std::uint32_t> slice;
    auto query_of = [&](NodeId u) {
      auto [it, inserted] = slice.emplace(u, std::uint32_t(queries.size()));
      if (inserted) queries.push_back(u);
      return it->second;
    };

    std::vector<ScoreRequest> requests;
    std::vector<Real> sign, weight;
    for (std::size_t p = begin; p < end; ++p) {
      const EdgeRecord& pos = *positives[p];
      const std::size_t n = negatives[p].size();
      requests.push_back(ScoreRequest{query_of(pos.user), g.item_node(pos.item)});
      sign.push_back(Real(-1));  // -log p: softplus of the negated score
      weight.push_back(Real(1));
      for (const auto& [nu, ni] : negatives[p]) {
        requests.push_back(ScoreRequest{query_of(nu), g.item_node(ni)});
        sign.push_back(Real(1));  // -log(1-p): softplus of the score
        weight.push_back(Real(1) / Real(n));
      }
    }

    Tape<Real> tape;
    if (!with_grads) tape.set_grad_enabled(false);
    Var scores =
        nbf_score_on_tape(tape, cfg, backbone, head, view, queries, requests, traversal_log);

    Tensor<Real> sign_t({sign.size(), 1});
    Tensor<Real> weight_t({weight.size(), 1});
    for (std::size_t i = 0; i < sign.size(); ++i) {
      sign_t[i] = sign[i];
      weight_t[i] = weight[i];
    }
    Var terms = tape.softplus_capped(tape.mul(scores, tape.constant(std::move(sign_t))), cap);
    Var weighted = tape.mul(terms, tape.constant(std::move(weight_t)));
    Var loss = tape.scale(tape.sum_all(weighted), Real(1) / Real(denom));
    total += double(tape.scalar_value(loss));
    if (with_grads) tape.backward(loss);
  }
  return total;
}

struct EpochStats {
  double mean_loss = 0;
  std::size_t batches = 0;
  double seconds = 0;
};

/// Called after each batch's backward pass, before the optimizer step.
/// `traversed` holds the edge id of every arc iterated by each layer of
/// the batch's forward passes.
struct BatchHook {
  std::function<void(std::size_t batch_index, const std::vector<EdgeId>& batch_edges,
                     const GraphView& view, const std::vector<EdgeId>& traversed)>
      fn;
};

/// One shuffled pass over the train split. Every batch removes its own
/// positive edges (both arc directions) from the convolution view, samples
/// strict negatives, runs forward/backward in query chunks, and applies one
/// Adam step to the backbone and head stores.
template <class Real>
EpochStats train_epoch(const ModelConfig& cfg, const TrainConfig<Real>& tcfg,
                       BackboneParams<Real>& backbone, ProjectionHead<Real>& head,
                       const InteractionGraph& g, const DatasetSplit& split,
                       const TrainEdgeIndex& train_index, Adam<Real>& opt_backbone,
                       Adam<Real>& opt_head, Rng& rng, const BatchHook& hook = {}) {
  if (split.train.empty()) throw DataError("train_epoch: empty train split");
  const auto t0 = std::chrono::steady_clock::now();

  // convolution graph = train edges; valid/test stay masked throughout
  auto base_mask = std::make_shared<const std::unordered_set<EdgeId>>([&] {
    std::unordered_set<EdgeId> m;
    m.reserve((split.valid.size() + split.test.size()) * 2);
    m.insert(split.valid.begin(), split.valid.end());
    m.insert(split.test.begin(), split.test.end());
    return m;
  }());

  std::vector<EdgeId> order = split.train;
  std::shuffle(order.begin(), order.end(), rng);

  double loss_sum = 0;  // sum of per-positive losses
  std::size_t batches = 0;
  for (std::size_t begin = 0; begin < order.size(); begin += tcfg.batch_size) {
    const std::size_t end = std::min(begin + tcfg.batch_size, order.size());
    std::vector<EdgeId> batch(order.begin() + begin, order.begin() + end);

    GraphView view(g, base_mask, batch);
    std::vector<const EdgeRecord*> positives;
    std::vector<std::vector<std::pair<NodeId, NodeId>>> negatives;
    positives.reserve(batch.size());
    for (EdgeId e : batch) {
      positives.push_back(&g.edge(e));
      negatives.push_back(
          sample_strict_negatives(g, train_index, g.edge(e), tcfg.n_negatives, rng));
    }

    backbone.store.zero_grads();
    head.store.zero_grads();
    std::vector<EdgeId> traversed;
    const double loss =
        batch_loss(cfg, backbone, head, view, positives, negatives, /*with_grads=*/true,
                   tcfg.query_chunk, double(batch.size()), hook.fn ? &traversed : nullptr);
    if (!std::isfinite(loss))
      throw NumericError("non-finite loss in batch " + std::to_string(batches) +
                         " (|backbone|=" + std::to_string(backbone.store.value_l2_norm()) +
                         ", |head|=" + std::to_string(head.store.value_l2_norm()) +
                         ", |grad backbone|=" + std::to_string(backbone.store.grad_l2_norm()) + ")");
    if (hook.fn) hook.fn(batches, batch, view, traversed);
    opt_backbone.step(backbone.store);
    opt_head.step(head.store);
    loss_sum += loss * double(batch.size());
    ++batches;
  }

  EpochStats stats;
  stats.mean_loss = loss_sum / double(order.size());
  stats.batches = batches;
  stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return stats;
}

struct FitResult {
  std::vector<EpochStats> epochs;
  std::vector<double> valid_metric;  // one entry per epoch when validation ran
  std::size_t best_epoch = 0;        // 1-based; 0 = initial parameters
  double best_valid = 0;
  bool early_stopped = false;
};

/// Epoch loop with validation-based early stopping (hits@eval_k on the
/// valid split, stop after `patience` epochs without improvement, restore
/// the best parameters). Runs all epochs when the valid split is empty.
template <class Real>
FitResult fit(const ModelConfig& cfg, const TrainConfig<Real>& tcfg,
              BackboneParams<Real>& backbone, ProjectionHead<Real>& head,
              const InteractionGraph& g, const DatasetSplit& split,
              const BatchHook& hook = {}) {
  FitResult result;
  if (tcfg.epochs == 0) return result;
  TrainEdgeIndex train_index(g, split.train);
  Adam<Real> opt_backbone(tcfg.adam), opt_head(tcfg.adam);
  Rng rng = make_rng(tcfg.seed, /*stream=*/3);

  const bool validate = !split.valid.empty();
  EvalOptions eval_opt;
  eval_opt.metrics = {"hits@" + std::to_string(tcfg.eval_k)};
  const std::string metric_name = "hits@" + std::to_string(tcfg.eval_k);

  ParamStore<Real> best_backbone = backbone.store;
  ParamStore<Real> best_head = head.store;
  double best = -1;
  std::size_t best_epoch = 0, since_best = 0;

  for (std::size_t epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    result.epochs.push_back(
        train_epoch(cfg, tcfg, backbone, head, g, split, train_index, opt_backbone, opt_head, rng,
                    hook));
    if (!validate) continue;
    RankingReport report = evaluate(cfg, backbone, head, g, split, EvalPhase::kValid, eval_opt);
    const double metric = report.metrics.at(metric_name);
    result.valid_metric.push_back(metric);
    if (metric > best) {
      best = metric;
      best_epoch = epoch;
      since_best = 0;
      best_backbone = backbone.store;
      best_head = head.store;
    } else if (++since_best >= tcfg.patience) {
      result.early_stopped = true;
      break;
    }
  }

  if (validate && best_epoch > 0) {
    backbone.store = std::move(best_backbone);
    head.store = std::move(best_head);
    result.best_epoch = best_epoch;
    result.best_valid = best;
  }
  return result;
}

}  // namespace nbfrec
