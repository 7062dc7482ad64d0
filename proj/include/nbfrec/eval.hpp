#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <thread>
#include <unordered_set>
#include <vector>

#include "nbfrec/common.hpp"
#include "nbfrec/graph.hpp"
#include "nbfrec/model.hpp"

namespace nbfrec {

// ---- ranks -----------------------------------------------------------------

/// Rank components of the true item among the unfiltered candidates:
/// strict = 1 + #{j != true, unfiltered : s_j > s_true}
/// ties   =     #{j != true, unfiltered : s_j == s_true}
struct RankParts {
  double strict = 1;
  std::uint32_t ties = 0;

  /// Expected rank under uniform random tie-breaking.
  double expected() const { return strict + double(ties) / 2.0; }
};

template <class FilterFn>
RankParts rank_parts(const std::vector<double>& scores, std::size_t true_item,
                     FilterFn&& filtered) {
  if (true_item >= scores.size()) throw DataError("filtered_rank: true item out of range");
  if (filtered(true_item)) throw DataError("filtered_rank: true item is in the filter set");
  const double s_true = scores[true_item];
  RankParts parts;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (j == true_item || filtered(j)) continue;
    if (scores[j] > s_true) parts.strict += 1;
    else if (scores[j] == s_true) parts.ties += 1;
  }
  return parts;
}

/// Filtered rank of the true item with average-rank tie handling: the
/// expected rank when tied scores are ordered uniformly at random.
inline double filtered_rank(const std::vector<double>& scores, std::size_t true_item,
                            const std::unordered_set<std::size_t>& filter) {
  return rank_parts(scores, true_item, [&](std::size_t j) { return filter.count(j) != 0; })
      .expected();
}

/// Fraction of ranks at or below K.
inline double hits_at_k(const std::vector<double>& ranks, std::size_t k) {
  if (k < 1) throw DataError("hits_at_k: K must be >= 1");
  if (ranks.empty()) return 0.0;
  std::size_t hits = 0;
  for (double r : ranks)
    if (r <= double(k)) ++hits;
  return double(hits) / double(ranks.size());
}

/// Mean single-relevant-item NDCG: 1/log2(rank+1) for ranks within K.
inline double ndcg_at_k(const std::vector<double>& ranks, std::size_t k) {
  if (k < 1) throw DataError("ndcg_at_k: K must be >= 1");
  if (ranks.empty()) return 0.0;
  double sum = 0;
  for (double r : ranks)
    if (r <= double(k)) sum += 1.0 / std::log2(r + 1.0);
  return sum / double(ranks.size());
}

/// P(rank <= K) under uniform tie-breaking: the tie block occupies the
/// positions [strict, strict + ties], each equally likely.
inline double expected_hits(const RankParts& parts, std::size_t k) {
  const double lo = parts.strict;
  const double hi = parts.strict + double(parts.ties);
  if (hi <= double(k)) return 1.0;
  if (lo > double(k)) return 0.0;
  return (double(k) - lo + 1.0) / (double(parts.ties) + 1.0);
}

/// E[gain] under uniform tie-breaking, gain = 1/log2(rank+1) within K.
inline double expected_ndcg(const RankParts& parts, std::size_t k) {
  double sum = 0;
  const std::size_t lo = std::size_t(parts.strict);
  for (std::size_t pos = lo; pos <= lo + parts.ties; ++pos)
    if (pos <= k) sum += 1.0 / std::log2(double(pos) + 1.0);
  return sum / double(parts.ties + 1);
}

// ---- metric selection --------------------------------------------------------

enum class MetricKind { kHits, kNdcg };

struct MetricSpec {
  MetricKind kind;
  std::size_t k;
  std::string name;  // canonical "hits@K" / "ndcg@K"
};

inline MetricSpec parse_metric(const std::string& text) {
  const auto at = text.find('@');
  if (at == std::string::npos) throw DataError("metric must look like hits@10 or ndcg@20: " + text);
  const std::string head = text.substr(0, at);
  std::size_t k = 0;
  try {
    k = std::size_t(std::stoul(text.substr(at + 1)));
  } catch (...) {
    throw DataError("bad metric cutoff in: " + text);
  }
  if (k < 1) throw DataError("metric cutoff must be >= 1: " + text);
  if (head == "hits") return MetricSpec{MetricKind::kHits, k, "hits@" + std::to_string(k)};
  if (head == "ndcg") return MetricSpec{MetricKind::kNdcg, k, "ndcg@" + std::to_string(k)};
  throw DataError("unknown metric (want hits or ndcg): " + text);
}

// ---- evaluation ----------------------------------------------------------------

struct QueryRecord {
  NodeId user = 0;
  NodeId item = 0;  // item index of the held-out positive
  double rank = 0;  // expected rank under random tie-breaking
  std::uint32_t ties = 0;
  double strict_rank = 0;
};

struct RankingReport {
  std::size_t query_count = 0;
  std::map<std::string, double> metrics;
  std::vector<QueryRecord> per_query;
};

enum class EvalPhase { kValid, kTest };

struct EvalOptions {
  std::vector<std::string> metrics = {"hits@10", "ndcg@20"};
  bool sampled_candidates = false;  // default: score the full catalog
  std::size_t sample_size = 100;
  std::uint64_t sample_seed = 0;
  bool keep_per_query = false;
  std::size_t query_chunk = 32;
  unsigned workers = 1;
};

/// Filtered-ranking evaluation over the held-out split.
///
/// Message passing always runs on the train-edge convolution graph. The
/// filter removes the query user's known positives from the candidate set:
/// train positives for the valid phase, train+valid for the test phase.
/// Users with no train arcs are still evaluated (their states are the
/// query-independent constant). Deterministic for fixed options, including
/// under worker parallelism: queries are independent and merged by index.
template <class Real>
RankingReport evaluate(const ModelConfig& cfg, BackboneParams<Real>& backbone,
                       ProjectionHead<Real>& head, const InteractionGraph& g,
                       const DatasetSplit& split, EvalPhase phase, const EvalOptions& options) {
  const std::vector<EdgeId>& eval_edges = phase == EvalPhase::kTest ? split.test : split.valid;
  if (eval_edges.empty()) throw DataError("evaluate: empty evaluation split");
  if (!g.has_adjacency()) throw std::logic_error("evaluate: graph adjacency not built");

  std::vector<MetricSpec> metrics;
  for (const std::string& m : options.metrics) metrics.push_back(parse_metric(m));

  // convolution view: train edges only
  std::vector<EdgeId> masked;
  masked.insert(masked.end(), split.valid.begin(), split.valid.end());
  masked.insert(masked.end(), split.test.begin(), split.test.end());
  GraphView view(g, masked);
  view.active();  // materialize once before sharing across workers

  // per-user filter sets: known positives that must not compete
  std::vector<std::vector<NodeId>> filter_items(g.num_users());
  auto add_filter = [&](const std::vector<EdgeId>& ids) {
    for (EdgeId e : ids) filter_items[g.edge(e).user].push_back(g.edge(e).item);
  };
  add_filter(split.train);
  if (phase == EvalPhase::kTest) add_filter(split.valid);

  const std::size_t num_items = g.num_items();
  const std::size_t n_queries = eval_edges.size();
  std::vector<RankParts> parts(n_queries);

  // chunked, optionally threaded scoring; results are per-query independent
  const std::size_t chunk = std::max<std::size_t>(1, options.query_chunk);
  const std::size_t n_chunks = (n_queries + chunk - 1) / chunk;

  auto run_chunk = [&](std::size_t c) {
    const std::size_t begin = c * chunk;
    const std::size_t end = std::min(begin + chunk, n_queries);

    // dedupe users within the chunk
    std::vector<NodeId> users;
    std::vector<std::uint32_t> slice(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
      const NodeId u = g.edge(eval_edges[i]).user;
      auto it = std::find(users.begin(), users.end(), u);
      if (it == users.end()) {
        slice[i - begin] = std::uint32_t(users.size());
        users.push_back(u);
      } else {
        slice[i - begin] = std::uint32_t(it - users.begin());
      }
    }

    // candidate lists per query
    std::vector<std::vector<NodeId>> cand_items(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
      const EdgeId e = eval_edges[i];
      const NodeId true_item = g.edge(e).item;
      std::vector<char> filtered(num_items, 0);
      for (NodeId it : filter_items[g.edge(e).user]) filtered[it] = 1;
      filtered[true_item] = 0;  // the held-out item always competes
      std::vector<NodeId>& cands = cand_items[i - begin];
      if (!options.sampled_candidates) {
        for (NodeId it = 0; it < num_items; ++it)
          if (!filtered[it]) cands.push_back(it);
      } else {
        cands.push_back(true_item);
        std::vector<NodeId> pool;
        for (NodeId it = 0; it < num_items; ++it)
          if (!filtered[it] && it != true_item) pool.push_back(it);
        Rng rng = make_rng(options.sample_seed, e);
        const std::size_t want = std::min(options.sample_size, pool.size());
        for (std::size_t s = 0; s < want; ++s) {
          std::uniform_int_distribution<std::size_t> pick(s, pool.size() - 1);
          std::swap(pool[s], pool[pick(rng)]);
          cands.push_back(pool[s]);
        }
      }
    }

    std::vector<ScoreRequest> requests;
    for (std::size_t i = begin; i < end; ++i)
      for (NodeId it : cand_items[i - begin])
        requests.push_back(ScoreRequest{slice[i - begin], g.item_node(it)});

    Tape<Real> tape;
    tape.set_grad_enabled(false);
    Var scores = nbf_score_on_tape(tape, cfg, backbone, head, view, users, requests);
    const Tensor<Real>& s = tape.value(scores);

    std::size_t cursor = 0;
    for (std::size_t i = begin; i < end; ++i) {
      const std::vector<NodeId>& cands = cand_items[i - begin];
      const NodeId true_item = g.edge(eval_edges[i]).item;
      std::vector<double> cand_scores(cands.size());
      std::size_t true_pos = 0;
      for (std::size_t j = 0; j < cands.size(); ++j) {
        cand_scores[j] = double(s[cursor + j]);
        if (cands[j] == true_item) true_pos = j;
      }
      cursor += cands.size();
      parts[i] = rank_parts(cand_scores, true_pos, [](std::size_t) { return false; });
    }
  };

  const unsigned workers = std::max(1u, options.workers);
  if (workers == 1 || n_chunks == 1) {
    for (std::size_t c = 0; c < n_chunks; ++c) run_chunk(c);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < std::min<std::size_t>(workers, n_chunks); ++w)
      pool.emplace_back([&] {
        for (std::size_t c = next.fetch_add(1); c < n_chunks; c = next.fetch_add(1)) run_chunk(c);
      });
    for (std::thread& t : pool) t.join();
  }

  RankingReport report;
  report.query_count = n_queries;
  for (const MetricSpec& m : metrics) {
    double sum = 0;
    for (const RankParts& p : parts)
      sum += m.kind == MetricKind::kHits ? expected_hits(p, m.k) : expected_ndcg(p, m.k);
    report.metrics[m.name] = sum / double(n_queries);
  }
  if (options.keep_per_query) {
    report.per_query.reserve(n_queries);
    for (std::size_t i = 0; i < n_queries; ++i) {
      const EdgeRecord& e = g.edge(eval_edges[i]);
      report.per_query.push_back(
          QueryRecord{e.user, e.item, parts[i].expected(), parts[i].ties, parts[i].strict});
    }
  }
  return report;
}

}  // namespace nbfrec
