#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "nbfrec/common.hpp"
#include "nbfrec/graph.hpp"

namespace nbfrec {

/// Cluster-planted bipartite graph family with informative edge features.
struct SynthSpec {
  std::size_t num_users = 100;
  std::size_t num_items = 100;
  std::size_t num_clusters = 4;
  double p_intra = 0.1;   // edge probability within a cluster
  double p_inter = 0.01;  // edge probability across clusters
  std::size_t feature_dim = 8;
  double feature_signal = 0.8;  // cluster-code weight vs unit-variance noise
  std::uint64_t seed = 0;

  void validate() const {
    if (!(p_inter >= 0 && p_inter <= p_intra && p_intra <= 1.0))
      throw DataError("SynthSpec: need 0 <= p_inter <= p_intra <= 1");
    if (feature_signal < 0 || feature_signal > 1)
      throw DataError("SynthSpec: feature_signal must be in [0,1]");
    if (num_clusters == 0) throw DataError("SynthSpec: num_clusters must be positive");
    if (feature_dim == 0) throw DataError("SynthSpec: feature_dim must be positive");
  }

  double expected_edges() const {
    // round-robin cluster assignment: count same-cluster pairs exactly
    double intra = 0;
    for (std::size_t c = 0; c < num_clusters; ++c) {
      const double nu = double(num_users / num_clusters + (c < num_users % num_clusters ? 1 : 0));
      const double ni = double(num_items / num_clusters + (c < num_items % num_clusters ? 1 : 0));
      intra += nu * ni;
    }
    const double total = double(num_users) * double(num_items);
    return intra * p_intra + (total - intra) * p_inter;
  }
};

struct SynthResult {
  InteractionGraph graph;  // adjacency not yet built
  std::vector<int> user_cluster;
  std::vector<int> item_cluster;
};

namespace detail {

/// Unit-norm cluster code: the (c mod dim)-th standard basis vector.
/// Distinct when num_clusters <= feature_dim.
inline std::vector<double> cluster_code(std::size_t c, std::size_t dim) {
  std::vector<double> v(dim, 0.0);
  v[c % dim] = 1.0;
  return v;
}

}  // namespace detail

/// Draws one graph from the family: round-robin cluster assignment, block
/// edge probabilities, features = signal * block code + (1-signal) * noise.
/// Deterministic given spec.seed.
inline SynthResult generate(const SynthSpec& spec) {
  spec.validate();
  if (spec.expected_edges() < 10.0)
    throw DataError("SynthSpec: expected edge count below 10, instance untrainable");

  std::vector<int> user_cluster(spec.num_users), item_cluster(spec.num_items);
  for (std::size_t u = 0; u < spec.num_users; ++u) user_cluster[u] = int(u % spec.num_clusters);
  for (std::size_t i = 0; i < spec.num_items; ++i) item_cluster[i] = int(i % spec.num_clusters);

  Rng rng = make_rng(spec.seed);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);

  std::vector<EdgeRecord> edges;
  for (std::size_t u = 0; u < spec.num_users; ++u) {
    for (std::size_t i = 0; i < spec.num_items; ++i) {
      const bool same = user_cluster[u] == item_cluster[i];
      const double p = same ? spec.p_intra : spec.p_inter;
      if (coin(rng) >= p) continue;
      // unit-norm code of the (user cluster, item cluster) block
      std::vector<double> code = detail::cluster_code(std::size_t(user_cluster[u]), spec.feature_dim);
      if (!same) {
        std::vector<double> ci = detail::cluster_code(std::size_t(item_cluster[i]), spec.feature_dim);
        const double inv = 1.0 / std::sqrt(2.0);
        for (std::size_t k = 0; k < spec.feature_dim; ++k) code[k] = (code[k] + ci[k]) * inv;
      }
      EdgeRecord rec;
      rec.user = NodeId(u);
      rec.item = NodeId(i);
      rec.features.resize(spec.feature_dim);
      for (std::size_t k = 0; k < spec.feature_dim; ++k)
        rec.features[k] = spec.feature_signal * code[k] + (1.0 - spec.feature_signal) * noise(rng);
      edges.push_back(std::move(rec));
    }
  }

  InteractionGraph graph(spec.num_users, spec.num_items, spec.feature_dim, std::move(edges));
  return SynthResult{std::move(graph), std::move(user_cluster), std::move(item_cluster)};
}

/// Two independent draws from the same family over unrelated node-id
/// universes. Identical draws (possible only for tiny instances) reroll.
inline std::pair<SynthResult, SynthResult> family_pair(const SynthSpec& spec, std::uint64_t seed_a,
                                                       std::uint64_t seed_b) {
  SynthSpec sa = spec;
  sa.seed = seed_a;
  SynthResult a = generate(sa);
  SynthSpec sb = spec;
  sb.seed = seed_b;
  for (int attempt = 0; attempt < 64; ++attempt) {
    SynthResult b = generate(sb);
    if (!(a.graph.edges() == b.graph.edges())) return {std::move(a), std::move(b)};
    sb.seed = mix_seed(sb.seed, 0xB0B);  // collision: reroll
  }
  throw NumericError("family_pair: could not draw a distinct second instance");
}

}  // namespace nbfrec
