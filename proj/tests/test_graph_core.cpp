#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <sstream>

#include "nbfrec/graph.hpp"
#include "nbfrec/ingest.hpp"
#include "nbfrec/synth.hpp"

using namespace nbfrec;

namespace {

const TableSchema kOneFeature{"user", "item", {"rating"}};

IngestResult ingest_string(const std::string& text, const TableSchema& schema = kOneFeature) {
  std::istringstream in(text);
  return ingest_interactions(in, schema);
}

// Degree recount straight from the edge list, ignoring the CSR.
std::map<NodeId, std::size_t> brute_force_degrees(const InteractionGraph& g,
                                                  const std::vector<EdgeId>& masked) {
  std::map<NodeId, std::size_t> deg;
  for (NodeId v = 0; v < g.num_nodes(); ++v) deg[v] = 0;
  for (EdgeId e = 0; e < g.num_edges(); ++e) {
    if (std::find(masked.begin(), masked.end(), e) != masked.end()) continue;
    deg[g.edge(e).user] += 1;                  // one in-arc from the item side
    deg[g.item_node(g.edge(e).item)] += 1;     // one in-arc from the user side
  }
  return deg;
}

}  // namespace

TEST_CASE("ingest densely re-indexes users and items in first-appearance order") {
  auto res = ingest_string("user,item,rating\na,x,5\na,y,3\nb,x,4\n");
  CHECK(res.graph.num_users() == 2);
  CHECK(res.graph.num_items() == 2);
  CHECK(res.graph.num_edges() == 3);
  CHECK(res.graph.d_raw() == 1);
  CHECK(res.duplicates_dropped == 0);
  CHECK(res.user_names == std::vector<std::string>{"a", "b"});
  CHECK(res.item_names == std::vector<std::string>{"x", "y"});
  CHECK(res.graph.edge(0).features[0] == 5.0);
}

TEST_CASE("ingest drops duplicate (user,item) rows and reports the count") {
  auto res = ingest_string("user,item,rating\na,x,5\na,y,3\nb,x,4\na,x,5\n");
  CHECK(res.graph.num_edges() == 3);
  CHECK(res.duplicates_dropped == 1);
}

TEST_CASE("ingest with zero feature columns yields d_raw 0") {
  auto res = ingest_string("user,item,rating\na,x,5\nb,y,1\n", TableSchema{"user", "item", {}});
  CHECK(res.graph.d_raw() == 0);
  for (const EdgeRecord& e : res.graph.edges()) CHECK(e.features.empty());
}

TEST_CASE("ingest reports malformed rows with their line number") {
  try {
    ingest_string("user,item,rating\na,x,5\na,y\n");
    FAIL("expected ParseError");
  } catch (const ParseError& err) {
    CHECK(err.line() == 3);
  }
}

TEST_CASE("ingest rejects empty input and non-numeric features") {
  CHECK_THROWS_AS(ingest_string(""), DataError);
  CHECK_THROWS_AS(ingest_string("user,item,rating\n"), DataError);
  CHECK_THROWS_AS(ingest_string("user,item,rating\na,x,abc\n"), ParseError);
  CHECK_THROWS_AS(ingest_string("user,item,rating\na,x,5\n", TableSchema{"user", "missing", {}}),
                  DataError);
}

TEST_CASE("ingest accepts tab-delimited input") {
  auto res = ingest_string("user\titem\trating\na\tx\t5\n");
  CHECK(res.graph.num_edges() == 1);
}

TEST_CASE("with_inverse_arcs yields two flagged arcs per edge") {
  auto g0 = ingest_string("user,item,rating\na,x,5\n").graph;
  InteractionGraph g = with_inverse_arcs(g0);
  REQUIRE(g.arc_count() == 2);
  // one arc per direction with flags +1 / -1
  std::vector<double> flags = {g.arc_dir(0), g.arc_dir(1)};
  std::sort(flags.begin(), flags.end());
  CHECK(flags == std::vector<double>{-1.0, 1.0});
}

TEST_CASE("with_inverse_arcs on three edges yields six arcs") {
  auto g0 = ingest_string("user,item,rating\na,x,5\na,y,3\nb,x,4\n").graph;
  CHECK(with_inverse_arcs(g0).arc_count() == 6);
}

TEST_CASE("arc features append the direction flag to the edge features") {
  auto g0 = ingest_string("user,item,rating\na,x,5\na,y,3\nb,x,4\n").graph;
  InteractionGraph g = with_inverse_arcs(g0);
  for (std::size_t a = 0; a < g.arc_count(); ++a) {
    const std::vector<double> f = g.arc_features(a);
    const EdgeRecord& e = g.edge(g.arc_edge(a));
    REQUIRE(f.size() == e.features.size() + 1);
    for (std::size_t k = 0; k < e.features.size(); ++k) CHECK(f[k] == e.features[k]);
    CHECK((f.back() == 1.0 || f.back() == -1.0));
  }
}

TEST_CASE("adjacency groups arcs by target node") {
  SynthSpec spec;
  spec.num_users = 12;
  spec.num_items = 9;
  spec.p_intra = 0.5;
  spec.p_inter = 0.1;
  spec.seed = 5;
  InteractionGraph g = with_inverse_arcs(generate(spec).graph);
  std::size_t total = 0;
  for (NodeId v = 0; v < g.num_nodes(); ++v) {
    auto [first, last] = g.arcs_of(v);
    total += last - first;
    for (std::size_t a = first; a < last; ++a) {
      CHECK(g.arc_dst(a) == v);
      // each arc resolves to its source edge record
      const EdgeRecord& e = g.edge(g.arc_edge(a));
      const NodeId expect_src = (g.arc_dir(a) > 0) ? e.user : g.item_node(e.item);
      CHECK(g.arc_src(a) == expect_src);
    }
  }
  CHECK(total == 2 * g.num_edges());
}

TEST_CASE("mask_edges with empty mask matches the graph") {
  auto g0 = ingest_string("user,item,rating\na,x,5\na,y,3\nb,x,4\n").graph;
  InteractionGraph g = with_inverse_arcs(g0);
  GraphView view = mask_edges(g, {});
  CHECK(view.active().size() == g.arc_count());
}

TEST_CASE("mask_edges over all edges leaves every node isolated") {
  auto g0 = ingest_string("user,item,rating\na,x,5\na,y,3\nb,x,4\n").graph;
  InteractionGraph g = with_inverse_arcs(g0);
  GraphView view = mask_edges(g, {0, 1, 2});
  CHECK(view.active().size() == 0);
  for (NodeId v = 0; v < g.num_nodes(); ++v) CHECK(view.active_in_degree(v) == 0);
}

TEST_CASE("masking one edge drops one in-arc on each endpoint") {
  auto g0 = ingest_string("user,item,rating\na,x,5\na,y,3\nb,x,4\n").graph;
  InteractionGraph g = with_inverse_arcs(g0);
  GraphView view = mask_edges(g, {1});
  auto expected = brute_force_degrees(g, {1});
  for (NodeId v = 0; v < g.num_nodes(); ++v) CHECK(view.active_in_degree(v) == expected[v]);
  auto full = brute_force_degrees(g, {});
  const EdgeRecord& e = g.edge(1);
  CHECK(view.active_in_degree(e.user) == full[e.user] - 1);
  CHECK(view.active_in_degree(g.item_node(e.item)) == full[g.item_node(e.item)] - 1);
}

TEST_CASE("mask_edges rejects unknown edge ids") {
  auto g0 = ingest_string("user,item,rating\na,x,5\n").graph;
  InteractionGraph g = with_inverse_arcs(g0);
  CHECK_THROWS_AS(mask_edges(g, {7}), DataError);
}

TEST_CASE("masked and active arcs reconstruct the original adjacency") {
  SynthSpec spec;
  spec.num_users = 10;
  spec.num_items = 10;
  spec.p_intra = 0.6;
  spec.p_inter = 0.2;
  spec.seed = 9;
  InteractionGraph g = with_inverse_arcs(generate(spec).graph);
  GraphView view = mask_edges(g, {0, 2, 5});
  std::vector<std::uint32_t> all = view.masked_arc_positions();
  const auto& act = view.active().arc_pos;
  all.insert(all.end(), act.begin(), act.end());
  std::sort(all.begin(), all.end());
  REQUIRE(all.size() == g.arc_count());
  for (std::size_t a = 0; a < all.size(); ++a) CHECK(all[a] == a);
}

TEST_CASE("layered views add batch masks on top of a shared base mask") {
  SynthSpec spec;
  spec.num_users = 8;
  spec.num_items = 8;
  spec.p_intra = 0.7;
  spec.p_inter = 0.3;
  spec.seed = 2;
  InteractionGraph g = with_inverse_arcs(generate(spec).graph);
  auto base = std::make_shared<const std::unordered_set<EdgeId>>(std::unordered_set<EdgeId>{0, 1});
  GraphView view(g, base, {2});
  CHECK(view.edge_masked(0));
  CHECK(view.edge_masked(1));
  CHECK(view.edge_masked(2));
  CHECK_FALSE(view.edge_masked(3));
  CHECK(view.masked_count() == 3);
}

TEST_CASE("split_edges follows the 8/1/1 rounding on ten edges") {
  SynthSpec spec;
  spec.num_users = 5;
  spec.num_items = 4;
  spec.p_intra = 1.0;
  spec.p_inter = 0.4;
  spec.seed = 3;
  InteractionGraph g = generate(spec).graph;
  // build an exact 10-edge graph instead: take the first 10 edges
  std::vector<EdgeRecord> edges(g.edges().begin(), g.edges().begin() + 10);
  InteractionGraph g10(g.num_users(), g.num_items(), g.d_raw(), std::move(edges));
  DatasetSplit split = split_edges(g10, {0.8, 0.1, 0.1}, 7);
  CHECK(split.train.size() == 8);
  CHECK(split.valid.size() == 1);
  CHECK(split.test.size() == 1);
}

TEST_CASE("split_edges is deterministic given the seed") {
  SynthSpec spec;
  spec.num_users = 9;
  spec.num_items = 9;
  spec.p_intra = 0.8;
  spec.p_inter = 0.2;
  spec.seed = 1;
  InteractionGraph g = generate(spec).graph;
  DatasetSplit a = split_edges(g, {0.8, 0.1, 0.1}, 42);
  DatasetSplit b = split_edges(g, {0.8, 0.1, 0.1}, 42);
  CHECK(a.train == b.train);
  CHECK(a.valid == b.valid);
  CHECK(a.test == b.test);
  DatasetSplit c = split_edges(g, {0.8, 0.1, 0.1}, 43);
  CHECK(a.train != c.train);
}

TEST_CASE("split_edges with ratios (1,0,0) puts every edge in train") {
  auto g = ingest_string("user,item,rating\na,x,1\na,y,2\nb,x,3\nb,y,4\n").graph;
  DatasetSplit split = split_edges(g, {1.0, 0.0, 0.0}, 0);
  CHECK(split.train.size() == g.num_edges());
  CHECK(split.valid.empty());
  CHECK(split.test.empty());
}

TEST_CASE("split_edges covers all edges disjointly") {
  SynthSpec spec;
  spec.num_users = 15;
  spec.num_items = 15;
  spec.p_intra = 0.5;
  spec.p_inter = 0.1;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    spec.seed = seed;
    InteractionGraph g = generate(spec).graph;
    DatasetSplit s = split_edges(g, {0.6, 0.2, 0.2}, seed);
    std::vector<EdgeId> all;
    all.insert(all.end(), s.train.begin(), s.train.end());
    all.insert(all.end(), s.valid.begin(), s.valid.end());
    all.insert(all.end(), s.test.begin(), s.test.end());
    std::sort(all.begin(), all.end());
    REQUIRE(all.size() == g.num_edges());
    for (EdgeId e = 0; e < g.num_edges(); ++e) CHECK(all[e] == e);
  }
}

TEST_CASE("split_edges flags a starved nonzero-ratio split") {
  auto g = ingest_string("user,item,rating\na,x,1\na,y,2\nb,x,3\nb,y,4\nc,x,5\n").graph;
  CHECK_THROWS_AS(split_edges(g, {0.98, 0.01, 0.01}, 1), DataError);
}

TEST_CASE("text round-trip reproduces the ingested graph") {
  auto res = ingest_string("user,item,rating\na,x,5\na,y,3\nb,x,4\nc,y,-2.5\n");
  std::ostringstream out;
  write_interactions(out, res.graph, res.user_names, res.item_names, kOneFeature);
  auto res2 = ingest_string(out.str());
  CHECK(res2.graph.num_users() == res.graph.num_users());
  CHECK(res2.graph.num_items() == res.graph.num_items());
  CHECK(res2.graph.edges() == res.graph.edges());
  CHECK(res2.user_names == res.user_names);
  CHECK(res2.item_names == res.item_names);
}

TEST_CASE("binary graph cache round-trips exactly") {
  SynthSpec spec;
  spec.num_users = 7;
  spec.num_items = 11;
  spec.p_intra = 0.5;
  spec.p_inter = 0.2;
  spec.feature_dim = 3;
  spec.seed = 77;
  InteractionGraph g = generate(spec).graph;
  std::stringstream buf;
  save_graph_cache(buf, g, {"u0"}, {"i0", "i1"});
  GraphCache back = load_graph_cache(buf);
  CHECK(back.graph.num_users() == g.num_users());
  CHECK(back.graph.num_items() == g.num_items());
  CHECK(back.graph.d_raw() == g.d_raw());
  CHECK(back.graph.edges() == g.edges());
  CHECK(back.user_names == std::vector<std::string>{"u0"});
  CHECK(back.item_names == std::vector<std::string>{"i0", "i1"});
}

TEST_CASE("graph cache rejects bad magic, truncation, and version skew") {
  SynthSpec spec;
  spec.num_users = 5;
  spec.num_items = 5;
  spec.p_intra = 0.9;
  spec.p_inter = 0.5;
  spec.seed = 8;
  InteractionGraph g = generate(spec).graph;
  std::stringstream buf;
  save_graph_cache(buf, g);
  std::string bytes = buf.str();

  {
    std::string tampered = bytes;
    tampered[0] = 'X';
    std::istringstream in(tampered);
    CHECK_THROWS_WITH(load_graph_cache(in), Catch::Matchers::ContainsSubstring("magic"));
  }
  {
    std::istringstream in(bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_WITH(load_graph_cache(in), Catch::Matchers::ContainsSubstring("truncated"));
  }
  {
    std::string tampered = bytes;
    tampered[4] = 9;  // version byte
    std::istringstream in(tampered);
    CHECK_THROWS_WITH(load_graph_cache(in), Catch::Matchers::ContainsSubstring("version"));
  }
}

TEST_CASE("graph constructor enforces the type invariants") {
  std::vector<EdgeRecord> bad_user = {{5, 0, {1.0}}};
  CHECK_THROWS_AS(InteractionGraph(2, 2, 1, bad_user), DataError);
  std::vector<EdgeRecord> bad_feat = {{0, 0, {1.0, 2.0}}};
  CHECK_THROWS_AS(InteractionGraph(2, 2, 1, bad_feat), DataError);
  std::vector<EdgeRecord> dup = {{0, 0, {1.0}}, {0, 0, {2.0}}};
  CHECK_THROWS_AS(InteractionGraph(2, 2, 1, dup), DataError);
}

// ---- synthetic generator ----------------------------------------------------

TEST_CASE("generate hits the analytic edge-count expectation") {
  SynthSpec spec;
  spec.num_users = 10;
  spec.num_items = 10;
  spec.num_clusters = 2;
  spec.p_intra = 0.5;
  spec.p_inter = 0.0;
  spec.seed = 123;
  CHECK(spec.expected_edges() == 25.0);
  // Binomial(50, 0.5): sigma = sqrt(12.5) ~ 3.54; 3 sigma ~ 10.6
  SynthResult res = generate(spec);
  CHECK(std::abs(double(res.graph.num_edges()) - 25.0) <= 10.6);
  for (const EdgeRecord& e : res.graph.edges())
    CHECK(res.user_cluster[e.user] == res.item_cluster[e.item]);
}

TEST_CASE("generate is deterministic by seed") {
  SynthSpec spec;
  spec.seed = 31;
  SynthResult a = generate(spec);
  SynthResult b = generate(spec);
  CHECK(a.graph.edges() == b.graph.edges());
  spec.seed = 32;
  SynthResult c = generate(spec);
  CHECK(a.graph.edges() != c.graph.edges());
}

TEST_CASE("equal block probabilities spread edges uniformly across blocks") {
  SynthSpec spec;
  spec.num_users = 60;
  spec.num_items = 60;
  spec.num_clusters = 2;
  spec.p_intra = 0.3;
  spec.p_inter = 0.3;
  spec.seed = 4;
  SynthResult res = generate(spec);
  std::size_t intra = 0;
  for (const EdgeRecord& e : res.graph.edges())
    if (res.user_cluster[e.user] == res.item_cluster[e.item]) ++intra;
  const double frac = double(intra) / double(res.graph.num_edges());
  CHECK(frac > 0.40);  // intra pairs are half of all pairs
  CHECK(frac < 0.60);
}

TEST_CASE("generate rejects untrainable specs") {
  SynthSpec spec;
  spec.num_users = 3;
  spec.num_items = 3;
  spec.p_intra = 0.05;
  spec.p_inter = 0.0;
  CHECK_THROWS_AS(generate(spec), DataError);
}

TEST_CASE("pure-signal features decode the cluster block exactly") {
  SynthSpec spec;
  spec.num_users = 20;
  spec.num_items = 20;
  spec.num_clusters = 4;
  spec.feature_dim = 4;
  spec.p_intra = 0.5;
  spec.p_inter = 0.1;
  spec.feature_signal = 1.0;
  spec.seed = 6;
  SynthResult res = generate(spec);
  for (const EdgeRecord& e : res.graph.edges()) {
    // recover the set of active code dimensions
    std::vector<int> active;
    for (std::size_t k = 0; k < spec.feature_dim; ++k)
      if (std::abs(e.features[k]) > 1e-12) active.push_back(int(k));
    const int cu = res.user_cluster[e.user], ci = res.item_cluster[e.item];
    if (cu == ci) {
      REQUIRE(active.size() == 1);
      CHECK(active[0] == cu);
    } else {
      REQUIRE(active.size() == 2);
      CHECK(((active[0] == cu && active[1] == ci) || (active[0] == ci && active[1] == cu)));
    }
  }
}

TEST_CASE("family_pair draws distinct instances with matching density") {
  SynthSpec spec;
  spec.num_users = 40;
  spec.num_items = 40;
  spec.p_intra = 0.3;
  spec.p_inter = 0.05;
  auto [a, b] = family_pair(spec, 100, 200);
  CHECK(a.graph.edges() != b.graph.edges());
  // marginal densities agree within 3 sigma of the shared binomial
  const double expect = spec.expected_edges();
  const double sigma = std::sqrt(expect);  // loose upper bound on binomial sd
  CHECK(std::abs(double(a.graph.num_edges()) - expect) <= 3 * sigma);
  CHECK(std::abs(double(b.graph.num_edges()) - expect) <= 3 * sigma);
}
