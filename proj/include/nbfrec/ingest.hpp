#pragma once

#include <charconv>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "nbfrec/common.hpp"
#include "nbfrec/graph.hpp"

namespace nbfrec {

/// Column mapping for delimited interaction logs.
struct TableSchema {
  std::string user_col;
  std::string item_col;
  std::vector<std::string> feature_cols;
};

struct IngestResult {
  InteractionGraph graph;
  std::vector<std::string> user_names;  // dense index -> original id
  std::vector<std::string> item_names;
  std::size_t duplicates_dropped = 0;
};

namespace detail {

inline std::vector<std::string_view> split_line(std::string_view line, char delim) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find(delim, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

inline void strip_cr(std::string& s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
}

inline double parse_real(std::string_view s, std::size_t line_no) {
  double v = 0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last)
    throw ParseError("non-numeric feature cell '" + std::string(s) + "'", line_no);
  return v;
}

}  // namespace detail

/// Reads a delimited interaction log (comma or tab, header row required)
/// and densely re-indexes user and item ids in first-appearance order.
/// Duplicate (user,item) rows beyond the first are dropped and counted.
inline IngestResult ingest_interactions(std::istream& in, const TableSchema& schema) {
  std::string header;
  if (!std::getline(in, header)) throw DataError("empty input: no header row");
  detail::strip_cr(header);
  const char delim = header.find('\t') != std::string::npos ? '\t' : ',';

  const auto cols = detail::split_line(header, delim);
  auto col_index = [&](const std::string& name) -> std::size_t {
    for (std::size_t i = 0; i < cols.size(); ++i)
      if (cols[i] == name) return i;
    throw DataError("column '" + name + "' not found in header");
  };
  const std::size_t user_idx = col_index(schema.user_col);
  const std::size_t item_idx = col_index(schema.item_col);
  std::vector<std::size_t> feature_idx;
  for (const std::string& f : schema.feature_cols) feature_idx.push_back(col_index(f));

  std::unordered_map<std::string, NodeId> user_ids, item_ids;
  std::vector<std::string> user_names, item_names;
  std::vector<EdgeRecord> edges;
  std::unordered_set<std::uint64_t> seen;
  std::size_t duplicates = 0;

  std::string line;
  std::size_t line_no = 1;
  std::size_t data_rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    detail::strip_cr(line);
    if (line.empty()) continue;
    ++data_rows;
    const auto cells = detail::split_line(line, delim);
    if (cells.size() != cols.size())
      throw ParseError("expected " + std::to_string(cols.size()) + " columns, got " +
                           std::to_string(cells.size()),
                       line_no);

    auto intern = [&](std::unordered_map<std::string, NodeId>& ids,
                      std::vector<std::string>& names, std::string_view key) {
      auto [it, inserted] = ids.emplace(std::string(key), NodeId(names.size()));
      if (inserted) names.emplace_back(key);
      return it->second;
    };
    const NodeId user = intern(user_ids, user_names, cells[user_idx]);
    const NodeId item = intern(item_ids, item_names, cells[item_idx]);

    if (!seen.insert(InteractionGraph::pair_key(user, item)).second) {
      ++duplicates;
      continue;
    }
    EdgeRecord rec;
    rec.user = user;
    rec.item = item;
    rec.features.reserve(feature_idx.size());
    for (std::size_t fi : feature_idx) rec.features.push_back(detail::parse_real(cells[fi], line_no));
    edges.push_back(std::move(rec));
  }
  if (data_rows == 0) throw DataError("empty input: no data rows");

  InteractionGraph graph(user_names.size(), item_names.size(), schema.feature_cols.size(),
                         std::move(edges));
  return IngestResult{std::move(graph), std::move(user_names), std::move(item_names), duplicates};
}

/// Writes the graph back out in the ingestible delimited format.
inline void write_interactions(std::ostream& out, const InteractionGraph& g,
                               const std::vector<std::string>& user_names,
                               const std::vector<std::string>& item_names,
                               const TableSchema& schema) {
  out << schema.user_col << ',' << schema.item_col;
  for (const std::string& f : schema.feature_cols) out << ',' << f;
  out << '\n';
  out.precision(17);
  for (const EdgeRecord& e : g.edges()) {
    out << user_names[e.user] << ',' << item_names[e.item];
    for (double v : e.features) out << ',' << v;
    out << '\n';
  }
}

// ---- binary graph cache ----------------------------------------------------

namespace detail {

inline void write_bytes(std::ostream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), std::streamsize(n));
}

inline void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = (v >> (8 * i)) & 0xFF;
  write_bytes(out, b, 4);
}

inline void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = (v >> (8 * i)) & 0xFF;
  write_bytes(out, b, 8);
}

inline void write_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  write_u64(out, bits);
}

inline void read_bytes(std::istream& in, void* p, std::size_t n, const char* what) {
  in.read(static_cast<char*>(p), std::streamsize(n));
  if (std::size_t(in.gcount()) != n) throw DataError(std::string("truncated file while reading ") + what);
}

inline std::uint32_t read_u32(std::istream& in, const char* what) {
  unsigned char b[4];
  read_bytes(in, b, 4, what);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(b[i]) << (8 * i);
  return v;
}

inline std::uint64_t read_u64(std::istream& in, const char* what) {
  unsigned char b[8];
  read_bytes(in, b, 8, what);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
  return v;
}

inline double read_f64(std::istream& in, const char* what) {
  std::uint64_t bits = read_u64(in, what);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace detail

inline constexpr char kGraphCacheMagic[4] = {'N', 'B', 'F', 'G'};
inline constexpr std::uint32_t kGraphCacheVersion = 1;

/// Binary cache: magic "NBFG", format version, counts, then per-edge
/// records (user, item, features) in little-endian layout.
inline void save_graph_cache(std::ostream& out, const InteractionGraph& g,
                             const std::vector<std::string>& user_names = {},
                             const std::vector<std::string>& item_names = {}) {
  detail::write_bytes(out, kGraphCacheMagic, 4);
  detail::write_u32(out, kGraphCacheVersion);
  detail::write_u64(out, g.num_users());
  detail::write_u64(out, g.num_items());
  detail::write_u64(out, g.d_raw());
  detail::write_u64(out, g.num_edges());
  for (const EdgeRecord& e : g.edges()) {
    detail::write_u32(out, e.user);
    detail::write_u32(out, e.item);
    for (double v : e.features) detail::write_f64(out, v);
  }
  auto write_names = [&](const std::vector<std::string>& names) {
    detail::write_u64(out, names.size());
    for (const std::string& n : names) {
      detail::write_u64(out, n.size());
      detail::write_bytes(out, n.data(), n.size());
    }
  };
  write_names(user_names);
  write_names(item_names);
}

struct GraphCache {
  InteractionGraph graph;
  std::vector<std::string> user_names;
  std::vector<std::string> item_names;
};

inline GraphCache load_graph_cache(std::istream& in) {
  char magic[4];
  detail::read_bytes(in, magic, 4, "magic");
  if (std::memcmp(magic, kGraphCacheMagic, 4) != 0)
    throw DataError("not a graph cache file (bad magic)");
  const std::uint32_t version = detail::read_u32(in, "version");
  if (version != kGraphCacheVersion)
    throw DataError("graph cache version mismatch: file has " + std::to_string(version) +
                    ", reader expects " + std::to_string(kGraphCacheVersion));
  const std::uint64_t num_users = detail::read_u64(in, "num_users");
  const std::uint64_t num_items = detail::read_u64(in, "num_items");
  const std::uint64_t d_raw = detail::read_u64(in, "d_raw");
  const std::uint64_t num_edges = detail::read_u64(in, "num_edges");
  std::vector<EdgeRecord> edges;
  edges.reserve(num_edges);
  for (std::uint64_t i = 0; i < num_edges; ++i) {
    EdgeRecord e;
    e.user = detail::read_u32(in, "edge user");
    e.item = detail::read_u32(in, "edge item");
    e.features.resize(d_raw);
    for (std::uint64_t j = 0; j < d_raw; ++j) e.features[j] = detail::read_f64(in, "edge feature");
    edges.push_back(std::move(e));
  }
  auto read_names = [&](const char* what) {
    std::vector<std::string> names;
    const std::uint64_t n = detail::read_u64(in, what);
    names.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) {
      const std::uint64_t len = detail::read_u64(in, what);
      std::string s(len, '\0');
      detail::read_bytes(in, s.data(), len, what);
      names.push_back(std::move(s));
    }
    return names;
  };
  std::vector<std::string> user_names = read_names("user names");
  std::vector<std::string> item_names = read_names("item names");
  return GraphCache{InteractionGraph(num_users, num_items, d_raw, std::move(edges)),
                    std::move(user_names), std::move(item_names)};
}

}  // namespace nbfrec
