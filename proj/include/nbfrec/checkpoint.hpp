#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "nbfrec/common.hpp"
#include "nbfrec/ingest.hpp"  // little-endian byte helpers
#include "nbfrec/model.hpp"

namespace nbfrec {

inline constexpr char kCheckpointMagic[4] = {'N', 'B', 'F', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Optimizer moments for resumable training.
template <class Real>
struct OptimState {
  std::int64_t t = 0;
  std::map<std::string, std::pair<Tensor<Real>, Tensor<Real>>> moments;  // name -> (m, v)
};

/// Model state on disk: one backbone, any number of dataset heads (each
/// carrying its standardization statistics), optional optimizer moments,
/// and free-form metadata. The backbone is loadable on its own.
template <class Real>
struct Checkpoint {
  ModelConfig config;
  ParamStore<Real> backbone;
  std::map<std::string, ProjectionHead<Real>> heads;
  std::optional<OptimState<Real>> optim;
  std::map<std::string, std::string> meta;
};

enum class LoadMode { kFull, kBackboneOnly };

namespace detail {

template <class Real>
constexpr std::uint8_t dtype_tag() {
  static_assert(sizeof(Real) == 4 || sizeof(Real) == 8, "unsupported scalar");
  return sizeof(Real) == 4 ? 1 : 2;
}

inline void write_string(std::ostream& out, const std::string& s) {
  write_u64(out, s.size());
  write_bytes(out, s.data(), s.size());
}

inline std::string read_string(std::istream& in, const char* what) {
  const std::uint64_t len = read_u64(in, what);
  if (len > (1ull << 32)) throw DataError("checkpoint: implausible string length");
  std::string s(len, '\0');
  read_bytes(in, s.data(), len, what);
  return s;
}

template <class Real>
void write_tensor_record(std::ostream& out, const std::string& name, const Tensor<Real>& t) {
  write_string(out, name);
  out.put(char(dtype_tag<Real>()));
  write_u32(out, std::uint32_t(t.shape().size()));
  for (std::size_t d : t.shape()) write_u64(out, d);
  for (std::size_t i = 0; i < t.size(); ++i) {
    if constexpr (sizeof(Real) == 8) {
      write_f64(out, double(t[i]));
    } else {
      float f = float(t[i]);
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      write_u32(out, bits);
    }
  }
}

template <class Real>
std::pair<std::string, Tensor<Real>> read_tensor_record(std::istream& in) {
  std::string name = read_string(in, "tensor name");
  int tag = in.get();
  if (tag == EOF) throw DataError("truncated file while reading tensor dtype");
  if (std::uint8_t(tag) != dtype_tag<Real>())
    throw DataError("checkpoint tensor '" + name + "' dtype tag " + std::to_string(tag) +
                    " does not match the model scalar type");
  const std::uint32_t rank = read_u32(in, "tensor rank");
  if (rank > 8) throw DataError("checkpoint: implausible tensor rank");
  std::vector<std::size_t> shape(rank);
  for (std::uint32_t i = 0; i < rank; ++i) shape[i] = read_u64(in, "tensor dim");
  Tensor<Real> t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) {
    if constexpr (sizeof(Real) == 8) {
      t[i] = Real(read_f64(in, "tensor payload"));
    } else {
      std::uint32_t bits = read_u32(in, "tensor payload");
      float f;
      std::memcpy(&f, &bits, 4);
      t[i] = Real(f);
    }
  }
  return {std::move(name), std::move(t)};
}

/// Sections are [label][payload byte length][payload]; payload starts with
/// the record count.
inline void write_section(std::ostream& out, const std::string& label, const std::string& payload) {
  write_string(out, label);
  write_u64(out, payload.size());
  write_bytes(out, payload.data(), payload.size());
}

template <class Real>
std::string tensor_section_payload(const ParamStore<Real>& store) {
  std::ostringstream buf(std::ios::binary);
  write_u32(buf, std::uint32_t(store.size()));
  for (const auto& [name, entry] : store) write_tensor_record(buf, name, entry.value);
  return buf.str();
}

inline std::vector<std::size_t> parse_size_list(const std::string& text) {
  std::vector<std::size_t> out;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t comma = text.find(',', start);
    if (comma == std::string::npos) comma = text.size();
    out.push_back(std::size_t(std::stoull(text.substr(start, comma - start))));
    start = comma + 1;
  }
  return out;
}

inline std::string format_size_list(const std::vector<std::size_t>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(xs[i]);
  }
  return out;
}

}  // namespace detail

inline std::map<std::string, std::string> config_to_meta(const ModelConfig& cfg) {
  return {
      {"config.d", std::to_string(cfg.d)},
      {"config.d_proj", std::to_string(cfg.d_proj)},
      {"config.T", std::to_string(cfg.T)},
      {"config.proj_hidden", detail::format_size_list(cfg.proj_hidden)},
      {"config.emb_hidden", detail::format_size_list(cfg.emb_hidden)},
      {"config.msg_hidden", detail::format_size_list(cfg.msg_hidden)},
      {"config.score_hidden", detail::format_size_list(cfg.score_hidden)},
      {"config.structural_only", cfg.structural_only ? "1" : "0"},
      {"config.ln_eps", std::to_string(cfg.ln_eps)},
  };
}

inline ModelConfig config_from_meta(const std::map<std::string, std::string>& meta) {
  ModelConfig cfg;
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = meta.find(key);
    if (it == meta.end()) throw DataError("checkpoint meta missing " + key);
    return it->second;
  };
  cfg.d = std::size_t(std::stoull(get("config.d")));
  cfg.d_proj = std::size_t(std::stoull(get("config.d_proj")));
  cfg.T = std::size_t(std::stoull(get("config.T")));
  cfg.proj_hidden = detail::parse_size_list(get("config.proj_hidden"));
  cfg.emb_hidden = detail::parse_size_list(get("config.emb_hidden"));
  cfg.msg_hidden = detail::parse_size_list(get("config.msg_hidden"));
  cfg.score_hidden = detail::parse_size_list(get("config.score_hidden"));
  cfg.structural_only = get("config.structural_only") == "1";
  cfg.ln_eps = std::stod(get("config.ln_eps"));
  return cfg;
}

template <class Real>
void save_checkpoint(std::ostream& out, const Checkpoint<Real>& ckpt) {
  detail::write_bytes(out, kCheckpointMagic, 4);
  detail::write_u32(out, kCheckpointVersion);

  std::uint32_t sections = 2 + std::uint32_t(ckpt.heads.size()) + (ckpt.optim ? 1 : 0);
  detail::write_u32(out, sections);

  {  // meta: config plus caller metadata
    std::ostringstream buf(std::ios::binary);
    std::map<std::string, std::string> meta = ckpt.meta;
    for (auto& [k, v] : config_to_meta(ckpt.config)) meta[k] = v;
    detail::write_u32(buf, std::uint32_t(meta.size()));
    for (const auto& [k, v] : meta) {
      detail::write_string(buf, k);
      detail::write_string(buf, v);
    }
    detail::write_section(out, "meta", buf.str());
  }

  detail::write_section(out, "backbone", detail::tensor_section_payload(ckpt.backbone));

  for (const auto& [name, head] : ckpt.heads) {
    std::ostringstream buf(std::ios::binary);
    detail::write_u32(buf, std::uint32_t(head.store.size() + 2));
    for (const auto& [pname, entry] : head.store) detail::write_tensor_record(buf, pname, entry.value);
    Tensor<double> mean({head.stats.mean.size()});
    Tensor<double> stdev({head.stats.stdev.size()});
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] = head.stats.mean[i];
    for (std::size_t i = 0; i < stdev.size(); ++i) stdev[i] = head.stats.stdev[i];
    detail::write_tensor_record(buf, "stats.mean", mean);
    detail::write_tensor_record(buf, "stats.stdev", stdev);
    detail::write_section(out, "head:" + name, buf.str());
  }

  if (ckpt.optim) {
    std::ostringstream buf(std::ios::binary);
    detail::write_u32(buf, std::uint32_t(2 * ckpt.optim->moments.size() + 1));
    Tensor<double> step({1});
    step[0] = double(ckpt.optim->t);
    detail::write_tensor_record(buf, "t", step);
    for (const auto& [name, mv] : ckpt.optim->moments) {
      detail::write_tensor_record(buf, "m." + name, mv.first);
      detail::write_tensor_record(buf, "v." + name, mv.second);
    }
    detail::write_section(out, "optim", buf.str());
  }
}

template <class Real>
void save_checkpoint(const std::string& path, const Checkpoint<Real>& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open checkpoint for writing: " + path);
  save_checkpoint(out, ckpt);
  if (!out) throw DataError("write failure on checkpoint: " + path);
}

template <class Real>
Checkpoint<Real> load_checkpoint(std::istream& in, LoadMode mode) {
  char magic[4];
  detail::read_bytes(in, magic, 4, "magic");
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw DataError("not a checkpoint file (bad magic)");
  const std::uint32_t version = detail::read_u32(in, "version");
  if (version != kCheckpointVersion)
    throw DataError("checkpoint version mismatch: file has " + std::to_string(version) +
                    ", reader expects " + std::to_string(kCheckpointVersion));

  Checkpoint<Real> ckpt;
  bool saw_backbone = false;
  const std::uint32_t sections = detail::read_u32(in, "section count");
  for (std::uint32_t s = 0; s < sections; ++s) {
    const std::string label = detail::read_string(in, "section label");
    const std::uint64_t bytes = detail::read_u64(in, "section length");
    const bool is_head = label.rfind("head:", 0) == 0;
    if (mode == LoadMode::kBackboneOnly && (is_head || label == "optim")) {
      in.seekg(std::streamoff(bytes), std::ios::cur);
      if (!in) throw DataError("truncated file while skipping section " + label);
      continue;
    }
    if (label == "meta") {
      const std::uint32_t n = detail::read_u32(in, "meta count");
      for (std::uint32_t i = 0; i < n; ++i) {
        std::string k = detail::read_string(in, "meta key");
        ckpt.meta[k] = detail::read_string(in, "meta value");
      }
    } else if (label == "backbone") {
      const std::uint32_t n = detail::read_u32(in, "backbone record count");
      for (std::uint32_t i = 0; i < n; ++i) {
        auto [name, tensor] = detail::read_tensor_record<Real>(in);
        ckpt.backbone.add(name, std::move(tensor));
      }
      saw_backbone = true;
    } else if (is_head) {
      ProjectionHead<Real> head;
      const std::uint32_t n = detail::read_u32(in, "head record count");
      for (std::uint32_t i = 0; i < n; ++i) {
        // peek the record name: stats tensors are always stored as f64
        const auto pos = in.tellg();
        const std::string name = detail::read_string(in, "head tensor name");
        in.seekg(pos);
        if (name == "stats.mean" || name == "stats.stdev") {
          auto [sname, tensor] = detail::read_tensor_record<double>(in);
          auto& dst = sname == "stats.mean" ? head.stats.mean : head.stats.stdev;
          dst.resize(tensor.size());
          for (std::size_t j = 0; j < tensor.size(); ++j) dst[j] = tensor[j];
        } else {
          auto [pname, tensor] = detail::read_tensor_record<Real>(in);
          head.store.add(pname, std::move(tensor));
        }
      }
      head.d_raw = head.stats.mean.size();
      ckpt.heads.emplace(label.substr(5), std::move(head));
    } else if (label == "optim") {
      OptimState<Real> optim;
      const std::uint32_t n = detail::read_u32(in, "optim record count");
      for (std::uint32_t i = 0; i < n; ++i) {
        auto pos = in.tellg();
        std::string name = detail::read_string(in, "optim tensor name");
        in.seekg(pos);
        if (name == "t") {
          auto [tn, tensor] = detail::read_tensor_record<double>(in);
          optim.t = std::int64_t(tensor[0]);
        } else {
          auto [rn, tensor] = detail::read_tensor_record<Real>(in);
          const std::string param = rn.substr(2);
          auto& slot = optim.moments[param];
          if (rn[0] == 'm') slot.first = std::move(tensor);
          else slot.second = std::move(tensor);
        }
      }
      ckpt.optim = std::move(optim);
    } else {
      in.seekg(std::streamoff(bytes), std::ios::cur);  // unknown section: skip
      if (!in) throw DataError("truncated file while skipping section " + label);
    }
  }
  if (!saw_backbone) throw DataError("checkpoint has no backbone section");
  ckpt.config = config_from_meta(ckpt.meta);
  return ckpt;
}

template <class Real>
Checkpoint<Real> load_checkpoint(const std::string& path, LoadMode mode) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  return load_checkpoint<Real>(in, mode);
}

/// Byte size of every section in a checkpoint file (label -> payload bytes).
inline std::map<std::string, std::uint64_t> checkpoint_section_sizes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  char magic[4];
  detail::read_bytes(in, magic, 4, "magic");
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw DataError("not a checkpoint file (bad magic)");
  detail::read_u32(in, "version");
  std::map<std::string, std::uint64_t> sizes;
  const std::uint32_t sections = detail::read_u32(in, "section count");
  for (std::uint32_t s = 0; s < sections; ++s) {
    const std::string label = detail::read_string(in, "section label");
    const std::uint64_t bytes = detail::read_u64(in, "section length");
    sizes[label] = bytes;
    in.seekg(std::streamoff(bytes), std::ios::cur);
    if (!in) throw DataError("truncated file while skipping section " + label);
  }
  return sizes;
}

}  // namespace nbfrec
