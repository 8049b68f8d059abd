#include "dcm/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace dcm {

namespace {

constexpr const char* kMagic = "DCMCKPT 1";

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

void append_floats(std::string& out, const Tensor<float>& t) {
  for (float f : t.data()) {
    const std::uint32_t w = to_le(std::bit_cast<std::uint32_t>(f));
    char b[4];
    std::memcpy(b, &w, 4);
    out.append(b, 4);
  }
}

Tensor<float> read_floats(const std::string& payload, std::size_t offset, const Shape& shape) {
  Tensor<float> t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::uint32_t w;
    std::memcpy(&w, payload.data() + offset + 4 * i, 4);
    t[i] = std::bit_cast<float>(to_le(w));
  }
  return t;
}

std::string shape_token(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

Shape parse_shape(const std::string& token) {
  Shape s;
  std::stringstream ss(token);
  std::string part;
  while (std::getline(ss, part, 'x')) s.push_back(std::stoul(part));
  return s;
}

struct NamedTensor {
  std::string name;
  Tensor<float> value;
};

std::vector<NamedTensor> gather(const DcMamber<float>& model, const data::NormStats& stats) {
  std::vector<NamedTensor> out;
  for (const auto& p : model.parameters()) out.push_back({p.name, p.var.value()});
  const std::size_t v = stats.mean.size();
  if (v) {
    Tensor<float> mean({v}), sd({v});
    for (std::size_t i = 0; i < v; ++i) {
      mean[i] = static_cast<float>(stats.mean[i]);
      sd[i] = static_cast<float>(stats.std[i]);
    }
    out.push_back({"norm.mean", std::move(mean)});
    out.push_back({"norm.std", std::move(sd)});
  }
  return out;
}

}  // namespace

std::string serialize_checkpoint(const RunConfig& cfg, const DcMamber<float>& model,
                                 const data::NormStats& stats) {
  std::string header = std::string(kMagic) + "\n[config]\n";
  for (const auto& [k, v] : to_key_values(cfg)) {
    if (k != "out") header += k + "=" + v + "\n";
  }
  header += "[tensors]\n";
  std::string payload;
  for (const auto& t : gather(model, stats)) {
    header += t.name + " " + shape_token(t.value.shape()) + " " + std::to_string(payload.size()) +
              " " + std::to_string(4 * t.value.size()) + "\n";
    append_floats(payload, t.value);
  }
  return header + "[data]\n" + payload;
}

void save_checkpoint(const std::string& path, const RunConfig& cfg, const DcMamber<float>& model,
                     const data::NormStats& stats) {
  const std::string bytes = serialize_checkpoint(cfg, model, stats);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("write failed: " + path);
}

Checkpoint parse_checkpoint(const std::string& bytes) {
  const std::string data_marker = "[data]\n";
  const auto data_pos = bytes.find(data_marker);
  if (bytes.rfind(std::string(kMagic) + "\n", 0) != 0 || data_pos == std::string::npos) {
    throw CheckpointError("not a checkpoint (bad magic or missing [data] section)");
  }
  const std::string payload = bytes.substr(data_pos + data_marker.size());
  std::istringstream head(bytes.substr(0, data_pos));
  std::string line, section;
  std::getline(head, line);
  std::vector<KeyValue> kvs;
  struct Entry {
    Shape shape;
    std::size_t offset, nbytes;
  };
  std::map<std::string, Entry> entries;
  while (std::getline(head, line)) {
    if (line == "[config]" || line == "[tensors]") {
      section = line;
      continue;
    }
    if (line.empty()) continue;
    if (section == "[config]") {
      kvs.push_back(parse_assignment(line));
    } else if (section == "[tensors]") {
      std::istringstream ls(line);
      std::string name, shape;
      Entry e{};
      if (!(ls >> name >> shape >> e.offset >> e.nbytes)) {
        throw CheckpointError("malformed tensor manifest line: " + line);
      }
      e.shape = parse_shape(shape);
      if (e.nbytes != 4 * numel(e.shape) || e.offset + e.nbytes > payload.size()) {
        throw CheckpointError("tensor '" + name + "' has an inconsistent size or offset");
      }
      entries[name] = e;
    } else {
      throw CheckpointError("unexpected line before any section: " + line);
    }
  }

  RunConfig cfg;
  for (const auto& [k, v] : kvs) set_value(cfg, k, v);
  DcMamber<float> model(cfg.model, DcMamberParams<float>::init(cfg.model, cfg.seed));
  std::size_t used = 0;
  for (const auto& p : model.parameters()) {
    const auto it = entries.find(p.name);
    if (it == entries.end()) throw CheckpointError("checkpoint is missing tensor '" + p.name + "'");
    if (it->second.shape != p.var.shape()) {
      throw CheckpointError("tensor '" + p.name + "' has shape " + shape_str(it->second.shape) +
                            " but the stored config implies " + shape_str(p.var.shape()));
    }
    Var<float> v = p.var;
    v.value_mut() = read_floats(payload, it->second.offset, it->second.shape);
    if (!v.value().all_finite()) throw CheckpointError("tensor '" + p.name + "' is not finite");
    ++used;
  }
  data::NormStats stats;
  const auto mean = entries.find("norm.mean");
  const auto sd = entries.find("norm.std");
  if (mean != entries.end() && sd != entries.end()) {
    const Shape expect{cfg.model.n_vars};
    if (mean->second.shape != expect || sd->second.shape != expect) {
      throw CheckpointError("normalization statistics do not match n_vars");
    }
    const Tensor<float> m = read_floats(payload, mean->second.offset, expect);
    const Tensor<float> s = read_floats(payload, sd->second.offset, expect);
    for (std::size_t i = 0; i < m.size(); ++i) {
      stats.mean.push_back(m[i]);
      stats.std.push_back(s[i]);
    }
    used += 2;
  }
  if (used != entries.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(entries.size() - used) +
                          " tensor(s) not used by the configured model");
  }
  return Checkpoint{std::move(cfg), std::move(model), std::move(stats)};
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

}  // namespace dcm
