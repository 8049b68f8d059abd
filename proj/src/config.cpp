#include "dcm/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "dcm/presets.hpp"

namespace dcm {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

template <typename N>
N parse_number(const std::string& key, const std::string& text) {
  N value{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (text.empty() || ec != std::errc() || ptr != end) {
    throw ConfigError("config key '" + key + "': cannot parse '" + text + "'");
  }
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + text + "'");
}

std::string fmt(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

struct Entry {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define DCM_SIZE(path)                                                                    \
  Entry {                                                                                 \
    [](RunConfig& c, const std::string& k, const std::string& v) {                        \
      c.path = parse_number<std::size_t>(k, v);                                           \
    },                                                                                    \
        [](const RunConfig& c) { return std::to_string(c.path); }                         \
  }
#define DCM_DOUBLE(path)                                                                  \
  Entry {                                                                                 \
    [](RunConfig& c, const std::string& k, const std::string& v) {                        \
      c.path = parse_number<double>(k, v);                                                \
    },                                                                                    \
        [](const RunConfig& c) { return fmt(c.path); }                                    \
  }
#define DCM_BOOL(path)                                                                    \
  Entry {                                                                                 \
    [](RunConfig& c, const std::string& k, const std::string& v) { c.path = parse_bool(k, v); }, \
        [](const RunConfig& c) { return std::string(c.path ? "true" : "false"); }         \
  }
#define DCM_STRING(path)                                                                  \
  Entry {                                                                                 \
    [](RunConfig& c, const std::string&, const std::string& v) { c.path = v; },           \
        [](const RunConfig& c) { return c.path; }                                         \
  }

using Schema = std::vector<std::pair<std::string, Entry>>;

const Schema& schema() {
  static const Schema s = {
      {"dataset", DCM_STRING(dataset)},
      {"data", DCM_STRING(data)},
      {"out", DCM_STRING(out)},
      {"seed",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          c.seed = parse_number<std::uint64_t>(k, v);
          c.train.seed = c.seed;
        },
        [](const RunConfig& c) { return std::to_string(c.seed); }}},
      {"lookback", DCM_SIZE(model.lookback)},
      {"horizon", DCM_SIZE(model.horizon)},
      {"n_vars", DCM_SIZE(model.n_vars)},
      {"d_model", DCM_SIZE(model.d_model)},
      {"e_layers", DCM_SIZE(model.e_layers)},
      {"d_state", DCM_SIZE(model.d_state)},
      {"k", DCM_SIZE(model.k)},
      {"heads", DCM_SIZE(model.heads)},
      {"d_ff", DCM_SIZE(model.d_ff)},
      {"dropout", DCM_DOUBLE(model.dropout)},
      {"expand", DCM_SIZE(model.expand)},
      {"d_conv", DCM_SIZE(model.d_conv)},
      {"dt_rank", DCM_SIZE(model.dt_rank)},
      {"share_ef", DCM_BOOL(model.share_ef)},
      {"share_bimamba", DCM_BOOL(model.share_bimamba)},
      {"norm",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          try {
            c.model.norm = parse_norm_mode(v);
          } catch (const std::invalid_argument& e) {
            throw ConfigError("config key '" + k + "': " + e.what());
          }
        },
        [](const RunConfig& c) { return to_string(c.model.norm); }}},
      {"variant",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          try {
            c.model.variant = parse_variant(v);
          } catch (const std::invalid_argument& e) {
            throw ConfigError("config key '" + k + "': " + e.what());
          }
        },
        [](const RunConfig& c) { return to_string(c.model.variant); }}},
      {"scan",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          if (v == "parallel") c.model.scan = ssm::ScanKind::parallel;
          else if (v == "sequential") c.model.scan = ssm::ScanKind::sequential;
          else throw ConfigError("config key '" + k + "': expected parallel or sequential");
        },
        [](const RunConfig& c) {
          return std::string(c.model.scan == ssm::ScanKind::parallel ? "parallel" : "sequential");
        }}},
      {"batch_size", DCM_SIZE(train.batch_size)},
      {"lr", DCM_DOUBLE(train.lr)},
      {"epochs", DCM_SIZE(train.epochs)},
      {"patience", DCM_SIZE(train.patience)},
      {"lr_schedule",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          try {
            c.train.schedule = train::parse_lr_schedule(v);
          } catch (const std::invalid_argument& e) {
            throw ConfigError("config key '" + k + "': " + e.what());
          }
        },
        [](const RunConfig& c) { return train::to_string(c.train.schedule); }}},
      {"max_steps", DCM_SIZE(train.max_steps)},
      {"raw_scale_loss", DCM_BOOL(train.raw_scale_loss)},
      {"record_time", DCM_BOOL(train.record_time)},
      {"eval_batch", DCM_SIZE(train.eval_batch)},
      {"split", DCM_STRING(split)},
      {"split_train", DCM_DOUBLE(split_train)},
      {"split_val", DCM_DOUBLE(split_val)},
      {"split_test", DCM_DOUBLE(split_test)},
      {"eval_split", DCM_STRING(eval_split)},
      {"variants", DCM_STRING(variants)},
      {"bench_lengths", DCM_STRING(bench_lengths)},
      {"bench_reps", DCM_SIZE(bench_reps)},
      {"synth_vars", DCM_SIZE(synth_vars)},
      {"synth_length", DCM_SIZE(synth_length)},
      {"synth_noise", DCM_DOUBLE(synth_noise)},
      {"gradcheck_op_tol", DCM_DOUBLE(gradcheck_op_tol)},
      {"gradcheck_model_tol", DCM_DOUBLE(gradcheck_model_tol)},
  };
  return s;
}

const Entry& lookup(const std::string& key) {
  for (const auto& [name, entry] : schema()) {
    if (name == key) return entry;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void check_enums(const RunConfig& c) {
  if (c.split != "auto" && c.split != "table" && c.split != "ratio") {
    throw ConfigError("config key 'split': expected auto, table or ratio, got '" + c.split + "'");
  }
  if (c.eval_split != "train" && c.eval_split != "val" && c.eval_split != "test") {
    throw ConfigError("config key 'eval_split': expected train, val or test");
  }
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> out;
    for (const auto& e : schema()) out.push_back(e.first);
    return out;
  }();
  return keys;
}

void set_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  lookup(key).set(cfg, key, value);
  check_enums(cfg);
}

std::string get_value(const RunConfig& cfg, const std::string& key) { return lookup(key).get(cfg); }

std::vector<KeyValue> to_key_values(const RunConfig& cfg) {
  std::vector<KeyValue> out;
  for (const auto& [name, entry] : schema()) out.emplace_back(name, entry.get(cfg));
  return out;
}

std::string to_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : to_key_values(cfg)) out += k + "=" + v + "\n";
  return out;
}

KeyValue parse_assignment(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + text + "'");
  const std::string key = trim(text.substr(0, eq));
  if (key.empty()) throw ConfigError("empty key in '" + text + "'");
  return {key, trim(text.substr(eq + 1))};
}

std::vector<KeyValue> parse_config_text(const std::string& text, const std::string& origin) {
  std::vector<KeyValue> out;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    if (trim(line).empty()) continue;
    KeyValue kv;
    try {
      kv = parse_assignment(line);
      lookup(kv.first);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(n) + ": " + e.what());
    }
    out.push_back(std::move(kv));
  }
  return out;
}

std::vector<KeyValue> parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

bool apply_preset(RunConfig& cfg) {
  const auto p = find_preset(cfg.dataset, cfg.model.horizon);
  if (!p) return false;
  cfg.model.e_layers = p->e_layers;
  cfg.train.batch_size = p->batch_size;
  cfg.train.lr = p->lr;
  cfg.model.d_model = p->d_model;
  cfg.model.dropout = p->dropout;
  cfg.model.d_state = p->d_state;
  return true;
}

RunConfig resolve_config(const std::vector<KeyValue>& file, const std::vector<KeyValue>& cli) {
  RunConfig cfg;
  // Preset selection uses dataset/horizon from the highest layer that sets them.
  for (const auto* layer : {&file, &cli}) {
    for (const auto& [k, v] : *layer) {
      if (k == "dataset" || k == "horizon") set_value(cfg, k, v);
    }
  }
  apply_preset(cfg);
  for (const auto* layer : {&file, &cli}) {
    for (const auto& [k, v] : *layer) set_value(cfg, k, v);
  }
  return cfg;
}

}  // namespace dcm
