// Acceptance runner. `acceptance N` evaluates criterion N, `acceptance` runs
// all nine. Each prints one "criterion N: PASS|FAIL|BLOCKED ..." line; the
// process exits 0 on pass, 1 on fail and 77 when a criterion cannot run here.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dcm/attention.hpp"
#include "dcm/config.hpp"
#include "dcm/gradcheck.hpp"
#include "dcm/run.hpp"
#include "dcm/ssm.hpp"

using namespace dcm;
namespace fs = std::filesystem;

namespace {

enum class Status { pass, fail, blocked };

struct Verdict {
  Status status;
  std::string detail;
};

Verdict verdict(bool ok, std::string detail) { return {ok ? Status::pass : Status::fail, std::move(detail)}; }

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

std::size_t pick(Rng& rng, std::size_t n) {
  return std::min(n - 1, static_cast<std::size_t>(rng.uniform() * double(n)));
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------- 1: scans

template <typename T>
double scan_gap(std::size_t t, std::size_t ch, std::size_t n, Rng& rng) {
  Tensor<T> delta({1, t, ch}), x({1, t, ch}), a({ch, n}), b({1, t, n}), c({1, t, n});
  for (auto& v : delta.data()) v = T(std::log1p(std::exp(rng.normal() - 3.0)));
  for (auto& v : x.data()) v = T(rng.normal());
  for (auto& v : a.data()) v = T(-std::exp(rng.uniform() * std::log(16.0)));
  for (auto& v : b.data()) v = T(rng.normal());
  for (auto& v : c.data()) v = T(rng.normal());
  const auto d = ssm::discretize(delta, a, b, x);
  const auto seq = ssm::selective_scan_sequential(d.a_bar, d.b_bar_x, c);
  const auto par = ssm::selective_scan_parallel(d.a_bar, d.b_bar_x, c);
  double gap = 0;
  for (std::size_t i = 0; i < seq.size(); ++i) gap = std::max(gap, std::abs(double(seq[i]) - double(par[i])));
  return gap;
}

Verdict scan_equivalence() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t lengths[] = {1, 2, 7, 128, 512};
  Rng rng(2024);
  double worst32 = 0, worst64 = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t t = lengths[pick(rng, 5)];
    const std::size_t ch = 1 + pick(rng, 32);
    const std::size_t n = 1 + pick(rng, 16);
    Rng r32 = rng.fork(i);
    Rng r64 = r32;
    worst32 = std::max(worst32, scan_gap<float>(t, ch, n, r32));
    worst64 = std::max(worst64, scan_gap<double>(t, ch, n, r64));
  }
  const double secs = seconds_since(t0);
  return verdict(worst32 <= 1e-5 && worst64 <= 1e-10 && secs < 30.0,
                 fmt("1000 instances, max gap float %.2e double %.2e, %.1f s", worst32, worst64, secs));
}

// ------------------------------------------------------- 2: linformer identity

// Plain multi-head softmax attention over X [L, D] with the projections of p.
std::vector<double> dense_oracle(const Tensor<double>& x, std::size_t heads, const attn::LinformerParams<double>& p) {
  const std::size_t l = x.dim(1), d = x.dim(2), hd = d / heads;
  auto project = [&](const AffineParams<double>& a) {
    std::vector<double> out(l * d);
    for (std::size_t t = 0; t < l; ++t)
      for (std::size_t j = 0; j < d; ++j) {
        double acc = a.bias.value()[j];
        for (std::size_t i = 0; i < d; ++i) acc += x[t * d + i] * a.weight.value()[i * d + j];
        out[t * d + j] = acc;
      }
    return out;
  };
  const auto q = project(p.q), k = project(p.k), v = project(p.v);
  std::vector<double> ctx(l * d, 0.0);
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t t = 0; t < l; ++t) {
      std::vector<double> s(l);
      double mx = -1e300;
      for (std::size_t u = 0; u < l; ++u) {
        double dot = 0;
        for (std::size_t j = 0; j < hd; ++j) dot += q[t * d + h * hd + j] * k[u * d + h * hd + j];
        s[u] = dot / std::sqrt(double(hd));
        mx = std::max(mx, s[u]);
      }
      double z = 0;
      for (auto& e : s) z += (e = std::exp(e - mx));
      for (std::size_t u = 0; u < l; ++u)
        for (std::size_t j = 0; j < hd; ++j) ctx[t * d + h * hd + j] += s[u] / z * v[u * d + h * hd + j];
    }
  std::vector<double> out(l * d);
  for (std::size_t t = 0; t < l; ++t)
    for (std::size_t j = 0; j < d; ++j) {
      double acc = p.out.bias.value()[j];
      for (std::size_t i = 0; i < d; ++i) acc += ctx[t * d + i] * p.out.weight.value()[i * d + j];
      out[t * d + j] = acc;
    }
  return out;
}

Verdict linformer_identity() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(77);
  const std::size_t widths[] = {4, 8, 16};
  const std::size_t head_opts[] = {1, 2, 4};
  double worst = 0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t l = 1 + pick(rng, 64);
    const std::size_t d = widths[pick(rng, 3)];
    const std::size_t heads = head_opts[pick(rng, 3)];
    const bool shared = rng.uniform() < 0.5;
    const attn::LinformerConfig cfg{d, l, l, heads, shared};
    auto p = attn::LinformerParams<double>::init(cfg, rng);
    for (auto* proj : {&p.e, &p.f}) {
      Tensor<double>& m = proj->value_mut();
      m.fill(0.0);
      for (std::size_t h = 0; h < m.dim(0); ++h)
        for (std::size_t j = 0; j < l; ++j) m.at({h, j, j}) = 1.0;
    }
    Tensor<double> x({1, l, d});
    for (auto& v : x.data()) v = rng.normal();
    const auto y = attn::linear_attention(Var<double>(x), cfg, p).value();
    const auto ref = dense_oracle(x, heads, p);
    for (std::size_t j = 0; j < ref.size(); ++j) worst = std::max(worst, std::abs(y[j] - ref[j]));
  }
  const double secs = seconds_since(t0);
  return verdict(worst <= 1e-6 && secs < 10.0, fmt("100 cases, max deviation %.2e, %.2f s", worst, secs));
}

// ------------------------------------------------------------ 3: gradients

Verdict gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto ops = train::op_gradient_suite(1e-6);
  const auto model = train::gradient_check(train::tiny_model_config(), 1e-3);
  const double secs = seconds_since(t0);
  if (!ops.pass()) train::print_report(std::cerr, ops, "ops");
  if (!model.pass()) train::print_report(std::cerr, model, "model");
  return verdict(ops.pass() && model.pass() && secs < 300.0,
                 fmt("ops max rel err %.2e (%g groups), tiny model %.2e (%g groups)", ops.max_error(),
                     double(ops.groups.size()), model.max_error(), double(model.groups.size())) +
                     fmt(", %.1f s", secs));
}

// ------------------------------------------------------ 4 and 6: synthetic

RunConfig synthetic_task(std::size_t max_steps) {
  return resolve_config({}, {{"data", "synth"},
                             {"synth_vars", "8"},
                             {"synth_length", "4000"},
                             {"synth_noise", "0.1"},
                             {"seed", "1"},
                             {"lookback", "96"},
                             {"horizon", "24"},
                             {"d_model", "64"},
                             {"e_layers", "1"},
                             {"k", "32"},
                             {"lr", "1e-3"},
                             {"batch_size", "32"},
                             {"epochs", "10"},
                             {"patience", "3"},
                             {"max_steps", std::to_string(max_steps)}});
}

Verdict synthetic_forecasting() {
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig cfg = synthetic_task(300);
  const auto raw = run::load_dataset(cfg);
  run::bind_to_data(cfg, raw);
  const auto r = run::train_model(cfg, raw);
  const double ratio = r.test.mse / r.persistence.mse;
  return verdict(ratio <= 0.5, fmt("test MSE %.4f vs persistence %.4f (ratio %.3f) after %g steps", r.test.mse,
                                   r.persistence.mse, ratio, double(r.history.steps)) +
                                   fmt(", %.0f s", seconds_since(t0)));
}

Verdict ablation_ordering() {
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig cfg = synthetic_task(150);
  const auto raw = run::load_dataset(cfg);
  run::bind_to_data(cfg, raw);
  const auto rows = run::ablate(cfg, raw, all_variants());
  std::map<std::string, double> mse;
  std::string table;
  for (const auto& r : rows) {
    mse[r.variant] = r.mse;
    table += " " + r.variant + "=" + fmt("%.4f", r.mse);
  }
  const double full = mse.at("full");
  std::string flags;
  for (const char* rival : {"no_v_encoder", "no_t_encoder", "both_mixing"}) {
    if (full > mse.at(rival)) flags += std::string(" full>") + rival;
  }
  bool worst = true;
  for (const auto& [name, v] : mse) {
    if (name != "full" && v >= full) worst = false;
  }
  std::string detail = "MSE" + table + fmt(", %.0f s", seconds_since(t0));
  if (!flags.empty()) detail += "; ordering flags:" + flags;
  return verdict(!worst, detail);
}

// ------------------------------------------------------------- 5: ETTm1

std::string find_ettm1() {
  if (const char* env = std::getenv("DCM_ETTM1")) {
    if (fs::exists(env)) return env;
  }
  for (const auto& p : {fs::path(DCM_SOURCE_DIR) / "data" / "ETTm1.csv", fs::path("data/ETTm1.csv")}) {
    if (fs::exists(p)) return p.string();
  }
  return "";
}

Verdict ettm1() {
  const std::string path = find_ettm1();
  if (path.empty()) {
    return {Status::blocked, "ETTm1.csv not found (set DCM_ETTM1 or place it in data/); not run"};
  }
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig cfg = resolve_config({}, {{"dataset", "ETTm1"}, {"horizon", "96"}, {"data", path}, {"epochs", "3"}});
  const auto raw = run::load_dataset(cfg);
  run::bind_to_data(cfg, raw);
  const auto r = run::train_model(cfg, raw);
  return verdict(r.test.mse <= 0.60 && r.test.mse < r.persistence.mse,
                 fmt("test MSE %.4f MAE %.4f, persistence MSE %.4f, %.0f s", r.test.mse, r.test.mae,
                     r.persistence.mse, seconds_since(t0)));
}

// ------------------------------------------------------------ 7: scaling

Verdict linear_scaling() {
  const auto rows = run::bench_scan({256, 2048}, 9, 5);
  const double model = rows[1].model_ms / rows[0].model_ms;
  const double attention = rows[1].attention_ms / rows[0].attention_ms;
  const double scan = rows[1].parallel_ms / rows[0].parallel_ms;
  return verdict(model <= 12.0 && attention <= 12.0,
                 fmt("L=2048 / L=256 forward time: model %.2fx, linear attention %.2fx, parallel scan %.2fx",
                     model, attention, scan));
}

// -------------------------------------------------------- 8: determinism

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Verdict determinism() {
  const fs::path root = fs::temp_directory_path() / "dcm_acceptance_c8";
  fs::remove_all(root);
  const std::string flags =
      " train --data synth --seed 3 --epochs 2 --set synth_length=600 --set synth_vars=4"
      " --set lookback=32 --set horizon=8 --set d_model=16 --set e_layers=1 --set d_state=8"
      " --set k=16 --set max_steps=12 --set batch_size=16";
  for (const char* run : {"a", "b"}) {
    const std::string cmd = std::string(DCM_CLI_PATH) + flags + " --out " + (root / run).string() + " > /dev/null";
    if (std::system(cmd.c_str()) != 0) return {Status::fail, "train command failed: " + cmd};
  }
  const bool hist = slurp(root / "a" / "history.csv") == slurp(root / "b" / "history.csv");
  const std::string ck_a = slurp(root / "a" / "checkpoint.dcm");
  const bool ck = !ck_a.empty() && ck_a == slurp(root / "b" / "checkpoint.dcm");
  return verdict(hist && ck, std::string("history.csv ") + (hist ? "identical" : "differs") + ", checkpoint.dcm " +
                                 (ck ? "identical" : "differs") + fmt(" (%g bytes)", double(ck_a.size())));
}

// ---------------------------------------------------- 9: preset fidelity

struct Column {
  std::size_t el, bs;
  double lr;
  std::size_t d_model;
  double dropout;
  std::size_t d_state;
};

// Reference values per (dataset, horizon), kept apart from src/presets.cpp.
const std::map<std::string, std::vector<std::pair<std::size_t, Column>>>& reference_tables() {
  static const std::map<std::string, std::vector<std::pair<std::size_t, Column>>> t = {
      {"PEMS03", {{12, {4, 32, 5e-4, 512, 0.1, 128}}, {24, {4, 32, 5e-4, 512, 0.1, 128}},
                  {48, {4, 32, 5e-4, 512, 0.1, 256}}, {96, {4, 32, 5e-4, 512, 0.1, 256}}}},
      {"PEMS04", {{12, {4, 32, 5e-4, 1024, 0.1, 256}}, {24, {4, 32, 5e-4, 1024, 0.1, 256}},
                  {48, {4, 32, 5e-4, 1024, 0.1, 32}}, {96, {4, 32, 5e-4, 1024, 0.1, 32}}}},
      {"PEMS07", {{12, {2, 32, 1e-3, 512, 0.1, 256}}, {24, {2, 32, 1e-3, 512, 0.1, 256}},
                  {48, {4, 16, 1e-3, 512, 0.1, 256}}, {96, {4, 16, 1e-3, 512, 0.1, 32}}}},
      {"PEMS08", {{12, {2, 32, 5e-4, 512, 0.1, 256}}, {24, {2, 32, 5e-4, 512, 0.1, 256}},
                  {48, {4, 16, 1e-4, 512, 0.1, 256}}, {96, {4, 16, 1e-4, 512, 0.1, 256}}}},
      {"ECL", {{96, {3, 16, 1e-3, 512, 0.1, 256}}, {192, {3, 16, 1e-3, 512, 0.1, 128}},
               {336, {3, 16, 1e-3, 512, 0.1, 256}}, {720, {3, 16, 1e-3, 512, 0.1, 128}}}},
      {"Solar", {{96, {2, 16, 5e-4, 512, 0.1, 256}}, {192, {2, 16, 5e-4, 512, 0.1, 256}},
                 {336, {2, 16, 5e-4, 512, 0.1, 256}}, {720, {2, 16, 5e-4, 512, 0.1, 256}}}},
      {"Weather", {{96, {3, 32, 5e-5, 128, 0.1, 128}}, {192, {3, 32, 1e-4, 512, 0.1, 8}},
                   {336, {3, 32, 1e-3, 512, 0.1, 128}}, {720, {3, 32, 1e-4, 512, 0.1, 32}}}},
      {"ETTm1", {{96, {2, 32, 1e-4, 128, 0.1, 256}}, {192, {2, 32, 1e-4, 128, 0.1, 256}},
                 {336, {2, 32, 1e-4, 128, 0.1, 256}}, {720, {2, 32, 1e-4, 128, 0.1, 256}}}},
  };
  return t;
}

Verdict preset_fidelity() {
  const fs::path dir = fs::path(DCM_SOURCE_DIR) / "presets";
  std::size_t cells = 0;
  std::vector<std::string> mismatches;
  for (const auto& [dataset, columns] : reference_tables()) {
    for (const auto& [horizon, col] : columns) {
      const fs::path file = dir / (dataset + "_" + std::to_string(horizon) + ".conf");
      if (!fs::exists(file)) {
        mismatches.push_back("missing " + file.filename().string());
        continue;
      }
      std::map<std::string, std::string> kv;
      for (const auto& [k, v] : parse_config_file(file.string())) kv[k] = v;
      const std::pair<const char*, double> expected[] = {
          {"e_layers", double(col.el)}, {"batch_size", double(col.bs)}, {"lr", col.lr},
          {"d_model", double(col.d_model)}, {"dropout", col.dropout}, {"d_state", double(col.d_state)}};
      for (const auto& [key, want] : expected) {
        ++cells;
        const auto it = kv.find(key);
        if (it == kv.end() || std::stod(it->second) != want) {
          mismatches.push_back(file.filename().string() + ":" + key);
        }
      }
      if (kv["dataset"] != dataset || kv["horizon"] != std::to_string(horizon)) {
        mismatches.push_back(file.filename().string() + ":header");
      }
    }
  }
  std::string detail = std::to_string(cells) + " cells compared, " + std::to_string(mismatches.size()) + " mismatches";
  for (std::size_t i = 0; i < std::min<std::size_t>(mismatches.size(), 5); ++i) detail += " " + mismatches[i];
  return verdict(mismatches.empty() && cells == 192, detail);
}

using Check = Verdict (*)();
const Check kChecks[] = {scan_equivalence, linformer_identity, gradient_suite, synthetic_forecasting, ettm1,
                         ablation_ordering, linear_scaling, determinism, preset_fidelity};

int report(int n) {
  Verdict v;
  try {
    v = kChecks[n - 1]();
  } catch (const std::exception& e) {
    v = {Status::fail, std::string("error: ") + e.what()};
  }
  const char* label = v.status == Status::pass ? "PASS" : v.status == Status::fail ? "FAIL" : "BLOCKED";
  std::cout << "criterion " << n << ": " << label << " (" << v.detail << ")" << std::endl;
  return v.status == Status::pass ? 0 : v.status == Status::fail ? 1 : 77;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc > 1) {
    const int n = std::atoi(argv[1]);
    if (n < 1 || n > 9) {
      std::cerr << "usage: acceptance [1-9]\n";
      return 2;
    }
    return report(n);
  }
  int worst = 0;
  for (int n = 1; n <= 9; ++n) {
    const int code = report(n);
    if (code == 1) worst = 1;
  }
  return worst;
}
