#include "dcm/presets.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

namespace dcm {

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

struct Block {
  const char* dataset;
  std::size_t horizon[4];
  std::size_t el[4];
  std::size_t bs[4];
  double lr[4];
  std::size_t d_model[4];
  double dropout[4];
  std::size_t d_state[4];
};

// Horizons 12/24/48/96 for the traffic sets, 96/192/336/720 otherwise.
constexpr Block kBlocks[] = {
    {"PEMS03", {12, 24, 48, 96}, {4, 4, 4, 4}, {32, 32, 32, 32}, {5e-4, 5e-4, 5e-4, 5e-4},
     {512, 512, 512, 512}, {0.1, 0.1, 0.1, 0.1}, {128, 128, 256, 256}},
    {"PEMS04", {12, 24, 48, 96}, {4, 4, 4, 4}, {32, 32, 32, 32}, {5e-4, 5e-4, 5e-4, 5e-4},
     {1024, 1024, 1024, 1024}, {0.1, 0.1, 0.1, 0.1}, {256, 256, 32, 32}},
    {"PEMS07", {12, 24, 48, 96}, {2, 2, 4, 4}, {32, 32, 16, 16}, {1e-3, 1e-3, 1e-3, 1e-3},
     {512, 512, 512, 512}, {0.1, 0.1, 0.1, 0.1}, {256, 256, 256, 32}},
    {"PEMS08", {12, 24, 48, 96}, {2, 2, 4, 4}, {32, 32, 16, 16}, {5e-4, 5e-4, 1e-4, 1e-4},
     {512, 512, 512, 512}, {0.1, 0.1, 0.1, 0.1}, {256, 256, 256, 256}},
    {"ECL", {96, 192, 336, 720}, {3, 3, 3, 3}, {16, 16, 16, 16}, {1e-3, 1e-3, 1e-3, 1e-3},
     {512, 512, 512, 512}, {0.1, 0.1, 0.1, 0.1}, {256, 128, 256, 128}},
    {"Solar", {96, 192, 336, 720}, {2, 2, 2, 2}, {16, 16, 16, 16}, {5e-4, 5e-4, 5e-4, 5e-4},
     {512, 512, 512, 512}, {0.1, 0.1, 0.1, 0.1}, {256, 256, 256, 256}},
    {"Weather", {96, 192, 336, 720}, {3, 3, 3, 3}, {32, 32, 32, 32}, {5e-5, 1e-4, 1e-3, 1e-4},
     {128, 512, 512, 512}, {0.1, 0.1, 0.1, 0.1}, {128, 8, 128, 32}},
    {"ETTm1", {96, 192, 336, 720}, {2, 2, 2, 2}, {32, 32, 32, 32}, {1e-4, 1e-4, 1e-4, 1e-4},
     {128, 128, 128, 128}, {0.1, 0.1, 0.1, 0.1}, {256, 256, 256, 256}},
};

std::string canonical(const std::string& name) {
  const std::string key = lower(name);
  if (key == "electricity") return "ecl";
  if (key == "solar_al" || key == "solar-energy") return "solar";
  return key;
}

std::string fmt(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace

const std::vector<HyperPreset>& hyperparameter_presets() {
  static const std::vector<HyperPreset> table = [] {
    std::vector<HyperPreset> out;
    for (const Block& b : kBlocks) {
      for (int i = 0; i < 4; ++i) {
        out.push_back({b.dataset, b.horizon[i], b.el[i], b.bs[i], b.lr[i], b.d_model[i],
                       b.dropout[i], b.d_state[i]});
      }
    }
    return out;
  }();
  return table;
}

std::optional<HyperPreset> find_preset(const std::string& dataset, std::size_t horizon) {
  const std::string key = canonical(dataset);
  for (const auto& p : hyperparameter_presets()) {
    if (lower(p.dataset) == key && p.horizon == horizon) return p;
  }
  return std::nullopt;
}

std::string preset_config_text(const HyperPreset& p) {
  std::ostringstream out;
  out << "dataset=" << p.dataset << "\n"
      << "horizon=" << p.horizon << "\n"
      << "e_layers=" << p.e_layers << "\n"
      << "batch_size=" << p.batch_size << "\n"
      << "lr=" << fmt(p.lr) << "\n"
      << "d_model=" << p.d_model << "\n"
      << "dropout=" << fmt(p.dropout) << "\n"
      << "d_state=" << p.d_state << "\n";
  return out.str();
}

const std::vector<PublishedResult>& published_results() {
  static const std::vector<PublishedResult> table = {
      {"PEMS03", 12, 0.061, 0.163}, {"PEMS03", 24, 0.080, 0.186},
      {"PEMS03", 48, 0.114, 0.225}, {"PEMS03", 96, 0.169, 0.280},
      {"PEMS04", 12, 0.069, 0.163}, {"PEMS04", 24, 0.076, 0.179},
      {"PEMS04", 48, 0.088, 0.195}, {"PEMS04", 96, 0.100, 0.207},
      {"PEMS07", 12, 0.059, 0.151}, {"PEMS07", 24, 0.071, 0.168},
      {"PEMS07", 48, 0.090, 0.188}, {"PEMS07", 96, 0.103, 0.200},
      {"PEMS08", 12, 0.076, 0.172}, {"PEMS08", 24, 0.100, 0.198},
      {"PEMS08", 48, 0.196, 0.223}, {"PEMS08", 96, 0.217, 0.244},
      {"ECL", 96, 0.139, 0.235},    {"ECL", 192, 0.163, 0.259},
      {"ECL", 336, 0.176, 0.273},   {"ECL", 720, 0.197, 0.294},
      {"Solar", 96, 0.200, 0.228},  {"Solar", 192, 0.235, 0.261},
      {"Solar", 336, 0.247, 0.272}, {"Solar", 720, 0.248, 0.274},
      {"Weather", 96, 0.158, 0.206}, {"Weather", 192, 0.218, 0.260},
      {"Weather", 336, 0.270, 0.296}, {"Weather", 720, 0.352, 0.351},
      {"ETTm1", 96, 0.329, 0.367},  {"ETTm1", 192, 0.388, 0.404},
      {"ETTm1", 336, 0.423, 0.429}, {"ETTm1", 720, 0.490, 0.461},
  };
  return table;
}

std::optional<PublishedResult> find_published(const std::string& dataset, std::size_t horizon) {
  const std::string key = canonical(dataset);
  for (const auto& r : published_results()) {
    if (lower(r.dataset) == key && r.horizon == horizon) return r;
  }
  return std::nullopt;
}

}  // namespace dcm
