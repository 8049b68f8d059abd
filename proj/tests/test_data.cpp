#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dcm/data.hpp"
#include "support.hpp"

using namespace dcm;
using namespace dcm::data;
namespace fs = std::filesystem;

namespace {

fs::path scratch_file(const std::string& name, const std::string& body) {
  const fs::path dir = fs::temp_directory_path() / "dcm_test_data";
  fs::create_directories(dir);
  const fs::path p = dir / name;
  std::ofstream(p) << body;
  return p;
}

std::string error_of(const std::string& path) {
  try {
    (void)load_csv(path);
  } catch (const DataError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("csv loading") {
  SUBCASE("date column skipped") {
    const auto p = scratch_file("toy.csv", "date,a,b\n2020-01-01 00:00,1,2\n2020-01-01 01:00,3,4.5\n");
    const auto ds = load_csv(p.string(), "toy");
    CHECK(ds.rows() == 2);
    CHECK(ds.cols() == 2);
    CHECK(ds.variables == std::vector<std::string>{"a", "b"});
    CHECK(ds.values.at({1, 1}) == 4.5f);
    CHECK(ds.name == "toy");
  }
  SUBCASE("no date column") {
    const auto p = scratch_file("nodate.csv", "x,y,z\n1,2,3\n");
    CHECK(load_csv(p.string()).cols() == 3);
  }
  SUBCASE("malformed cell names row and column") {
    const auto p = scratch_file("bad.csv", "date,a,b\nd0,1,2\nd1,3,oops\n");
    const auto msg = error_of(p.string());
    // Rows count file lines, header included.
    CHECK(msg.find("row 3, column 3 ('b')") != std::string::npos);
  }
  SUBCASE("ragged row") {
    const auto p = scratch_file("ragged.csv", "date,a,b\nd0,1,2\nd1,3\n");
    CHECK(error_of(p.string()).find("row 3 has 2 columns") != std::string::npos);
  }
  SUBCASE("missing and empty files") {
    CHECK_THROWS_AS(load_csv("/nonexistent/file.csv"), MissingFileError);
    const auto p = scratch_file("empty.csv", "");
    CHECK_THROWS_AS(load_csv(p.string()), DataError);
  }
  SUBCASE("write then read round trip") {
    SynthConfig sc;
    sc.n_vars = 3;
    sc.length = 50;
    const auto ds = synth(sc);
    const fs::path p = fs::temp_directory_path() / "dcm_test_data" / "round.csv";
    write_csv(p.string(), ds);
    const auto back = load_csv(p.string());
    CHECK(back.values == ds.values);
    CHECK(back.variables == ds.variables);
  }
}

TEST_CASE("dataset table and splits") {
  const auto ett = find_dataset("ETTm1");
  REQUIRE(ett.has_value());
  CHECK(ett->variables == 7);
  CHECK(find_dataset("electricity")->name == "ECL");
  CHECK(find_dataset("pems08")->variables == 170);
  CHECK_FALSE(find_dataset("unknown").has_value());

  const auto s = table_split(*ett, 57600, 96);
  CHECK(evaluation_rows(s.train_end - s.train_begin, 96) == 34465);
  CHECK(evaluation_rows(s.val_end - s.val_begin, 96) == 11521);
  CHECK(evaluation_rows(s.test_end - s.test_begin, 96) == 11521);
  CHECK_THROWS_AS(table_split(*ett, 50000, 96), DataError);

  const auto p3 = table_split(*find_dataset("PEMS03"), 26208, 96);
  CHECK(evaluation_rows(p3.train_end - p3.train_begin, 96) == 15617);
  CHECK(evaluation_rows(p3.val_end - p3.val_begin, 96) == 5135);
  CHECK(evaluation_rows(p3.test_end - p3.test_begin, 96) == 5135);

  // Shorter lookback: the label rows stay put and the views shrink.
  const auto s48 = table_split(*ett, 57600, 48);
  CHECK(s48.val_begin == s.val_begin + 48);
  CHECK(s48.test_end == s.test_end);

  const auto r = ratio_split(1000, 24, 0.7, 0.1, 0.2);
  CHECK(r.train_end == 700);
  CHECK(r.val_begin == 676);
  CHECK(r.val_end == 800);
  CHECK(r.test_begin == 776);
  CHECK(r.test_end == 1000);
  CHECK_THROWS_AS(ratio_split(1000, 24, 0.8, 0.0, 0.2), DataError);
  CHECK_THROWS_AS(ratio_split(1000, 24, 0.7, 0.2, 0.2), DataError);

  SynthConfig sc;
  sc.length = 1000;
  const auto full = synth(sc);
  const auto views = split(full, r);
  CHECK(views.train.rows() == 700);
  CHECK(views.val.values.at({0, 1}) == full.values.at({676, 1}));
  CHECK(views.test.rows() == 224);
}

TEST_CASE("windows") {
  CHECK(window_count(34465 + 95, 96, 96) == 34465 + 95 - 191);
  CHECK(window_count(192, 96, 96) == 1);
  CHECK_THROWS_AS(window_count(191, 96, 96), DataError);

  Tensor<float> v({10, 2});
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = float(i);
  SeriesDataset ds;
  ds.values = v;
  ds.variables = {"a", "b"};
  const Windows w(ds, 3, 2);
  CHECK(w.size() == 6);
  const auto b = w.batch({0, 5});
  CHECK(b.inputs.shape() == Shape{2, 3, 2});
  CHECK(b.targets.shape() == Shape{2, 2, 2});
  CHECK(b.inputs.at({1, 0, 0}) == 10.0f);
  CHECK(b.targets.at({0, 0, 1}) == 7.0f);
  CHECK(b.targets.at({1, 1, 1}) == 19.0f);
  CHECK(w.range(4, 10).inputs.dim(0) == 2);
  CHECK_THROWS_AS(w.batch({6}), DataError);
}

TEST_CASE("synthetic generator") {
  SUBCASE("no noise, no lag, unit scale gives identical columns") {
    SynthConfig sc;
    sc.n_vars = 4;
    sc.length = 100;
    sc.noise_sigma = 0.0;
    sc.lags = {0, 0, 0};
    sc.scales = {1, 1, 1};
    const auto ds = synth(sc);
    for (std::size_t t = 0; t < 100; ++t)
      for (std::size_t j = 1; j < 4; ++j) CHECK(ds.values.at({t, j}) == ds.values.at({t, 0}));
  }
  SUBCASE("lagged copies") {
    SynthConfig sc;
    sc.n_vars = 3;
    sc.length = 60;
    sc.noise_sigma = 0.0;
    const auto ds = synth(sc);
    for (std::size_t t = 6; t < 60; ++t) {
      CHECK(ds.values.at({t, 1}) == ds.values.at({t - 3, 0}));
      CHECK(ds.values.at({t, 2}) == doctest::Approx(-0.9 * ds.values.at({t - 6, 0})).epsilon(1e-6));
    }
  }
  SUBCASE("seeded and byte-stable") {
    SynthConfig sc;
    sc.seed = 17;
    CHECK(synth(sc).values == synth(sc).values);
    SynthConfig other = sc;
    other.seed = 18;
    CHECK_FALSE(synth(other).values == synth(sc).values);
    // Variable 0 is noise-free.
    CHECK(synth(sc).values.at({5, 0}) == synth(other).values.at({5, 0}));
  }
  SUBCASE("period 24 dominates variable 0") {
    SynthConfig sc;
    sc.noise_sigma = 0.0;
    const auto ds = synth(sc);
    const std::size_t n = ds.rows() - 24;
    double mean = 0;
    for (std::size_t t = 0; t < ds.rows(); ++t) mean += ds.values.at({t, 0});
    mean /= double(ds.rows());
    double num = 0, den = 0;
    for (std::size_t t = 0; t < n; ++t) num += (ds.values.at({t, 0}) - mean) * (ds.values.at({t + 24, 0}) - mean);
    for (std::size_t t = 0; t < ds.rows(); ++t) den += std::pow(ds.values.at({t, 0}) - mean, 2);
    CHECK(num / den > 0.95);
    CHECK(synth_secondary_period() / kSynthPeriod != doctest::Approx(std::round(synth_secondary_period() / kSynthPeriod)));
  }
  SUBCASE("argument checks") {
    SynthConfig sc;
    sc.n_vars = 1;
    CHECK_THROWS_AS(synth(sc), DataError);
    sc = SynthConfig{};
    sc.length = 10;
    sc.lags = {20};
    CHECK_THROWS_AS(synth(sc), DataError);
  }
}

TEST_CASE("normalization") {
  SynthConfig sc;
  sc.n_vars = 3;
  sc.length = 300;
  auto ds = synth(sc);
  for (std::size_t t = 0; t < ds.rows(); ++t) ds.values.at({t, 2}) = 4.0f;

  const auto stats = NormStats::fit(ds);
  CHECK(stats.std[2] == 1.0);
  REQUIRE(stats.warnings.size() == 1);
  CHECK(stats.warnings[0].find("x2") != std::string::npos);

  const auto z = standardize(ds, stats);
  for (std::size_t j = 0; j < 2; ++j) {
    double m = 0, s = 0;
    for (std::size_t t = 0; t < z.rows(); ++t) m += z.values.at({t, j});
    m /= double(z.rows());
    for (std::size_t t = 0; t < z.rows(); ++t) s += std::pow(z.values.at({t, j}) - m, 2);
    CHECK(std::abs(m) < 1e-6);
    CHECK(std::sqrt(s / double(z.rows())) == doctest::Approx(1.0).epsilon(1e-5));
  }
  const auto back = destandardize(z, stats);
  CHECK(testing::max_abs_diff(back.values, ds.values) <= 1e-5);

  Tensor<float> batch({2, 4, 3}, 1.0f);
  standardize_inplace(batch, stats);
  destandardize_inplace(batch, stats);
  for (float v : batch.data()) CHECK(v == doctest::Approx(1.0f).epsilon(1e-5));
  Tensor<float> wrong({2, 4, 5});
  CHECK_THROWS_AS(standardize_inplace(wrong, stats), DimensionError);
}
