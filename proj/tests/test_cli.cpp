#include <doctest.h>

#include <cstdlib>
#include <filesystem>

#include "dcm/baselines.hpp"
#include "dcm/checkpoint.hpp"
#include "dcm/config.hpp"
#include "dcm/presets.hpp"
#include "dcm/run.hpp"

using namespace dcm;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_run() {
  RunConfig c = resolve_config({}, {{"data", "synth"},
                                    {"synth_vars", "3"},
                                    {"synth_length", "300"},
                                    {"lookback", "16"},
                                    {"horizon", "4"},
                                    {"d_model", "8"},
                                    {"e_layers", "1"},
                                    {"d_state", "4"},
                                    {"k", "8"},
                                    {"epochs", "1"},
                                    {"max_steps", "3"},
                                    {"batch_size", "8"}});
  return c;
}

}  // namespace

TEST_CASE("config layering") {
  SUBCASE("preset values apply") {
    const auto c = resolve_config({}, {{"dataset", "ETTm1"}, {"horizon", "96"}});
    CHECK(c.train.lr == 1e-4);
    CHECK(c.model.d_model == 128);
    CHECK(c.model.e_layers == 2);
    CHECK(c.model.d_state == 256);
    CHECK(c.train.batch_size == 32);
  }
  SUBCASE("command line beats file beats preset") {
    const auto file = parse_config_text("dataset=ETTm1\nhorizon=96\nlr=5e-4  # file\nd_model=64\n", "t");
    const auto c = resolve_config(file, {{"lr", "2e-3"}});
    CHECK(c.train.lr == 2e-3);
    CHECK(c.model.d_model == 64);
    CHECK(c.model.e_layers == 2);
  }
  SUBCASE("horizon on the command line picks the preset") {
    const auto c = resolve_config(parse_config_text("dataset=ECL\nhorizon=96\n", "t"), {{"horizon", "720"}});
    CHECK(c.model.horizon == 720);
    CHECK(c.model.d_model == find_preset("ECL", 720)->d_model);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(resolve_config({}, {{"learning_rate", "1"}}), ConfigError);
    CHECK_THROWS_AS(resolve_config({}, {{"lr", "fast"}}), ConfigError);
    CHECK_THROWS_AS(parse_assignment("novalue"), ConfigError);
    try {
      (void)parse_config_text("lr=1\nbroken line\n", "conf");
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("2") != std::string::npos);
    }
  }
  SUBCASE("text round trip") {
    RunConfig c = tiny_run();
    set_value(c, "variant", "swapped");
    set_value(c, "share_ef", "true");
    const auto back = resolve_config(parse_config_text(to_text(c), "rt"), {});
    CHECK(to_key_values(back) == to_key_values(c));
    CHECK(get_value(back, "variant") == "swapped");
  }
}

TEST_CASE("shipped preset files match the compiled table") {
  const fs::path dir = fs::path(DCM_SOURCE_DIR) / "presets";
  std::size_t files = 0;
  for (const auto& p : hyperparameter_presets()) {
    const fs::path f = dir / (p.dataset + "_" + std::to_string(p.horizon) + ".conf");
    CAPTURE(f.string());
    REQUIRE(fs::exists(f));
    CHECK(parse_config_file(f.string()) == parse_config_text(preset_config_text(p), "table"));
    ++files;
  }
  CHECK(files == 32);
}

TEST_CASE("published references") {
  const auto r = find_published("ETTm1", 96);
  REQUIRE(r.has_value());
  CHECK(r->mse == 0.329);
  CHECK(r->mae == 0.367);
  CHECK_FALSE(find_published("synth", 96).has_value());
}

TEST_CASE("checkpoint") {
  RunConfig cfg = tiny_run();
  const auto raw = run::load_dataset(cfg);
  run::bind_to_data(cfg, raw);
  const auto model = run::build_model(cfg);
  const auto prep = run::prepare(cfg, raw);
  const std::string bytes = serialize_checkpoint(cfg, model, prep.stats);
  CHECK(bytes.rfind("DCMCKPT 1\n", 0) == 0);

  SUBCASE("round trip") {
    const auto ck = parse_checkpoint(bytes);
    CHECK(to_key_values(ck.config) == to_key_values(cfg));
    CHECK(get_value(ck.config, "d_model") == "8");
    const auto x = run::pick_view(prep.views, "test").values;
    Tensor<float> window({1, 16, 3});
    std::copy(x.ptr(), x.ptr() + 48, window.ptr());
    CHECK(ck.model.predict(window) == model.predict(window));
    CHECK(ck.stats.mean.size() == 3);
    CHECK(serialize_checkpoint(ck.config, ck.model, ck.stats) == bytes);
  }
  SUBCASE("bad magic") { CHECK_THROWS_AS(parse_checkpoint("NOPE\n" + bytes), CheckpointError); }
  SUBCASE("shape mismatch") {
    std::string bad = bytes;
    const auto pos = bad.find("d_model=8");
    bad.replace(pos, 9, "d_model=16");
    CHECK_THROWS_AS(parse_checkpoint(bad), CheckpointError);
  }
  SUBCASE("truncated payload") {
    CHECK_THROWS_AS(parse_checkpoint(bytes.substr(0, bytes.size() - 4)), CheckpointError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_checkpoint("/nonexistent/ck.dcm"), CheckpointError); }
}

TEST_CASE("evaluation pipeline") {
  RunConfig cfg = tiny_run();
  set_value(cfg, "synth_noise", "0");
  const auto raw = run::load_dataset(cfg);
  run::bind_to_data(cfg, raw);
  const auto prep = run::prepare(cfg, raw);

  SUBCASE("a perfect forecaster scores zero") {
    // Noise-free sums of sinusoids satisfy a linear recurrence over the window.
    const data::Windows train(prep.views.train, 16, 4);
    const auto lin = baseline::LinearForecaster::fit(train, 1e-9);
    const data::Windows test(prep.views.test, 16, 4);
    const auto r = train::evaluate([&](const Tensor<float>& x) { return lin.predict(x); }, test);
    CHECK(r.mse <= 1e-4);
  }
  SUBCASE("scores are repeatable") {
    const auto model = run::build_model(cfg);
    const auto a = run::score_view(model, prep.views.test, prep.stats, 32);
    const auto b = run::score_view(model, prep.views.test, prep.stats, 32);
    CHECK(a.model.mse == b.model.mse);
    CHECK(a.model.mae == b.model.mae);
    CHECK(a.persistence.mse == b.persistence.mse);
    // Batch size only changes float summation order.
    const auto c = run::score_view(model, prep.views.test, prep.stats, 7);
    CHECK(c.model.mse == doctest::Approx(a.model.mse).epsilon(1e-5));
    CHECK(a.model.windows == data::window_count(prep.views.test.rows(), 16, 4));
  }
  SUBCASE("split names") {
    CHECK(&run::pick_view(prep.views, "val") == &prep.views.val);
    CHECK_THROWS(run::pick_view(prep.views, "holdout"));
  }
}

TEST_CASE("forecast helper") {
  RunConfig cfg = tiny_run();
  const auto raw = run::load_dataset(cfg);
  run::bind_to_data(cfg, raw);
  const auto prep = run::prepare(cfg, raw);
  const auto model = run::build_model(cfg);

  const auto tail = raw.slice(100, 130);
  const auto out = run::forecast(model, prep.stats, tail);
  CHECK(out.rows() == 4);
  CHECK(out.cols() == 3);
  CHECK(run::forecast(model, prep.stats, tail).values == out.values);
  // Only the last L rows matter.
  CHECK(run::forecast(model, prep.stats, raw.slice(114, 130)).values == out.values);
  CHECK_THROWS(run::forecast(model, prep.stats, raw.slice(0, 10)));

  const fs::path p = fs::temp_directory_path() / "dcm_forecast.csv";
  data::write_csv(p.string(), out);
  CHECK(data::load_csv(p.string()).values == out.values);
}

TEST_CASE("training workflow writes reproducible results") {
  RunConfig cfg = tiny_run();
  const auto raw = run::load_dataset(cfg);
  run::bind_to_data(cfg, raw);
  const auto a = run::train_model(cfg, raw);
  const auto b = run::train_model(cfg, raw);
  CHECK(a.history.steps == 3);
  CHECK(a.history.step_losses == b.history.step_losses);
  CHECK(serialize_checkpoint(cfg, a.model, a.stats) == serialize_checkpoint(cfg, b.model, b.stats));
  CHECK(a.test.mse == b.test.mse);
  CHECK(a.persistence.windows == a.test.windows);
}

TEST_CASE("ablation and benchmark helpers") {
  RunConfig cfg = tiny_run();
  const auto raw = run::load_dataset(cfg);
  run::bind_to_data(cfg, raw);
  const auto rows = run::ablate(cfg, raw, run::parse_variant_list("full"));
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].variant == "full");
  CHECK(rows[0].steps == 3);
  const auto csv = run::ablation_csv(rows);
  CHECK(csv.rfind("variant,horizon,mse,mae,steps\n", 0) == 0);
  CHECK(run::parse_variant_list("full, swapped").size() == 2);
  CHECK_THROWS(run::parse_variant_list("full,bogus"));

  const auto bench = run::bench_scan({64}, 1, 3);
  REQUIRE(bench.size() == 1);
  CHECK(bench[0].length == 64);
  CHECK(bench[0].max_abs_diff <= 1e-4);
  CHECK(run::parse_lengths("256,512") == std::vector<std::size_t>{256, 512});
  CHECK_THROWS(run::parse_lengths("256,abc"));
}

TEST_CASE("command-line exit codes") {
  const std::string cli = DCM_CLI_PATH;
  const fs::path out = fs::temp_directory_path() / "dcm_cli_test";
  auto status = [](const std::string& cmd) {
    const int s = std::system((cmd + " > /dev/null 2>&1").c_str());
    return WIFEXITED(s) ? WEXITSTATUS(s) : -1;
  };
  CHECK(status(cli + " train --data /nonexistent/data.csv --out " + out.string()) == 2);
  CHECK(status(cli + " train --data synth --set no_such_key=1 --out " + out.string()) == 1);
  CHECK(status(cli + " --help") == 0);
}
