#include "subgp/experiment.hpp"
#include "subgp/model.hpp"

#include <catch2/catch_amalgamated.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace subgp;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int run_cli(const std::string& args) {
  const std::string cmd = std::string(SUBGP_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path scratch(const std::string& leaf) {
  const fs::path p = fs::temp_directory_path() / "subgp_cli_tests" / leaf;
  fs::remove_all(p);
  fs::create_directories(p.parent_path());
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(is.good());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

json slurp_json(const fs::path& p) { return json::parse(slurp(p)); }

}  // namespace

TEST_CASE("cli rates: kappa lands in the emitted JSON", "[cli]") {
  const auto out = scratch("rates");
  REQUIRE(run_cli("rates --n 1024 --beta 1 --dstar 1 --out " + out.string()) == 0);
  const json j = slurp_json(out / "rates.json");
  CHECK(std::abs(j.at("kappa").get<double>() - 2.0 / 3.0) < 1e-12);
  CHECK(fs::exists(out / "config.json"));
  CHECK(fs::exists(out / "summary.json"));
  CHECK(slurp_json(out / "summary.json").contains("wall_clock_seconds"));
}

TEST_CASE("cli geom-check: estimate above bound, exit zero", "[cli]") {
  const auto out = scratch("geom");
  REQUIRE(run_cli("geom-check --d 3 --dstar 1 --eps 1.0 --n-mc 20000 --seed 3 --out " +
                  out.string()) == 0);
  const json j = slurp_json(out / "geom_check.json");
  CHECK(j.at("estimate").get<double>() >= j.at("bound").get<double>());
}

TEST_CASE("cli: unknown flag exits 2 with no run directory", "[cli]") {
  const auto out = scratch("bad-flag");
  CHECK(run_cli("rates --n 1024 --no-such-flag 1 --out " + out.string()) == 2);
  CHECK_FALSE(fs::exists(out));
  CHECK(run_cli("definitely-not-a-subcommand") == 2);
  // precondition violations after parsing exit 2 as config errors
  CHECK(run_cli("rates --n 1 --out " + scratch("bad-n").string()) == 2);
}

TEST_CASE("cli prior-sample and concentration smoke", "[cli]") {
  const auto out1 = scratch("prior");
  REQUIRE(run_cli("prior-sample --d 3 --n 500 --draws 25 --seed 5 --out " + out1.string()) == 0);
  std::ifstream is(out1 / "prior_draws.jsonl");
  int lines = 0;
  std::string line;
  while (std::getline(is, line))
    if (!line.empty()) ++lines;
  CHECK(lines == 25);

  const auto out2 = scratch("conc");
  REQUIRE(run_cli("concentration --b 1 --a 2.0 --eps 1.0 --grid 33 --n-mc 5000 --seed 6 --out " +
                  out2.string()) == 0);
  const json j = slurp_json(out2 / "concentration.json");
  CHECK(j.at("total").get<double>() ==
        j.at("rkhs_norm2").get<double>() + j.at("smallball_neglog").get<double>());
}

TEST_CASE("cli fit then subspace on a persisted dataset", "[cli][slow]") {
  const auto dir = scratch("fitflow");
  fs::create_directories(dir);
  Rng rng(920);
  const auto truth = model::make_truth(model::TruthFamily::sine, 2, 1, rng);
  const auto data = model::sample_dataset(truth, model::Setting::fixed_design(1.0), 30, rng);
  {
    std::ofstream os(dir / "data.csv");
    data.write_csv(os);
    std::ofstream meta(dir / "data.meta.json");
    meta << data.metadata.dump(2) << "\n";
  }
  REQUIRE(run_cli("fit --data " + (dir / "data.csv").string() +
                  " --setting fixed_design --sigma 1.0 --chains 2 --iters 400 --burn-in 100 "
                  "--thin 5 --seed 7 --out " +
                  (dir / "fit").string()) == 0);
  REQUIRE(fs::exists(dir / "fit" / "chain_c0.jsonl"));
  REQUIRE(fs::exists(dir / "fit" / "chain_c1.jsonl"));

  REQUIRE(run_cli("subspace --chain " + (dir / "fit" / "chain_c0.jsonl").string() + " --meta " +
                  (dir / "data.meta.json").string() + " --out " + (dir / "sub").string()) == 0);
  const std::string csv = slurp(dir / "sub" / "subspace.csv");
  CHECK(csv.rfind("draw_index,chain,b,a,d1,d2,d3\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') > 1);
}

TEST_CASE("experiment config: lossless round trip, unknown keys rejected", "[cli]") {
  experiment::ExperimentConfig cfg;
  cfg.name = "roundtrip";
  cfg.n_grid = {40, 80};
  cfg.seed = 99;
  cfg.dim_move_prob = 0.35;
  const auto back = experiment::ExperimentConfig::from_json(cfg.to_json());
  CHECK(back.to_json() == cfg.to_json());

  json bad = cfg.to_json();
  bad["not_a_key"] = 1;
  CHECK_THROWS_AS(experiment::ExperimentConfig::from_json(bad), invalid_argument_error);
}

TEST_CASE("experiment: tiny run writes the full artifact set", "[cli][slow]") {
  experiment::ExperimentConfig cfg;
  cfg.name = "tiny";
  cfg.output_dir = scratch("tiny-exp").string();
  cfg.seed = 13;
  cfg.ambient_dim = 2;
  cfg.dstar = 1;
  cfg.n_grid = {40};
  cfg.n_chains = 1;
  cfg.n_iter = 300;
  cfg.burn_in = 100;
  cfg.thin = 5;
  const auto result = experiment::run_experiment(cfg);
  REQUIRE(result.trend.size() == 1);
  for (const char* f : {"config.json", "metrics.csv", "subspace.csv", "trend.csv",
                        "summary.json", "fn_error_vs_n.svg", "mass_dim_below_vs_n.svg",
                        "d2_vs_n.svg", "data_n40.csv", "data_n40.meta.json",
                        "chain_n40_c0.jsonl"})
    CHECK(fs::exists(fs::path(cfg.output_dir) / f));

  // one metrics row per retained draw
  const std::string metrics = slurp(fs::path(cfg.output_dir) / "metrics.csv");
  const long rows = std::count(metrics.begin(), metrics.end(), '\n') - 1;
  CHECK(rows == (300 - 100 + 5 - 1) / 5);

  // figures are regenerable from the persisted CSVs alone
  const std::string fig_before = slurp(fs::path(cfg.output_dir) / "fn_error_vs_n.svg");
  experiment::emit_figures(cfg.output_dir, cfg.beta, cfg.dstar);
  CHECK(slurp(fs::path(cfg.output_dir) / "fn_error_vs_n.svg") == fig_before);
}
