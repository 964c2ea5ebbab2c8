#pragma once

#include "subgp/common.hpp"
#include "subgp/inference.hpp"
#include "subgp/io.hpp"
#include "subgp/metrics.hpp"
#include "subgp/model.hpp"
#include "subgp/theory.hpp"
#include "subgp/version.hpp"

#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

namespace subgp::experiment {

inline int worker_cap() {
  if (const char* env = std::getenv("SUBSPACE_GP_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) return v;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t x = seed ^ (0x9e3779b97f4a7c15ULL * (salt + 0x51ULL));
  return detail::splitmix64(x);
}

struct ExperimentConfig {
  std::string name = "experiment";
  std::string output_dir = "runs/experiment";
  std::uint64_t seed = 1;

  std::string setting = "fixed_design";
  std::string truth_family = "sine";
  int ambient_dim = 3;
  int dstar = 1;
  double sigma = 1.0;
  double q_truncation = 0.0;  // 0 means 3 K_n
  std::vector<int> n_grid = {100, 400, 1600};
  int n_chains = 4;

  double c_int = 1.0;
  double lambda = 1.0;
  double beta = 1.0;  // reference slope only

  long n_iter = 5000;
  long burn_in = 1000;
  int thin = 10;
  double step_a = 0.3;
  double step_q = 0.1;
  double move_prob_a = 0.4;
  double move_prob_q = 0.4;
  double dim_move_prob = 0.2;
  int metrics_qmc = 16384;

  nlohmann::json to_json() const {
    return {{"name", name},
            {"output_dir", output_dir},
            {"seed", seed},
            {"setting", setting},
            {"truth_family", truth_family},
            {"d", ambient_dim},
            {"dstar", dstar},
            {"sigma", sigma},
            {"q_truncation", q_truncation},
            {"n_grid", n_grid},
            {"n_chains", n_chains},
            {"c_int", c_int},
            {"lambda", lambda},
            {"beta", beta},
            {"n_iter", n_iter},
            {"burn_in", burn_in},
            {"thin", thin},
            {"step_a", step_a},
            {"step_q", step_q},
            {"move_prob_a", move_prob_a},
            {"move_prob_q", move_prob_q},
            {"dim_move_prob", dim_move_prob},
            {"metrics_qmc", metrics_qmc}};
  }

  static ExperimentConfig from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    const nlohmann::json defaults = c.to_json();
    for (const auto& [key, val] : j.items())
      if (!defaults.contains(key))
        throw invalid_argument_error("experiment config: unknown key '" + key + "'");
    c.name = j.value("name", c.name);
    c.output_dir = j.value("output_dir", c.output_dir);
    c.seed = j.value("seed", c.seed);
    c.setting = j.value("setting", c.setting);
    c.truth_family = j.value("truth_family", c.truth_family);
    c.ambient_dim = j.value("d", c.ambient_dim);
    c.dstar = j.value("dstar", c.dstar);
    c.sigma = j.value("sigma", c.sigma);
    c.q_truncation = j.value("q_truncation", c.q_truncation);
    if (j.contains("n_grid")) c.n_grid = j["n_grid"].get<std::vector<int>>();
    c.n_chains = j.value("n_chains", c.n_chains);
    c.c_int = j.value("c_int", c.c_int);
    c.lambda = j.value("lambda", c.lambda);
    c.beta = j.value("beta", c.beta);
    c.n_iter = j.value("n_iter", c.n_iter);
    c.burn_in = j.value("burn_in", c.burn_in);
    c.thin = j.value("thin", c.thin);
    c.step_a = j.value("step_a", c.step_a);
    c.step_q = j.value("step_q", c.step_q);
    c.move_prob_a = j.value("move_prob_a", c.move_prob_a);
    c.move_prob_q = j.value("move_prob_q", c.move_prob_q);
    c.dim_move_prob = j.value("dim_move_prob", c.dim_move_prob);
    c.metrics_qmc = j.value("metrics_qmc", c.metrics_qmc);
    return c;
  }
};

struct TrendPoint {
  int n = 0;
  double median_function_error = 0.0;
  double mass_dim_below = 0.0;
  double median_d2 = 0.0;  // over draws with Gamma >= d*
  double rhat_a = 0.0;
  double rhat_log_post = 0.0;
};

struct ExperimentResult {
  std::vector<TrendPoint> trend;
  std::vector<std::vector<inference::PosteriorSummary>> summaries;  // [n_index][chain]
  std::string output_dir;
};

/// Chains for one dataset, at most worker_cap() running at a time, results
/// kept in chain order so downstream output is deterministic.
inline std::vector<inference::Chain> run_chains(const model::Dataset& data,
                                                const model::Setting& setting,
                                                const model::HierarchicalPrior& prior,
                                                const inference::ChainConfig& base, int n_chains,
                                                std::uint64_t seed_salt) {
  std::vector<inference::Chain> chains(n_chains);
  std::vector<std::string> errors(n_chains);
  const int width = std::max(1, std::min(worker_cap(), n_chains));
  for (int start = 0; start < n_chains; start += width) {
    std::vector<std::thread> pool;
    for (int c = start; c < std::min(n_chains, start + width); ++c) {
      pool.emplace_back([&, c] {
        try {
          inference::ChainConfig cfg = base;
          cfg.seed = mix_seed(base.seed, seed_salt * 131 + c);
          chains[c] = inference::mcmc_run(data, setting, prior, cfg);
        } catch (const std::exception& e) {
          errors[c] = e.what();
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  for (int c = 0; c < n_chains; ++c)
    if (!errors[c].empty())
      throw numerical_error("chain " + std::to_string(c) + " failed: " + errors[c]);
  return chains;
}

inline std::string metric_name_for(model::SettingKind kind) {
  switch (kind) {
    case model::SettingKind::density: return "hellinger";
    case model::SettingKind::fixed_design: return "empirical_l2";
    case model::SettingKind::random_design: return "l2_design";
  }
  return "?";
}

/// Rebuilds the three trend figures from trend.csv alone.
inline void emit_figures(const std::string& dir, double beta, int dstar) {
  std::ifstream is(dir + "/trend.csv");
  if (!is) throw error("emit_figures: missing " + dir + "/trend.csv");
  std::string line;
  std::getline(is, line);  // header
  std::vector<double> ns, fe, mass, d2;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::string tok;
    std::vector<double> row;
    while (std::getline(ls, tok, ',')) row.push_back(std::stod(tok));
    ns.push_back(row[0]);
    fe.push_back(row[1]);
    mass.push_back(row[2]);
    d2.push_back(row[3]);
  }
  const double slope = -beta / (2.0 * beta + dstar);
  {
    std::ostringstream os;
    io::PlotOptions opt;
    opt.title = "median function error vs n";
    opt.xlabel = "n";
    opt.ylabel = "median error";
    opt.logx = opt.logy = true;
    opt.ref_slope = slope;
    opt.ref_label = "reference slope " + std::to_string(slope).substr(0, 7);
    io::svg_line_plot(os, {{"median error", ns, fe}}, opt);
    io::write_file(dir + "/fn_error_vs_n.svg", os.str());
  }
  {
    std::ostringstream os;
    io::PlotOptions opt;
    opt.title = "posterior mass of {Gamma < d*} vs n";
    opt.xlabel = "n";
    opt.ylabel = "P(Gamma < d*)";
    opt.logx = true;
    io::svg_line_plot(os, {{"P(Gamma < d*)", ns, mass}}, opt);
    io::write_file(dir + "/mass_dim_below_vs_n.svg", os.str());
  }
  {
    std::ostringstream os;
    io::PlotOptions opt;
    opt.title = "median d2 subspace loss vs n";
    opt.xlabel = "n";
    opt.ylabel = "median d2";
    opt.logx = true;
    io::svg_line_plot(os, {{"median d2", ns, d2}}, opt);
    io::write_file(dir + "/d2_vs_n.svg", os.str());
  }
}

/// The full contraction probe: per n generate data, run chains, stream the
/// posterior functionals, persist CSVs and figures. Chain-level parallelism
/// only; every file is written from this coordinator.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  const auto t_start = std::chrono::steady_clock::now();
  fs::create_directories(cfg.output_dir);
  io::write_file(cfg.output_dir + "/config.json", cfg.to_json().dump(2) + "\n");

  Rng root(cfg.seed);
  Rng truth_rng = root.stream(1);
  const auto family = model::truth_family_from_string(cfg.truth_family);
  const auto truth = model::make_truth(family, cfg.ambient_dim, cfg.dstar, truth_rng);

  model::Setting setting;
  const auto kind = model::setting_kind_from_string(cfg.setting);
  const double q_trunc =
      cfg.q_truncation > 0.0 ? cfg.q_truncation : model::default_truncation(truth);
  switch (kind) {
    case model::SettingKind::density: setting = model::Setting::density(); break;
    case model::SettingKind::fixed_design: setting = model::Setting::fixed_design(cfg.sigma); break;
    case model::SettingKind::random_design:
      setting = model::Setting::random_design(cfg.sigma, q_trunc, cfg.ambient_dim);
      break;
  }
  setting.truncation = q_trunc;

  std::unique_ptr<metrics::BallIntegrator> integrator;
  if (kind != model::SettingKind::fixed_design)
    integrator = std::make_unique<metrics::BallIntegrator>(cfg.ambient_dim, cfg.metrics_qmc,
                                                           mix_seed(cfg.seed, 7));

  ExperimentResult result;
  result.output_dir = cfg.output_dir;
  std::vector<io::MetricsRow> metric_rows;
  std::ostringstream subspace_csv;
  subspace_csv << "draw_index,n,chain,b,a,d1,d2,d3\n";
  const auto persist_tables = [&] {
    std::ostringstream os;
    io::write_metrics_csv(os, metric_rows);
    io::write_file(cfg.output_dir + "/metrics.csv", os.str());
    io::write_file(cfg.output_dir + "/subspace.csv", subspace_csv.str());
  };

  try {
  for (std::size_t ni = 0; ni < cfg.n_grid.size(); ++ni) {
    const int n = cfg.n_grid[ni];
    const auto prior = model::HierarchicalPrior::uniform(cfg.ambient_dim, n, cfg.c_int, cfg.lambda);
    if (cfg.dstar <= prior.dim_cap) prior.check_supports_truth(cfg.dstar, n);

    Rng data_rng = root.stream(100 + ni);
    const auto data = model::sample_dataset(truth, setting, n, data_rng);
    {
      std::ostringstream os;
      data.write_csv(os);
      io::write_file(cfg.output_dir + "/data_n" + std::to_string(n) + ".csv", os.str());
      io::write_file(cfg.output_dir + "/data_n" + std::to_string(n) + ".meta.json",
                     data.metadata.dump(2) + "\n");
    }

    inference::ChainConfig chain_cfg;
    chain_cfg.n_iter = cfg.n_iter;
    chain_cfg.burn_in = cfg.burn_in;
    chain_cfg.thin = cfg.thin;
    chain_cfg.step_a = cfg.step_a;
    chain_cfg.step_q = cfg.step_q;
    chain_cfg.move_prob_a = cfg.move_prob_a;
    chain_cfg.move_prob_q = cfg.move_prob_q;
    chain_cfg.dim_move_prob = cfg.dim_move_prob;
    chain_cfg.seed = cfg.seed;

    const auto chains = run_chains(data, setting, prior, chain_cfg, cfg.n_chains, ni);

    std::vector<inference::PosteriorSummary> summaries;
    std::vector<std::vector<double>> a_streams, lp_streams;
    std::vector<double> fn_all, d2_ok_all;
    int below = 0, total = 0;
    for (int c = 0; c < cfg.n_chains; ++c) {
      {
        std::ostringstream os;
        inference::write_chain_jsonl(chains[c], os);
        io::write_file(cfg.output_dir + "/chain_n" + std::to_string(n) + "_c" +
                           std::to_string(c) + ".jsonl",
                       os.str());
      }
      auto summary = inference::posterior_functionals(chains[c], truth, setting, integrator.get());
      const std::string metric = metric_name_for(kind);
      for (std::size_t i = 0; i < summary.function_error.size(); ++i) {
        const long idx = static_cast<long>(i);
        const std::string suffix = "/n=" + std::to_string(n) + "/chain=" + std::to_string(c);
        metric_rows.push_back({idx, metric + suffix, summary.function_error[i],
                               summary.function_error_se[i]});
        subspace_csv << idx << "," << n << "," << c << "," << summary.dims[i] << ","
                     << format17(summary.rescales[i]) << "," << format17(summary.d1[i]) << ","
                     << format17(summary.d2[i]) << "," << format17(summary.d3[i]) << "\n";
        fn_all.push_back(summary.function_error[i]);
        ++total;
        if (summary.dims[i] < cfg.dstar) ++below;
        else d2_ok_all.push_back(summary.d2[i]);
      }
      a_streams.push_back(summary.rescales);
      lp_streams.push_back(summary.log_post);
      summaries.push_back(std::move(summary));
    }

    TrendPoint tp;
    tp.n = n;
    tp.median_function_error = inference::detail::median(fn_all);
    tp.mass_dim_below = total > 0 ? static_cast<double>(below) / total : 0.0;
    tp.median_d2 = inference::detail::median(d2_ok_all);
    tp.rhat_a = inference::split_rhat(a_streams);
    tp.rhat_log_post = inference::split_rhat(lp_streams);
    result.trend.push_back(tp);
    result.summaries.push_back(std::move(summaries));
  }
  } catch (...) {
    persist_tables();  // partial results stay on disk when a chain fails
    throw;
  }

  {
    persist_tables();
    std::ostringstream trend;
    trend << "n,median_function_error,mass_dim_below,median_d2,rhat_a,rhat_log_post\n";
    for (const auto& tp : result.trend)
      trend << tp.n << "," << format17(tp.median_function_error) << ","
            << format17(tp.mass_dim_below) << "," << format17(tp.median_d2) << ","
            << format17(tp.rhat_a) << "," << format17(tp.rhat_log_post) << "\n";
    io::write_file(cfg.output_dir + "/trend.csv", trend.str());
  }
  emit_figures(cfg.output_dir, cfg.beta, cfg.dstar);

  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  nlohmann::json summary = {{"wall_clock_seconds", wall},
                            {"version", kVersion},
                            {"name", cfg.name},
                            {"workers", worker_cap()},
                            {"trend", nlohmann::json::array()}};
  for (const auto& tp : result.trend)
    summary["trend"].push_back({{"n", tp.n},
                                {"median_function_error", tp.median_function_error},
                                {"mass_dim_below", tp.mass_dim_below},
                                {"median_d2", tp.median_d2},
                                {"rhat_a", tp.rhat_a},
                                {"rhat_log_post", tp.rhat_log_post}});
  io::write_file(cfg.output_dir + "/summary.json", summary.dump(2) + "\n");
  return result;
}

}  // namespace subgp::experiment
