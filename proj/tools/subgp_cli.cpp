// subgp command line: experiment orchestration and one-shot probes on top of
// the header-only library. Exit codes: 0 success, 2 configuration error,
// 3 numerical failure.

#include "subgp/experiment.hpp"
#include "subgp/inference.hpp"
#include "subgp/io.hpp"
#include "subgp/lingeom.hpp"
#include "subgp/model.hpp"
#include "subgp/theory.hpp"
#include "subgp/version.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace subgp;

namespace {

struct RunDir {
  std::string path;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  explicit RunDir(const std::string& p) : path(p) { fs::create_directories(p); }

  void persist_config(const json& resolved) const {
    io::write_file(path + "/config.json", resolved.dump(2) + "\n");
  }

  void finish(json extra = json::object()) const {
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    extra["wall_clock_seconds"] = wall;
    extra["version"] = kVersion;
    io::write_file(path + "/summary.json", extra.dump(2) + "\n");
  }
};

void copy_input(const RunDir& dir, const std::string& src) {
  fs::copy_file(src, dir.path + "/" + fs::path(src).filename().string(),
                fs::copy_options::overwrite_existing);
}

json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw invalid_argument_error("cannot open " + path);
  json j;
  is >> j;
  return j;
}

model::Dataset read_dataset(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw invalid_argument_error("cannot open " + path);
  return model::Dataset::read_csv(is);
}

int cmd_rates(const theory::RateInputs& in, const std::string& out) {
  const auto spec = theory::rates(in);  // validate before touching the filesystem
  RunDir dir(out);
  dir.persist_config(spec.to_json()["inputs"]);
  const std::string text = spec.to_json().dump(2) + "\n";
  io::write_file(dir.path + "/rates.json", text);
  std::cout << text;
  dir.finish();
  return 0;
}

int cmd_geom_check(int d, int b, double eps, int n_mc, std::uint64_t seed,
                   const std::string& out) {
  RunDir dir(out);
  dir.persist_config({{"d", d}, {"b", b}, {"eps", eps}, {"n_mc", n_mc}, {"seed", seed}});
  Rng rng(seed);
  const auto qstar = lingeom::haar_sample(d, rng);
  const auto res = lingeom::haar_mass_check(qstar, b, eps, n_mc, rng);
  json j = {{"estimate", res.estimate},
            {"bound", res.bound},
            {"mc_se", res.mc_se},
            {"n_member", res.n_member},
            {"n_mc", res.n_mc},
            {"estimate_above_bound", res.estimate >= res.bound}};
  io::write_file(dir.path + "/geom_check.json", j.dump(2) + "\n");
  std::cout << j.dump(2) << "\n";
  dir.finish(json{{"estimate_above_bound", res.estimate >= res.bound}});
  return res.estimate >= res.bound ? 0 : 3;
}

int cmd_prior_sample(int d, int n, int draws, double c_int, double lambda, std::uint64_t seed,
                     const std::string& out) {
  RunDir dir(out);
  dir.persist_config({{"d", d},
                      {"n", n},
                      {"draws", draws},
                      {"c_int", c_int},
                      {"lambda", lambda},
                      {"seed", seed}});
  const auto prior = model::HierarchicalPrior::uniform(d, n, c_int, lambda);
  Rng rng(seed);
  std::ostringstream os;
  for (int i = 0; i < draws; ++i) {
    const int b = prior.sample_dim(rng);
    const double a = prior.sample_rescale(b, rng);
    const auto q = lingeom::haar_sample(d, rng);
    os << "{\"b\":" << b << ",\"a\":" << format17(a) << ",\"q\":[";
    for (int r = 0; r < d; ++r)
      for (int c = 0; c < d; ++c)
        os << (r + c ? "," : "") << format17(q.matrix()(r, c));
    os << "]}\n";
  }
  io::write_file(dir.path + "/prior_draws.jsonl", os.str());
  dir.finish(json{{"dim_cap", prior.dim_cap}, {"draws", draws}});
  return 0;
}

int cmd_fit(const std::string& data_path, const std::string& setting_name, double sigma,
            double q_trunc, int chains, const inference::ChainConfig& base, double c_int,
            double lambda, const std::string& out) {
  RunDir dir(out);
  auto data = read_dataset(data_path);
  copy_input(dir, data_path);
  const auto kind = model::setting_kind_from_string(setting_name);
  data.kind = kind;
  model::Setting setting;
  switch (kind) {
    case model::SettingKind::density: setting = model::Setting::density(); break;
    case model::SettingKind::fixed_design: setting = model::Setting::fixed_design(sigma); break;
    case model::SettingKind::random_design:
      setting = model::Setting::random_design(sigma, q_trunc > 0 ? q_trunc : 3.0, data.dim());
      break;
  }
  dir.persist_config({{"data", data_path},
                      {"setting", setting_name},
                      {"sigma", sigma},
                      {"q_truncation", setting.truncation},
                      {"chains", chains},
                      {"n_iter", base.n_iter},
                      {"burn_in", base.burn_in},
                      {"thin", base.thin},
                      {"seed", base.seed},
                      {"c_int", c_int},
                      {"lambda", lambda}});
  const auto prior = model::HierarchicalPrior::uniform(data.dim(), data.size(), c_int, lambda);
  const auto result = experiment::run_chains(data, setting, prior, base, chains, 0);
  json acc = json::array();
  std::vector<std::vector<double>> a_streams, lp_streams;
  for (int c = 0; c < chains; ++c) {
    std::ostringstream os;
    inference::write_chain_jsonl(result[c], os);
    io::write_file(dir.path + "/chain_c" + std::to_string(c) + ".jsonl", os.str());
    acc.push_back({{"latent", result[c].ess_stats.rate()},
                   {"a", result[c].a_stats.rate()},
                   {"q", result[c].q_stats.rate()},
                   {"b", result[c].b_stats.rate()}});
    std::vector<double> as, lps;
    for (const auto& drw : result[c].draws) {
      as.push_back(drw.a);
      lps.push_back(drw.log_post);
    }
    a_streams.push_back(std::move(as));
    lp_streams.push_back(std::move(lps));
  }
  dir.finish(json{{"acceptance", acc},
                  {"rhat_a", inference::split_rhat(a_streams)},
                  {"rhat_log_post", inference::split_rhat(lp_streams)},
                  {"dim_cap", prior.dim_cap}});
  return 0;
}

int cmd_subspace(const std::vector<std::string>& chain_paths, const std::string& meta_path,
                 const std::string& out) {
  RunDir dir(out);
  dir.persist_config({{"chains", chain_paths}, {"meta", meta_path}});
  const json meta = read_json_file(meta_path);
  copy_input(dir, meta_path);
  const int d = meta.at("d").get<int>();
  const int dstar = meta.at("dstar").get<int>();
  Matrix qstar(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) qstar(i, j) = meta.at("qstar")[i][j].get<double>();
  const auto truth_frame = lingeom::SubspaceFrame::from_orientation(
      lingeom::Orthogonal::from_matrix(qstar), dstar);

  std::ostringstream os;
  os << "draw_index,chain,b,a,d1,d2,d3\n";
  for (std::size_t c = 0; c < chain_paths.size(); ++c) {
    std::ifstream is(chain_paths[c]);
    if (!is) throw invalid_argument_error("cannot open " + chain_paths[c]);
    const auto chain = inference::read_chain_jsonl(is);
    for (std::size_t i = 0; i < chain.draws.size(); ++i) {
      const auto& drw = chain.draws[i];
      const auto frame = lingeom::SubspaceFrame::from_orientation(
          lingeom::Orthogonal::from_matrix(drw.q), drw.b);
      os << i << "," << c << "," << drw.b << "," << format17(drw.a);
      for (auto loss :
           {lingeom::SubspaceLoss::d1, lingeom::SubspaceLoss::d2, lingeom::SubspaceLoss::d3})
        os << "," << format17(lingeom::subspace_distance(loss, truth_frame, frame));
      os << "\n";
    }
  }
  io::write_file(dir.path + "/subspace.csv", os.str());
  dir.finish();
  return 0;
}

int cmd_concentration(int b, double a, double eps, int grid_per_dim, int n_mc,
                      const std::string& family, std::uint64_t seed, const std::string& out) {
  RunDir dir(out);
  dir.persist_config({{"b", b},
                      {"a", a},
                      {"eps", eps},
                      {"grid_per_dim", grid_per_dim},
                      {"n_mc", n_mc},
                      {"family", family},
                      {"seed", seed}});
  const auto grid = qmc::grid_on_ball(b, grid_per_dim);
  Rng rng(seed);
  const auto truth = model::make_truth(model::truth_family_from_string(family), b, b,
                                       lingeom::Orthogonal::identity(b));
  Vector f(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) f(static_cast<int>(i)) = truth.core(grid[i]);
  const gp::SparsityPattern pattern(b, lingeom::Orthogonal::identity(b), a);
  const auto parts = theory::concentration(f, grid, pattern, eps, n_mc, rng);
  json j = {{"rkhs_norm2", parts.rkhs_norm2},
            {"smallball_neglog", parts.smallball_neglog},
            {"smallball_se", parts.smallball_se},
            {"total", parts.total},
            {"metadata", parts.metadata}};
  io::write_file(dir.path + "/concentration.json", j.dump(2) + "\n");
  std::cout << j.dump(2) << "\n";
  dir.finish();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hierarchical projected Gaussian-process regression and density estimation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  // rates
  theory::RateInputs rin;
  std::string rates_out = "runs/rates";
  auto* rates = app.add_subcommand("rates", "theoretical rate quantities as JSON");
  rates->set_config("--config");
  rates->add_option("--n", rin.n, "sample size")->required();
  rates->add_option("--beta", rin.beta, "smoothness");
  rates->add_option("--dstar", rin.dstar, "intrinsic dimension");
  rates->add_option("--kn", rin.K_n, "Hoelder radius bound");
  rates->add_option("--ceps", rin.C_eps, "C_eps constant");
  rates->add_option("--cint", rin.c_int, "dimension cap constant");
  rates->add_option("--window", rin.window_L, "detectability window L");
  rates->add_option("--detect-d", rin.detect_D, "detectability constant D");
  rates->add_option("--d", rin.ambient_dim, "ambient dimension");
  rates->add_option("--cr", rin.C_r, "sieve constant C_r");
  rates->add_option("--gmin", rin.design_density_min, "design density floor");
  rates->add_option("--out", rates_out, "run directory");

  // geom-check
  int gc_d = 3, gc_b = 1, gc_nmc = 100000;
  double gc_eps = 1.0;
  std::uint64_t gc_seed = 1;
  std::string gc_out = "runs/geom-check";
  auto* geom = app.add_subcommand("geom-check", "Haar-mass lower bound check");
  geom->set_config("--config");
  geom->add_option("--d", gc_d, "ambient dimension");
  geom->add_option("--dstar", gc_b, "subspace dimension b");
  geom->add_option("--eps", gc_eps, "radius")->required();
  geom->add_option("--n-mc", gc_nmc, "Monte-Carlo draws");
  geom->add_option("--seed", gc_seed, "seed");
  geom->add_option("--out", gc_out, "run directory");

  // prior-sample
  int ps_d = 3, ps_n = 1000, ps_draws = 100;
  double ps_cint = 1.0, ps_lambda = 1.0;
  std::uint64_t ps_seed = 1;
  std::string ps_out = "runs/prior-sample";
  auto* ps = app.add_subcommand("prior-sample", "draw hierarchical prior states");
  ps->set_config("--config");
  ps->add_option("--d", ps_d, "ambient dimension");
  ps->add_option("--n", ps_n, "sample size the cap is tuned for");
  ps->add_option("--draws", ps_draws, "number of draws");
  ps->add_option("--cint", ps_cint, "dimension cap constant");
  ps->add_option("--lambda", ps_lambda, "rescale rate");
  ps->add_option("--seed", ps_seed, "seed");
  ps->add_option("--out", ps_out, "run directory");

  // fit
  std::string fit_data, fit_setting = "fixed_design", fit_out = "runs/fit";
  double fit_sigma = 1.0, fit_q = 0.0, fit_cint = 1.0, fit_lambda = 1.0;
  int fit_chains = 4;
  inference::ChainConfig fit_cfg;
  auto* fit = app.add_subcommand("fit", "run the posterior sampler on a dataset CSV");
  fit->set_config("--config");
  fit->add_option("--data", fit_data, "dataset CSV")->required();
  fit->add_option("--setting", fit_setting, "density|fixed_design|random_design");
  fit->add_option("--sigma", fit_sigma, "noise sd");
  fit->add_option("--q", fit_q, "truncation Q (random design)");
  fit->add_option("--chains", fit_chains, "number of chains");
  fit->add_option("--iters", fit_cfg.n_iter, "iterations per chain");
  fit->add_option("--burn-in", fit_cfg.burn_in, "burn-in iterations");
  fit->add_option("--thin", fit_cfg.thin, "thinning stride");
  fit->add_option("--seed", fit_cfg.seed, "seed");
  fit->add_option("--cint", fit_cint, "dimension cap constant");
  fit->add_option("--lambda", fit_lambda, "rescale rate");
  fit->add_option("--out", fit_out, "run directory");

  // subspace
  std::vector<std::string> sub_chains;
  std::string sub_meta, sub_out = "runs/subspace";
  auto* sub = app.add_subcommand("subspace", "subspace losses of chain draws vs a stored truth");
  sub->set_config("--config");
  sub->add_option("--chain", sub_chains, "chain JSONL (repeatable)")->required();
  sub->add_option("--meta", sub_meta, "dataset metadata JSON with qstar and dstar")->required();
  sub->add_option("--out", sub_out, "run directory");

  // concentration
  int co_b = 1, co_grid = 64, co_nmc = 20000;
  double co_a = 1.0, co_eps = 1.0;
  std::string co_family = "sine", co_out = "runs/concentration";
  std::uint64_t co_seed = 1;
  auto* conc = app.add_subcommand("concentration", "concentration-function surrogate parts");
  conc->set_config("--config");
  conc->add_option("--b", co_b, "intrinsic dimension (<= 2)");
  conc->add_option("--a", co_a, "rescaling");
  conc->add_option("--eps", co_eps, "radius")->required();
  conc->add_option("--grid", co_grid, "grid points per dimension");
  conc->add_option("--n-mc", co_nmc, "Monte-Carlo paths");
  conc->add_option("--family", co_family, "core family for the target");
  conc->add_option("--seed", co_seed, "seed");
  conc->add_option("--out", co_out, "run directory");

  // experiment
  experiment::ExperimentConfig ex;
  auto* exp = app.add_subcommand("experiment", "contraction / subspace-recovery trend runs");
  exp->set_config("--config");
  exp->add_option("--name", ex.name, "experiment name");
  exp->add_option("--out", ex.output_dir, "run directory");
  exp->add_option("--seed", ex.seed, "seed");
  exp->add_option("--setting", ex.setting, "density|fixed_design|random_design");
  exp->add_option("--family", ex.truth_family, "truth family");
  exp->add_option("--d", ex.ambient_dim, "ambient dimension");
  exp->add_option("--dstar", ex.dstar, "intrinsic dimension");
  exp->add_option("--sigma", ex.sigma, "noise sd");
  exp->add_option("--n-grid", ex.n_grid, "sample sizes");
  exp->add_option("--chains", ex.n_chains, "chains per n");
  exp->add_option("--iters", ex.n_iter, "iterations per chain");
  exp->add_option("--burn-in", ex.burn_in, "burn-in iterations");
  exp->add_option("--thin", ex.thin, "thinning stride");
  exp->add_option("--beta", ex.beta, "reference smoothness for the slope guide");
  exp->add_option("--cint", ex.c_int, "dimension cap constant");
  exp->add_option("--lambda", ex.lambda, "rescale rate");
  exp->add_option("--dim-move-prob", ex.dim_move_prob, "dimension move probability");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*rates) return cmd_rates(rin, rates_out);
    if (*geom) return cmd_geom_check(gc_d, gc_b, gc_eps, gc_nmc, gc_seed, gc_out);
    if (*ps) return cmd_prior_sample(ps_d, ps_n, ps_draws, ps_cint, ps_lambda, ps_seed, ps_out);
    if (*fit)
      return cmd_fit(fit_data, fit_setting, fit_sigma, fit_q, fit_chains, fit_cfg, fit_cint,
                     fit_lambda, fit_out);
    if (*sub) return cmd_subspace(sub_chains, sub_meta, sub_out);
    if (*conc)
      return cmd_concentration(co_b, co_a, co_eps, co_grid, co_nmc, co_family, co_seed, co_out);
    if (*exp) {
      const auto result = experiment::run_experiment(ex);
      std::cout << "experiment written to " << result.output_dir << "\n";
      return 0;
    }
  } catch (const invalid_argument_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  }
  return 2;
}
