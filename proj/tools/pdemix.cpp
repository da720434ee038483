// pdemix: generate synthetic reaction-diffusion data, fit the PDE mixture,
// compare component subsets, predict and probe degeneracy.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pdemix/commands.hpp"

namespace {

using namespace pdemix;
using namespace pdemix::cli;

struct Common {
  std::string config;
  std::string data;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::size_t workers = 0;
};

void add_common(CLI::App* app, Common& c, bool needs_data) {
  app->add_option("--config", c.config, "JSON run configuration")->check(CLI::ExistingFile);
  if (needs_data) app->add_option("--data", c.data, "dataset split directory (or dataset root)");
  app->add_option("--out", c.out, "output directory");
  app->add_option("--seed", c.seed, "override the seed");
  app->add_option("--workers", c.workers, "worker threads (default: PDEMIX_WORKERS or all cores)");
}

RunConfig load(const Common& c) {
  RunConfig cfg = c.config.empty() ? run_config_from_json(json::object()) : load_run_config(c.config);
  if (!c.data.empty()) cfg.data_dir = c.data;
  if (!c.out.empty()) cfg.out_dir = c.out;
  return cfg;
}

std::string require_path(const std::string& value, const char* what) {
  if (value.empty()) throw CommandError(std::string("missing ") + what + " (flag or config paths)");
  return value;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mixture-of-PDE variational inference on synthetic reaction-diffusion data"};
  app.require_subcommand(1);

  Common gen_c, fit_c, ev_c, pred_c, deg_c;

  auto* gen = app.add_subcommand("generate", "write train/val/test splits");
  add_common(gen, gen_c, false);

  auto* fit = app.add_subcommand("fit", "fit every sample of a split");
  add_common(fit, fit_c, true);

  auto* ev = app.add_subcommand("evidence", "summed ELBO per component subset and seed");
  add_common(ev, ev_c, true);
  std::vector<std::string> subsets;
  std::vector<std::uint64_t> seeds;
  ev->add_option("--subset", subsets, "component subset such as 0,1 (repeatable)");
  ev->add_option("--seeds", seeds, "fit seeds (overrides config seeds)");

  auto* pred = app.add_subcommand("predict", "posterior-mean frames at requested times");
  add_common(pred, pred_c, true);
  std::string report, sample;
  std::vector<double> times;
  pred->add_option("--report", report, "report JSON or fit output directory")->required();
  pred->add_option("--sample", sample, "sample id")->required();
  pred->add_option("--times", times, "prediction times")->delimiter(',');

  auto* deg = app.add_subcommand("degeneracy", "true-vs-wrong component probe");
  add_common(deg, deg_c, true);
  std::optional<std::size_t> true_id, wrong_id;
  deg->add_option("--true", true_id, "index of the generating component");
  deg->add_option("--wrong", wrong_id, "index of the competing component");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      RunConfig cfg = load(gen_c);
      if (gen_c.seed) cfg.generate.seed = *gen_c.seed;
      const std::string out = require_path(gen_c.out.empty() ? cfg.data_dir : cfg.out_dir, "--out");
      cmd_generate(cfg, out, resolve_workers(gen_c.workers), std::cout);
    } else if (*fit) {
      RunConfig cfg = load(fit_c);
      if (fit_c.seed) cfg.fit.seed = *fit_c.seed;
      cmd_fit(cfg, require_path(cfg.data_dir, "--data"), require_path(cfg.out_dir, "--out"),
              resolve_workers(fit_c.workers), std::cout);
    } else if (*ev) {
      RunConfig cfg = load(ev_c);
      if (ev_c.seed) cfg.seeds = {*ev_c.seed};
      if (!seeds.empty()) cfg.seeds = seeds;
      if (!subsets.empty()) {
        cfg.evidence_subsets.clear();
        for (const auto& s : subsets) cfg.evidence_subsets.push_back(parse_subset(s, cfg.components.size()));
      }
      cmd_evidence(cfg, require_path(cfg.data_dir, "--data"), require_path(cfg.out_dir, "--out"),
                   resolve_workers(ev_c.workers), std::cout);
    } else if (*pred) {
      RunConfig cfg = load(pred_c);
      if (pred_c.seed) cfg.fit.seed = *pred_c.seed;
      cmd_predict(cfg, require_path(cfg.data_dir, "--data"), report, sample, times,
                  require_path(cfg.out_dir, "--out"), std::cout);
    } else if (*deg) {
      RunConfig cfg = load(deg_c);
      if (deg_c.seed) cfg.fit.seed = *deg_c.seed;
      const auto t = true_id ? true_id : cfg.degeneracy_true;
      const auto w = wrong_id ? wrong_id : cfg.degeneracy_wrong;
      if (!t || !w) throw CommandError("degeneracy needs --true and --wrong (or config degeneracy)");
      cmd_degeneracy(cfg, require_path(cfg.data_dir, "--data"), require_path(cfg.out_dir, "--out"), *t, *w,
                     resolve_workers(deg_c.workers), std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "pdemix: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
