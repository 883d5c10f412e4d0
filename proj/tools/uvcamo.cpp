#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <iostream>
#include <string>

#include "uvcamo/pipeline.hpp"
#include "uvcamo/selftest.hpp"

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool deterministic = false;
  std::string split;
};

void add_common(CLI::App* sub, CommonFlags& f) {
  sub->add_option("--config", f.config, "pipeline config (JSON)");
  sub->add_option("--seed", f.seed, "override the config seed");
  sub->add_option("--out", f.out, "output directory (overrides out_dir)");
  sub->add_flag("--deterministic", f.deterministic, "single-threaded, reproducible execution");
  sub->add_option("--split", f.split, "restrict to one split (efe-train, efe-test, texgen, eval-seen, eval-unseen)");
}

uvcamo::PipelineConfig resolve(const CommonFlags& f) {
  uvcamo::PipelineConfig c = f.config.empty() ? uvcamo::PipelineConfig{} : uvcamo::load_config(f.config);
  if (f.seed) c.seed = *f.seed;
  if (!f.out.empty()) c.out_dir = f.out;
  uvcamo::propagate_seed(c);
  uvcamo::validate_config(c);
  return c;
}

template <typename F>
int timed(const char* name, F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  f();
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cerr << name << " done in " << s << " s\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"uvcamo: adversarial UV camouflage pipeline"};
  app.require_subcommand(1);
  CommonFlags flags;

  auto* gen = app.add_subcommand("gen-dataset", "render the multi-weather scene dataset");
  auto* efe = app.add_subcommand("train-efe", "train the environment feature extractor");
  auto* det = app.add_subcommand("train-detector", "train the frozen toy detector on benign scenes");
  auto* camo = app.add_subcommand("gen-camo", "optimize the adversarial texture");
  auto* eval = app.add_subcommand("evaluate", "AP@0.5 of benign, random and adversarial textures");
  auto* report = app.add_subcommand("report", "summary table, per-axis curves and plots");
  auto* selftest = app.add_subcommand("selftest", "finite-difference and loss-oracle checks");
  for (auto* s : {gen, efe, det, camo, eval, report, selftest}) add_common(s, flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << app.help() << '\n';
    const int rc = app.exit(e);
    return rc == 0 ? 2 : rc;
  }

  try {
    if (selftest->parsed()) {
      bool ok = true;
      for (const auto& r : uvcamo::run_selftest()) {
        std::printf("%s  %-45s %.3g (tol %.0e)\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.measured,
                    r.tolerance);
        ok = ok && r.passed;
      }
      return ok ? 0 : 1;
    }
    const auto cfg = resolve(flags);
    std::cerr << "config hash " << uvcamo::config_hash(cfg) << ", seed " << cfg.seed << ", out " << cfg.out_dir
              << '\n';
    std::filesystem::create_directories(cfg.out_dir);
    std::ofstream(uvcamo::RunLayout(cfg.out_dir).root / "config.json") << uvcamo::to_json(cfg).dump(1) << '\n';
    if (gen->parsed()) return timed("gen-dataset", [&] { uvcamo::stage_gen_dataset(cfg, &std::cerr); });
    if (efe->parsed()) return timed("train-efe", [&] { uvcamo::stage_train_efe(cfg, &std::cerr); });
    if (det->parsed()) return timed("train-detector", [&] { uvcamo::stage_train_detector(cfg, &std::cerr); });
    if (camo->parsed()) return timed("gen-camo", [&] { uvcamo::stage_gen_camo(cfg, &std::cerr); });
    if (eval->parsed()) {
      std::vector<uvcamo::SplitTag> splits;
      if (!flags.split.empty()) splits.push_back(uvcamo::split_from_string(flags.split));
      return timed("evaluate", [&] { uvcamo::stage_evaluate(cfg, splits, &std::cerr); });
    }
    if (report->parsed()) return timed("report", [&] {
      const auto files = uvcamo::stage_report(cfg);
      std::cout << files.summary.string() << '\n';
    });
  } catch (const uvcamo::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 3;
  } catch (const uvcamo::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
