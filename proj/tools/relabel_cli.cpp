// relabel: command-line front end for the sweep, the property classification
// and the bubble test cases.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include <fmt/format.h>

#include "relabel/cases.hpp"

namespace {

struct Flags {
  std::string config;
  std::optional<std::string> case_name, scheme, preset, out, bubble_form;
  std::optional<double> dt, t_end, k_sigma, sigma_min;
  std::optional<int> dump_every, points, nx, nz;
  std::optional<unsigned> threads;
  bool paper_scale = false;
  bool cap_rate = false;
  bool no_cap_rate = false;
};

void add_common(CLI::App* app, Flags& f) {
  app->add_option("--config", f.config, "key=value configuration file")->check(CLI::ExistingFile);
  app->add_option("--scheme", f.scheme, "1-6, all20, named, or labels such as M1_C0A1_m_np1 (comma separated)");
  app->add_option("--out", f.out, "output directory");
  app->add_option("--threads", f.threads, "worker threads (0 = all cores)");
}

void add_bubble(CLI::App* app, Flags& f) {
  app->add_option("--case", f.case_name, "single, full or half");
  app->add_option("--preset", f.preset, "desk or paper");
  app->add_flag("--paper-scale", f.paper_scale, "same as --preset paper");
  app->add_option("--dt", f.dt, "timestep in seconds");
  app->add_option("--t-end", f.t_end, "end time in seconds, a multiple of dt");
  app->add_option("--dump-every", f.dump_every, "steps between field dumps (0 = none)");
  app->add_option("--nx", f.nx, "cells in x");
  app->add_option("--nz", f.nz, "cells in z");
  app->add_option("--k-sigma", f.k_sigma, "diffusive transfer coefficient, m^2/s");
  app->add_option("--sigma-min", f.sigma_min, "relabel target volume fraction");
  app->add_option("--bubble-form", f.bubble_form, "squared or literal");
  app->add_flag("--cap-rate", f.cap_rate, "cap transfer rates at 1/dt (default for the half bubble)");
  app->add_flag("--no-cap-rate", f.no_cap_rate, "never cap transfer rates");
}

relabel::RunConfig resolve(const Flags& f, std::optional<std::string> forced_case) {
  relabel::ConfigPairs pairs;
  if (!f.config.empty()) pairs = relabel::read_config_file(f.config);
  auto put = [&](const char* key, const auto& v) {
    if (v) pairs.emplace_back(key, fmt::format("{}", *v));
  };
  if (f.paper_scale) pairs.emplace_back("preset", "paper");
  put("preset", f.preset);
  put("case", forced_case ? forced_case : f.case_name);
  put("scheme", f.scheme);
  put("out", f.out);
  put("threads", f.threads);
  put("dt", f.dt);
  put("t_end", f.t_end);
  put("dump_every", f.dump_every);
  put("points", f.points);
  put("nx", f.nx);
  put("nz", f.nz);
  put("k_sigma", f.k_sigma);
  put("sigma_min", f.sigma_min);
  put("bubble_form", f.bubble_form);
  if (f.cap_rate) pairs.emplace_back("cap_rate", "true");
  if (f.no_cap_rate) pairs.emplace_back("cap_rate", "false");
  return relabel::config_from_pairs(pairs);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transfer-scheme laboratory for two-fluid compressible flow"};
  app.require_subcommand(1);
  Flags f;

  auto* sweep = app.add_subcommand("sweep", "parameter sweep: envelope and property CSVs");
  add_common(sweep, f);
  sweep->add_option("--points", f.points, "samples per sweep axis");

  auto* classify = app.add_subcommand("classify", "sweep, then print the property matrix");
  add_common(classify, f);
  classify->add_option("--points", f.points, "samples per sweep axis");

  auto* bubble = app.add_subcommand("bubble", "rising bubble runs over a scheme set");
  add_common(bubble, f);
  add_bubble(bubble, f);

  CLI11_PARSE(app, argc, argv);

  try {
    if (bubble->parsed()) {
      auto cfg = resolve(f, std::nullopt);
      if (cfg.kind == relabel::CaseKind::sweep) throw relabel::ConfigError("case: use the sweep subcommand");
      return relabel::run(cfg, std::cout);
    }
    auto cfg = resolve(f, std::string("sweep"));
    if (sweep->parsed()) return relabel::run(cfg, std::cout);

    const auto rows = relabel::classify_schemes(relabel::run_sweep(relabel::sweep_config(cfg), cfg.schemes));
    relabel::emit_property_csv(rows, cfg.out / "properties.csv");
    std::cout << fmt::format("{:<16} {:>3}", "scheme", "#");
    for (auto p : relabel::all_properties) std::cout << fmt::format(" {:>22}", relabel::property_name(p));
    std::cout << '\n';
    for (const auto& r : rows) {
      std::cout << fmt::format("{:<16} {:>3}", r.scheme.label(), relabel::scheme_number_text(r.scheme));
      for (auto p : relabel::all_properties) std::cout << fmt::format(" {:>22}", relabel::verdict_symbol(r[p]));
      std::cout << (r.ambiguous ? "  (grey zone)" : "") << '\n';
    }
    return 0;
  } catch (const relabel::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
