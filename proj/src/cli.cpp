#include "fsl/cli.hpp"

#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "fsl/config.hpp"
#include "fsl/diagnostics.hpp"
#include "fsl/errors.hpp"
#include "fsl/report.hpp"

namespace fsl {

namespace {

std::optional<std::set<std::size_t>> attacker_set(const ExperimentConfig& c) {
  if (c.attack.kind == AttackKind::kNone) return std::set<std::size_t>{};
  return std::set<std::size_t>(c.attack.attacker_ids.begin(), c.attack.attacker_ids.end());
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

// Collects feature reports at one round when `modes` is non-empty.
struct FeatureCapture {
  std::size_t round = 0;
  std::vector<FeatureMode> modes;
  std::optional<std::set<std::size_t>> attackers;
  std::vector<FeatureReport> reports;

  RoundObserver observer() {
    return [this](std::size_t r, const ParameterSet& global, std::span<const WorkerUpdate> updates) {
      if (r != round) return;
      for (FeatureMode m : modes) reports.push_back(feature_pipeline(updates, global, m, attackers));
    };
  }
};

struct RunOutputs {
  ExperimentResult result;
  std::vector<std::filesystem::path> files;
};

RunOutputs run_and_write(const RunConfig& rc, const std::string& prefix, bool with_diagnostics) {
  const auto& cfg = rc.experiment;
  const auto& out = rc.output;
  preflight_output_dir(out.dir);
  const std::string started = utc_timestamp();

  FeatureCapture capture;
  RunOptions options;
  if (with_diagnostics && out.diagnostics) {
    if (out.diagnostics_round >= cfg.rounds) {
      throw ConfigError("output.diagnostics_round must be below federation.rounds");
    }
    capture.round = out.diagnostics_round;
    capture.modes = out.diagnostics_modes;
    capture.attackers = attacker_set(cfg);
    options.observer = capture.observer();
  }

  RunOutputs ro{run_experiment(cfg, options), {}};
  const auto paths =
      write_metrics(out.dir, prefix, ro.result.rounds, ro.result.summary, cfg.num_workers, out.record_timing);
  ro.files = {paths.rounds_csv, paths.summary_json};
  if (!capture.reports.empty()) {
    const auto path = out.dir / (prefix + "_features.csv");
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    write_feature_csv(f, capture.reports);
    if (!f) throw IoError("cannot write " + path.string());
    ro.files.push_back(path);
  }

  RunManifest m;
  m.config_hash = config_hash(rc.canonical);
  m.seed = cfg.seed;
  m.started_at = started;
  m.finished_at = utc_timestamp();
  m.code_version = code_version();
  m.outputs = ro.files;
  const auto manifest_path = out.dir / (prefix + "_manifest.json");
  write_text(manifest_path, manifest_json(m));
  ro.files.push_back(manifest_path);
  return ro;
}

void print_summary(const std::string& label, const ExperimentSummary& s) {
  std::cout << label << ": test_error=" << format_number(s.test_error) << " all_acc=" << format_number(s.all_acc)
            << " src_acc=" << format_number(s.src_acc) << " asr=" << format_number(s.asr) << '\n';
}

RunConfig load(const std::string& path, std::optional<std::uint64_t> seed, const std::string& out_dir) {
  RunConfig rc = parse_config(path);
  if (seed) {
    rc.experiment.seed = *seed;
    rc.canonical += "federation.seed.override=" + std::to_string(*seed) + "\n";
  }
  if (!out_dir.empty()) rc.output.dir = out_dir;
  return rc;
}

}  // namespace

int cli_main(const std::vector<std::string>& args) {
  CLI::App app{"fsl: federated learning robustness lab"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;

  auto* run = app.add_subcommand("run", "Train one federated experiment and write metrics");
  run->add_option("--config", config_path, "Experiment config file")->required();
  run->add_option("--seed", seed, "Override federation.seed");
  run->add_option("--out", out_dir, "Override output.dir");

  std::string mode_text = "engineered";
  std::size_t round = 0;
  auto* diagnose = app.add_subcommand("diagnose", "Write per-worker feature geometry at one round");
  diagnose->add_option("--config", config_path, "Experiment config file")->required();
  diagnose->add_option("--mode", mode_text, "all, last, lastpca, engineered or a comma list");
  diagnose->add_option("--round", round, "Round index to inspect");
  diagnose->add_option("--seed", seed, "Override federation.seed");
  diagnose->add_option("--out", out_dir, "Override output.dir");

  std::string defenses_text = "fedavg,median,tmean,mkrum,fgold,fl_defender";
  auto* sweep = app.add_subcommand("sweep", "Run one config under several defenses");
  sweep->add_option("--config", config_path, "Experiment config file")->required();
  sweep->add_option("--defenses", defenses_text, "Comma-separated defense names");
  sweep->add_option("--seed", seed, "Override federation.seed");
  sweep->add_option("--out", out_dir, "Override output.dir");

  auto* reference = app.add_subcommand("reference", "Print the config file reference");

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << (app.get_subcommands().empty() ? app.help() : app.get_subcommands()[0]->help());
    return 1;
  }

  try {
    if (*reference) {
      std::cout << config_reference();
      return 0;
    }
    RunConfig rc = load(config_path, seed, out_dir);

    if (*run) {
      const auto ro = run_and_write(rc, rc.output.prefix, true);
      print_summary(rc.output.prefix, ro.result.summary);
      for (const auto& f : ro.files) std::cout << "wrote " << f.string() << '\n';
      return 0;
    }

    if (*diagnose) {
      const auto& cfg = rc.experiment;
      if (round >= cfg.rounds) throw ConfigError("--round must be below federation.rounds");
      FeatureCapture capture;
      capture.round = round;
      for (const auto& m : split_list(mode_text)) capture.modes.push_back(parse_feature_mode(m));
      if (capture.modes.empty()) throw ConfigError("--mode is empty");
      capture.attackers = attacker_set(cfg);
      preflight_output_dir(rc.output.dir);
      RunOptions options;
      options.observer = capture.observer();
      options.stop_after_round = round;
      run_experiment(cfg, options);
      const auto path = rc.output.dir / (rc.output.prefix + "_features_r" + std::to_string(round) + ".csv");
      std::ofstream f(path, std::ios::binary | std::ios::trunc);
      write_feature_csv(f, capture.reports);
      if (!f) throw IoError("cannot write " + path.string());
      for (const auto& r : capture.reports) {
        std::cout << to_string(r.mode) << ": separation_margin=";
        if (r.separation_margin) std::cout << format_number(*r.separation_margin);
        else std::cout << "n/a";
        std::cout << '\n';
      }
      std::cout << "wrote " << path.string() << '\n';
      return 0;
    }

    if (*sweep) {
      std::vector<DefenseKind> kinds;
      for (const auto& d : split_list(defenses_text)) kinds.push_back(parse_defense(d));
      if (kinds.empty()) throw ConfigError("--defenses is empty");
      preflight_output_dir(rc.output.dir);
      std::ostringstream table;
      table << "defense,test_error,all_acc,src_acc,asr,agg_wall_time_s\n";
      for (DefenseKind k : kinds) {
        RunConfig one = rc;
        one.experiment.defense.kind = k;
        one.canonical += "defense.kind.override=" + to_string(k) + "\n";
        const std::string prefix = rc.output.prefix + "_" + to_string(k);
        const auto ro = run_and_write(one, prefix, false);
        const auto& s = ro.result.summary;
        print_summary(to_string(k), s);
        table << to_string(k) << ',' << format_number(s.test_error) << ',' << format_number(s.all_acc) << ','
              << format_number(s.src_acc) << ',' << format_number(s.asr) << ','
              << format_number(rc.output.record_timing ? s.agg_wall_time_s : 0.0) << '\n';
      }
      const auto path = rc.output.dir / (rc.output.prefix + "_comparison.csv");
      write_text(path, table.str());
      std::cout << "wrote " << path.string() << '\n';
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const ParseError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

int cli_main(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return cli_main(args);
}

}  // namespace fsl
