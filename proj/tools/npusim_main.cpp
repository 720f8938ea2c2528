// npusim CLI: reproducible desk-scale experiments over the simulated NPU
// prefill pipeline. Subcommands: calibrate, prefill, schedule, report, demo.
// Exit codes: 0 ok, 1 usage, 2 invariant violation, 3 I/O.

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>

#include "npusim/experiment.hpp"

using namespace npusim;

namespace {

struct CliOptions {
  std::string config_path;
  std::optional<uint64_t> seed;
  std::optional<int> chunk_len;
  std::optional<std::string> quant_mode;
  std::optional<double> prune_rate;
  std::optional<std::string> out_dir;
  std::vector<std::string> report_inputs;
};

ExperimentConfig resolve_config(const CliOptions& opt) {
  ExperimentConfig cfg;
  if (!opt.config_path.empty())
    cfg = ExperimentConfig::from_json(
        load_json_document(opt.config_path, "experiment_config"));
  apply_env_overrides(cfg);
  // CLI flags win over both environment and file values.
  if (opt.seed) {
    cfg.seed = *opt.seed;
    cfg.model.seed = *opt.seed;
  }
  if (opt.chunk_len) cfg.model.chunk_len = *opt.chunk_len;
  if (opt.quant_mode) cfg.quant_mode = *opt.quant_mode;
  if (opt.prune_rate) cfg.prune_rate = *opt.prune_rate;
  if (opt.out_dir) cfg.out_dir = *opt.out_dir;
  cfg.validate();
  return cfg;
}

void print_summary(const json& report) {
  std::cout << "run report (seed " << report["seed"] << ")\n";
  for (const auto& p : report["prompts"]) {
    std::cout << "  prompt " << p["prompt_len"].get<int>();
    if (p.contains("chunks")) std::cout << " chunks " << p["chunks"].get<int>();
    if (p.contains("oracle_error"))
      for (const auto& [mode, err] : p["oracle_error"].items())
        std::cout << "\n    " << mode << " max|dlogit| " << err.get<double>();
    if (p.contains("makespan"))
      std::cout << "\n    makespan inorder "
                << p["makespan"]["inorder"].get<int64_t>() << " greedy "
                << p["makespan"]["greedy"].get<int64_t>() << " (improvement "
                << p["improvement_pct"].get<double>() << "%)";
    std::cout << "\n";
  }
  if (report.contains("decode")) {
    std::cout << "  decoded:";
    for (const auto& t : report["decode"]["tokens"]) std::cout << ' ' << t;
    std::cout << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"simulated NPU prefill pipeline benchmark"};
  app.require_subcommand(1);
  app.fallthrough();

  CliOptions opt;
  app.add_option("--config", opt.config_path, "experiment config JSON");
  app.add_option("--seed", opt.seed, "experiment seed (all streams derive from it)");
  app.add_option("--chunk-len", opt.chunk_len, "prompt chunk length");
  app.add_option("--quant-mode", opt.quant_mode,
                 "float32 | w8a8-naive | w8a8-shadow");
  app.add_option("--prune-rate", opt.prune_rate, "outlier layer prune rate [0,1)");
  app.add_option("--out", opt.out_dir, "output directory");

  auto* c_cal = app.add_subcommand("calibrate", "offline preparation: scales, hot channels, pruning");
  auto* c_pre = app.add_subcommand("prefill", "chunked prefill in all quant modes + oracle errors");
  auto* c_sch = app.add_subcommand("schedule", "in-order vs out-of-order schedules over the trace");
  auto* c_rep = app.add_subcommand("report", "merge fragment JSON files into a run report");
  auto* c_dem = app.add_subcommand("demo", "calibrate + prefill + schedule + decode, one report");
  c_rep->add_option("fragments", opt.report_inputs, "fragment JSON files")
      ->expected(-1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    const ExperimentConfig cfg = resolve_config(opt);
    if (c_cal->parsed()) {
      cmd_calibrate(cfg);
      std::cout << "calibration artifacts written to " << cfg.out_dir << "\n";
    } else if (c_pre->parsed()) {
      const auto frags = cmd_prefill(cfg, load_calibration(cfg));
      for (const auto& f : frags) {
        std::cout << "prompt " << f.prompt_len << ": " << f.num_chunks
                  << " chunks";
        for (const auto& [mode, err] : f.oracle_error)
          std::cout << ", " << mode << " err " << err;
        std::cout << "\n";
      }
    } else if (c_sch->parsed()) {
      std::vector<PrefillFragment> prefill;
      for (int len : cfg.prompt_lens) {
        PrefillFragment f;
        f.prompt_len = len;
        const json doc = load_json_document(
            (std::filesystem::path(cfg.out_dir) /
             ("prefill_" + std::to_string(len) + ".json")).string(),
            "prefill_fragment");
        f.trace = trace_from_json(doc.at("trace"));
        prefill.push_back(std::move(f));
      }
      for (const auto& sf : cmd_schedule(cfg, prefill))
        std::cout << "prompt " << sf.prompt_len << ": inorder "
                  << sf.makespan_inorder << ", greedy " << sf.makespan_greedy
                  << " (" << sf.improvement_pct << "% faster), bubble "
                  << sf.bubble_inorder << " -> " << sf.bubble_greedy << "\n";
    } else if (c_rep->parsed()) {
      std::vector<json> fragments;
      for (const auto& path : opt.report_inputs)
        fragments.push_back(json::parse(read_text_file(path)));
      const json report = cmd_report(cfg, fragments);
      save_json_document(
          (std::filesystem::path(cfg.out_dir) / "run_report.json").string(),
          report);
      print_summary(report);
    } else if (c_dem->parsed()) {
      print_summary(run_demo(cfg));
    }
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 3;
  } catch (const CLI::Error&) {
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
