#pragma once

#include <optional>
#include <string>
#include <vector>

#include "npusim/serialize.hpp"

namespace npusim {

/// One reproducible experiment: everything flows from `seed` through named
/// Rng streams ("weights", "corpus", "prompts/<len>", "spike-channels").
struct ExperimentConfig {
  ModelConfig model;                       // model.chunk_len is the chunk length
  std::vector<int> prompt_lens = {256, 512, 1024};
  std::string quant_mode = "w8a8-shadow";  // mode highlighted in the report
  double percentile = 99.9;
  double prune_rate = 0.85;
  double hot_coverage = 0.8;
  std::string cost_mode = "synthetic";
  double cost_anchor_ratio = 2.0;  // NPU:CPU stage-total ratio per instance; 0 = raw defaults
  uint64_t seed = 42;
  std::string out_dir = "out";

  int corpus_samples = 6;   // calibration corpus sequences
  int corpus_len = 64;      // tokens per corpus sequence
  int decode_tokens = 8;    // demo decode length
  bool spike_tokens = true; // give a few token ids spiked embedding channels

  json to_json() const;
  static ExperimentConfig from_json(const json& j);
  void validate() const;
};

/// Reads NPUSIM_* environment overrides (SEED, CHUNK_LEN, QUANT_MODE,
/// PRUNE_RATE, OUT, COST_MODE, PERCENTILE). Precedence overall:
/// CLI flag > environment > config file > built-in default.
void apply_env_overrides(ExperimentConfig& cfg);

/// Builds the experiment's model (plus embedding spikes when enabled) so a
/// calibration corpus that never saw the spike tokens underprices them.
Model build_experiment_model(const ExperimentConfig& cfg);

/// Deterministic prompt for one length; when spikes are enabled a few spike
/// tokens are planted at fixed positions so the prompt bears outliers.
std::vector<int> make_prompt(const ExperimentConfig& cfg, int prompt_len);

struct CalibrationArtifacts {
  std::vector<CalibrationProfile> profiles;
  HotChannelTable hot;
  std::vector<LayerImportance> importances;
  std::set<int> pruned;
};

/// Runs the synthetic corpus through the float32 model, calibrates every
/// layer, derives hot channels and the pruning set, and writes
/// calibration.json, hot_channels.json and importance.json to out_dir.
CalibrationArtifacts cmd_calibrate(const ExperimentConfig& cfg);

/// Loads the three calibration documents back from out_dir (IoError when the
/// preparation stage has not run).
CalibrationArtifacts load_calibration(const ExperimentConfig& cfg);

struct PrefillFragment {
  int prompt_len = 0;
  int num_chunks = 0;
  std::map<std::string, double> oracle_error;  // quant mode -> max |dlogit|
  std::vector<TraceEvent> trace;               // from the report's quant mode
  SharingReport sharing;
  ShadowMemoryReport shadow_memory;
  FetchLog fetch_log;

  json to_json() const;
};

/// Runs chunked prefill in all three quant modes per prompt length, measures
/// the max-abs logit deviation against the full-sequence float32 oracle and
/// writes prefill_<len>.json fragments.
std::vector<PrefillFragment> cmd_prefill(const ExperimentConfig& cfg,
                                         const CalibrationArtifacts& cal);

struct ScheduleFragment {
  int prompt_len = 0;
  int64_t makespan_inorder = 0;
  int64_t makespan_greedy = 0;
  std::optional<int64_t> makespan_optimal;  // only for tiny instances
  double bubble_inorder = 0.0;
  double bubble_greedy = 0.0;
  double improvement_pct = 0.0;
  double tokens_per_kilounit = 0.0;
  json greedy_events;

  json to_json() const;
};

/// Schedules each prefill trace with the in-order baseline and the greedy
/// out-of-order heuristic (both validated), writes cost_model_<len>.json,
/// schedule_<len>.json and gantt_<len>_{inorder,greedy}.csv.
std::vector<ScheduleFragment> cmd_schedule(
    const ExperimentConfig& cfg, const std::vector<PrefillFragment>& prefill);

/// Merges fragment documents into one run report. Throws ValueError on an
/// empty list or on schema-version mismatch.
json cmd_report(const ExperimentConfig& cfg, const std::vector<json>& fragments);

/// calibrate + prefill + schedule + greedy decode, merged report written to
/// out_dir/run_report.json. Returns the report. Two runs with the same seed
/// produce byte-identical files.
json run_demo(const ExperimentConfig& cfg);

}  // namespace npusim
