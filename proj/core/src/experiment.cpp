#include "npusim/experiment.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>

#include "npusim/kernels.hpp"
#include "npusim/rng.hpp"

namespace npusim {

namespace fs = std::filesystem;

namespace {

constexpr int kSpikeTokens = 8;       // token ids [vocab-8, vocab) carry spikes
constexpr int kSpikeChannels = 4;
constexpr float kSpikeFactor = 50.0f;
constexpr int kCleanVocabMargin = 16; // corpus samples stay below vocab-16

std::string out_path(const ExperimentConfig& cfg, const std::string& name) {
  return (fs::path(cfg.out_dir) / name).string();
}

void ensure_out_dir(const ExperimentConfig& cfg) {
  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  if (ec) throw IoError("cannot create output dir " + cfg.out_dir);
}

std::vector<int> spike_channel_set(const ExperimentConfig& cfg) {
  Rng rng = Rng::stream(cfg.seed, "spike-channels");
  std::vector<int> channels;
  while (static_cast<int>(channels.size()) < kSpikeChannels) {
    const int c = static_cast<int>(rng.uniform_int(0, cfg.model.hidden - 1));
    if (std::find(channels.begin(), channels.end(), c) == channels.end())
      channels.push_back(c);
  }
  std::sort(channels.begin(), channels.end());
  return channels;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::fabs(static_cast<double>(a.data()[i]) - b.data()[i]));
  return m;
}

}  // namespace

json ExperimentConfig::to_json() const {
  json j;
  j["version"] = kSchemaVersion;
  j["kind"] = "experiment_config";
  j["model"] = {{"layers", model.layers},     {"hidden", model.hidden},
                {"heads", model.heads},       {"ffn_mult", model.ffn_mult},
                {"vocab", model.vocab},       {"chunk_len", model.chunk_len},
                {"seed", model.seed}};
  j["prompt_lens"] = prompt_lens;
  j["quant_mode"] = quant_mode;
  j["percentile"] = percentile;
  j["prune_rate"] = prune_rate;
  j["hot_coverage"] = hot_coverage;
  j["cost_mode"] = cost_mode;
  j["cost_anchor_ratio"] = cost_anchor_ratio;
  j["seed"] = seed;
  j["out_dir"] = out_dir;
  j["corpus_samples"] = corpus_samples;
  j["corpus_len"] = corpus_len;
  j["decode_tokens"] = decode_tokens;
  j["spike_tokens"] = spike_tokens;
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig cfg;
  if (!j.contains("seed")) throw ValueError("experiment config: seed is mandatory");
  cfg.seed = j.at("seed").get<uint64_t>();
  if (j.contains("model")) {
    const json& m = j.at("model");
    cfg.model.layers = m.value("layers", cfg.model.layers);
    cfg.model.hidden = m.value("hidden", cfg.model.hidden);
    cfg.model.heads = m.value("heads", cfg.model.heads);
    cfg.model.ffn_mult = m.value("ffn_mult", cfg.model.ffn_mult);
    cfg.model.vocab = m.value("vocab", cfg.model.vocab);
    cfg.model.chunk_len = m.value("chunk_len", cfg.model.chunk_len);
  }
  cfg.model.seed = cfg.seed;
  cfg.prompt_lens = j.value("prompt_lens", cfg.prompt_lens);
  cfg.quant_mode = j.value("quant_mode", cfg.quant_mode);
  cfg.percentile = j.value("percentile", cfg.percentile);
  cfg.prune_rate = j.value("prune_rate", cfg.prune_rate);
  cfg.hot_coverage = j.value("hot_coverage", cfg.hot_coverage);
  cfg.cost_mode = j.value("cost_mode", cfg.cost_mode);
  cfg.cost_anchor_ratio = j.value("cost_anchor_ratio", cfg.cost_anchor_ratio);
  cfg.out_dir = j.value("out_dir", cfg.out_dir);
  cfg.corpus_samples = j.value("corpus_samples", cfg.corpus_samples);
  cfg.corpus_len = j.value("corpus_len", cfg.corpus_len);
  cfg.decode_tokens = j.value("decode_tokens", cfg.decode_tokens);
  cfg.spike_tokens = j.value("spike_tokens", cfg.spike_tokens);
  cfg.validate();
  return cfg;
}

void ExperimentConfig::validate() const {
  model.validate();
  if (prompt_lens.empty()) throw ValueError("experiment config: no prompt lengths");
  for (int p : prompt_lens)
    if (p < 1) throw ValueError("experiment config: prompt length must be >= 1");
  quant_mode_from_name(quant_mode);
  if (percentile <= 0.0 || percentile > 100.0)
    throw ValueError("experiment config: percentile out of range");
  if (prune_rate < 0.0 || prune_rate >= 1.0)
    throw ValueError("experiment config: prune_rate must be in [0, 1)");
  if (hot_coverage <= 0.0 || hot_coverage > 1.0)
    throw ValueError("experiment config: hot_coverage must be in (0, 1]");
  if (cost_mode != "synthetic" && cost_mode != "measured")
    throw ValueError("experiment config: cost_mode must be synthetic|measured");
  if (corpus_samples < 1 || corpus_len < 1)
    throw ValueError("experiment config: corpus must be non-empty");
  if (decode_tokens < 0)
    throw ValueError("experiment config: decode_tokens must be >= 0");
  if (model.vocab <= kCleanVocabMargin)
    throw ValueError("experiment config: vocab too small for spike margin");
}

void apply_env_overrides(ExperimentConfig& cfg) {
  auto get = [](const char* name) -> std::optional<std::string> {
    const char* v = std::getenv(name);
    if (!v || !*v) return std::nullopt;
    return std::string(v);
  };
  if (auto v = get("NPUSIM_SEED")) {
    cfg.seed = std::stoull(*v);
    cfg.model.seed = cfg.seed;
  }
  if (auto v = get("NPUSIM_CHUNK_LEN")) cfg.model.chunk_len = std::stoi(*v);
  if (auto v = get("NPUSIM_QUANT_MODE")) cfg.quant_mode = *v;
  if (auto v = get("NPUSIM_PRUNE_RATE")) cfg.prune_rate = std::stod(*v);
  if (auto v = get("NPUSIM_OUT")) cfg.out_dir = *v;
  if (auto v = get("NPUSIM_COST_MODE")) cfg.cost_mode = *v;
  if (auto v = get("NPUSIM_PERCENTILE")) cfg.percentile = std::stod(*v);
  cfg.validate();
}

Model build_experiment_model(const ExperimentConfig& cfg) {
  ModelConfig mc = cfg.model;
  mc.seed = cfg.seed;
  Model m = build_model(mc);
  if (cfg.spike_tokens) {
    std::vector<int> ids;
    for (int i = 0; i < kSpikeTokens; ++i) ids.push_back(mc.vocab - 1 - i);
    spike_embedding(m, ids, spike_channel_set(cfg), kSpikeFactor);
  }
  return m;
}

std::vector<int> make_prompt(const ExperimentConfig& cfg, int prompt_len) {
  Rng rng = Rng::stream(cfg.seed, "prompts/" + std::to_string(prompt_len));
  std::vector<int> tokens(static_cast<size_t>(prompt_len));
  for (auto& t : tokens)
    t = static_cast<int>(rng.uniform_int(0, cfg.model.vocab - kCleanVocabMargin - 1));
  if (cfg.spike_tokens) {
    // fixed spike positions so every prompt carries outlier activations
    tokens[prompt_len / 2] = cfg.model.vocab - 1;
    tokens[prompt_len - 1] = cfg.model.vocab - 2;
    if (prompt_len >= 3) tokens[prompt_len / 3] = cfg.model.vocab - 3;
  }
  return tokens;
}

CalibrationArtifacts cmd_calibrate(const ExperimentConfig& cfg) {
  ensure_out_dir(cfg);
  const Model model = build_experiment_model(cfg);
  const int L = cfg.model.layers;

  // Pool the hidden-space matmul inputs per layer; the ffn-intermediate
  // (down projection input) is calibrated separately since its channel
  // space differs.
  std::vector<std::vector<Tensor>> hidden_sites(L);
  std::vector<std::vector<Tensor>> down_sites(L);
  ForwardHooks hooks;
  hooks.on_site_input = [&](int layer, const std::string& site, const Tensor& x) {
    if (site == "down_in") down_sites[layer].push_back(x);
    else hidden_sites[layer].push_back(x);
  };

  Rng corpus_rng = Rng::stream(cfg.seed, "corpus");
  for (int s = 0; s < cfg.corpus_samples; ++s) {
    std::vector<int> tokens(static_cast<size_t>(cfg.corpus_len));
    for (auto& t : tokens)
      t = static_cast<int>(
          corpus_rng.uniform_int(0, cfg.model.vocab - kCleanVocabMargin - 1));
    full_prefill(model, tokens, nullptr, &hooks);
  }

  CalibrationArtifacts art;
  for (int l = 0; l < L; ++l) {
    CalibrationProfile p = calibrate(hidden_sites[l], cfg.percentile);
    p.layer_id = l;
    p.down_scale = calibrate(down_sites[l], cfg.percentile).scale;
    art.profiles.push_back(std::move(p));
  }
  art.hot = build_hot_channels(art.profiles, cfg.hot_coverage);
  art.importances = rank_layer_importance(art.profiles);
  art.pruned = prune_unimportant(art.importances, cfg.prune_rate);

  save_json_document(out_path(cfg, "calibration.json"),
                     calibration_to_json(art.profiles, cfg.percentile, cfg.seed));
  save_json_document(out_path(cfg, "hot_channels.json"),
                     hot_channels_to_json(art.hot));
  save_json_document(out_path(cfg, "importance.json"),
                     importance_to_json(art.importances, cfg.prune_rate));
  return art;
}

CalibrationArtifacts load_calibration(const ExperimentConfig& cfg) {
  CalibrationArtifacts art;
  art.profiles = calibration_from_json(
      load_json_document(out_path(cfg, "calibration.json"), "calibration"));
  art.hot = hot_channels_from_json(
      load_json_document(out_path(cfg, "hot_channels.json"), "hot_channels"));
  art.importances = importance_from_json(
      load_json_document(out_path(cfg, "importance.json"), "importance"));
  for (const auto& li : art.importances)
    if (li.pruned) art.pruned.insert(li.layer_id);
  return art;
}

json PrefillFragment::to_json() const {
  json j;
  j["version"] = kSchemaVersion;
  j["kind"] = "prefill_fragment";
  j["prompt_len"] = prompt_len;
  j["chunks"] = num_chunks;
  j["oracle_error"] = oracle_error;
  j["trace"] = trace_to_json(trace);
  j["memory"] = {
      {"sharing",
       {{"total_subgraphs", sharing.total_subgraphs},
        {"shared_subgraphs", sharing.shared_subgraphs},
        {"static_bytes", sharing.static_bytes},
        {"dynamic_bytes", sharing.dynamic_bytes},
        {"shared_total_bytes", sharing.shared_total_bytes},
        {"naive_total_bytes", sharing.naive_total_bytes},
        {"reduction_ratio", sharing.reduction_ratio()}}},
      {"shadow",
       {{"int8_bytes", shadow_memory.int8_bytes},
        {"hot_float_bytes", shadow_memory.hot_float_bytes},
        {"resident_bytes", shadow_memory.resident_bytes},
        {"full_copy_bytes", shadow_memory.full_copy_bytes}}}};
  j["fetch_log"] = fetch_log_to_json(fetch_log);
  return j;
}

std::vector<PrefillFragment> cmd_prefill(const ExperimentConfig& cfg,
                                         const CalibrationArtifacts& cal) {
  ensure_out_dir(cfg);
  const Model model = build_experiment_model(cfg);

  // Rebuild the shadow store from scratch so reruns are byte-identical.
  const std::string store = out_path(cfg, "shadow_store.bin");
  write_text_file(store, "");
  const QuantContext qctx =
      prepare_quant_context(model, cal.profiles, cal.hot, cal.pruned, store);

  std::vector<PrefillFragment> fragments;
  for (int len : cfg.prompt_lens) {
    const ChunkPlan plan = plan_chunks(len, cfg.model.chunk_len);
    const std::vector<int> tokens = make_prompt(cfg, len);
    const Tensor oracle = full_prefill(model, tokens);

    PrefillFragment frag;
    frag.prompt_len = len;
    frag.num_chunks = plan.num_chunks;
    for (QuantMode mode :
         {QuantMode::Float32, QuantMode::W8A8Naive, QuantMode::W8A8Shadow}) {
      PrefillResult r = chunked_prefill(model, tokens, plan, mode, &qctx);
      frag.oracle_error[quant_mode_name(mode)] =
          max_abs_diff(r.last_logits, oracle);
      if (mode == quant_mode_from_name(cfg.quant_mode)) frag.trace = r.trace;
      if (mode == QuantMode::W8A8Shadow) frag.fetch_log = r.fetch_log;
    }

    frag.sharing = partition_sharing_graph(model, plan).report;
    std::vector<ShadowLinear> sites;
    for (const auto& lc : qctx.layers) {
      sites.push_back(lc.qkv);
      sites.push_back(lc.o);
      sites.push_back(lc.ffn_in);
    }
    frag.shadow_memory = memory_footprint(sites);

    save_json_document(
        out_path(cfg, "prefill_" + std::to_string(len) + ".json"),
        frag.to_json());
    fragments.push_back(std::move(frag));
  }
  return fragments;
}

json ScheduleFragment::to_json() const {
  json j;
  j["version"] = kSchemaVersion;
  j["kind"] = "schedule_fragment";
  j["prompt_len"] = prompt_len;
  j["makespan"] = {{"inorder", makespan_inorder}, {"greedy", makespan_greedy}};
  if (makespan_optimal) j["makespan"]["optimal"] = *makespan_optimal;
  j["bubble_rate"] = {{"inorder", bubble_inorder}, {"greedy", bubble_greedy}};
  j["improvement_pct"] = improvement_pct;
  j["tokens_per_kilounit"] = tokens_per_kilounit;
  j["greedy_events"] = greedy_events;
  return j;
}

std::vector<ScheduleFragment> cmd_schedule(
    const ExperimentConfig& cfg, const std::vector<PrefillFragment>& prefill) {
  ensure_out_dir(cfg);
  std::vector<ScheduleFragment> fragments;
  for (const auto& pf : prefill) {
    const ChunkPlan plan = plan_chunks(pf.prompt_len, cfg.model.chunk_len);
    CostParams params;
    if (cfg.cost_anchor_ratio > 0.0)
      params = CostParams::anchored(cfg.model, plan, cfg.cost_anchor_ratio);
    const CostModel costs = derive_costs(
        pf.trace, cfg.model,
        cfg.cost_mode == "measured" ? CostMode::Measured : CostMode::Synthetic,
        params);
    const DependencyGraph g = dependencies_from_trace(pf.trace, costs);

    const ScheduleReport inorder = schedule_inorder(g);
    const ScheduleReport greedy = schedule_greedy(g);
    validate_schedule(g, inorder);
    validate_schedule(g, greedy);

    ScheduleFragment sf;
    sf.prompt_len = pf.prompt_len;
    sf.makespan_inorder = inorder.makespan;
    sf.makespan_greedy = greedy.makespan;
    if (g.size() <= 12) {
      const ScheduleReport optimal = schedule_optimal(g);
      validate_schedule(g, optimal);
      sf.makespan_optimal = optimal.makespan;
    }
    sf.bubble_inorder = inorder.bubble_rate();
    sf.bubble_greedy = greedy.bubble_rate();
    sf.improvement_pct =
        inorder.makespan == 0
            ? 0.0
            : 100.0 *
                  static_cast<double>(inorder.makespan - greedy.makespan) /
                  static_cast<double>(inorder.makespan);
    sf.tokens_per_kilounit =
        greedy.makespan == 0
            ? 0.0
            : 1000.0 * static_cast<double>(pf.prompt_len) /
                  static_cast<double>(greedy.makespan);
    sf.greedy_events = schedule_report_to_json(greedy, g)["events"];

    const std::string suffix = std::to_string(pf.prompt_len);
    save_json_document(out_path(cfg, "cost_model_" + suffix + ".json"),
                       cost_model_to_json(costs));
    save_json_document(out_path(cfg, "schedule_" + suffix + ".json"),
                       sf.to_json());
    write_text_file(out_path(cfg, "gantt_" + suffix + "_inorder.csv"),
                    schedule_report_to_csv(inorder, g));
    write_text_file(out_path(cfg, "gantt_" + suffix + "_greedy.csv"),
                    schedule_report_to_csv(greedy, g));
    fragments.push_back(std::move(sf));
  }
  return fragments;
}

json cmd_report(const ExperimentConfig& cfg, const std::vector<json>& fragments) {
  if (fragments.empty()) throw ValueError("cmd_report: no fragments to merge");
  json report;
  report["version"] = kSchemaVersion;
  report["kind"] = "run_report";
  report["seed"] = cfg.seed;
  report["config"] = cfg.to_json();

  std::map<int, json> per_prompt;
  for (const auto& frag : fragments) {
    if (!frag.contains("version") ||
        frag.at("version").get<int>() != kSchemaVersion)
      throw ValueError("cmd_report: fragment schema version mismatch");
    const std::string kind = frag.value("kind", "");
    if (kind == "decode_fragment") {
      report["decode"] = {{"prompt_len", frag.at("prompt_len")},
                          {"tokens", frag.at("tokens")}};
      continue;
    }
    if (kind != "prefill_fragment" && kind != "schedule_fragment")
      throw ValueError("cmd_report: unknown fragment kind: " + kind);
    const int len = frag.at("prompt_len").get<int>();
    json& slot = per_prompt[len];
    slot["prompt_len"] = len;
    if (kind == "prefill_fragment") {
      slot["chunks"] = frag.at("chunks");
      slot["oracle_error"] = frag.at("oracle_error");
      slot["memory"] = frag.at("memory");
    } else {
      slot["makespan"] = frag.at("makespan");
      slot["bubble_rate"] = frag.at("bubble_rate");
      slot["improvement_pct"] = frag.at("improvement_pct");
      slot["tokens_per_kilounit"] = frag.at("tokens_per_kilounit");
      slot["schedule_events"] = frag.at("greedy_events");
    }
  }
  json prompts = json::array();
  for (auto& [len, doc] : per_prompt) prompts.push_back(std::move(doc));
  report["prompts"] = std::move(prompts);
  return report;
}

json run_demo(const ExperimentConfig& cfg) {
  ensure_out_dir(cfg);
  const CalibrationArtifacts cal = cmd_calibrate(cfg);
  const std::vector<PrefillFragment> prefill = cmd_prefill(cfg, cal);
  const std::vector<ScheduleFragment> sched = cmd_schedule(cfg, prefill);

  // end-to-end: shadow prefill of the first prompt, then float32 decode
  const Model model = build_experiment_model(cfg);
  const std::string store = out_path(cfg, "shadow_store_demo.bin");
  write_text_file(store, "");
  const QuantContext qctx =
      prepare_quant_context(model, cal.profiles, cal.hot, cal.pruned, store);
  const int len = cfg.prompt_lens.front();
  const ChunkPlan plan = plan_chunks(len, cfg.model.chunk_len);
  PrefillResult pr = chunked_prefill(model, make_prompt(cfg, len), plan,
                                     quant_mode_from_name(cfg.quant_mode), &qctx);
  const std::vector<int> decoded =
      greedy_decode(model, pr.kv, pr.last_logits, cfg.decode_tokens);

  std::vector<json> fragments;
  for (const auto& pf : prefill) fragments.push_back(pf.to_json());
  for (const auto& sf : sched) fragments.push_back(sf.to_json());
  fragments.push_back({{"version", kSchemaVersion},
                       {"kind", "decode_fragment"},
                       {"prompt_len", len},
                       {"tokens", decoded}});

  const json report = cmd_report(cfg, fragments);
  save_json_document(out_path(cfg, "run_report.json"), report);
  return report;
}

}  // namespace npusim
