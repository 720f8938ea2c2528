#include "npusim/serialize.hpp"

#include <fstream>
#include <sstream>

namespace npusim {

namespace {

json doc_header(const std::string& kind) {
  json j;
  j["version"] = kSchemaVersion;
  j["kind"] = kind;
  return j;
}

void check_header(const json& doc, const std::string& kind) {
  if (!doc.contains("version") || doc["version"].get<int>() != kSchemaVersion)
    throw ValueError("document version mismatch (want " +
                     std::to_string(kSchemaVersion) + ")");
  if (!doc.contains("kind") || doc["kind"].get<std::string>() != kind)
    throw ValueError("document kind mismatch (want " + kind + ")");
}

}  // namespace

json calibration_to_json(const std::vector<CalibrationProfile>& profiles,
                         double percentile, uint64_t seed) {
  json doc = doc_header("calibration");
  doc["percentile"] = percentile;
  doc["seed"] = seed;
  json layers = json::array();
  for (const auto& p : profiles) {
    json l;
    l["layer"] = p.layer_id;
    l["scale"] = p.scale;
    l["down_scale"] = p.down_scale;
    l["max_abs"] = p.max_abs;
    l["sample_count"] = p.sample_count;
    l["total_rows"] = p.total_rows;
    l["channel_counts"] = p.channel_counts;
    layers.push_back(std::move(l));
  }
  doc["layers"] = std::move(layers);
  return doc;
}

std::vector<CalibrationProfile> calibration_from_json(const json& doc) {
  check_header(doc, "calibration");
  std::vector<CalibrationProfile> out;
  for (const auto& l : doc.at("layers")) {
    CalibrationProfile p;
    p.layer_id = l.at("layer").get<int>();
    p.scale = l.at("scale").get<float>();
    p.down_scale = l.at("down_scale").get<float>();
    p.max_abs = l.at("max_abs").get<float>();
    p.sample_count = l.at("sample_count").get<int>();
    p.total_rows = l.at("total_rows").get<int>();
    p.channel_counts = l.at("channel_counts").get<std::vector<int64_t>>();
    if (p.scale <= 0.0f) throw ValueError("calibration: non-positive scale");
    out.push_back(std::move(p));
  }
  return out;
}

json hot_channels_to_json(const HotChannelTable& table) {
  json doc = doc_header("hot_channels");
  doc["coverage"] = table.coverage;
  json layers = json::array();
  for (const auto& e : table.layers) {
    json l;
    l["layer"] = e.layer_id;
    l["hot_channels"] = e.channels;
    layers.push_back(std::move(l));
  }
  doc["layers"] = std::move(layers);
  return doc;
}

HotChannelTable hot_channels_from_json(const json& doc) {
  check_header(doc, "hot_channels");
  HotChannelTable t;
  t.coverage = doc.at("coverage").get<double>();
  for (const auto& l : doc.at("layers")) {
    HotChannelEntry e;
    e.layer_id = l.at("layer").get<int>();
    e.channels = l.at("hot_channels").get<std::vector<int>>();
    t.layers.push_back(std::move(e));
  }
  return t;
}

json importance_to_json(const std::vector<LayerImportance>& importances,
                        double prune_rate) {
  json doc = doc_header("importance");
  doc["prune_rate"] = prune_rate;
  json layers = json::array();
  for (const auto& li : importances) {
    json l;
    l["layer"] = li.layer_id;
    l["ratio"] = li.ratio;
    l["pruned"] = li.pruned;
    layers.push_back(std::move(l));
  }
  doc["layers"] = std::move(layers);
  return doc;
}

std::vector<LayerImportance> importance_from_json(const json& doc) {
  check_header(doc, "importance");
  std::vector<LayerImportance> out;
  for (const auto& l : doc.at("layers")) {
    LayerImportance li;
    li.layer_id = l.at("layer").get<int>();
    li.ratio = l.at("ratio").get<double>();
    li.pruned = l.at("pruned").get<bool>();
    out.push_back(li);
  }
  return out;
}

json cost_model_to_json(const CostModel& cm) {
  json doc = doc_header("cost_model");
  doc["mode"] = cm.mode;
  json entries = json::array();
  for (const auto& [key, e] : cm.entries()) {
    json row;
    row["key"] = key;
    row["processor"] = processor_name(e.processor);
    row["duration"] = e.duration;
    entries.push_back(std::move(row));
  }
  doc["entries"] = std::move(entries);
  return doc;
}

CostModel cost_model_from_json(const json& doc) {
  check_header(doc, "cost_model");
  CostModel cm;
  cm.mode = doc.value("mode", "synthetic");
  for (const auto& row : doc.at("entries"))
    cm.insert(row.at("key").get<std::string>(),
              row.at("processor").get<std::string>() == "NPU" ? Processor::NPU
                                                              : Processor::CPU,
              row.at("duration").get<int64_t>());
  cm.validate();
  return cm;
}

json trace_to_json(const std::vector<TraceEvent>& trace) {
  json doc = doc_header("trace");
  json events = json::array();
  for (const auto& e : trace) {
    json row;
    row["chunk"] = e.chunk;
    row["stage"] = e.stage;
    row["processor"] = processor_name(e.processor);
    row["key"] = e.cost_key;
    events.push_back(std::move(row));
  }
  doc["events"] = std::move(events);
  return doc;
}

std::vector<TraceEvent> trace_from_json(const json& doc) {
  check_header(doc, "trace");
  std::vector<TraceEvent> out;
  for (const auto& row : doc.at("events")) {
    TraceEvent e;
    e.chunk = row.at("chunk").get<int>();
    e.stage = row.at("stage").get<int>();
    e.processor = row.at("processor").get<std::string>() == "NPU"
                      ? Processor::NPU
                      : Processor::CPU;
    e.cost_key = row.at("key").get<std::string>();
    out.push_back(std::move(e));
  }
  return out;
}

json schedule_report_to_json(const ScheduleReport& rep, const DependencyGraph& g) {
  json doc = doc_header("schedule_report");
  doc["scheduler"] = rep.scheduler;
  doc["makespan"] = rep.makespan;
  doc["busy"] = {{"NPU", rep.busy_npu}, {"CPU", rep.busy_cpu}};
  doc["bubble_rate"] = rep.bubble_rate();
  json events = json::array();
  for (const auto& e : rep.events) {
    const auto& n = g.nodes[e.node];
    json row;
    row["chunk"] = n.chunk;
    row["stage"] = n.stage;
    row["processor"] = processor_name(e.processor);
    row["start"] = e.start;
    row["end"] = e.end;
    events.push_back(std::move(row));
  }
  doc["events"] = std::move(events);
  return doc;
}

std::string schedule_report_to_csv(const ScheduleReport& rep,
                                   const DependencyGraph& g) {
  std::ostringstream os;
  os << "node,processor,start,end\n";
  for (const auto& e : rep.events) {
    const auto& n = g.nodes[e.node];
    os << 'c' << n.chunk << 's' << n.stage << ',' << processor_name(e.processor)
       << ',' << e.start << ',' << e.end << '\n';
  }
  return os.str();
}

json fetch_log_to_json(const FetchLog& log) {
  json doc = doc_header("fetch_log");
  doc["bytes_fetched"] = log.bytes_fetched;
  doc["bytes_resident"] = log.bytes_resident;
  json events = json::array();
  for (const auto& e : log.events) {
    json row;
    row["layer"] = e.layer_id;
    row["site"] = e.site;
    row["channel"] = e.channel;
    row["source"] = e.fetched ? "fetched" : "resident";
    events.push_back(std::move(row));
  }
  doc["events"] = std::move(events);
  return doc;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << content;
  if (!out) throw IoError("short write to " + path);
}

json load_json_document(const std::string& path, const std::string& expected_kind) {
  json doc;
  try {
    doc = json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw ValueError("invalid JSON in " + path + ": " + e.what());
  }
  check_header(doc, expected_kind);
  return doc;
}

void save_json_document(const std::string& path, const json& doc) {
  write_text_file(path, doc.dump(2) + "\n");
}

void export_model(const Model& m, const std::string& weights_path,
                  const std::string& manifest_path) {
  // truncate, then append records
  write_text_file(weights_path, "");
  json manifest = doc_header("model_manifest");
  manifest["config"] = {{"layers", m.cfg.layers},   {"hidden", m.cfg.hidden},
                        {"heads", m.cfg.heads},     {"ffn_mult", m.cfg.ffn_mult},
                        {"vocab", m.cfg.vocab},     {"chunk_len", m.cfg.chunk_len},
                        {"seed", m.cfg.seed}};
  json tensors = json::array();
  auto put = [&](const std::string& name, int layer, const Tensor& t) {
    const WeightRecordRef ref = append_weight_record(weights_path, layer, t);
    tensors.push_back({{"name", name},
                       {"layer", layer},
                       {"offset", ref.offset},
                       {"rows", ref.rows},
                       {"cols", ref.cols}});
  };
  put("embedding", -1, m.embedding);
  for (int l = 0; l < m.cfg.layers; ++l) {
    const auto& lw = m.layers[l];
    put("norm1_gamma", l, lw.norm1_gamma);
    put("w_qkv", l, lw.w_qkv);
    put("w_o", l, lw.w_o);
    put("norm2_gamma", l, lw.norm2_gamma);
    put("w_gate_up", l, lw.w_gate_up);
    put("w_down", l, lw.w_down);
  }
  put("final_norm_gamma", -1, m.final_norm_gamma);
  put("lm_head", -1, m.lm_head);
  manifest["tensors"] = std::move(tensors);
  save_json_document(manifest_path, manifest);
}

Model import_model(const std::string& weights_path,
                   const std::string& manifest_path) {
  const json manifest = load_json_document(manifest_path, "model_manifest");
  const json& c = manifest.at("config");
  ModelConfig cfg;
  cfg.layers = c.at("layers").get<int>();
  cfg.hidden = c.at("hidden").get<int>();
  cfg.heads = c.at("heads").get<int>();
  cfg.ffn_mult = c.at("ffn_mult").get<int>();
  cfg.vocab = c.at("vocab").get<int>();
  cfg.chunk_len = c.at("chunk_len").get<int>();
  cfg.seed = c.at("seed").get<uint64_t>();
  cfg.validate();

  Model m;
  m.cfg = cfg;
  m.layers.resize(cfg.layers);
  auto get = [&](const json& row) {
    WeightRecordRef ref;
    ref.path = weights_path;
    ref.offset = row.at("offset").get<uint64_t>();
    ref.layer_id = row.at("layer").get<int>();
    ref.rows = row.at("rows").get<int>();
    ref.cols = row.at("cols").get<int>();
    return read_weight_record(ref);
  };
  for (const auto& row : manifest.at("tensors")) {
    const std::string name = row.at("name").get<std::string>();
    const int layer = row.at("layer").get<int>();
    if (name == "embedding") m.embedding = get(row);
    else if (name == "final_norm_gamma") m.final_norm_gamma = get(row);
    else if (name == "lm_head") m.lm_head = get(row);
    else if (layer >= 0 && layer < cfg.layers) {
      auto& lw = m.layers[layer];
      if (name == "norm1_gamma") lw.norm1_gamma = get(row);
      else if (name == "w_qkv") lw.w_qkv = get(row);
      else if (name == "w_o") lw.w_o = get(row);
      else if (name == "norm2_gamma") lw.norm2_gamma = get(row);
      else if (name == "w_gate_up") lw.w_gate_up = get(row);
      else if (name == "w_down") lw.w_down = get(row);
      else throw ValueError("model manifest: unknown tensor " + name);
    } else {
      throw ValueError("model manifest: bad layer for tensor " + name);
    }
  }
  return m;
}

}  // namespace npusim
