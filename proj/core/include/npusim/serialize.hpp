#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "npusim/cost_model.hpp"
#include "npusim/graph.hpp"
#include "npusim/model.hpp"
#include "npusim/quant.hpp"
#include "npusim/scheduler.hpp"
#include "npusim/shadow.hpp"

namespace npusim {

using json = nlohmann::json;

/// Every JSON document this project writes carries {"version": 1, "kind": …};
/// readers reject other versions.
constexpr int kSchemaVersion = 1;

json calibration_to_json(const std::vector<CalibrationProfile>& profiles,
                         double percentile, uint64_t seed);
std::vector<CalibrationProfile> calibration_from_json(const json& doc);

json hot_channels_to_json(const HotChannelTable& table);
HotChannelTable hot_channels_from_json(const json& doc);

json importance_to_json(const std::vector<LayerImportance>& importances,
                        double prune_rate);
std::vector<LayerImportance> importance_from_json(const json& doc);

json cost_model_to_json(const CostModel& cm);
CostModel cost_model_from_json(const json& doc);

json trace_to_json(const std::vector<TraceEvent>& trace);
std::vector<TraceEvent> trace_from_json(const json& doc);

json schedule_report_to_json(const ScheduleReport& rep, const DependencyGraph& g);

/// Gantt-style CSV: header "node,processor,start,end", node as c<i>s<j>.
std::string schedule_report_to_csv(const ScheduleReport& rep,
                                   const DependencyGraph& g);

json fetch_log_to_json(const FetchLog& log);

/// Reads/writes a whole text file; throws IoError on failure.
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

/// Parses a JSON document and checks {"version", "kind"}.
json load_json_document(const std::string& path, const std::string& expected_kind);
void save_json_document(const std::string& path, const json& doc);

/// Model weight export: raw records in the cold-store format plus a manifest
/// holding the config and per-tensor byte offsets.
void export_model(const Model& m, const std::string& weights_path,
                  const std::string& manifest_path);
Model import_model(const std::string& weights_path,
                   const std::string& manifest_path);

}  // namespace npusim
