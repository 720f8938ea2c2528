#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "npusim/graph.hpp"

namespace npusim {

/// Simulated throughput constants for the synthetic cost mode, in flops per
/// integer time unit. The defaults are calibrated so that on the default toy
/// config a single 256-token chunk spends about twice as long in NPU stages
/// as in CPU stages.
struct CostParams {
  double npu_int8_flops_per_unit = 1040000.0;
  double cpu_float_flops_per_unit = 262144.0;
  double npu_int8_speedup = 5.0;  // NPU int8 vs CPU int8, informational

  /// Recalibrates the CPU rate so that the given plan's total NPU stage time
  /// is `npu_over_cpu` times its total CPU stage time.
  static CostParams anchored(const ModelConfig& cfg, const ChunkPlan& plan,
                             double npu_over_cpu = 2.0);
};

/// Offline-profiled durations: one entry per distinct cost key, where the key
/// encodes (stage kind, chunk length x hidden, and for attention the KV
/// length that grows with the chunk index). std::map keeps a total ordering
/// that serialization reproduces byte-for-byte.
class CostModel {
public:
  struct Entry {
    Processor processor = Processor::NPU;
    int64_t duration = 0;
  };

  void insert(const std::string& key, Processor proc, int64_t duration);
  int64_t lookup(const std::string& key) const;  // throws ValueError if absent
  bool contains(const std::string& key) const { return entries_.count(key) > 0; }
  const std::map<std::string, Entry>& entries() const { return entries_; }
  std::string mode;  // "synthetic" or "measured"

  /// Every duration must be positive; throws ValueError otherwise.
  void validate() const;

private:
  std::map<std::string, Entry> entries_;
};

enum class CostMode { Synthetic, Measured };

/// Analytic flop count of one stage instance, parsed from its cost key
/// (format "<kind>/c<chunk>x<hidden>[/kv<len>]"). ffn width comes from cfg.
uint64_t stage_flops(const std::string& cost_key, const ModelConfig& cfg);

/// Builds the cost table covering every key in the trace. Synthetic mode
/// derives durations analytically from stage flops; measured mode times the
/// toy kernels (median of repeated runs, microsecond units) and is therefore
/// machine-dependent. Durations are clamped to >= 1.
CostModel derive_costs(const std::vector<TraceEvent>& trace,
                       const ModelConfig& cfg, CostMode mode,
                       const CostParams& params = {});

}  // namespace npusim
