#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "npusim/quant.hpp"
#include "npusim/tensor.hpp"

namespace npusim {

/// Location of one weight record inside a binary weight file. Records are
/// little-endian: int32 layer_id, int32 rows, int32 cols, then rows*cols
/// float32 values in row-major order.
struct WeightRecordRef {
  std::string path;
  uint64_t offset = 0;
  int layer_id = 0;
  int rows = 0;
  int cols = 0;

  static constexpr uint64_t kHeaderBytes = 12;
};

/// Appends a record to `path` (creating the file if needed) and returns its
/// ref. Throws IoError when the file cannot be written.
WeightRecordRef append_weight_record(const std::string& path, int layer_id,
                                     const Tensor& t);

/// Reads one row of a record. Throws IoError when the file is unreadable or
/// truncated — a missing cold row is never silently zero.
void read_weight_row(const WeightRecordRef& ref, int row, float* dst);

/// Reads the whole record.
Tensor read_weight_record(const WeightRecordRef& ref);

/// One quantized matmul site with shadow-execution support. The cold source
/// stores the dequantized float rows (scale * q) of weight_q; hot rows are a
/// bit-equal in-memory copy of those rows for the hot channel indices.
struct ShadowLinear {
  int layer_id = 0;
  std::string site;               // "qkv", "o", "ffn_in", ...
  QTensor weight_q;               // k x n
  std::vector<int> hot_channels;  // ascending channel indices with resident rows
  Tensor weight_f_hot;            // hot_channels.size() x n
  WeightRecordRef cold_source;
  bool pruned = false;
};

struct FetchEvent {
  int layer_id = 0;
  std::string site;
  int channel = 0;
  bool fetched = false;  // false: served from the resident hot set
};

/// Per-call record of which outlier weight rows were resident vs pulled from
/// the cold store.
struct FetchLog {
  std::vector<FetchEvent> events;
  uint64_t bytes_fetched = 0;
  uint64_t bytes_resident = 0;

  void clear() {
    events.clear();
    bytes_fetched = 0;
    bytes_resident = 0;
  }
};

/// Quantizes `weight` (symmetric per-tensor), writes the dequantized float
/// rows to `store_path`, and keeps the rows listed in `hot_channels` resident.
ShadowLinear make_shadow_linear(int layer_id, const std::string& site,
                                const Tensor& weight,
                                const std::vector<int>& hot_channels,
                                const std::string& store_path);

/// Two-part matmul: the int8 part stands in for the NPU, the compact outlier
/// residual matmul for the CPU. The int8 partial result is produced first and
/// the residual added second, in fixed order. A pruned layer skips the
/// residual entirely. `log`, when given, records per-channel row provenance.
Tensor shadow_matmul(const Tensor& x, const ShadowLinear& layer, float scale,
                     FetchLog* log = nullptr,
                     ResidualMode mode = ResidualMode::Exact);

struct ShadowMemoryReport {
  uint64_t int8_bytes = 0;        // resident quantized weights
  uint64_t hot_float_bytes = 0;   // resident hot float rows
  uint64_t resident_bytes = 0;    // int8_bytes + hot_float_bytes
  uint64_t full_copy_bytes = 0;   // hypothetical full float copy of every site
};

/// Resident bytes are a function of the hot table only, never of input data.
ShadowMemoryReport memory_footprint(const std::vector<ShadowLinear>& layers);

}  // namespace npusim
