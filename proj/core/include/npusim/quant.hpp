#pragma once

#include <set>
#include <vector>

#include "npusim/tensor.hpp"

namespace npusim {

/// Offline calibration result for one layer: the per-tensor activation scale
/// plus outlier statistics gathered at that scale.
struct CalibrationProfile {
  int layer_id = 0;
  float scale = 1.0f;       // activation quantization step s
  float down_scale = 1.0f;  // auxiliary scale for the ffn down projection input
  float max_abs = 0.0f;     // largest |x| seen during calibration
  int sample_count = 0;     // number of sample tensors
  int total_rows = 0;       // rows pooled across samples
  std::vector<int64_t> channel_counts;  // outlier occurrences per channel

  int64_t total_outliers() const {
    int64_t t = 0;
    for (int64_t c : channel_counts) t += c;
    return t;
  }
};

/// Per-layer channel positions whose float weight rows stay memory-resident.
struct HotChannelEntry {
  int layer_id = 0;
  std::vector<int> channels;  // ascending channel index
};

struct HotChannelTable {
  double coverage = 0.8;
  std::vector<HotChannelEntry> layers;

  const HotChannelEntry* find(int layer_id) const {
    for (const auto& e : layers)
      if (e.layer_id == layer_id) return &e;
    return nullptr;
  }
};

/// Outlier importance of one layer: ratio of the largest outlier magnitude to
/// the quantization scale, 1.0 when the layer produced no outliers.
struct LayerImportance {
  int layer_id = 0;
  double ratio = 1.0;
  bool pruned = false;
};

/// Compact tensor of extracted outlier channels. `values` holds, per row and
/// extracted channel, the exact residual x - dequant(q). Residuals are kept
/// at double precision: the float32 sum deq + r can land on a round-to-even
/// tie from both sides, so no single-precision residual restores x
/// bit-exactly, while one double-precision add then narrowing always does.
struct OutlierSlice {
  std::vector<int> channels;   // strictly increasing
  std::vector<double> values;  // row-major, origin_rows x channels.size()
  int origin_rows = 0;
  int origin_cols = 0;

  bool empty() const { return channels.empty(); }
  double value_at(int row, int chan_idx) const {
    return values[static_cast<size_t>(row) * channels.size() + chan_idx];
  }
  double& value_at(int row, int chan_idx) {
    return values[static_cast<size_t>(row) * channels.size() + chan_idx];
  }
};

/// Residual formula used by split_outliers. Exact keeps the testable identity
/// dequant(q) + scatter(slice) == x on extracted channels. PaperLiteral uses
/// floor((x/s)/128)*128*s, which is lossy and sign-inconsistent for negative
/// outliers; it exists only for comparison.
enum class ResidualMode { Exact, PaperLiteral };

struct SplitResult {
  QTensor quantized;
  OutlierSlice outliers;
};

/// Computes the activation scale from pooled samples: s is the percentile-th
/// magnitude (nearest-rank over all elements) divided by 127, so with the
/// default percentile 99.9 roughly 0.1% of calibration elements land outside
/// the representable range. Outlier occurrences per channel are counted at
/// that scale. Throws ValueError on an empty sample set.
CalibrationProfile calibrate(const std::vector<Tensor>& layer_activations,
                             double percentile = 99.9);

/// Channels holding at least one element with |x| > 127*s, ascending. The
/// comparison uses the precomputed threshold 127*s only.
std::vector<int> detect_outlier_channels(const Tensor& x, float scale);

/// Quantizes x at scale s and extracts the detected outlier channels into a
/// compact residual slice.
SplitResult split_outliers(const Tensor& x, float scale,
                           ResidualMode mode = ResidualMode::Exact);

/// dequant(q) + scatter-add of the slice. Restores x exactly on extracted
/// channels (Exact mode) and within s/2 per element elsewhere.
Tensor reconstruct(const QTensor& q, const OutlierSlice& outliers);

/// Minimal set of channels, chosen by descending outlier count (ties: lower
/// index first), whose counts sum to at least coverage * total. Returned in
/// selection order; empty when the layer recorded no outliers.
std::vector<int> select_hot_channels(const CalibrationProfile& profile,
                                     double coverage);

HotChannelTable build_hot_channels(const std::vector<CalibrationProfile>& profiles,
                                   double coverage = 0.8);

/// Importance ranking, descending ratio (ties: lower layer id first).
std::vector<LayerImportance> rank_layer_importance(
    const std::vector<CalibrationProfile>& profiles);

/// Marks the floor(prune_rate * n) lowest-ratio layers as pruned (ties: lower
/// layer id pruned first) and returns their ids. prune_rate must be in [0, 1).
std::set<int> prune_unimportant(std::vector<LayerImportance>& importances,
                                double prune_rate);

}  // namespace npusim
