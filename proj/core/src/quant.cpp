#include "npusim/quant.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "npusim/kernels.hpp"

namespace npusim {

namespace {

float percentile_magnitude(std::vector<float>& mags, double percentile) {
  // Nearest-rank: the value at 1-based rank ceil(p/100 * n).
  std::sort(mags.begin(), mags.end());
  const size_t n = mags.size();
  size_t rank = static_cast<size_t>(
      std::ceil(percentile / 100.0 * static_cast<double>(n)));
  rank = std::min(std::max<size_t>(rank, 1), n);
  return mags[rank - 1];
}

}  // namespace

CalibrationProfile calibrate(const std::vector<Tensor>& layer_activations,
                             double percentile) {
  if (layer_activations.empty())
    throw ValueError("calibrate: empty sample set");
  if (percentile <= 0.0 || percentile > 100.0)
    throw ValueError("calibrate: percentile must be in (0, 100]");

  const int cols = layer_activations.front().cols();
  size_t total = 0;
  for (const auto& t : layer_activations) {
    if (t.cols() != cols)
      throw ShapeError("calibrate: samples have differing channel counts");
    total += t.size();
  }

  std::vector<float> mags;
  mags.reserve(total);
  float max_abs = 0.0f;
  for (const auto& t : layer_activations)
    for (float v : t.data()) {
      const float m = std::fabs(v);
      mags.push_back(m);
      max_abs = std::max(max_abs, m);
    }

  CalibrationProfile p;
  p.scale = percentile_magnitude(mags, percentile) / 127.0f;
  if (p.scale <= 0.0f)  // degenerate all-zero corpus
    p.scale = std::numeric_limits<float>::min() * 127.0f;
  p.max_abs = max_abs;
  p.sample_count = static_cast<int>(layer_activations.size());
  p.channel_counts.assign(cols, 0);

  const float threshold = 127.0f * p.scale;
  for (const auto& t : layer_activations) {
    p.total_rows += t.rows();
    for (int r = 0; r < t.rows(); ++r) {
      const float* row = t.row(r);
      for (int c = 0; c < cols; ++c)
        if (std::fabs(row[c]) > threshold) ++p.channel_counts[c];
    }
  }
  return p;
}

std::vector<int> detect_outlier_channels(const Tensor& x, float scale) {
  if (scale <= 0.0f) throw ValueError("detect_outlier_channels: scale <= 0");
  const float threshold = 127.0f * scale;
  std::vector<int> out;
  for (int c = 0; c < x.cols(); ++c) {
    for (int r = 0; r < x.rows(); ++r) {
      if (std::fabs(x.at(r, c)) > threshold) {
        out.push_back(c);
        break;
      }
    }
  }
  return out;
}

SplitResult split_outliers(const Tensor& x, float scale, ResidualMode mode) {
  SplitResult res;
  res.quantized = quantize_clamp(x, scale);
  res.outliers.channels = detect_outlier_channels(x, scale);
  res.outliers.origin_rows = x.rows();
  res.outliers.origin_cols = x.cols();
  const int nc = static_cast<int>(res.outliers.channels.size());
  res.outliers.values.assign(static_cast<size_t>(x.rows()) * nc, 0.0);

  for (int ci = 0; ci < nc; ++ci) {
    const int c = res.outliers.channels[ci];
    for (int r = 0; r < x.rows(); ++r) {
      const float xv = x.at(r, c);
      if (mode == ResidualMode::PaperLiteral) {
        res.outliers.value_at(r, ci) = static_cast<double>(scale) *
            (std::floor((xv / scale) / 128.0f) * 128.0f);
        continue;
      }
      const float deq = scale * static_cast<float>(res.quantized.at(r, c));
      res.outliers.value_at(r, ci) =
          static_cast<double>(xv) - static_cast<double>(deq);
    }
  }
  return res;
}

Tensor reconstruct(const QTensor& q, const OutlierSlice& outliers) {
  if (!outliers.empty() &&
      (outliers.origin_rows != q.rows() || outliers.origin_cols != q.cols()))
    throw ShapeError("reconstruct: slice origin shape does not match tensor");
  Tensor out = q.dequantize();
  for (size_t ci = 0; ci < outliers.channels.size(); ++ci) {
    const int c = outliers.channels[ci];
    for (int r = 0; r < q.rows(); ++r)
      out.at(r, c) = static_cast<float>(
          static_cast<double>(out.at(r, c)) +
          outliers.value_at(r, static_cast<int>(ci)));
  }
  return out;
}

std::vector<int> select_hot_channels(const CalibrationProfile& profile,
                                     double coverage) {
  if (coverage <= 0.0 || coverage > 1.0)
    throw ValueError("select_hot_channels: coverage must be in (0, 1]");
  const int64_t total = profile.total_outliers();
  if (total == 0) return {};

  std::vector<int> order(profile.channel_counts.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (profile.channel_counts[a] != profile.channel_counts[b])
      return profile.channel_counts[a] > profile.channel_counts[b];
    return a < b;
  });

  // Integer occurrence threshold; the epsilon keeps exact products such as
  // 0.8 * 205 from ceiling one past the intended rank.
  const int64_t required = static_cast<int64_t>(
      std::ceil(coverage * static_cast<double>(total) - 1e-6));

  std::vector<int> selected;
  int64_t covered = 0;
  for (int c : order) {
    if (covered >= required) break;
    selected.push_back(c);
    covered += profile.channel_counts[c];
  }
  return selected;
}

HotChannelTable build_hot_channels(const std::vector<CalibrationProfile>& profiles,
                                   double coverage) {
  HotChannelTable table;
  table.coverage = coverage;
  for (const auto& p : profiles) {
    HotChannelEntry e;
    e.layer_id = p.layer_id;
    e.channels = select_hot_channels(p, coverage);
    std::sort(e.channels.begin(), e.channels.end());
    table.layers.push_back(std::move(e));
  }
  return table;
}

std::vector<LayerImportance> rank_layer_importance(
    const std::vector<CalibrationProfile>& profiles) {
  if (profiles.empty()) throw ValueError("rank_layer_importance: no layers");
  std::vector<LayerImportance> out;
  out.reserve(profiles.size());
  for (const auto& p : profiles) {
    LayerImportance li;
    li.layer_id = p.layer_id;
    li.ratio = p.total_outliers() > 0
                   ? static_cast<double>(p.max_abs) / static_cast<double>(p.scale)
                   : 1.0;
    out.push_back(li);
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const LayerImportance& a, const LayerImportance& b) {
                     if (a.ratio != b.ratio) return a.ratio > b.ratio;
                     return a.layer_id < b.layer_id;
                   });
  return out;
}

std::set<int> prune_unimportant(std::vector<LayerImportance>& importances,
                                double prune_rate) {
  if (prune_rate < 0.0 || prune_rate >= 1.0)
    throw ValueError("prune_unimportant: prune_rate must be in [0, 1)");
  // Epsilon keeps e.g. 0.85 * 20 from flooring to 16 under binary rounding.
  const size_t n_prune = static_cast<size_t>(
      std::floor(prune_rate * static_cast<double>(importances.size()) + 1e-9));

  std::vector<int> order(importances.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (importances[a].ratio != importances[b].ratio)
      return importances[a].ratio < importances[b].ratio;
    return importances[a].layer_id < importances[b].layer_id;
  });

  std::set<int> pruned;
  for (size_t i = 0; i < n_prune; ++i) {
    importances[order[i]].pruned = true;
    pruned.insert(importances[order[i]].layer_id);
  }
  return pruned;
}

}  // namespace npusim
