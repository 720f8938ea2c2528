#include "npusim/shadow.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>

#include "npusim/kernels.hpp"

namespace npusim {

namespace {

// Raw little-endian I/O. The build targets little-endian hosts; the on-disk
// format is declared LE so files stay portable across machines of that class.
void write_i32(FILE* f, int32_t v) {
  if (std::fwrite(&v, sizeof(v), 1, f) != 1)
    throw IoError("weight store: short write");
}

int32_t read_i32(FILE* f, const std::string& path) {
  int32_t v = 0;
  if (std::fread(&v, sizeof(v), 1, f) != 1)
    throw IoError("weight store: truncated header in " + path);
  return v;
}

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FileHandle = std::unique_ptr<FILE, FileCloser>;

}  // namespace

WeightRecordRef append_weight_record(const std::string& path, int layer_id,
                                     const Tensor& t) {
  FileHandle f(std::fopen(path.c_str(), "ab"));
  if (!f) throw IoError("weight store: cannot open for append: " + path);
  if (std::fseek(f.get(), 0, SEEK_END) != 0)
    throw IoError("weight store: seek failed: " + path);

  WeightRecordRef ref;
  ref.path = path;
  ref.offset = static_cast<uint64_t>(std::ftell(f.get()));
  ref.layer_id = layer_id;
  ref.rows = t.rows();
  ref.cols = t.cols();

  write_i32(f.get(), layer_id);
  write_i32(f.get(), t.rows());
  write_i32(f.get(), t.cols());
  if (!t.data().empty() &&
      std::fwrite(t.data().data(), sizeof(float), t.size(), f.get()) != t.size())
    throw IoError("weight store: short write of data: " + path);
  return ref;
}

void read_weight_row(const WeightRecordRef& ref, int row, float* dst) {
  if (row < 0 || row >= ref.rows)
    throw ValueError("weight store: row out of range");
  FileHandle f(std::fopen(ref.path.c_str(), "rb"));
  if (!f) throw IoError("weight store: cannot open: " + ref.path);
  if (std::fseek(f.get(), 0, SEEK_SET) != 0 ||
      std::fseek(f.get(),
                 static_cast<long>(ref.offset + WeightRecordRef::kHeaderBytes +
                                   static_cast<uint64_t>(row) * ref.cols *
                                       sizeof(float)),
                 SEEK_SET) != 0)
    throw IoError("weight store: seek failed: " + ref.path);
  if (std::fread(dst, sizeof(float), static_cast<size_t>(ref.cols), f.get()) !=
      static_cast<size_t>(ref.cols))
    throw IoError("weight store: truncated row in " + ref.path);
}

Tensor read_weight_record(const WeightRecordRef& ref) {
  FileHandle f(std::fopen(ref.path.c_str(), "rb"));
  if (!f) throw IoError("weight store: cannot open: " + ref.path);
  if (std::fseek(f.get(), static_cast<long>(ref.offset), SEEK_SET) != 0)
    throw IoError("weight store: seek failed: " + ref.path);
  const int32_t layer = read_i32(f.get(), ref.path);
  const int32_t rows = read_i32(f.get(), ref.path);
  const int32_t cols = read_i32(f.get(), ref.path);
  if (layer != ref.layer_id || rows != ref.rows || cols != ref.cols)
    throw IoError("weight store: header mismatch in " + ref.path);
  Tensor t(rows, cols);
  if (!t.data().empty() &&
      std::fread(t.data().data(), sizeof(float), t.size(), f.get()) != t.size())
    throw IoError("weight store: truncated record in " + ref.path);
  return t;
}

ShadowLinear make_shadow_linear(int layer_id, const std::string& site,
                                const Tensor& weight,
                                const std::vector<int>& hot_channels,
                                const std::string& store_path) {
  ShadowLinear sl;
  sl.layer_id = layer_id;
  sl.site = site;

  float max_abs = 0.0f;
  for (float v : weight.data()) max_abs = std::max(max_abs, std::fabs(v));
  const float w_scale = max_abs > 0.0f ? max_abs / 127.0f : 1.0f;
  sl.weight_q = quantize_clamp(weight, w_scale);

  // The cold store and the hot rows both hold the *dequantized* weights so
  // the CPU residual matmul uses exactly the rows the NPU part sees.
  const Tensor deq = sl.weight_q.dequantize();
  sl.cold_source = append_weight_record(store_path, layer_id, deq);

  sl.hot_channels = hot_channels;
  std::sort(sl.hot_channels.begin(), sl.hot_channels.end());
  sl.hot_channels.erase(
      std::remove_if(sl.hot_channels.begin(), sl.hot_channels.end(),
                     [&](int c) { return c < 0 || c >= weight.rows(); }),
      sl.hot_channels.end());
  sl.weight_f_hot = Tensor(static_cast<int>(sl.hot_channels.size()), weight.cols());
  for (size_t i = 0; i < sl.hot_channels.size(); ++i)
    std::memcpy(sl.weight_f_hot.row(static_cast<int>(i)),
                deq.row(sl.hot_channels[i]),
                sizeof(float) * static_cast<size_t>(weight.cols()));
  return sl;
}

Tensor shadow_matmul(const Tensor& x, const ShadowLinear& layer, float scale,
                     FetchLog* log, ResidualMode mode) {
  if (x.cols() != layer.weight_q.rows())
    throw ShapeError("shadow_matmul: inner dims do not conform");

  SplitResult split = split_outliers(x, scale, mode);
  Tensor y = matmul_i8(split.quantized, layer.weight_q);
  if (layer.pruned || split.outliers.empty()) return y;

  const int n = layer.weight_q.cols();
  const int nc = static_cast<int>(split.outliers.channels.size());
  Tensor gathered(nc, n);
  const uint64_t row_bytes = static_cast<uint64_t>(n) * sizeof(float);
  for (int i = 0; i < nc; ++i) {
    const int c = split.outliers.channels[i];
    const auto it = std::lower_bound(layer.hot_channels.begin(),
                                     layer.hot_channels.end(), c);
    const bool hot = it != layer.hot_channels.end() && *it == c;
    if (hot) {
      const int hot_idx = static_cast<int>(it - layer.hot_channels.begin());
      std::memcpy(gathered.row(i), layer.weight_f_hot.row(hot_idx),
                  sizeof(float) * static_cast<size_t>(n));
    } else {
      read_weight_row(layer.cold_source, c, gathered.row(i));
    }
    if (log) {
      log->events.push_back({layer.layer_id, layer.site, c, !hot});
      (hot ? log->bytes_resident : log->bytes_fetched) += row_bytes;
    }
  }

  // the CPU residual matmul runs at float precision
  Tensor residuals(x.rows(), nc);
  for (int r = 0; r < x.rows(); ++r)
    for (int i = 0; i < nc; ++i)
      residuals.at(r, i) = static_cast<float>(split.outliers.value_at(r, i));
  const Tensor residual_part = matmul_f32(residuals, gathered);
  for (size_t i = 0; i < y.size(); ++i) y.data()[i] += residual_part.data()[i];
  return y;
}

ShadowMemoryReport memory_footprint(const std::vector<ShadowLinear>& layers) {
  ShadowMemoryReport rep;
  for (const auto& l : layers) {
    rep.int8_bytes += l.weight_q.size();
    rep.hot_float_bytes += l.weight_f_hot.size() * sizeof(float);
    rep.full_copy_bytes += l.weight_q.size() * sizeof(float);
  }
  rep.resident_bytes = rep.int8_bytes + rep.hot_float_bytes;
  return rep;
}

}  // namespace npusim
