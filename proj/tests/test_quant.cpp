#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "npusim/quant.hpp"
#include "npusim/rng.hpp"
#include "npusim/serialize.hpp"

using namespace npusim;

namespace {

Tensor random_tensor(Rng& rng, int rows, int cols, float stddev = 1.0f) {
  Tensor t(rows, cols);
  for (auto& v : t.data()) v = rng.normal_f(0.0f, stddev);
  return t;
}

// Brute-force oracle: independent elementwise scan, channel loop innermost.
std::vector<int> detect_brute(const Tensor& x, float s) {
  std::vector<char> hit(x.cols(), 0);
  for (int r = 0; r < x.rows(); ++r)
    for (int c = 0; c < x.cols(); ++c)
      if (std::fabs(x.at(r, c)) > 127.0f * s) hit[c] = 1;
  std::vector<int> out;
  for (int c = 0; c < x.cols(); ++c)
    if (hit[c]) out.push_back(c);
  return out;
}

int64_t covered_count(const CalibrationProfile& p, const std::vector<int>& sel) {
  int64_t t = 0;
  for (int c : sel) t += p.channel_counts[c];
  return t;
}

}  // namespace

TEST_SUITE_BEGIN("quant");

TEST_CASE("calibrate with percentile 100 is max-min symmetric") {
  Tensor a(1, 4, {0.5f, -1.0f, 0.25f, 0.75f});
  Tensor b(1, 4, {0.1f, 0.9f, -0.5f, 0.3f});
  CalibrationProfile p = calibrate({a, b}, 100.0);
  CHECK(p.scale == doctest::Approx(1.0f / 127.0f));
  CHECK(p.total_outliers() == 0);  // nothing exceeds the max by definition
  CHECK(p.sample_count == 2);
  CHECK(p.total_rows == 2);
}

TEST_CASE("calibrate rejects an empty sample set") {
  CHECK_THROWS_AS(calibrate({}, 99.9), ValueError);
}

TEST_CASE("calibrate flags injected spikes, verified by direct count") {
  Rng rng = Rng::stream(101, "fuzz");
  // 0.2% of elements become ~50x spikes of varying size
  std::vector<Tensor> samples;
  int64_t n_elems = 0;
  for (int s = 0; s < 8; ++s) {
    Tensor t = random_tensor(rng, 64, 64);
    for (auto& v : t.data()) {
      if (rng.next_double() < 0.002)
        v = static_cast<float>((40.0 + 20.0 * rng.next_double()) *
                               (rng.next_double() < 0.5 ? -1.0 : 1.0));
      ++n_elems;
    }
    samples.push_back(std::move(t));
  }
  CalibrationProfile p = calibrate(samples, 99.8);

  // oracle: direct count of elements beyond 127*s
  int64_t direct = 0;
  for (const auto& t : samples)
    for (float v : t.data())
      if (std::fabs(v) > 127.0f * p.scale) ++direct;
  CHECK(p.total_outliers() == direct);

  const double fraction = static_cast<double>(direct) / n_elems;
  CHECK(fraction > 0.0005);
  CHECK(fraction < 0.004);  // ~0.2% spike rate
}

TEST_CASE("detect_outlier_channels trivial cases") {
  Tensor in_range(4, 8, 0.5f);
  CHECK(detect_outlier_channels(in_range, 1.0f).empty());

  const float s = 0.01f;
  Tensor x(3, 8, 0.1f);
  x.at(1, 5) = 200.0f * s;
  CHECK(detect_outlier_channels(x, s) == std::vector<int>{5});
}

TEST_CASE("detect_outlier_channels picks exactly the spiked channels") {
  Rng rng = Rng::stream(103, "fuzz");
  const float s = 0.02f;
  Tensor x = random_tensor(rng, 16, 24, 0.2f);  // comfortably in range
  x.at(3, 3) = 300.0f * s;
  x.at(9, 17) = -400.0f * s;
  CHECK(detect_outlier_channels(x, s) == std::vector<int>{3, 17});
}

TEST_CASE("detect_outlier_channels agrees with the brute-force scan on fuzz") {
  Rng rng = Rng::stream(107, "fuzz");
  for (int round = 0; round < 50; ++round) {
    const int rows = static_cast<int>(rng.uniform_int(1, 12));
    const int cols = static_cast<int>(rng.uniform_int(1, 20));
    Tensor x = random_tensor(rng, rows, cols);
    const float s = 0.002f + 0.02f * static_cast<float>(rng.next_double());
    // sprinkle spikes
    for (int k = 0; k < 3; ++k)
      if (rng.next_double() < 0.7)
        x.at(static_cast<int>(rng.uniform_int(0, rows - 1)),
             static_cast<int>(rng.uniform_int(0, cols - 1))) =
            static_cast<float>(rng.normal() * 300.0 * s);
    CHECK(detect_outlier_channels(x, s) == detect_brute(x, s));
  }
}

TEST_CASE("split_outliers with no outliers: empty slice, rounding-bounded") {
  Rng rng = Rng::stream(109, "fuzz");
  Tensor x = random_tensor(rng, 8, 8, 0.1f);
  const float s = 0.01f;  // 127*s = 1.27 covers ~all of N(0, 0.1)
  SplitResult r = split_outliers(x, s);
  CHECK(r.outliers.empty());
  Tensor rec = reconstruct(r.quantized, r.outliers);
  for (size_t i = 0; i < x.size(); ++i)
    CHECK(std::fabs(rec.data()[i] - x.data()[i]) <= s / 2 + 1e-7f);
}

TEST_CASE("split_outliers reconstructs outlier channels exactly") {
  Rng rng = Rng::stream(113, "fuzz");
  const float s = 0.013f;
  Tensor x = random_tensor(rng, 6, 10, 0.5f);
  for (int r = 0; r < 6; ++r) x.at(r, 4) = static_cast<float>(rng.normal() * 500.0 * s);
  x.at(2, 4) = 900.0f * s;  // make sure the channel trips

  SplitResult res = split_outliers(x, s);
  REQUIRE(res.outliers.channels == std::vector<int>{4});
  Tensor rec = reconstruct(res.quantized, res.outliers);
  for (int r = 0; r < 6; ++r)
    CHECK(rec.at(r, 4) == x.at(r, 4));  // bit-exact on the extracted channel
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < 10; ++c)
      if (c != 4) CHECK(std::fabs(rec.at(r, c) - x.at(r, c)) <= s / 2 + 1e-7f);
}

TEST_CASE("split_outliers degenerate case: every channel extracted") {
  Tensor x(2, 3, 10.0f);
  const float s = 0.01f;
  SplitResult res = split_outliers(x, s);
  CHECK(res.outliers.channels == std::vector<int>{0, 1, 2});
  CHECK(res.outliers.origin_rows == 2);
  CHECK(res.outliers.values.size() == 6);
  Tensor rec = reconstruct(res.quantized, res.outliers);
  for (size_t i = 0; i < x.size(); ++i) CHECK(rec.data()[i] == x.data()[i]);
}

TEST_CASE("split_outliers reconstruction property on adversarial fuzz") {
  Rng rng = Rng::stream(127, "fuzz");
  for (int round = 0; round < 200; ++round) {
    const int rows = static_cast<int>(rng.uniform_int(1, 8));
    const int cols = static_cast<int>(rng.uniform_int(1, 12));
    const float s =
        static_cast<float>(std::pow(10.0, rng.uniform_int(-4, 1)));  // wild scales
    Tensor x = random_tensor(rng, rows, cols, 50.0f * s);
    if (rng.next_double() < 0.8)
      x.at(static_cast<int>(rng.uniform_int(0, rows - 1)),
           static_cast<int>(rng.uniform_int(0, cols - 1))) =
          static_cast<float>(rng.normal() * 1e4 * s);

    SplitResult res = split_outliers(x, s);
    Tensor rec = reconstruct(res.quantized, res.outliers);
    std::vector<bool> is_outlier(cols, false);
    for (int c : res.outliers.channels) is_outlier[c] = true;
    for (int rr = 0; rr < rows; ++rr)
      for (int cc = 0; cc < cols; ++cc) {
        if (is_outlier[cc]) {
          CHECK(rec.at(rr, cc) == x.at(rr, cc));
        } else {
          CHECK(std::fabs(rec.at(rr, cc) - x.at(rr, cc)) <= s / 2 + s * 1e-5f);
        }
      }
    // channel indices strictly increasing
    for (size_t i = 1; i < res.outliers.channels.size(); ++i)
      CHECK(res.outliers.channels[i - 1] < res.outliers.channels[i]);
  }
}

TEST_CASE("paper-literal residual mode diverges on negative outliers") {
  const float s = 1.0f;
  Tensor x(1, 1, {-200.0f});
  SplitResult exact = split_outliers(x, s, ResidualMode::Exact);
  SplitResult literal = split_outliers(x, s, ResidualMode::PaperLiteral);
  Tensor rec_exact = reconstruct(exact.quantized, exact.outliers);
  Tensor rec_literal = reconstruct(literal.quantized, literal.outliers);
  CHECK(rec_exact.at(0, 0) == -200.0f);
  // floor(-200/128)*128 = -256, clamped part -127 -> reconstruction -383
  CHECK(rec_literal.at(0, 0) != -200.0f);
  CHECK(rec_literal.at(0, 0) == doctest::Approx(-383.0f));
}

TEST_CASE("build_hot_channels trivial count patterns") {
  CalibrationProfile p;
  p.layer_id = 0;
  p.channel_counts = {80, 10, 5, 5};
  CHECK(select_hot_channels(p, 0.8) == std::vector<int>{0});

  CalibrationProfile u;
  u.channel_counts.assign(100, 1);
  CHECK(select_hot_channels(u, 0.8).size() == 80);

  CalibrationProfile z;
  z.channel_counts.assign(16, 0);
  CHECK(select_hot_channels(z, 0.8).empty());  // zero outliers: empty table is valid
}

TEST_CASE("hot-channel selection under a seeded Zipf distribution") {
  // counts ~ 1/rank^1.5 over shuffled channel positions
  Rng rng = Rng::stream(131, "zipf");
  const int channels = 1000;
  std::vector<int> perm(channels);
  for (int i = 0; i < channels; ++i) perm[i] = i;
  for (int i = channels - 1; i > 0; --i)
    std::swap(perm[i], perm[rng.uniform_int(0, i)]);

  CalibrationProfile p;
  p.channel_counts.assign(channels, 0);
  std::vector<double> weights(channels);
  double wsum = 0.0;
  for (int r = 0; r < channels; ++r) {
    weights[r] = 1.0 / std::pow(r + 1.0, 1.5);
    wsum += weights[r];
  }
  for (int event = 0; event < 20000; ++event) {
    double u = rng.next_double() * wsum;
    int r = 0;
    while (r < channels - 1 && u > weights[r]) u -= weights[r], ++r;
    ++p.channel_counts[perm[r]];
  }

  std::vector<int> sel = select_hot_channels(p, 0.8);
  CHECK(static_cast<double>(sel.size()) <= 0.03 * channels);
  const int64_t total = p.total_outliers();
  CHECK(static_cast<double>(covered_count(p, sel)) >= 0.8 * total - 1e-6);
  // minimality: dropping the last (lowest-count) selected channel dips below
  std::vector<int> trimmed(sel.begin(), sel.end() - 1);
  CHECK(static_cast<double>(covered_count(p, trimmed)) < 0.8 * total);
}

TEST_CASE("hot-channel minimality holds on fuzzed count vectors") {
  Rng rng = Rng::stream(137, "fuzz");
  for (int round = 0; round < 100; ++round) {
    CalibrationProfile p;
    const int n = static_cast<int>(rng.uniform_int(1, 40));
    p.channel_counts.resize(n);
    for (auto& c : p.channel_counts) c = rng.uniform_int(0, 50);
    const double coverage = 0.05 + 0.9 * rng.next_double();
    std::vector<int> sel = select_hot_channels(p, coverage);
    const int64_t total = p.total_outliers();
    if (total == 0) {
      CHECK(sel.empty());
      continue;
    }
    CHECK(static_cast<double>(covered_count(p, sel)) >= coverage * total - 1e-6);
    if (!sel.empty()) {
      std::vector<int> trimmed(sel.begin(), sel.end() - 1);
      CHECK(static_cast<double>(covered_count(p, trimmed)) < coverage * total);
    }
  }
}

TEST_CASE("build_hot_channels stores ascending indices per layer") {
  CalibrationProfile p;
  p.layer_id = 3;
  p.channel_counts = {1, 50, 2, 40, 0};
  HotChannelTable t = build_hot_channels({p}, 0.8);
  REQUIRE(t.layers.size() == 1);
  const auto* e = t.find(3);
  REQUIRE(e != nullptr);
  CHECK(std::is_sorted(e->channels.begin(), e->channels.end()));
}

TEST_CASE("rank_layer_importance ordering and the no-outlier convention") {
  auto mk = [](int id, float scale, float max_abs, int64_t outliers) {
    CalibrationProfile p;
    p.layer_id = id;
    p.scale = scale;
    p.max_abs = max_abs;
    p.channel_counts = {outliers};
    return p;
  };
  // layer 2 has no outliers: ratio pinned to 1.0 and ranked last
  std::vector<CalibrationProfile> profiles = {
      mk(0, 0.01f, 2.0f, 5), mk(1, 0.01f, 13.0f, 9), mk(2, 0.01f, 1.0f, 0)};
  std::vector<LayerImportance> ranked = rank_layer_importance(profiles);
  CHECK(ranked[0].layer_id == 1);
  CHECK(ranked[0].ratio == doctest::Approx(1300.0));
  CHECK(ranked[1].layer_id == 0);
  CHECK(ranked[2].layer_id == 2);
  CHECK(ranked[2].ratio == 1.0);
  for (const auto& li : ranked) CHECK(li.ratio >= 1.0);
}

TEST_CASE("rank order is preserved for already-sorted ratios") {
  std::vector<CalibrationProfile> profiles;
  const float maxes[] = {10.0f, 2.0f, 1.5f, 1.0f};
  for (int i = 0; i < 4; ++i) {
    CalibrationProfile p;
    p.layer_id = i;
    p.scale = 1.0f / 127.0f;  // ratio = 127 * max_abs
    p.max_abs = maxes[i];
    p.channel_counts = {1};
    profiles.push_back(p);
  }
  std::vector<LayerImportance> ranked = rank_layer_importance(profiles);
  for (int i = 0; i < 4; ++i) CHECK(ranked[i].layer_id == i);
}

TEST_CASE("layers with the largest spikes rank first and last layers on top") {
  // synthetic model: layers near input and output see bigger spikes
  Rng rng = Rng::stream(139, "fuzz");
  const int L = 6;
  std::vector<CalibrationProfile> profiles;
  const float spike[] = {60.0f, 10.0f, 8.0f, 9.0f, 11.0f, 50.0f};
  for (int l = 0; l < L; ++l) {
    std::vector<Tensor> acts;
    for (int s = 0; s < 3; ++s) {
      Tensor t = random_tensor(rng, 32, 16);
      t.at(0, 5) = spike[l];
      acts.push_back(std::move(t));
    }
    CalibrationProfile p = calibrate(acts, 99.0);
    p.layer_id = l;
    profiles.push_back(std::move(p));
  }
  std::vector<LayerImportance> ranked = rank_layer_importance(profiles);
  CHECK(ranked[0].layer_id == 0);
  CHECK(ranked[1].layer_id == L - 1);
}

TEST_CASE("prune_unimportant marks the right counts and layers") {
  auto make = [](std::vector<double> ratios) {
    std::vector<LayerImportance> v;
    for (size_t i = 0; i < ratios.size(); ++i)
      v.push_back({static_cast<int>(i), ratios[i], false});
    return v;
  };

  std::vector<LayerImportance> none = make({3, 2, 1});
  CHECK(prune_unimportant(none, 0.0).empty());

  std::vector<LayerImportance> twenty = make(std::vector<double>(20, 1.0));
  for (int i = 0; i < 20; ++i) twenty[i].ratio = 1.0 + i;
  std::set<int> pruned = prune_unimportant(twenty, 0.85);
  CHECK(pruned.size() == 17);  // floor(0.85 * 20)
  CHECK(pruned.count(17) == 0);
  CHECK(pruned.count(18) == 0);
  CHECK(pruned.count(19) == 0);

  // ties: lower layer index pruned first
  std::vector<LayerImportance> ties = make({5.0, 5.0, 5.0, 9.0});
  std::set<int> p2 = prune_unimportant(ties, 0.5);
  CHECK(p2 == std::set<int>{0, 1});

  std::vector<LayerImportance> bad = make({1.0});
  CHECK_THROWS_AS(prune_unimportant(bad, 1.0), ValueError);
}

TEST_CASE("ranking and pruning are invariant under common activation rescaling") {
  Rng rng = Rng::stream(149, "fuzz");
  const int L = 8;
  std::vector<Tensor> base[L];
  for (int l = 0; l < L; ++l) {
    for (int s = 0; s < 2; ++s) {
      Tensor t = random_tensor(rng, 24, 12);
      if (l % 3 == 0) t.at(1, 2) = 40.0f + l;
      base[l].push_back(std::move(t));
    }
  }
  auto run = [&](float lambda) {
    std::vector<CalibrationProfile> profiles;
    for (int l = 0; l < L; ++l) {
      std::vector<Tensor> scaled;
      for (const auto& t : base[l]) {
        Tensor s = t;
        for (auto& v : s.data()) v *= lambda;
        scaled.push_back(std::move(s));
      }
      CalibrationProfile p = calibrate(scaled, 99.5);
      p.layer_id = l;
      profiles.push_back(std::move(p));
    }
    std::vector<LayerImportance> ranked = rank_layer_importance(profiles);
    return prune_unimportant(ranked, 0.85);
  };
  CHECK(run(1.0f) == run(7.5f));
}

TEST_CASE("quant artifacts serialize with the fixed field names and version") {
  CalibrationProfile p;
  p.layer_id = 2;
  p.scale = 0.5f;
  p.down_scale = 0.25f;
  p.max_abs = 70.0f;
  p.sample_count = 3;
  p.total_rows = 12;
  p.channel_counts = {4, 0, 1};
  json cal = calibration_to_json({p}, 99.9, 7);
  CHECK(cal["version"] == 1);
  CHECK(cal["layers"][0].contains("scale"));
  CHECK(cal["layers"][0].contains("channel_counts"));
  std::vector<CalibrationProfile> back = calibration_from_json(cal);
  REQUIRE(back.size() == 1);
  CHECK(back[0].scale == 0.5f);
  CHECK(back[0].channel_counts == p.channel_counts);

  HotChannelTable t;
  t.coverage = 0.8;
  t.layers.push_back({2, {1, 5, 9}});
  json hot = hot_channels_to_json(t);
  CHECK(hot["layers"][0].contains("hot_channels"));
  CHECK(hot_channels_from_json(hot).find(2)->channels == std::vector<int>{1, 5, 9});

  std::vector<LayerImportance> imps = {{0, 12.5, true}, {1, 1.0, false}};
  json imp = importance_to_json(imps, 0.85);
  CHECK(imp["layers"][0].contains("ratio"));
  CHECK(imp["layers"][0].contains("pruned"));
  std::vector<LayerImportance> back_imp = importance_from_json(imp);
  CHECK(back_imp[0].pruned);
  CHECK(back_imp[1].ratio == 1.0);

  json bad = cal;
  bad["version"] = 99;
  CHECK_THROWS_AS(calibration_from_json(bad), ValueError);
}

TEST_SUITE_END();
