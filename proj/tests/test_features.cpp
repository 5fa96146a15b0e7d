#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "glassbox/errors.hpp"
#include "glassbox/features.hpp"
#include "glassbox/rng.hpp"

using namespace glassbox;
using namespace glassbox::features;

namespace {

BinaryFeatureVector bits(std::vector<std::uint8_t> b, FeatureRole role = FeatureRole::activated) {
  return BinaryFeatureVector(std::move(b), role);
}

BinaryFeatureVector random_bits(Rng& rng, std::size_t d, double p, FeatureRole role = FeatureRole::activated) {
  std::vector<std::uint8_t> b(d);
  for (auto& v : b) v = uniform01(rng) < p ? 1 : 0;
  return bits(std::move(b), role);
}

}  // namespace

TEST(GlobalMaxPool, ConstantTensor) {
  const FeatureVector z = global_max_pool(Tensor({4, 3, 3}, 2.5f));
  EXPECT_EQ(z, FeatureVector(4, 2.5f));
}

TEST(GlobalMaxPool, PaperSizedTensor) {
  EXPECT_EQ(global_max_pool(Tensor({256, 13, 13})).size(), 256u);
}

TEST(GlobalMaxPool, RandomSmallTensorByEnumeration) {
  Rng rng(4);
  Tensor t({3, 2, 2});
  for (auto& v : t.data()) v = static_cast<float>(uniform(rng, 0, 5));
  const FeatureVector z = global_max_pool(t);
  for (std::size_t c = 0; c < 3; ++c) {
    float m = -1;
    for (std::size_t y = 0; y < 2; ++y)
      for (std::size_t x = 0; x < 2; ++x) m = std::max(m, t.at(c, y, x));
    EXPECT_EQ(z[c], m);
  }
}

TEST(Stats, TwoSampleMean) {
  const std::vector<FeatureVector> z = {{0, 4}, {2, 0}};
  const std::vector<std::size_t> sel = {0, 1};
  const FeatureStats s = compute_feature_stats(z, sel);
  EXPECT_EQ(s.mu, (std::vector<double>{1, 2}));
  EXPECT_EQ(s.sample_count, 2u);
}

TEST(Stats, MatchesTwoPassOracle) {
  Rng rng(8);
  std::vector<FeatureVector> z(300, FeatureVector(64));
  for (auto& v : z)
    for (auto& x : v) x = static_cast<float>(uniform(rng, 0, 10));
  std::vector<std::size_t> sel;
  for (std::size_t i = 0; i < z.size(); i += 3) sel.push_back(i);
  const FeatureStats s = compute_feature_stats(z, sel);
  for (std::size_t j = 0; j < 64; ++j) {
    // pairwise (tree) summation as an independent reference
    std::vector<long double> acc;
    for (auto i : sel) acc.push_back(z[i][j]);
    while (acc.size() > 1) {
      std::vector<long double> next;
      for (std::size_t k = 0; k + 1 < acc.size(); k += 2) next.push_back(acc[k] + acc[k + 1]);
      if (acc.size() % 2) next.push_back(acc.back());
      acc.swap(next);
    }
    EXPECT_NEAR(s.mu[j], static_cast<double>(acc[0] / sel.size()), 1e-6);
  }
  EXPECT_EQ(compute_feature_stats(z, sel), s);
}

TEST(Stats, SelectionTopNPerClass) {
  const std::vector<ScoredSample> samples = {
      {0, 0, 0.9}, {1, 0, 0.5}, {2, 1, 0.7}, {3, 0, 0.95}, {4, 1, 0.7}, {5, 1, 0.2},
  };
  EXPECT_EQ(select_statistics_set(samples, 2, 2), (std::vector<std::size_t>{0, 2, 3, 4}));
  EXPECT_EQ(select_statistics_set(samples, 2, 1), (std::vector<std::size_t>{2, 3}));  // tie 2 vs 4 -> 2
  EXPECT_EQ(select_statistics_set(samples, 2, 0).size(), 6u);
  try {
    select_statistics_set(samples, 3, 2);
    FAIL();
  } catch (const StatsError& e) {
    EXPECT_NE(std::string(e.what()).find("2"), std::string::npos);
  }
}

TEST(Normalize, Examples) {
  FeatureStats s;
  s.mu = {2, 2};
  s.sample_count = 1;
  EXPECT_EQ(normalize(std::vector<float>{4, 1}, s), (std::vector<double>{2, 0.5}));
  EXPECT_EQ(normalize(std::vector<float>{2, 2}, s), (std::vector<double>{1, 1}));
  s.mu = {0, 3};
  EXPECT_EQ(normalize(std::vector<float>{0, 3}, s), (std::vector<double>{0, 1}));
  s.mu = {2, 2};
  EXPECT_EQ(normalize(std::vector<float>{4, 1}, s, Normalization::subtract_mean), (std::vector<double>{2, -1}));
}

TEST(Binarize, Boundary) {
  EXPECT_EQ(binarize(std::vector<double>{2.0, 1.99}, 2.0).support(), (std::vector<std::size_t>{0}));
  EXPECT_EQ(binarize(std::vector<double>{2.0, 1.99}, 2.0, ThresholdRule::strict).popcount(), 0u);
  EXPECT_EQ(binarize(std::vector<double>(5, 0.0), 2.0).popcount(), 0u);
}

TEST(ClassFrequent, DogExample) {
  std::map<std::size_t, std::vector<BinaryFeatureVector>> per_class;
  per_class[0] = {bits({1, 1, 1, 0, 1}), bits({1, 0, 1, 0, 1}), bits({1, 0, 0, 0, 1})};
  const auto t = class_frequent(per_class, 3);
  EXPECT_EQ(t.at(0).counts, (std::vector<std::uint32_t>{3, 1, 2, 0, 3}));
  EXPECT_EQ(std::vector<std::uint8_t>(t.at(0).q.bits().begin(), t.at(0).q.bits().end()),
            (std::vector<std::uint8_t>{1, 0, 1, 0, 1}));
  EXPECT_EQ(t.at(0).q.role(), FeatureRole::class_frequent);
}

TEST(ClassFrequent, SaturatedK) {
  std::map<std::size_t, std::vector<BinaryFeatureVector>> per_class;
  per_class[0] = {bits({0, 1, 0, 0})};
  EXPECT_EQ(class_frequent(per_class, 4).at(0).q.popcount(), 4u);
}

TEST(ClassFrequent, MatchesNaiveRecount) {
  Rng rng(17);
  std::map<std::size_t, std::vector<BinaryFeatureVector>> per_class;
  for (std::size_t c = 0; c < 5; ++c)
    for (int i = 0; i < 40; ++i) per_class[c].push_back(random_bits(rng, 64, 0.1 + 0.05 * static_cast<double>(c)));
  const auto t = class_frequent(per_class, 5);
  for (const auto& [c, list] : per_class) {
    std::vector<std::pair<int, std::size_t>> tally;  // (-count, index)
    for (std::size_t j = 0; j < 64; ++j) {
      int n = 0;
      for (const auto& a : list) n += a.test(j);
      tally.emplace_back(-n, j);
      EXPECT_EQ(t.at(c).counts[j], static_cast<std::uint32_t>(n));
    }
    std::sort(tally.begin(), tally.end());
    for (std::size_t j = 0; j < 64; ++j) {
      const bool want = std::any_of(tally.begin(), tally.begin() + 5, [&](auto& p) { return p.second == j; });
      EXPECT_EQ(t.at(c).q.test(j), want) << "class " << c << " feature " << j;
    }
    EXPECT_EQ(t.at(c).q.popcount(), 5u);
  }
}

TEST(InferenceFeature, IdentityAndDisjoint) {
  const auto a = bits({1, 0, 1, 1});
  EXPECT_EQ(inference_feature(a, bits({1, 1, 1, 1}, FeatureRole::class_frequent)).support(), a.support());
  EXPECT_EQ(inference_feature(a, bits({0, 1, 0, 0}, FeatureRole::class_frequent)).popcount(), 0u);
}

TEST(InferenceFeature, ThousandRandomPairsAreBitwiseAnd) {
  Rng rng(23);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto a = random_bits(rng, 64, 0.3);
    const auto q = random_bits(rng, 64, 0.1, FeatureRole::class_frequent);
    const auto e = inference_feature(a, q);
    EXPECT_EQ(e.role(), FeatureRole::inference);
    for (std::size_t j = 0; j < 64; ++j) ASSERT_EQ(e.test(j), a.test(j) && q.test(j));
  }
}

TEST(TopL, Examples) {
  const auto e = bits({1, 1, 1, 0}, FeatureRole::inference);
  EXPECT_EQ(top_l(e, std::vector<double>{3, 9, 5, 7}, 2), (std::vector<std::size_t>{1, 2}));
  const auto two = bits({0, 1, 0, 1}, FeatureRole::inference);
  EXPECT_EQ(top_l(two, std::vector<double>{1, 2, 3, 4}, 3), (std::vector<std::size_t>{3, 1}));
  EXPECT_TRUE(top_l(bits({0, 0, 0, 0}), std::vector<double>{1, 2, 3, 4}, 3).empty());
  EXPECT_EQ(top_l(bits({1, 1, 0, 0}), std::vector<double>{5, 5, 0, 0}, 1), (std::vector<std::size_t>{0}));
}

TEST(Analyze, ScaleCovariance) {
  Rng rng(31);
  std::vector<FeatureVector> z(40, FeatureVector(16));
  for (auto& v : z)
    for (auto& x : v) x = uniform01(rng) < 0.5 ? 0.0f : static_cast<float>(uniform(rng, 0, 4));
  std::vector<std::size_t> sel(z.size());
  for (std::size_t i = 0; i < sel.size(); ++i) sel[i] = i;
  const AnalysisParams params;
  auto run = [&](float scale) {
    std::vector<FeatureVector> zs = z;
    for (auto& v : zs)
      for (auto& x : v) x *= scale;
    const FeatureStats st = compute_feature_stats(zs, sel);
    std::map<std::size_t, std::vector<BinaryFeatureVector>> per;
    for (std::size_t i = 0; i < zs.size(); ++i) per[i % 2].push_back(binarize(normalize(zs[i], st), params.gamma));
    const auto table = class_frequent(per, params.k);
    const std::vector<float> sm = {0.4f, 0.6f};
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < zs.size(); ++i) {
      const auto an = analyze(i, zs[i], sm, st, table, params);
      std::vector<std::size_t> ids;
      for (const auto& f : an.top_features) ids.push_back(f.id);
      out.push_back(ids);
      out.push_back(an.e.support());
    }
    return out;
  };
  EXPECT_EQ(run(1.0f), run(4.0f));  // power of two keeps the float products exact
}

TEST(Analyze, LookupLabelOverridesPrediction) {
  FeatureStats st;
  st.mu = {1, 1, 1};
  st.sample_count = 1;
  ClassFrequentTable table;
  table[0].q = bits({1, 0, 0}, FeatureRole::class_frequent);
  table[1].q = bits({0, 1, 1}, FeatureRole::class_frequent);
  const std::vector<float> z = {3, 3, 1};
  const std::vector<float> sm = {0.8f, 0.2f};
  const auto by_pred = analyze(7, z, sm, st, table, AnalysisParams{});
  EXPECT_EQ(by_pred.predicted_label, 0u);
  EXPECT_EQ(by_pred.e.support(), (std::vector<std::size_t>{0}));
  const auto by_truth = analyze(7, z, sm, st, table, AnalysisParams{}, 1);
  EXPECT_EQ(by_truth.lookup_label, 1u);
  EXPECT_EQ(by_truth.e.support(), (std::vector<std::size_t>{1}));
  EXPECT_FLOAT_EQ(by_truth.max_softmax, 0.8f);
}

TEST(Histogram, AllZeroGoesToFirstBin) {
  const std::vector<FeatureVector> z(5, FeatureVector{0.0f, 1.0f});
  const Histogram h = activation_histogram(z, 0, 4);
  EXPECT_EQ(h.counts, (std::vector<std::size_t>{5, 0, 0, 0}));
}

TEST(Histogram, SingleSample) {
  const std::vector<FeatureVector> z = {{3.0f}};
  EXPECT_EQ(activation_histogram(z, 0, 10).total(), 1u);
}

TEST(Histogram, MatchesTally) {
  Rng rng(41);
  std::vector<FeatureVector> z(500, FeatureVector(1));
  for (auto& v : z) v[0] = static_cast<float>(uniform(rng, 0, 7));
  const Histogram h = activation_histogram(z, 0, 20);
  double hi = 0;
  for (auto& v : z) hi = std::max(hi, static_cast<double>(v[0]));
  std::vector<std::size_t> tally(20, 0);
  for (auto& v : z) {
    std::size_t b = 0;
    while (b + 1 < 20 && v[0] >= hi * static_cast<double>(b + 1) / 20.0) ++b;
    ++tally[b];
  }
  EXPECT_EQ(h.counts, tally);
  EXPECT_EQ(h.total(), 500u);
  EXPECT_THROW(activation_histogram(z, 0, 0), ValidationError);
}

namespace {

struct AblationFixture {
  nn::Model model = nn::Model::initialized(
      {3, 6, 6}, {nn::conv("c", 8, 3, 1, 1), nn::relu("r"), nn::global_maxpool("g"), nn::fc("f", 3), nn::softmax("s")},
      5);
  std::vector<Tensor> cfs;
  std::vector<EvalItem> items;

  AblationFixture() {
    Tensor& b = model.mutable_weight("f.bias");
    b[0] = 0.1f;
    b[1] = 0.7f;
    b[2] = -0.3f;
    Rng rng(6);
    for (int i = 0; i < 30; ++i) {
      Tensor img({3, 6, 6});
      for (auto& v : img.data()) v = static_cast<float>(uniform01(rng));
      cfs.push_back(nn::forward(model, img).conv_final());
    }
    for (std::size_t i = 0; i < cfs.size(); ++i) {
      const auto pred = nn::forward_head(model, cfs[i]).predicted_label;
      items.push_back({&cfs[i], i % 2 == 0 ? pred : (pred + 1) % 3});
    }
  }

  ClassFrequent ranking() const {
    ClassFrequent f;
    for (std::size_t j = 0; j < 8; ++j) f.ranked.push_back(7 - j);
    return f;
  }
};

}  // namespace

TEST(Ablation, ZeroDeletionsIsBaselineAndAllDeletionsIsBiasPrediction) {
  AblationFixture fx;
  for (std::size_t cls = 0; cls < 3; ++cls) {
    std::size_t members = 0, hits = 0;
    for (const auto& it : fx.items) {
      if (it.label != cls) continue;
      ++members;
      hits += nn::forward_head(fx.model, *it.conv_final).predicted_label == cls;
    }
    if (members == 0) continue;
    for (auto mode : {AblationMode::frequent, AblationMode::random}) {
      AblationOptions o;
      o.mode = mode;
      o.max_deleted = 8;
      const auto curve = ablation_curve(fx.model, fx.items, cls, fx.ranking(), o);
      ASSERT_EQ(curve.size(), 9u);
      EXPECT_DOUBLE_EQ(curve[0], static_cast<double>(hits) / static_cast<double>(members));
      // every map gone: the logits are the fc bias, whose argmax is class 1
      EXPECT_DOUBLE_EQ(curve[8], cls == 1 ? 1.0 : 0.0);
    }
  }
}

TEST(Ablation, Errors) {
  AblationFixture fx;
  AblationOptions o;
  o.max_deleted = 9;
  EXPECT_THROW(ablation_curve(fx.model, fx.items, 0, fx.ranking(), o), RangeError);
}

TEST(Ablation, RandomModeIsSeeded) {
  AblationFixture fx;
  AblationOptions o;
  o.mode = AblationMode::random;
  o.max_deleted = 6;
  o.trials = 4;
  const auto a = ablation_curve(fx.model, fx.items, 0, fx.ranking(), o);
  EXPECT_EQ(ablation_curve(fx.model, fx.items, 0, fx.ranking(), o), a);
}
