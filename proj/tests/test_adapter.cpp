#include <gtest/gtest.h>

#include "lorafed/adapter.hpp"
#include "lorafed/random.hpp"
#include "lorafed/toy_model.hpp"

using namespace lorafed;

namespace {

LoraAdapter scalar_adapter(double a, double b, double alpha) {
  LoraAdapter ad;
  ad.layer_name = "s";
  ad.A = Tensor::matrix("s.lora_A", {{a}});
  ad.B = Tensor::matrix("s.lora_B", {{b}});
  ad.lora_alpha = alpha;
  return ad;
}

LoraAdapter random_adapter(RandomSource& rs, std::size_t d_out, std::size_t d_in, std::size_t r) {
  LoraAdapter ad;
  ad.layer_name = "layer";
  ad.A = sample_gaussian(rs, {r, d_in}, 0.0, 1.0, "layer.lora_A");
  ad.B = sample_gaussian(rs, {d_out, r}, 0.0, 1.0, "layer.lora_B");
  ad.lora_alpha = rs.uniform(0.5, 4.0);
  return ad;
}

std::vector<LayerDescriptor> square_registry() { return {{"square", 64, 64, Modality::kFusion}}; }

}  // namespace

TEST(Adapter, InitShapesAndCounts) {
  RandomSource rs(1, StreamRole::kAdapterInit);
  const AdapterSet set = init_adapter_set(square_registry(), 16, 32.0, 0, rs);
  const auto& a = set.at("square");
  EXPECT_EQ(a.A.dims(), (Dims{16, 64}));
  EXPECT_EQ(a.B.dims(), (Dims{64, 16}));
  EXPECT_EQ(a.parameter_count(), 2048u);
  EXPECT_EQ(a.scaling(), 2.0);
  for (double v : a.B.data()) EXPECT_EQ(v, 0.0);
}

TEST(Adapter, InitIsDeterministic) {
  RandomSource a(5, StreamRole::kAdapterInit), b(5, StreamRole::kAdapterInit);
  const ToyModel m = ToyModel::create({}, 0);
  EXPECT_TRUE(bitwise_equal(m.init_adapters(16, 32, a), m.init_adapters(16, 32, b)));
}

TEST(Adapter, InitVarianceIsOneOverRank) {
  RandomSource rs(2, StreamRole::kAdapterInit);
  const AdapterSet set = init_adapter_set({{"wide", 4096, 64, Modality::kText}}, 16, 32.0, 0, rs);
  const auto& A = set.at("wide").A;
  double ss = 0.0;
  for (double v : A.data()) ss += v * v;
  EXPECT_NEAR(ss / static_cast<double>(A.size()), 1.0 / 16.0, 0.003);
}

TEST(Adapter, InitRejectsBadRank) {
  RandomSource rs(1, 1);
  EXPECT_THROW(init_adapter_set(square_registry(), 0, 32.0, 0, rs), Error);
  EXPECT_THROW(init_adapter_set(square_registry(), 65, 32.0, 0, rs), Error);
  EXPECT_THROW(init_adapter_set({{"x", 4, 4, Modality::kText}, {"x", 4, 4, Modality::kText}}, 2, 1.0, 0, rs), Error);
}

TEST(Adapter, ZeroDeltaAtInit) {
  RandomSource rs(3, 3);
  const ToyModel model = ToyModel::create({}, 3);
  const AdapterSet set = model.init_adapters(16, 32, rs);
  for (const auto& d : model.registry()) {
    const Tensor x = sample_gaussian(rs, {d.d_in}, 0.0, 1.0);
    const Tensor y = apply_adapter(set.at(d.name), model.weight(d.name), x);
    EXPECT_TRUE(y.bitwise_equal(matvec(model.weight(d.name), x))) << d.name;
  }
}

TEST(Adapter, ScalarForcedArithmetic) {
  const LoraAdapter ad = scalar_adapter(1, 1, 2);
  const Tensor y = apply_adapter(ad, Tensor::matrix("w", {{1}}), Tensor::vector("x", {1}));
  EXPECT_EQ(y[0], 3.0);
}

TEST(Adapter, MergeForcedArithmetic) {
  LoraAdapter ad;
  ad.layer_name = "m";
  ad.A = Tensor::matrix("A", {{1, 0}});
  ad.B = Tensor::matrix("B", {{1}, {0}});
  ad.lora_alpha = 2.0;
  const Tensor merged = merge_adapter(ad, Tensor::zeros("w", {2, 2}));
  EXPECT_EQ(merged(0, 0), 2.0);
  EXPECT_EQ(merged(0, 1), 0.0);
  EXPECT_EQ(merged(1, 0), 0.0);
  EXPECT_EQ(merged(1, 1), 0.0);
}

TEST(Adapter, MergeWithZeroBLeavesWeight) {
  RandomSource rs(4, 4);
  LoraAdapter ad = random_adapter(rs, 8, 8, 2);
  ad.B = Tensor::zeros("B", {8, 2});
  const Tensor w = sample_gaussian(rs, {8, 8}, 0.0, 1.0);
  EXPECT_TRUE(merge_adapter(ad, w).bitwise_equal(w));
}

TEST(Adapter, MergePathMatchesAdapterPath) {
  RandomSource rs(6, 6);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d_out = 1 + rs.uniform_index(8), d_in = 1 + rs.uniform_index(8);
    const std::size_t r = 1 + rs.uniform_index(std::max(d_in, d_out));
    const LoraAdapter ad = random_adapter(rs, d_out, d_in, r);
    const Tensor w = sample_gaussian(rs, {d_out, d_in}, 0.0, 1.0);
    const Tensor x = sample_gaussian(rs, {d_in}, 0.0, 1.0);
    const Tensor direct = apply_adapter(ad, w, x);
    const Tensor merged = matvec(merge_adapter(ad, w), x);
    for (std::size_t i = 0; i < d_out; ++i) {
      EXPECT_NEAR(direct[i], merged[i], 1e-10 * std::max(1.0, std::abs(direct[i])));
    }
  }
}

TEST(Adapter, DoublingBDoublesDelta) {
  RandomSource rs(7, 7);
  for (int trial = 0; trial < 20; ++trial) {
    LoraAdapter ad = random_adapter(rs, 6, 5, 3);
    const Tensor w = sample_gaussian(rs, {6, 5}, 0.0, 1.0);
    const Tensor x = sample_gaussian(rs, {5}, 0.0, 1.0);
    const Tensor base = matvec(w, x);
    const Tensor y1 = apply_adapter(ad, w, x);
    for (double& v : ad.B.data()) v *= 2.0;
    const Tensor y2 = apply_adapter(ad, w, x);
    for (std::size_t i = 0; i < 6; ++i) {
      EXPECT_NEAR(y2[i] - base[i], 2.0 * (y1[i] - base[i]), 1e-12 * std::max(1.0, std::abs(y2[i])));
    }
  }
}

TEST(Adapter, ShapeMismatchIsAnError) {
  const LoraAdapter ad = scalar_adapter(1, 1, 1);
  EXPECT_THROW(apply_adapter(ad, Tensor::zeros("w", {2, 2}), Tensor::vector("x", {1, 1})), Error);
  EXPECT_THROW(apply_adapter(ad, Tensor::zeros("w", {1, 1}), Tensor::vector("x", {1, 1})), Error);
  EXPECT_THROW(merge_adapter(ad, Tensor::zeros("w", {2, 1})), Error);
}

TEST(Adapter, FlattenUpdatesIsSortedAndComplete) {
  RandomSource rs(8, 8);
  const ToyModel model = ToyModel::create({}, 0);
  const AdapterSet set = model.init_adapters(16, 32, rs);
  const auto flat = flatten_updates(set);
  ASSERT_EQ(flat.size(), 11u);
  for (std::size_t i = 1; i < flat.size(); ++i) EXPECT_LT(flat[i - 1].first, flat[i].first);
  std::size_t count = 0;
  for (const auto& [name, t] : flat) {
    count += t.size();
    EXPECT_EQ(name.find(".weight"), std::string::npos);
    EXPECT_EQ(t.name(), name);
  }
  std::size_t expected = model.dims().d_align();
  for (const auto& d : model.registry()) expected += 16 * (d.d_in + d.d_out);
  EXPECT_EQ(count, expected);
  EXPECT_EQ(count, 8736u);
  EXPECT_EQ(set.parameter_count(), count);
}

TEST(Adapter, CongruentSetsFlattenIdentically) {
  RandomSource a(1, 1), b(2, 2);
  const ToyModel model = ToyModel::create({}, 0);
  const auto fa = flatten_updates(model.init_adapters(16, 32, a));
  const auto fb = flatten_updates(model.init_adapters(16, 32, b));
  ASSERT_EQ(fa.size(), fb.size());
  for (std::size_t i = 0; i < fa.size(); ++i) {
    EXPECT_EQ(fa[i].first, fb[i].first);
    EXPECT_EQ(fa[i].second.dims(), fb[i].second.dims());
  }
}

TEST(Adapter, CongruenceDetectsRankChange) {
  RandomSource rs(1, 1);
  const ToyModel model = ToyModel::create({}, 0);
  const AdapterSet a = model.init_adapters(16, 32, rs);
  const AdapterSet b = model.init_adapters(8, 32, rs);
  EXPECT_TRUE(congruent(a, a));
  EXPECT_FALSE(congruent(a, b));
  EXPECT_THROW(require_congruent(a, b, "test"), Error);
  EXPECT_THROW(model.require_matching(init_adapter_set(square_registry(), 4, 1.0, 128, rs)), Error);
}

TEST(Adapter, SetArithmetic) {
  RandomSource rs(3, 1);
  const ToyModel model = ToyModel::create({}, 0);
  const AdapterSet a = model.init_adapters(4, 8, rs);
  AdapterSet b = zeros_like(a);
  add_scaled(b, 2.0, a);
  EXPECT_NEAR(squared_distance(b, a), squared_distance(a, zeros_like(a)), 1e-9);
  EXPECT_DOUBLE_EQ(max_abs_diff(b, a), max_abs_diff(a, zeros_like(a)));
  EXPECT_TRUE(all_finite(b));
}
