#include <doctest.h>

#include <algorithm>
#include <array>
#include <set>

#include "fd_check.hpp"
#include "vsr/augment.hpp"
#include "vsr/dataset.hpp"
#include "vsr/metrics.hpp"
#include "vsr/trainer.hpp"

using namespace vsr;
using vsr::testing::random_tensor;

namespace {

bool same(const TensorF& a, const TensorF& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

SuperImage random_super_image(int radius, int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  SuperImage s;
  s.tensor = random_tensor<float>({1, super_image_channels(radius), h, w}, rng, 0.0, 1.0);
  s.radius = radius;
  s.t = radius;
  for (int k = 0; k < 2 * radius + 1; ++k) s.indices.push_back(k);
  return s;
}

std::string key(const GeoTransform& t) {
  return std::string{t.vflip ? 'v' : '-', t.hflip ? 'h' : '-', t.rot90 ? 'r' : '-', t.tflip ? 't' : '-'};
}

// Nearest x4 upsample of the squared frame-wise maximum: commutes with every flip,
// quarter turn and frame reversal.
TensorF equivariant_model(const SuperImage& s) {
  const TensorF& x = s.tensor;
  const int frames = x.c() / 3;
  TensorF out({1, 3, 4 * x.h(), 4 * x.w()});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < out.h(); ++y)
      for (int xx = 0; xx < out.w(); ++xx) {
        float acc = 0.0f;
        for (int k = 0; k < frames; ++k) acc = std::max(acc, x.at(0, 3 * k + c, y / 4, xx / 4));
        out.at(0, c, y, xx) = acc * acc;
      }
  return out;
}

}  // namespace

TEST_CASE("sixteen distinct transforms, identity first") {
  const auto all = enumerate_self_ensemble();
  REQUIRE(all.size() == 16);
  CHECK(all.front().is_identity());
  std::set<std::string> keys;
  for (const auto& t : all) keys.insert(key(t));
  CHECK(keys.size() == 16);
  const auto no_rot = enumerate_without_rotation();
  CHECK(no_rot.size() == 8);
  CHECK(std::none_of(no_rot.begin(), no_rot.end(), [](const GeoTransform& t) { return t.rot90; }));
}

TEST_CASE("transforms give pairwise distinct images on a generic input") {
  const SuperImage s = random_super_image(1, 6, 6, 1);
  const auto all = enumerate_self_ensemble();
  std::vector<TensorF> images;
  for (const auto& t : all) images.push_back(apply(t, s).tensor);
  for (std::size_t i = 0; i < images.size(); ++i)
    for (std::size_t j = i + 1; j < images.size(); ++j) CHECK_FALSE(same(images[i], images[j]));
}

TEST_CASE("spatial transforms of a 2x2 marker are the dihedral arrangements") {
  TensorF marker({1, 1, 2, 2});
  marker.at(0, 0, 0, 0) = 1;
  marker.at(0, 0, 0, 1) = 2;
  marker.at(0, 0, 1, 0) = 3;
  marker.at(0, 0, 1, 1) = 4;
  // vflip, hflip, rot90 (ccw) -> row-major result
  const std::vector<std::pair<std::array<bool, 3>, std::array<float, 4>>> expected{
      {{false, false, false}, {1, 2, 3, 4}}, {{true, false, false}, {3, 4, 1, 2}},
      {{false, true, false}, {2, 1, 4, 3}},  {{true, true, false}, {4, 3, 2, 1}},
      {{false, false, true}, {2, 4, 1, 3}},  {{true, false, true}, {4, 2, 3, 1}},
      {{false, true, true}, {1, 3, 2, 4}},   {{true, true, true}, {3, 1, 4, 2}},
  };
  for (const auto& [flags, grid] : expected) {
    const GeoTransform t{flags[0], flags[1], flags[2], false};
    const TensorF y = apply_spatial(t, marker);
    INFO(key(t));
    CHECK(std::equal(grid.begin(), grid.end(), y.data().begin()));
  }
}

TEST_CASE("the set is closed under composition") {
  const SuperImage s = random_super_image(2, 5, 5, 2);
  const auto all = enumerate_self_ensemble();
  std::vector<SuperImage> images;
  for (const auto& t : all) images.push_back(apply(t, s));
  for (const auto& a : all) {
    for (const auto& b : all) {
      const TensorF composed = apply(b, apply(a, s)).tensor;
      const auto hits = std::count_if(images.begin(), images.end(),
                                      [&](const SuperImage& im) { return same(im.tensor, composed); });
      INFO(key(a) << " then " << key(b));
      CHECK(hits == 1);
    }
  }
}

TEST_CASE("round trips are bit-exact") {
  Rng rng(3);
  const TensorF img = random_tensor<float>({2, 3, 7, 7}, rng, 0.0, 1.0);
  for (const auto& t : enumerate_self_ensemble()) {
    INFO(key(t));
    CHECK(same(invert_output(t, apply_spatial(t, img)), img));
  }
  const TensorF wide = random_tensor<float>({1, 3, 4, 9}, rng, 0.0, 1.0);
  for (const auto& t : enumerate_without_rotation()) CHECK(same(invert_output(t, apply_spatial(t, wide)), wide));

  const SuperImage s = random_super_image(2, 4, 4, 5);
  const GeoTransform tf{false, false, false, true};
  const SuperImage twice = apply(tf, apply(tf, s));
  CHECK(same(twice.tensor, s.tensor));
  CHECK(twice.indices == s.indices);
  const GeoTransform h{false, true, false, false};
  CHECK(same(apply_spatial(h, apply_spatial(h, img)), img));
  CHECK(same(apply(GeoTransform{}, s).tensor, s.tensor));
}

TEST_CASE("temporal flip reverses frame blocks") {
  const SuperImage s = random_super_image(2, 3, 4, 6);
  const SuperImage f = apply(GeoTransform{false, false, false, true}, s);
  for (int k = 0; k < 5; ++k)
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 4; ++x) CHECK(f.tensor.at(0, 3 * k + c, y, x) == s.tensor.at(0, 3 * (4 - k) + c, y, x));
  CHECK(f.indices == std::vector<int>{4, 3, 2, 1, 0});
  // the centre block is unchanged
  CHECK(same(center_frame(f.tensor, 2), center_frame(s.tensor, 2)));
}

TEST_CASE("quarter turn requires a square input") {
  Rng rng(7);
  const TensorF wide = random_tensor<float>({1, 3, 4, 6}, rng);
  CHECK_THROWS_AS(apply_spatial(GeoTransform{false, false, true, false}, wide), DimensionError);
  CHECK_NOTHROW(apply_spatial(GeoTransform{true, true, false, false}, wide));
}

TEST_CASE("training augmentation flips fair coins") {
  Rng rng(8);
  std::array<int, 4> counts{};
  std::set<std::string> seen;
  const int n = 4000;
  for (int i = 0; i < n; ++i) {
    const GeoTransform t = sample_train_augmentation(rng);
    counts[0] += t.vflip;
    counts[1] += t.hflip;
    counts[2] += t.rot90;
    counts[3] += t.tflip;
    seen.insert(key(t));
  }
  for (int c : counts) CHECK((c > 0.45 * n && c < 0.55 * n));
  CHECK(seen.size() == 16);
}

TEST_CASE("self-ensemble of an equivariant operator equals a single pass") {
  const SuperImage s = random_super_image(2, 6, 6, 9);
  const auto r = self_ensemble_infer(equivariant_model, s);
  CHECK(r.branches == 16);
  CHECK_FALSE(r.rotation_excluded);
  CHECK(same(r.output, equivariant_model(s)));
}

TEST_CASE("non-square input uses the eight rotation-free branches") {
  const SuperImage s = random_super_image(1, 4, 7, 10);
  const auto r = self_ensemble_infer(equivariant_model, s);
  CHECK(r.branches == 8);
  CHECK(r.rotation_excluded);
  CHECK(same(r.output, equivariant_model(s)));

  int calls = 0;
  const FrameModel counting = [&](const SuperImage& x) {
    ++calls;
    return equivariant_model(x);
  };
  self_ensemble_infer(counting, s);
  CHECK(calls == 8);
}

TEST_CASE("self-ensemble of a non-equivariant operator averages the branches") {
  // Output is the upsampled first frame block: frame reversal changes it.
  const FrameModel first_block = [](const SuperImage& x) {
    return upsample_nearest(slice_channels(x.tensor, 0, 3), 4);
  };
  const SuperImage s = random_super_image(1, 4, 4, 11);
  const auto r = self_ensemble_infer(first_block, s);
  const TensorF a = upsample_nearest(slice_channels(s.tensor, 0, 3), 4);
  const TensorF b = upsample_nearest(slice_channels(s.tensor, 6, 3), 4);
  for (std::size_t i = 0; i < a.numel(); ++i) {
    CHECK(r.output.data()[i] == doctest::Approx(0.5 * (a.data()[i] + b.data()[i])).epsilon(1e-6));
  }
}

TEST_CASE("self-ensemble does not hurt a trained toy model on most frames") {
  auto hr = assign_splits(generate_toy_dataset(4, 20, {48, 48}, {}, 3), {3, 1, 0, 3});
  Dataset data;
  data.hr = hr;
  for (const auto& s : hr) data.lr.push_back(degrade(s));
  TrainConfig c;
  c.model.radius = 1;
  c.model.width = 16;
  c.model.num_blocks = 2;
  c.model.bicubic_residual = true;
  c.lr = 1e-3;
  c.batch = 8;
  c.lr_patch = 12;
  c.steps = 400;
  c.eval_interval = 400;
  c.seed = 4;
  const auto result = train_sr(c, data);
  SrModel model = result.model;

  const auto select = data.indices(SplitRole::select);
  REQUIRE(select.size() == 1);
  const auto& lr = data.lr[select[0]];
  const auto& gt = data.hr[select[0]];
  int better = 0, total = 0;
  for (int t = 0; t < 20; ++t) {
    const auto window = temporal_window(static_cast<int>(lr.frames.size()), t, 1);
    const SuperImage s = build_super_image(lr.frames, window);
    const double single = psnr(sr_forward(model, s), gt.frames[t]);
    const double ensemble = psnr(self_ensemble_infer(model, s).output, gt.frames[t]);
    better += ensemble >= single;
    ++total;
  }
  CHECK(better >= 0.8 * total);
}
