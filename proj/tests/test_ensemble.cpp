#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "fd_check.hpp"
#include "vsr/ensemble.hpp"
#include "vsr/error.hpp"

using namespace vsr;
using vsr::testing::random_tensor;

namespace {

CandidateSet random_candidates(int n, int h, int w, Rng& rng) {
  CandidateSet c;
  for (int k = 0; k < n; ++k) {
    c.candidates.push_back(random_tensor<float>({1, 3, h, w}, rng, 0.0, 1.0));
    c.names.push_back("m" + std::to_string(k));
  }
  return c;
}

bool same(const TensorF& a, const TensorF& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

void check_simplex_and_blocks(const FusionWeights& fw, int n) {
  const TensorF& w = fw.weights;
  REQUIRE(w.n() == n);
  REQUIRE(w.c() == 1);
  for (int y = 0; y < w.h(); ++y)
    for (int x = 0; x < w.w(); ++x) {
      double sum = 0.0;
      for (int k = 0; k < n; ++k) {
        const float v = w.at(k, 0, y, x);
        if (n > 1) CHECK((v > 0.0f && v < 1.0f));
        CHECK(v == w.at(k, 0, y - y % 8, x - x % 8));
        sum += v;
      }
      CHECK(std::abs(sum - 1.0) <= 1e-5);
    }
}

}  // namespace

TEST_CASE("score net architecture") {
  EnsembleNet net(1);
  const auto params = net.named_parameters();
  CHECK(params[0].tensor->shape() == Shape{16, 3, 2, 2});
  CHECK(params[4].tensor->shape() == Shape{32, 16, 2, 2});
  CHECK(params[8].tensor->shape() == Shape{64, 32, 2, 2});
  CHECK(params[12].tensor->shape() == Shape{1, 64, 1, 1});
  CHECK(EnsembleNet::kStageChannels == std::array<int, 4>{16, 32, 64, 1});
  // (3*16*4 + 16 + 2*16) + (16*32*4 + 32 + 2*32) + (32*64*4 + 64 + 2*64) + (64 + 1)
  CHECK(net.parameter_count() == 10833);
}

TEST_CASE("same seed builds identical nets") {
  EnsembleNet a = build_ensemble_net(5), b = build_ensemble_net(5), c = build_ensemble_net(6);
  auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i]->storage() == pb[i]->storage());
    differs = differs || pa[i]->storage() != pc[i]->storage();
  }
  CHECK(differs);
}

TEST_CASE("score map shape law") {
  EnsembleNet net(2);
  Rng rng(1);
  CHECK(score_map(net, random_tensor<float>({1, 3, 64, 64}, rng, 0, 1)).shape() == Shape{1, 1, 8, 8});
  CHECK(score_map(net, random_tensor<float>({1, 3, 96, 64}, rng, 0, 1)).shape() == Shape{1, 1, 12, 8});
  for (int h = 8; h <= 48; h += 8)
    for (int w = 8; w <= 48; w += 8)
      CHECK(score_map(net, random_tensor<float>({1, 3, h, w}, rng, 0, 1)).shape() == Shape{1, 1, h / 8, w / 8});
}

TEST_CASE("indivisible score map input names the padding") {
  EnsembleNet net(2);
  try {
    score_map(net, TensorF({1, 3, 50, 64}));
    FAIL("expected a DimensionError");
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("pad h by 6") != std::string::npos);
  }
  CHECK_THROWS_AS(score_map(net, TensorF({1, 3, 64, 61})), DimensionError);
}

TEST_CASE("score maps are per candidate") {
  EnsembleNet net(3);
  Rng rng(2);
  const CandidateSet c = random_candidates(3, 16, 24, rng);
  Graph<float> g;
  g.set_recording(false);
  const TensorF all = net.score_maps(g, c.stacked(), BnMode::eval).value();
  for (int k = 0; k < 3; ++k) {
    const TensorF one = score_map(net, c.candidates[k]);
    for (std::size_t i = 0; i < one.numel(); ++i) CHECK(all.data()[k * one.numel() + i] == one.data()[i]);
  }
}

TEST_CASE("fusion weight examples") {
  Rng rng(3);
  SUBCASE("N=1 gives ones") {
    const FusionWeights w = fusion_weights(random_tensor<float>({1, 1, 3, 2}, rng, -3, 3));
    CHECK(w.weights.shape() == Shape{1, 1, 24, 16});
    for (float v : w.weights.data()) CHECK(v == 1.0f);
  }
  SUBCASE("identical maps give thirds") {
    const TensorF one = random_tensor<float>({1, 1, 2, 2}, rng, -3, 3);
    const FusionWeights w = fusion_weights(stack_batch<float>(std::vector<TensorF>{one, one, one}));
    for (float v : w.weights.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
  }
  SUBCASE("random maps, N=5") {
    const FusionWeights w = fusion_weights(random_tensor<float>({5, 1, 4, 3}, rng, -4, 4));
    check_simplex_and_blocks(w, 5);
  }
}

TEST_CASE("fuse examples") {
  Rng rng(4);
  SUBCASE("N=1 returns the candidate") {
    const CandidateSet c = random_candidates(1, 16, 16, rng);
    EnsembleNet net(1);
    CHECK(same(adaptive_fuse(net, c), c.candidates[0]));
    CHECK(same(average_ensemble(c), c.candidates[0]));
  }
  SUBCASE("uniform weights match the average ensemble") {
    const CandidateSet c = random_candidates(4, 16, 8, rng);
    const FusionWeights w{TensorF({4, 1, 16, 8}, 0.25f)};
    const TensorF a = fuse(c, w), b = average_ensemble(c);
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(std::abs(a.data()[i] - b.data()[i]) <= 1e-6);
  }
  SUBCASE("block one-hot weights make a mosaic") {
    const int n = 3;
    const CandidateSet c = random_candidates(n, 24, 16, rng);
    TensorF scores({n, 1, 3, 2}, -50.0f);
    std::vector<int> winner;
    for (int by = 0; by < 3; ++by)
      for (int bx = 0; bx < 2; ++bx) {
        const int k = (by * 2 + bx) % n;
        winner.push_back(k);
        scores.at(k, 0, by, bx) = 50.0f;
      }
    const TensorF out = fuse(c, fusion_weights(scores));
    for (int ch = 0; ch < 3; ++ch)
      for (int y = 0; y < 24; ++y)
        for (int x = 0; x < 16; ++x) {
          const int k = winner[(y / 8) * 2 + x / 8];
          CHECK(out.at(0, ch, y, x) == doctest::Approx(c.candidates[k].at(0, ch, y, x)).epsilon(1e-6));
        }
  }
  SUBCASE("model count mismatch") {
    const CandidateSet c = random_candidates(3, 8, 8, rng);
    CHECK_THROWS_AS(fuse(c, FusionWeights{TensorF({2, 1, 8, 8}, 0.5f)}), DimensionError);
  }
}

TEST_CASE("average ensemble of mirrored pair is constant") {
  Rng rng(5);
  const TensorF x = random_tensor<float>({1, 3, 8, 8}, rng, 0.0, 0.5);
  TensorF y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) y.data()[i] = -x.data()[i] + 2.0f * 0.25f;
  const TensorF a = average_ensemble(CandidateSet{{x, y}, {}});
  for (float v : a.data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-6));
}

TEST_CASE("random candidate sets keep every invariant") {
  Rng rng(6);
  int sets = 0;
  for (int n : {2, 3, 5, 7}) {
    for (int rep = 0; rep < 6; ++rep) {
      EnsembleNet net(static_cast<std::uint64_t>(100 * n + rep));
      const int h = 8 * (1 + rng.index(4)), w = 8 * (1 + rng.index(4));
      const CandidateSet c = random_candidates(n, h, w, rng);
      const FusionWeights fw = adaptive_weights(net, c);
      check_simplex_and_blocks(fw, n);
      const TensorF out = adaptive_fuse(net, c);
      for (int ch = 0; ch < 3; ++ch)
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) {
            float lo = 2.0f, hi = -2.0f;
            for (const auto& cand : c.candidates) {
              lo = std::min(lo, cand.at(0, ch, y, x));
              hi = std::max(hi, cand.at(0, ch, y, x));
            }
            const float v = out.at(0, ch, y, x);
            CHECK((v >= lo - 1e-6f && v <= hi + 1e-6f));
          }
      ++sets;
    }
  }
  CHECK(sets == 24);
}

TEST_CASE("candidate permutation permutes weights and keeps the fused image") {
  Rng rng(7);
  EnsembleNet net(8);
  const CandidateSet c = random_candidates(4, 16, 16, rng);
  const std::vector<int> perm{2, 0, 3, 1};
  CandidateSet p;
  for (int k : perm) p.candidates.push_back(c.candidates[k]);
  const TensorF wa = adaptive_weights(net, c).weights, wb = adaptive_weights(net, p).weights;
  const std::size_t plane = wa.shape().plane();
  for (int j = 0; j < 4; ++j)
    for (std::size_t i = 0; i < plane; ++i) CHECK(wb.data()[j * plane + i] == wa.data()[perm[j] * plane + i]);
  const TensorF fa = adaptive_fuse(net, c), fb = adaptive_fuse(net, p);
  for (std::size_t i = 0; i < fa.numel(); ++i) CHECK(std::abs(fa.data()[i] - fb.data()[i]) <= 1e-6);
}

TEST_CASE("non-multiple-of-8 inputs are reflect-padded and cropped back") {
  Rng rng(9);
  EnsembleNet net(10);
  const CandidateSet c = random_candidates(3, 50, 44, rng);
  const TensorF out = adaptive_fuse(net, c);
  CHECK(out.shape() == Shape{1, 3, 50, 44});
  CHECK(adaptive_weights(net, c).weights.shape() == Shape{3, 1, 56, 48});

  // Padding then cropping on an N=1 set is the identity.
  const CandidateSet one{{c.candidates[0]}, {}};
  CHECK(same(adaptive_fuse(net, one), c.candidates[0]));

  const TensorF padded = reflect_pad(c.candidates[0], 6, 4);
  CHECK(padded.shape() == Shape{1, 3, 56, 48});
  for (int y = 0; y < 56; ++y)
    for (int x = 0; x < 48; ++x) {
      const int sy = y < 50 ? y : 2 * 49 - y, sx = x < 44 ? x : 2 * 43 - x;
      CHECK(padded.at(0, 1, y, x) == c.candidates[0].at(0, 1, sy, sx));
    }
}

TEST_CASE("candidate set validation") {
  CHECK_THROWS_AS(CandidateSet{}.validate(), ConfigError);
  CandidateSet bad{{TensorF({1, 3, 8, 8}), TensorF({1, 3, 8, 16})}, {}};
  CHECK_THROWS_AS(bad.validate(), DimensionError);
  CandidateSet names{{TensorF({1, 3, 8, 8}), TensorF({1, 3, 8, 8})}, {"only"}};
  CHECK_THROWS_AS(names.validate(), DimensionError);
}

TEST_CASE("training on one sample learns to pick the correct candidate") {
  Rng rng(11);
  const TensorF truth = random_tensor<float>({1, 3, 32, 32}, rng, 0.0, 1.0);
  const TensorF garbage = random_tensor<float>({1, 3, 32, 32}, rng, 0.0, 1.0);
  const CandidateSet c{{truth, garbage}, {"good", "bad"}};
  EnsembleNet net(12);
  Optimizer<float> opt(OptimizerKind::sgd, 0.1);
  for (int step = 0; step < 200; ++step) train_ensemble_step(net, opt, c.stacked(), truth, 2);
  const TensorF w = adaptive_weights(net, c).weights;
  const std::size_t plane = w.shape().plane();
  double mean0 = 0.0;
  for (std::size_t i = 0; i < plane; ++i) mean0 += w.data()[i];
  mean0 /= static_cast<double>(plane);
  CHECK(mean0 > 0.9);
}

TEST_CASE("identical candidates give zero parameter gradient") {
  Rng rng(13);
  const TensorF x = random_tensor<float>({1, 3, 16, 16}, rng, 0.0, 1.0);
  const TensorF gt = random_tensor<float>({1, 3, 16, 16}, rng, 0.0, 1.0);
  EnsembleNet net(14);
  for (auto* p : net.parameters()) p->zero_grad();
  Graph<float> g;
  const Var<float> fused = net.fuse(g, stack_batch<float>(std::vector<TensorF>{x, x, x}), 3, BnMode::train);
  g.backward(loss(fused, g.constant(gt), LossKind::l1));
  double worst = 0.0;
  for (auto* p : net.parameters())
    for (float v : p->grad()) worst = std::max(worst, static_cast<double>(std::abs(v)));
  CHECK(worst <= 1e-6);
}

TEST_CASE("loss falls monotonically on a fixed batch at lr 1e-3") {
  int monotone = 0;
  const int seeds = 20;
  for (int s = 0; s < seeds; ++s) {
    Rng rng(static_cast<std::uint64_t>(1000 + s));
    std::vector<TensorF> truths, cands;
    for (int b = 0; b < 2; ++b) {
      const TensorF t = random_tensor<float>({1, 3, 16, 16}, rng, 0.0, 1.0);
      truths.push_back(t);
      TensorF near = t, far = random_tensor<float>({1, 3, 16, 16}, rng, 0.0, 1.0);
      for (auto& v : near.data()) v += static_cast<float>(rng.uniform(-0.05, 0.05));
      cands.push_back(near);
      cands.push_back(far);
    }
    const TensorF stacked = stack_batch<float>(cands);
    const TensorF gt = stack_batch<float>(truths);
    EnsembleNet net(static_cast<std::uint64_t>(s));
    Optimizer<float> opt(OptimizerKind::sgd, 1e-3);
    double prev = train_ensemble_step(net, opt, stacked, gt, 2);
    bool ok = true;
    for (int step = 1; step < 50; ++step) {
      const double l = train_ensemble_step(net, opt, stacked, gt, 2);
      ok = ok && l <= prev;
      prev = l;
    }
    monotone += ok;
  }
  CHECK(monotone >= 0.95 * seeds);
}

TEST_CASE("ensemble checkpoint round trip") {
  Rng rng(15);
  EnsembleNet net(16);
  const CandidateSet c = random_candidates(2, 16, 16, rng);
  Optimizer<float> opt(OptimizerKind::sgd, 0.1);
  for (int i = 0; i < 3; ++i) train_ensemble_step(net, opt, c.stacked(), c.candidates[0], 2);
  const auto path = std::filesystem::temp_directory_path() / "vsr_ensemble_roundtrip.vsrt";
  save_ensemble_checkpoint(path, net);
  EnsembleNet back = load_ensemble_checkpoint(path);
  auto a = net.parameters(), b = back.parameters();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i]->storage() == b[i]->storage());
  for (int i = 0; i < 3; ++i) {
    CHECK(net.bn_stats()[i].running_mean == back.bn_stats()[i].running_mean);
    CHECK(net.bn_stats()[i].running_var == back.bn_stats()[i].running_var);
  }
  CHECK(same(adaptive_fuse(net, c), adaptive_fuse(back, c)));
  std::filesystem::remove(path);
}
