#include <doctest.h>

#include <cmath>
#include <sstream>

#include "fd_check.hpp"
#include "vsr/augment.hpp"
#include "vsr/metrics.hpp"
#include "vsr/trainer.hpp"

using namespace vsr;
using vsr::testing::random_tensor;

namespace {

double oracle_psnr(const TensorF& a, const TensorF& b) {
  std::vector<long double> sq;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const long double d = static_cast<long double>(a.data()[i]) - b.data()[i];
    sq.push_back(d * d);
  }
  long double mse = 0;
  for (long double v : sq) mse += v;
  mse /= static_cast<long double>(sq.size());
  return static_cast<double>(-10.0L * std::log10(mse));
}

Dataset toy_data(int seqs, int frames, int size, SplitConfig split, std::uint64_t seed) {
  Dataset d;
  d.hr = assign_splits(generate_toy_dataset(seqs, frames, {size, size}, {}, seed), split);
  for (const auto& s : d.hr) d.lr.push_back(degrade(s));
  return d;
}

FrameSource truth_source(const Dataset& d) {
  return [&d](const VideoSequence& lr, int t) {
    for (std::size_t i = 0; i < d.lr.size(); ++i) {
      if (d.lr[i].id == lr.id) return d.hr[i].frames[static_cast<std::size_t>(t)];
    }
    throw Error("unknown sequence");
  };
}

std::vector<std::string> split_lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

}  // namespace

TEST_CASE("psnr closed forms") {
  Rng rng(1);
  const TensorF a = random_tensor<float>({1, 3, 8, 8}, rng, 0.0, 1.0);
  CHECK(psnr(a, a) == kIdenticalPsnr);
  CHECK(kIdenticalPsnr == 100.0);
  const TensorF zero({1, 3, 4, 5}, 0.25f), shifted({1, 3, 4, 5}, 0.35f);
  CHECK(psnr(zero, shifted) == doctest::Approx(20.0).epsilon(1e-6));
  TensorF checker({1, 3, 4, 4}, 0.5f);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) checker.at(0, 1, y, x) = (x + y) % 2 ? 0.5f + 0.25f : 0.5f - 0.25f;
  // squared error 1/16 on a third of the elements
  CHECK(psnr(checker, TensorF({1, 3, 4, 4}, 0.5f)) == doctest::Approx(10.0 * std::log10(48.0)).epsilon(1e-9));
  CHECK_THROWS_AS(psnr(a, TensorF({1, 3, 8, 7})), DimensionError);
}

TEST_CASE("psnr matches a two-pass oracle") {
  Rng rng(2);
  for (int i = 0; i < 50; ++i) {
    const int h = 1 + rng.index(40), w = 1 + rng.index(40);
    const TensorF a = random_tensor<float>({1, 3, h, w}, rng, 0.0, 1.0);
    const TensorF b = random_tensor<float>({1, 3, h, w}, rng, 0.0, 1.0);
    CHECK(std::abs(psnr(a, b) - oracle_psnr(a, b)) <= 1e-6);
    CHECK(psnr(a, b) == psnr(b, a));
  }
}

TEST_CASE("psnr falls as noise grows") {
  Rng rng(3);
  const TensorF clean = random_tensor<float>({1, 3, 16, 16}, rng, 0.2, 0.8);
  const TensorF pattern = random_tensor<float>({1, 3, 16, 16}, rng, -1.0, 1.0);
  double prev = kIdenticalPsnr + 1;
  for (double amp : {0.001, 0.01, 0.03, 0.1, 0.2}) {
    TensorF noisy = clean;
    for (std::size_t k = 0; k < noisy.numel(); ++k) noisy.data()[k] += static_cast<float>(amp * pattern.data()[k]);
    const double p = psnr(clean, noisy);
    CHECK(p < prev);
    prev = p;
  }
}

TEST_CASE("ground truth against itself and report consistency") {
  const Dataset d = toy_data(3, 4, 32, {1, 1, 1, 1}, 1);
  const std::vector<NamedSource> sources{{"truth", truth_source(d)}, {"bicubic", bicubic_source()}};
  const EvalReport r = evaluate(sources, d, {0, 1, 2});
  CHECK(r.models == std::vector<std::string>{"truth", "bicubic"});
  CHECK_FALSE(r.self_ensemble);
  REQUIRE(r.rows.size() == 24);
  for (int i = 0; i < 12; ++i) {
    CHECK(r.rows[static_cast<std::size_t>(i)].model == "truth");
    CHECK(r.rows[static_cast<std::size_t>(i)].psnr_db == 100.0);
    CHECK(r.rows[static_cast<std::size_t>(i)].sequence == d.lr[static_cast<std::size_t>(i / 4)].id);
    CHECK(r.rows[static_cast<std::size_t>(i)].frame == i % 4);
  }
  CHECK(r.overall_mean("truth") == 100.0);
  const double bic = r.overall_mean("bicubic");
  CHECK(std::isfinite(bic));
  CHECK(bic > 0.0);
  CHECK(bic < 100.0);

  double acc = 0.0;
  for (std::size_t i = 12; i < 24; ++i) acc += r.rows[i].psnr_db;
  CHECK(bic == doctest::Approx(acc / 12).epsilon(1e-12));
  for (const auto& [seq, mean] : r.sequence_means("bicubic")) {
    double s = 0.0;
    int n = 0;
    for (const auto& row : r.rows)
      if (row.model == "bicubic" && row.sequence == seq) {
        s += row.psnr_db;
        ++n;
      }
    CHECK(n == 4);
    CHECK(mean == doctest::Approx(s / n).epsilon(1e-12));
  }
  CHECK(mean_psnr(bicubic_source(), d, {0, 1, 2}) == doctest::Approx(bic).epsilon(1e-12));
  CHECK_THROWS_AS(r.overall_mean("missing"), Error);

  const auto lines = split_lines(r.to_csv());
  REQUIRE(lines.size() == 2 + 24 + 2 * 4);
  CHECK(lines[0].rfind("# psnr: rgb, max=1", 0) == 0);
  CHECK(lines[1] == "model,sequence,frame,psnr_db");
  CHECK(lines[2] == "truth," + d.lr[0].id + ",0,100.000000");
  CHECK(lines.back().rfind("bicubic,all,mean,", 0) == 0);
  CHECK(std::stod(lines.back().substr(17)) == doctest::Approx(bic).epsilon(1e-6));
  CHECK(r.summary().find("bicubic") != std::string::npos);
}

TEST_CASE("missing ground truth is an error") {
  Dataset d = toy_data(1, 4, 32, {1, 0, 0, 2}, 2);
  d.hr[0].frames.pop_back();
  const std::vector<NamedSource> sources{{"bicubic", bicubic_source()}};
  CHECK_THROWS_AS(evaluate(sources, d, {0}), Error);
  CHECK_THROWS(evaluate(sources, d, {3}));
}

TEST_CASE("mixed temporal radii in one evaluation") {
  const Dataset d = toy_data(2, 7, 32, {1, 1, 0, 3}, 3);
  std::vector<SrModel> models;
  const std::array<std::pair<Arch, int>, 3> specs{{{Arch::rcan, 2}, {Arch::rdn, 3}, {Arch::edsr, 1}}};
  for (const auto& [arch, radius] : specs) {
    SrConfig c;
    c.arch = arch;
    c.radius = radius;
    c.width = 8;
    c.num_blocks = 1;
    models.emplace_back(c, 4);
  }
  std::vector<NamedSource> sources;
  for (std::size_t i = 0; i < models.size(); ++i) sources.push_back({"m" + std::to_string(i), model_source(models[i], false)});
  const EvalReport r = evaluate(sources, d, {0, 1});
  REQUIRE(r.rows.size() == 3 * 14);
  for (std::size_t m = 0; m < models.size(); ++m) {
    CHECK(models[m].first_conv().weight.c() == 3 * (2 * specs[m].second + 1));
    for (int t : {0, 3, 6}) {
      const SuperImage s = build_super_image(d.lr[1].frames, temporal_window(7, t, specs[m].second));
      CHECK(s.tensor.c() == 3 * (2 * specs[m].second + 1));
      const TensorF out = sr_forward(models[m], s);
      const auto& row = r.rows[m * 14 + 7 + static_cast<std::size_t>(t)];
      CHECK(row.psnr_db == psnr(out, d.hr[1].frames[static_cast<std::size_t>(t)]));
    }
  }
}

TEST_CASE("self-ensemble flag and ensemble sources") {
  const Dataset d = toy_data(1, 3, 16, {0, 0, 1, 4}, 4);
  SrConfig c;
  c.radius = 1;
  c.width = 8;
  c.num_blocks = 1;
  SrModel model(c, 5);
  const std::vector<NamedSource> sources{{"plain", model_source(model, false)}, {"se", model_source(model, true)}};
  const EvalReport r = evaluate(sources, d, {0}, true);
  CHECK(r.self_ensemble);
  CHECK(r.to_csv().find("self_ensemble=on") != std::string::npos);
  const SuperImage s = build_super_image(d.lr[0].frames, temporal_window(3, 1, 1));
  CHECK(r.rows[4].psnr_db == psnr(self_ensemble_infer(model, s).output, d.hr[0].frames[1]));

  const FrameSource avg = ensemble_source({bicubic_source(), truth_source(d)}, nullptr);
  TensorF expected = bicubic_source()(d.lr[0], 2);
  for (std::size_t k = 0; k < expected.numel(); ++k) {
    expected.data()[k] = 0.5f * (expected.data()[k] + d.hr[0].frames[2].data()[k]);
  }
  const TensorF got = avg(d.lr[0], 2);
  for (std::size_t k = 0; k < got.numel(); ++k) CHECK(got.data()[k] == doctest::Approx(expected.data()[k]).epsilon(1e-6));
  CHECK_THROWS_AS(ensemble_source({}, nullptr), ConfigError);
}

TEST_CASE("bicubic baseline sits below a trained toy model") {
  const Dataset d = toy_data(5, 16, 48, {4, 0, 1, 5}, 5);
  TrainConfig c;
  c.model.radius = 2;
  c.model.width = 16;
  c.model.num_blocks = 2;
  c.model.bicubic_residual = true;
  c.lr = 1e-3;
  c.lr_drops = {};
  c.batch = 8;
  c.lr_patch = 12;
  c.steps = 600;
  c.eval_interval = 600;
  c.seed = 6;
  auto result = train_sr(c, d);
  const auto test = d.indices(SplitRole::test);
  const double bic = mean_psnr(bicubic_source(), d, test);
  const double trained = mean_psnr(model_source(result.model, false), d, test);
  INFO("bicubic " << bic << " trained " << trained);
  CHECK(bic > 0.0);
  CHECK(bic < trained);
}
