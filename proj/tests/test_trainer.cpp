#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "fd_check.hpp"
#include "vsr/augment.hpp"
#include "vsr/trainer.hpp"

using namespace vsr;
namespace fs = std::filesystem;

namespace {

Dataset toy_data(int seqs, int frames, int size, SplitConfig split, std::uint64_t seed) {
  Dataset d;
  d.hr = assign_splits(generate_toy_dataset(seqs, frames, {size, size}, {}, seed), split);
  for (const auto& s : d.hr) d.lr.push_back(degrade(s));
  return d;
}

TrainConfig small_config() {
  TrainConfig c;
  c.model.radius = 1;
  c.model.width = 8;
  c.model.num_blocks = 1;
  c.model.dense_layers = 2;
  c.lr = 1e-4;
  c.batch = 2;
  c.lr_patch = 6;
  c.steps = 12;
  c.eval_interval = 3;
  c.seed = 5;
  return c;
}

bool same_params(SrModel& a, SrModel& b) {
  auto pa = a.parameters(), pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i]->storage() != pb[i]->storage()) return false;
  }
  return true;
}

bool same_log(const std::vector<TrainLogRow>& a, const std::vector<TrainLogRow>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool psnr_eq = a[i].select_psnr == b[i].select_psnr ||
                         (std::isnan(a[i].select_psnr) && std::isnan(b[i].select_psnr));
    if (a[i].step != b[i].step || a[i].lr != b[i].lr || a[i].loss != b[i].loss || !psnr_eq) return false;
  }
  return true;
}

float median9(std::array<float, 9> v) {
  std::nth_element(v.begin(), v.begin() + 4, v.end());
  return v[4];
}

TensorF median_blur(const TensorF& img) {
  TensorF out(img.shape());
  for (int c = 0; c < img.c(); ++c)
    for (int y = 0; y < img.h(); ++y)
      for (int x = 0; x < img.w(); ++x) {
        std::array<float, 9> v{};
        int k = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int yy = std::clamp(y + dy, 0, img.h() - 1), xx = std::clamp(x + dx, 0, img.w() - 1);
            v[static_cast<std::size_t>(k++)] = img.at(0, c, yy, xx);
          }
        out.at(0, c, y, x) = median9(v);
      }
  return out;
}

// A strong candidate that knows the truth up to mild quantisation noise.
FrameSource oracle_source(const Dataset& data) {
  return [&data](const VideoSequence& lr, int t) {
    for (std::size_t i = 0; i < data.lr.size(); ++i) {
      if (data.lr[i].id != lr.id) continue;
      TensorF f = data.hr[i].frames[static_cast<std::size_t>(t)];
      Rng rng(derive_seed(i, static_cast<std::uint64_t>(t)));
      for (auto& v : f.data()) v = std::clamp(v + static_cast<float>(rng.uniform(-0.02, 0.02)), 0.0f, 1.0f);
      return f;
    }
    throw Error("unknown sequence " + lr.id);
  };
}

}  // namespace

TEST_CASE("train config validation") {
  TrainConfig c = small_config();
  CHECK(c.violations().empty());
  c.steps = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  c.eval_interval = c.steps + 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  c.lr = 0;
  c.batch = 0;
  c.model.width = 0;
  CHECK(c.violations().size() >= 3);

  const TrainConfig defaults;
  CHECK(defaults.lr == 1e-4);
  CHECK(defaults.loss == LossKind::l1);
  CHECK(defaults.optimizer == OptimizerKind::adam);
  CHECK(defaults.lr_drops == std::vector<double>{5e-5, 3e-5, 1e-5});
  CHECK(defaults.grad_clip == 0.0);
  CHECK(defaults.augment);
}

TEST_CASE("patch larger than frames and empty train split are rejected") {
  const Dataset d = toy_data(2, 3, 16, {1, 1, 0, 1}, 1);
  TrainConfig c = small_config();
  c.lr_patch = 5;
  CHECK_THROWS_AS(SrTrainer(c, d), ConfigError);
  const Dataset none = toy_data(2, 3, 16, {0, 2, 0, 1}, 1);
  CHECK_THROWS_AS(SrTrainer(small_config(), none), ConfigError);
}

TEST_CASE("logged learning rates only take schedule values") {
  const Dataset d = toy_data(3, 4, 32, {2, 1, 0, 2}, 2);
  TrainConfig c = small_config();
  c.steps = 24;
  c.eval_interval = 2;
  c.plateau = {1e6, 1};  // nothing counts as an improvement
  const auto result = train_sr(c, d);
  REQUIRE(result.log.size() == 12);
  const std::set<double> allowed{1e-4, 5e-5, 3e-5, 1e-5};
  std::set<double> seen;
  for (std::size_t i = 0; i < result.log.size(); ++i) {
    CHECK(allowed.count(result.log[i].lr) == 1);
    if (i > 0) CHECK(result.log[i].lr <= result.log[i - 1].lr);
    seen.insert(result.log[i].lr);
  }
  CHECK(seen == allowed);
  CHECK(result.log.back().lr == 1e-5);
  for (const auto& row : result.log) CHECK(std::isfinite(row.select_psnr));
}

TEST_CASE("training is deterministic") {
  const Dataset d = toy_data(3, 4, 32, {2, 1, 0, 3}, 3);
  auto a = train_sr(small_config(), d);
  auto b = train_sr(small_config(), d);
  CHECK(same_log(a.log, b.log));
  CHECK(same_params(a.model, b.model));
  TrainConfig other = small_config();
  other.seed = 6;
  auto c = train_sr(other, d);
  CHECK_FALSE(same_log(a.log, c.log));
}

TEST_CASE("resume from saved state is bit-identical") {
  const Dataset d = toy_data(3, 4, 32, {2, 1, 0, 4}, 4);
  const TrainConfig c = small_config();
  SrTrainer full(c, d);
  full.run();

  const fs::path state = fs::temp_directory_path() / "vsr_trainer_state.vsrt";
  for (int k : {3, 5}) {
    SrTrainer first(c, d);
    first.run(k);
    first.save_state(state);
    SrTrainer second(c, d);
    second.load_state(state);
    CHECK(second.step() == k);
    second.run();
    INFO("resumed at " << k);
    CHECK(same_log(full.log(), second.log()));
    CHECK(same_params(full.model(), second.model()));
    CHECK(same_params(full.best_model(), second.best_model()));
    CHECK(full.optimizer().learning_rate() == second.optimizer().learning_rate());
  }

  TrainConfig reseeded = c;
  reseeded.seed = 99;
  SrTrainer mismatch(reseeded, d);
  CHECK_THROWS_AS(mismatch.load_state(state), ConfigError);
  TrainConfig wider = c;
  wider.model.width = 12;
  SrTrainer wrong(wider, d);
  CHECK_THROWS_AS(wrong.load_state(state), ConfigError);
  fs::remove(state);
}

TEST_CASE("log, checkpoint and state files") {
  const Dataset d = toy_data(3, 4, 32, {2, 1, 0, 5}, 5);
  TrainConfig c = small_config();
  const fs::path dir = fs::temp_directory_path() / "vsr_trainer_files";
  fs::remove_all(dir);
  fs::create_directories(dir);
  c.log_path = dir / "log.csv";
  c.checkpoint = dir / "best.vsrt";
  c.state_path = dir / "state.vsrt";
  auto result = train_sr(c, d);
  const auto bytes = read_file_bytes(c.log_path);
  const std::string csv(bytes.begin(), bytes.end());
  CHECK(csv == log_csv(result.log));
  CHECK(csv.rfind("step,lr,loss,select_psnr\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
  SrModel loaded = load_sr_checkpoint(c.checkpoint);
  CHECK(same_params(loaded, result.model));
  double best = -1;
  for (const auto& row : result.log) best = std::max(best, row.select_psnr);
  CHECK(result.best_psnr == best);
  CHECK(fs::exists(c.state_path));
  fs::remove_all(dir);
}

TEST_CASE("non-finite loss aborts with the checkpoint reference") {
  Dataset d = toy_data(2, 3, 32, {2, 0, 0, 6}, 6);
  for (auto& f : d.lr[0].frames) std::fill(f.data().begin(), f.data().end(), std::nanf(""));
  for (auto& f : d.lr[1].frames) std::fill(f.data().begin(), f.data().end(), std::nanf(""));
  try {
    train_sr(small_config(), d);
    FAIL("expected NonFiniteError");
  } catch (const NonFiniteError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("step 1") != std::string::npos);
    CHECK(msg.find("last good checkpoint") != std::string::npos);
  }
}

TEST_CASE("loss on a fixed batch decreases over 50 steps") {
  const Dataset d = toy_data(2, 4, 32, {2, 0, 0, 7}, 7);
  int monotone = 0;
  const int seeds = 20;
  for (int s = 0; s < seeds; ++s) {
    SrConfig mc = small_config().model;
    SrModel model(mc, static_cast<std::uint64_t>(100 + s));
    Rng rng(static_cast<std::uint64_t>(200 + s));
    std::vector<TensorF> xs, ys;
    for (int b = 0; b < 2; ++b) {
      const PatchPair p = sample_patch_pair(d.lr[static_cast<std::size_t>(b)], d.hr[static_cast<std::size_t>(b)], 1, 6, rng);
      xs.push_back(p.lr_patch.tensor);
      ys.push_back(p.hr_patch);
    }
    const TensorF x = stack_batch<float>(xs), y = stack_batch<float>(ys);
    Optimizer<float> opt(OptimizerKind::adam, 1e-3);
    auto params = model.parameters();
    double prev = std::numeric_limits<double>::infinity();
    bool ok = true;
    for (int step = 0; step < 50; ++step) {
      for (auto* p : params) p->zero_grad();
      Graph<float> g;
      Var<float> l = loss(model.forward(g, x), g.constant(y), LossKind::l1);
      const double v = l.value().data()[0];
      ok = ok && v <= prev;
      prev = v;
      g.backward(l);
      opt.step(params);
    }
    monotone += ok;
  }
  CHECK(monotone >= 0.95 * seeds);
}

TEST_CASE("toy RDN overfits one patch") {
  const Dataset d = toy_data(1, 5, 32, {1, 0, 0, 8}, 8);
  SrConfig mc;
  mc.radius = 2;
  mc.width = 16;
  mc.num_blocks = 2;
  mc.bicubic_residual = true;
  SrModel model(mc, 9);
  const PatchPair p = extract_patch_pair(d.lr[0], d.hr[0], 2, 8, 2, 0, 0);
  Optimizer<float> opt(OptimizerKind::adam, 1e-3);
  auto params = model.parameters();
  double best = std::numeric_limits<double>::infinity();
  int reached = -1;
  for (int step = 1; step <= 500 && reached < 0; ++step) {
    for (auto* q : params) q->zero_grad();
    Graph<float> g;
    Var<float> l = loss(model.forward(g, p.lr_patch.tensor), g.constant(p.hr_patch), LossKind::l1);
    best = std::min(best, static_cast<double>(l.value().data()[0]));
    if (best < 0.01) reached = step;
    g.backward(l);
    opt.step(params);
  }
  INFO("best loss " << best);
  CHECK(reached > 0);
}

TEST_CASE("gradient clipping bounds the update") {
  const Dataset d = toy_data(2, 3, 32, {2, 0, 0, 9}, 9);
  TrainConfig c = small_config();
  c.steps = 1;
  c.eval_interval = 1;
  c.optimizer = OptimizerKind::sgd;
  c.lr = 1.0;
  c.grad_clip = 1e-3;
  SrTrainer clipped(c, d);
  SrModel start = clipped.model();
  clipped.run();
  double sq = 0.0;
  auto a = start.parameters(), b = clipped.model().parameters();
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < a[i]->numel(); ++k) {
      const double dlt = static_cast<double>(b[i]->data()[k]) - a[i]->data()[k];
      sq += dlt * dlt;
    }
  CHECK(std::sqrt(sq) <= 1e-3 * (1 + 1e-4));
  CHECK(std::sqrt(sq) > 0.0);
}

TEST_CASE("ensemble config validation and member count") {
  EnsembleTrainConfig c;
  CHECK(c.passes == 150);
  CHECK(c.lr == 0.1);
  CHECK(c.pass_drop == 50);
  CHECK(c.violations().empty());
  c.patch = 20;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  const Dataset d = toy_data(1, 2, 16, {1, 0, 0, 1}, 1);
  EnsembleTrainConfig ok;
  ok.patch = 0;
  CHECK_THROWS_AS(train_ensemble(ok, {bicubic_source()}, d, {0}), ConfigError);
  CHECK_THROWS_AS(train_ensemble(ok, {}, d, {0}), ConfigError);
}

TEST_CASE("ensemble learning rate trace") {
  const Dataset d = toy_data(1, 2, 16, {1, 0, 0, 2}, 2);
  EnsembleTrainConfig c;
  c.patch = 0;
  c.batch = 2;
  const FrameSource blurred = [](const VideoSequence& lr, int t) { return median_blur(bicubic_source()(lr, t)); };
  const auto r = train_ensemble(c, {bicubic_source(), blurred}, d, {0});
  REQUIRE(r.log.size() == 150);
  for (const auto& row : r.log) {
    const double expected = row.step <= 50 ? 0.1 : row.step <= 100 ? 0.01 : 0.001;
    INFO("pass " << row.step);
    CHECK(row.lr == doctest::Approx(expected).epsilon(1e-12));
    CHECK(std::isfinite(row.loss));
  }
  CHECK(r.log.front().step == 1);
  CHECK(r.log.back().step == 150);
}

TEST_CASE("ensemble training is deterministic") {
  const Dataset d = toy_data(1, 2, 16, {1, 0, 0, 3}, 3);
  EnsembleTrainConfig c;
  c.passes = 6;
  c.pass_drop = 3;
  c.patch = 8;
  c.batch = 1;
  const FrameSource blurred = [](const VideoSequence& lr, int t) { return median_blur(bicubic_source()(lr, t)); };
  auto a = train_ensemble(c, {bicubic_source(), blurred}, d, {0});
  auto b = train_ensemble(c, {bicubic_source(), blurred}, d, {0});
  CHECK(same_log(a.log, b.log));
  auto pa = a.net.parameters(), pb = b.net.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->storage() == pb[i]->storage());
}

TEST_CASE("adaptive fusion beats averaging a good candidate with its median-blurred copy") {
  const Dataset d = toy_data(4, 24, 48, {0, 2, 2, 11}, 11);
  const FrameSource good = oracle_source(d);
  const FrameSource blurred = [good](const VideoSequence& lr, int t) { return median_blur(good(lr, t)); };
  EnsembleTrainConfig c;
  c.patch = 32;
  c.batch = 2;
  c.seed = 12;
  auto r = train_ensemble(c, {good, blurred}, d, d.indices(SplitRole::select));
  const auto test = d.indices(SplitRole::test);
  const double adaptive = mean_psnr(ensemble_source({good, blurred}, &r.net), d, test);
  const double average = mean_psnr(ensemble_source({good, blurred}, nullptr), d, test);
  INFO("adaptive " << adaptive << " average " << average);
  CHECK(adaptive >= average);
}
