#include "vsr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include "vsr/augment.hpp"

namespace vsr {

std::vector<std::string> TrainConfig::violations() const {
  std::vector<std::string> bad = model.violations();
  if (steps <= 0) bad.push_back("steps must be > 0");
  if (eval_interval <= 0 || eval_interval > steps) bad.push_back("eval_interval must be in [1, steps]");
  if (batch <= 0) bad.push_back("batch must be > 0");
  if (lr_patch <= 0) bad.push_back("lr_patch must be > 0");
  if (!(lr > 0)) bad.push_back("lr must be > 0");
  for (double d : lr_drops) {
    if (!(d > 0)) bad.push_back("lr_drops entries must be > 0");
  }
  if (plateau.patience < 1) bad.push_back("plateau patience must be >= 1");
  if (grad_clip < 0) bad.push_back("grad_clip must be >= 0");
  return bad;
}

void TrainConfig::validate() const {
  if (auto bad = violations(); !bad.empty()) throw ConfigError(bad);
}

namespace {

std::string fmt(double v, const char* spec) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

Record float_record(std::string name, const std::vector<float>& v) {
  return {std::move(name), {static_cast<std::uint32_t>(v.size())}, v};
}

void clip_gradients(std::span<Tensor<float>* const> params, double max_norm) {
  double sq = 0.0;
  for (auto* p : params) {
    for (float g : p->grad()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return;
  const double k = max_norm / norm;
  for (auto* p : params) {
    for (float& g : p->grad()) g = static_cast<float>(g * k);
  }
}

}  // namespace

std::string log_csv(const std::vector<TrainLogRow>& rows) {
  std::ostringstream os;
  os << "step,lr,loss,select_psnr\n";
  for (const auto& r : rows) {
    os << r.step << "," << fmt(r.lr, "%.9g") << "," << fmt(r.loss, "%.9g") << ","
       << fmt(r.select_psnr, "%.6f") << "\n";
  }
  return os.str();
}

Optimizer<float> make_optimizer(const TrainConfig& config) {
  std::vector<LrMilestone> sched;
  for (double d : config.lr_drops) sched.push_back({LrMilestone::Trigger::plateau, 0, d});
  return Optimizer<float>(config.optimizer, config.lr, std::move(sched), config.plateau);
}

SrTrainer::SrTrainer(TrainConfig config, const Dataset& data)
    : config_(std::move(config)),
      data_(data),
      model_((config_.validate(), config_.model), derive_seed(config_.seed, 1)),
      opt_(make_optimizer(config_)) {
  train_ = data_.indices(SplitRole::train);
  select_ = data_.indices(SplitRole::select);
  if (train_.empty()) throw ConfigError("training split is empty");
  for (int i : train_) {
    const auto& lr = data_.lr[static_cast<std::size_t>(i)];
    if (lr.height() < config_.lr_patch || lr.width() < config_.lr_patch) {
      throw ConfigError("lr_patch " + std::to_string(config_.lr_patch) + " exceeds frame size of " +
                        lr.id);
    }
  }
}

double SrTrainer::train_step() {
  Rng rng(derive_seed(config_.seed, 0x100000000ull + static_cast<std::uint64_t>(step_)));
  const int radius = config_.model.radius;
  std::vector<TensorF> inputs, targets;
  for (int b = 0; b < config_.batch; ++b) {
    const auto idx = static_cast<std::size_t>(train_[static_cast<std::size_t>(rng.index(static_cast<int>(train_.size())))]);
    PatchPair p = sample_patch_pair(data_.lr[idx], data_.hr[idx], radius, config_.lr_patch, rng);
    if (config_.augment) {
      const GeoTransform gt = sample_train_augmentation(rng);
      inputs.push_back(apply(gt, p.lr_patch).tensor);
      targets.push_back(apply_spatial(gt, p.hr_patch));
    } else {
      inputs.push_back(std::move(p.lr_patch.tensor));
      targets.push_back(std::move(p.hr_patch));
    }
  }
  const TensorF x = stack_batch<float>(inputs);
  const TensorF y = stack_batch<float>(targets);

  auto params = model_.parameters();
  for (auto* p : params) p->zero_grad();
  Graph<float> g;
  Var<float> l = loss(model_.forward(g, x), g.constant(y), config_.loss);
  const double value = l.value().data()[0];
  if (!std::isfinite(value)) {
    throw NonFiniteError("non-finite training loss at step " + std::to_string(step_ + 1) +
                         "; last good checkpoint: " +
                         (best_ && !config_.checkpoint.empty() ? config_.checkpoint.string()
                                                               : std::string("none")));
  }
  g.backward(l);
  if (config_.grad_clip > 0) clip_gradients(params, config_.grad_clip);
  opt_.step(params);
  return value;
}

void SrTrainer::evaluate_select() {
  double psnr_db = std::numeric_limits<double>::quiet_NaN();
  if (!select_.empty()) {
    psnr_db = mean_psnr(model_source(model_, false), data_, select_);
    if (!best_ || psnr_db > best_psnr_) {
      best_psnr_ = psnr_db;
      best_ = model_;
      if (!config_.checkpoint.empty()) save_sr_checkpoint(config_.checkpoint, model_);
    }
  }
  log_.push_back({step_, opt_.learning_rate(), loss_count_ > 0 ? loss_sum_ / loss_count_ : 0.0,
                  psnr_db});
  loss_sum_ = 0.0;
  loss_count_ = 0;
  if (!select_.empty()) opt_.on_validation(psnr_db);
}

void SrTrainer::write_outputs() {
  if (!config_.log_path.empty()) {
    const std::string csv = log_csv(log_);
    write_file_bytes(config_.log_path, std::span(reinterpret_cast<const std::uint8_t*>(csv.data()), csv.size()));
  }
  if (!config_.state_path.empty()) save_state(config_.state_path);
}

void SrTrainer::run(int until) {
  until = std::min(until, config_.steps);
  while (step_ < until) {
    loss_sum_ += train_step();
    ++loss_count_;
    ++step_;
    if (step_ % config_.eval_interval == 0 || step_ == config_.steps) {
      evaluate_select();
      write_outputs();
    }
  }
  if (done() && select_.empty() && !config_.checkpoint.empty()) {
    save_sr_checkpoint(config_.checkpoint, model_);
  }
}

std::vector<Record> SrTrainer::state_records() {
  std::vector<Record> r = config_records(config_.model);
  r.push_back(u64_record("state.seed", config_.seed));
  r.push_back(u64_record("state.step", static_cast<std::uint64_t>(step_)));
  r.push_back(f64_record("state.loss_sum", loss_sum_));
  r.push_back(u64_record("state.loss_count", static_cast<std::uint64_t>(loss_count_)));
  r.push_back(f64_record("state.best_psnr", best_psnr_));
  r.push_back(u64_record("state.has_best", best_ ? 1 : 0));
  for (auto& np : model_.named_parameters()) r.push_back(tensor_record("model." + np.name, *np.tensor));
  if (best_) {
    for (auto& np : best_->named_parameters()) r.push_back(tensor_record("best." + np.name, *np.tensor));
  }
  const auto s = opt_.state();
  r.push_back(f64_record("opt.lr", s.lr));
  r.push_back(u64_record("opt.steps", static_cast<std::uint64_t>(s.steps)));
  r.push_back(u64_record("opt.next", s.next_milestone));
  r.push_back(f64_record("opt.best", s.best_metric));
  r.push_back(u64_record("opt.has_best", s.has_best ? 1 : 0));
  r.push_back(u64_record("opt.bad", static_cast<std::uint64_t>(s.bad_evals)));
  r.push_back(u64_record("opt.moments", s.m.size()));
  for (std::size_t i = 0; i < s.m.size(); ++i) {
    r.push_back(float_record("opt.m." + std::to_string(i), s.m[i]));
    r.push_back(float_record("opt.v." + std::to_string(i), s.v[i]));
  }
  std::vector<double> steps, lrs, losses, psnrs;
  for (const auto& row : log_) {
    steps.push_back(row.step);
    lrs.push_back(row.lr);
    losses.push_back(row.loss);
    psnrs.push_back(row.select_psnr);
  }
  r.push_back(f64_array_record("log.step", steps));
  r.push_back(f64_array_record("log.lr", lrs));
  r.push_back(f64_array_record("log.loss", losses));
  r.push_back(f64_array_record("log.select_psnr", psnrs));
  return r;
}

void SrTrainer::restore(std::span<const Record> records) {
  if (!(config_from_records(records) == config_.model)) {
    throw ConfigError("training state was produced with a different model config");
  }
  if (record_u64(find_record(records, "state.seed")) != config_.seed) {
    throw ConfigError("training state was produced with a different seed");
  }
  step_ = static_cast<int>(record_u64(find_record(records, "state.step")));
  loss_sum_ = record_f64(find_record(records, "state.loss_sum"));
  loss_count_ = static_cast<int>(record_u64(find_record(records, "state.loss_count")));
  best_psnr_ = record_f64(find_record(records, "state.best_psnr"));
  load_parameters(records, model_.named_parameters(), "model.");
  best_.reset();
  if (record_u64(find_record(records, "state.has_best")) != 0) {
    best_ = model_;
    load_parameters(records, best_->named_parameters(), "best.");
  }
  Optimizer<float>::State s;
  s.lr = record_f64(find_record(records, "opt.lr"));
  s.steps = static_cast<std::int64_t>(record_u64(find_record(records, "opt.steps")));
  s.next_milestone = record_u64(find_record(records, "opt.next"));
  s.best_metric = record_f64(find_record(records, "opt.best"));
  s.has_best = record_u64(find_record(records, "opt.has_best")) != 0;
  s.bad_evals = static_cast<int>(record_u64(find_record(records, "opt.bad")));
  const auto moments = record_u64(find_record(records, "opt.moments"));
  for (std::uint64_t i = 0; i < moments; ++i) {
    s.m.push_back(find_record(records, "opt.m." + std::to_string(i)).values);
    s.v.push_back(find_record(records, "opt.v." + std::to_string(i)).values);
  }
  opt_.restore(s);
  const auto steps = record_f64_array(find_record(records, "log.step"));
  const auto lrs = record_f64_array(find_record(records, "log.lr"));
  const auto losses = record_f64_array(find_record(records, "log.loss"));
  const auto psnrs = record_f64_array(find_record(records, "log.select_psnr"));
  log_.clear();
  for (std::size_t i = 0; i < steps.size(); ++i) {
    log_.push_back({static_cast<int>(steps[i]), lrs.at(i), losses.at(i), psnrs.at(i)});
  }
}

void SrTrainer::save_state(const std::filesystem::path& path) { write_container(path, state_records()); }

void SrTrainer::load_state(const std::filesystem::path& path) { restore(read_container(path)); }

SrTrainResult train_sr(const TrainConfig& config, const Dataset& data) {
  SrTrainer trainer(config, data);
  trainer.run();
  return {trainer.best_model(), trainer.log(), trainer.best_psnr()};
}

// ---------------------------------------------------------------------------

std::vector<std::string> EnsembleTrainConfig::violations() const {
  std::vector<std::string> bad;
  if (passes <= 0) bad.push_back("passes must be > 0");
  if (!(lr > 0)) bad.push_back("lr must be > 0");
  if (pass_drop <= 0) bad.push_back("pass_drop must be > 0");
  if (batch <= 0) bad.push_back("batch must be > 0");
  if (patch < 0 || patch % EnsembleNet::kReduction != 0) bad.push_back("patch must be a multiple of 8 (or 0)");
  return bad;
}

void EnsembleTrainConfig::validate() const {
  if (auto bad = violations(); !bad.empty()) throw ConfigError(bad);
}

namespace {

struct EnsembleSample {
  std::vector<TensorF> candidates;  // padded to a multiple of 8
  TensorF truth;
};

}  // namespace

EnsembleTrainResult train_ensemble(const EnsembleTrainConfig& config,
                                   const std::vector<FrameSource>& members, const Dataset& data,
                                   const std::vector<int>& which) {
  config.validate();
  if (members.size() < 2) {
    throw ConfigError("ensemble training needs at least 2 candidate models, got " +
                      std::to_string(members.size()));
  }
  const int models = static_cast<int>(members.size());
  std::vector<EnsembleSample> samples;
  for (int i : which) {
    const auto& lr = data.lr.at(static_cast<std::size_t>(i));
    const auto& hr = data.hr.at(static_cast<std::size_t>(i));
    for (int t = 0; t < lr.length(); ++t) {
      EnsembleSample s;
      const TensorF& truth = hr.frames[static_cast<std::size_t>(t)];
      const int ph = (8 - truth.h() % 8) % 8, pw = (8 - truth.w() % 8) % 8;
      for (const auto& m : members) s.candidates.push_back(reflect_pad(m(lr, t), ph, pw));
      s.truth = reflect_pad(truth, ph, pw);
      samples.push_back(std::move(s));
    }
  }
  if (samples.empty()) throw ConfigError("ensemble training split has no frames");
  const int fh = samples.front().truth.h(), fw = samples.front().truth.w();
  const int patch = config.patch == 0 ? std::min(fh, fw) : config.patch;
  if (patch > fh || patch > fw) throw ConfigError("ensemble patch exceeds frame size");

  std::vector<LrMilestone> sched;
  double lr = config.lr;
  for (int p = config.pass_drop; p < config.passes; p += config.pass_drop) {
    lr /= 10.0;
    sched.push_back({LrMilestone::Trigger::pass, p, lr});
  }
  Optimizer<float> opt(OptimizerKind::sgd, config.lr, std::move(sched));
  EnsembleTrainResult result{EnsembleNet(derive_seed(config.seed, 2)), {}};

  for (int pass = 0; pass < config.passes; ++pass) {
    Rng rng(derive_seed(config.seed, 0x200000000ull + static_cast<std::uint64_t>(pass)));
    std::vector<int> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i) {
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(rng.index(i + 1))]);
    }
    const double lr_pass = opt.learning_rate();
    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch));
      std::vector<TensorF> cands, truths;
      for (std::size_t k = start; k < end; ++k) {
        const auto& s = samples[static_cast<std::size_t>(order[k])];
        const int y = rng.index((fh - patch) / 8 + 1) * 8;
        const int x = rng.index((fw - patch) / 8 + 1) * 8;
        for (const auto& c : s.candidates) cands.push_back(crop(c, y, x, patch, patch));
        truths.push_back(crop(s.truth, y, x, patch, patch));
      }
      loss_sum += train_ensemble_step(result.net, opt, stack_batch<float>(cands),
                                      stack_batch<float>(truths), models);
      ++batches;
    }
    opt.on_pass_completed(pass + 1);
    result.log.push_back({pass + 1, lr_pass, loss_sum / batches,
                          std::numeric_limits<double>::quiet_NaN()});
  }
  if (!config.checkpoint.empty()) save_ensemble_checkpoint(config.checkpoint, result.net);
  if (!config.log_path.empty()) {
    const std::string csv = log_csv(result.log);
    write_file_bytes(config.log_path, std::span(reinterpret_cast<const std::uint8_t*>(csv.data()), csv.size()));
  }
  return result;
}

}  // namespace vsr
