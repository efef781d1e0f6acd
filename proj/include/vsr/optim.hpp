#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vsr/tensor.hpp"

namespace vsr {

enum class OptimizerKind { adam, sgd };

/// One scheduled learning-rate change.
struct LrMilestone {
  enum class Trigger {
    plateau,  // validation metric stopped improving (see PlateauRule)
    pass,     // `pass` full passes over the training split completed
  };
  Trigger trigger = Trigger::plateau;
  int pass = 0;
  double lr = 0.0;
};

/// "Converged" means the metric failed to improve by more than `min_delta`
/// for `patience` consecutive evaluations.
struct PlateauRule {
  double min_delta = 0.01;
  int patience = 5;
};

struct AdamConstants {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam or plain SGD with a milestone learning-rate schedule.
template <typename S>
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr, std::vector<LrMilestone> schedule = {},
            PlateauRule rule = {});

  /// Adam at 1e-4, dropping to 5e-5, 3e-5, 1e-5 at successive plateaus.
  static Optimizer sr_default(PlateauRule rule = {});
  /// SGD at 0.1, divided by 10 every 50 passes up to `max_passes`.
  static Optimizer ensemble_default(int max_passes = 150);

  /// Update every tensor in `params` from its gradient buffer.
  void step(std::span<Tensor<S>* const> params);

  /// Apply pass-triggered milestones due after `passes_done` passes.
  void on_pass_completed(int passes_done);
  /// Feed a validation metric (higher is better). Returns true if the rate changed.
  bool on_validation(double metric);

  OptimizerKind kind() const { return kind_; }
  double learning_rate() const { return lr_; }
  std::int64_t steps() const { return steps_; }
  const std::vector<LrMilestone>& schedule() const { return schedule_; }
  std::size_t next_milestone() const { return next_; }
  const AdamConstants& adam() const { return adam_; }

  // Full state, for bit-exact checkpoint/resume.
  struct State {
    double lr = 0.0;
    std::int64_t steps = 0;
    std::size_t next_milestone = 0;
    double best_metric = 0.0;
    bool has_best = false;
    int bad_evals = 0;
    std::vector<std::vector<S>> m, v;
  };
  State state() const;
  void restore(const State& s);

 private:
  void advance();

  OptimizerKind kind_;
  double lr_;
  std::vector<LrMilestone> schedule_;
  PlateauRule rule_;
  AdamConstants adam_;
  std::size_t next_ = 0;
  std::int64_t steps_ = 0;
  double best_ = 0.0;
  bool has_best_ = false;
  int bad_ = 0;
  std::vector<std::vector<S>> m_, v_;
};

extern template class Optimizer<float>;
extern template class Optimizer<double>;

}  // namespace vsr
