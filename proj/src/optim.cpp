#include "vsr/optim.hpp"

#include <cmath>

namespace vsr {

template <typename S>
Optimizer<S>::Optimizer(OptimizerKind kind, double lr, std::vector<LrMilestone> schedule,
                        PlateauRule rule)
    : kind_(kind), lr_(lr), schedule_(std::move(schedule)), rule_(rule) {
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  for (const auto& m : schedule_) {
    if (!(m.lr > 0.0)) throw ConfigError("scheduled learning rate must be positive");
  }
  if (rule_.patience < 1) throw ConfigError("plateau patience must be >= 1");
}

template <typename S>
Optimizer<S> Optimizer<S>::sr_default(PlateauRule rule) {
  using T = LrMilestone::Trigger;
  return Optimizer(OptimizerKind::adam, 1e-4,
                   {{T::plateau, 0, 5e-5}, {T::plateau, 0, 3e-5}, {T::plateau, 0, 1e-5}}, rule);
}

template <typename S>
Optimizer<S> Optimizer<S>::ensemble_default(int max_passes) {
  std::vector<LrMilestone> sched;
  double lr = 0.1;
  for (int p = 50; p < max_passes; p += 50) {
    lr /= 10.0;
    sched.push_back({LrMilestone::Trigger::pass, p, lr});
  }
  return Optimizer(OptimizerKind::sgd, 0.1, std::move(sched));
}

template <typename S>
void Optimizer<S>::step(std::span<Tensor<S>* const> params) {
  ++steps_;
  if (kind_ == OptimizerKind::sgd) {
    for (Tensor<S>* p : params) {
      auto g = p->grad();
      auto d = p->data();
      for (std::size_t i = 0; i < d.size(); ++i) {
        d[i] = static_cast<S>(d[i] - lr_ * static_cast<double>(g[i]));
      }
    }
    return;
  }
  if (m_.size() != params.size()) {
    m_.assign(params.size(), {});
    v_.assign(params.size(), {});
  }
  const double bc1 = 1.0 - std::pow(adam_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(adam_.beta2, static_cast<double>(steps_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<S>* p = params[k];
    auto g = p->grad();
    auto d = p->data();
    if (m_[k].size() != d.size()) {
      m_[k].assign(d.size(), S(0));
      v_[k].assign(d.size(), S(0));
    }
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double gi = g[i];
      const double m = adam_.beta1 * m_[k][i] + (1.0 - adam_.beta1) * gi;
      const double v = adam_.beta2 * v_[k][i] + (1.0 - adam_.beta2) * gi * gi;
      m_[k][i] = static_cast<S>(m);
      v_[k][i] = static_cast<S>(v);
      const double mhat = m / bc1;
      const double vhat = v / bc2;
      d[i] = static_cast<S>(d[i] - lr_ * mhat / (std::sqrt(vhat) + adam_.eps));
    }
  }
}

template <typename S>
void Optimizer<S>::advance() {
  lr_ = schedule_[next_].lr;
  ++next_;
  bad_ = 0;
}

template <typename S>
void Optimizer<S>::on_pass_completed(int passes_done) {
  while (next_ < schedule_.size() && schedule_[next_].trigger == LrMilestone::Trigger::pass &&
         passes_done >= schedule_[next_].pass) {
    advance();
  }
}

template <typename S>
bool Optimizer<S>::on_validation(double metric) {
  if (!has_best_ || metric > best_ + rule_.min_delta) {
    if (!has_best_ || metric > best_) best_ = metric;
    has_best_ = true;
    bad_ = 0;
    return false;
  }
  if (metric > best_) best_ = metric;
  ++bad_;
  if (bad_ >= rule_.patience && next_ < schedule_.size() &&
      schedule_[next_].trigger == LrMilestone::Trigger::plateau) {
    advance();
    return true;
  }
  return false;
}

template <typename S>
typename Optimizer<S>::State Optimizer<S>::state() const {
  return State{lr_, steps_, next_, best_, has_best_, bad_, m_, v_};
}

template <typename S>
void Optimizer<S>::restore(const State& s) {
  lr_ = s.lr;
  steps_ = s.steps;
  next_ = s.next_milestone;
  best_ = s.best_metric;
  has_best_ = s.has_best;
  bad_ = s.bad_evals;
  m_ = s.m;
  v_ = s.v;
}

template class Optimizer<float>;
template class Optimizer<double>;

}  // namespace vsr
