#include "vsr/ensemble.hpp"

#include <string>

#include "vsr/rng.hpp"

namespace vsr {

void CandidateSet::validate() const {
  if (candidates.empty()) throw ConfigError("candidate set is empty");
  const Shape ref = candidates.front().shape();
  if (ref.n != 1 || ref.c != 3) require_same_shape("CandidateSet", {1, 3, ref.h, ref.w}, ref);
  for (const auto& c : candidates) require_same_shape("CandidateSet", ref, c.shape());
  if (!names.empty() && names.size() != candidates.size()) {
    throw DimensionError("CandidateSet", "names", size(), static_cast<long>(names.size()));
  }
}

TensorF CandidateSet::stacked() const {
  validate();
  return stack_batch<float>(candidates);
}

// ---------------------------------------------------------------------------

template <typename S>
EnsembleNetT<S>::EnsembleNetT(std::uint64_t seed) {
  int c_in = 3;
  for (int i = 0; i < 3; ++i) {
    const int c_out = kStageChannels[i];
    convs_[i] = ConvLayer<S>(c_in, c_out, 2, 2, 0);
    gamma_[i] = Tensor<S>({1, c_out, 1, 1}, S(1));
    beta_[i] = Tensor<S>({1, c_out, 1, 1}, S(0));
    stats_[i] = BatchNormStats<S>(c_out);
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    kaiming_uniform(convs_[i].weight, rng);
    c_in = c_out;
  }
  score_ = ConvLayer<S>(c_in, kStageChannels[3], 1, 1, 0);
  Rng rng(derive_seed(seed, 3));
  kaiming_uniform(score_.weight, rng);
}

template <typename S>
Var<S> EnsembleNetT<S>::score_maps(Graph<S>& g, const Tensor<S>& candidates, BnMode mode) {
  if (candidates.c() != 3) throw DimensionError("score_map", "c", 3, candidates.c());
  for (const auto& [axis, extent] : {std::pair{"h", candidates.h()}, std::pair{"w", candidates.w()}}) {
    if (extent % kReduction != 0 || extent == 0) {
      throw DimensionError(std::string("score_map (pad ") + axis + " by " +
                               std::to_string((kReduction - extent % kReduction) % kReduction) +
                               ")",
                           axis, (extent / kReduction + 1) * kReduction, extent);
    }
  }
  Var<S> x = g.constant(candidates);
  for (int i = 0; i < 3; ++i) {
    x = convs_[i](x);
    x = batchnorm(x, g.parameter(gamma_[i]), g.parameter(beta_[i]), stats_[i], mode);
    x = relu(x);
  }
  return score_(x);
}

template <typename S>
Var<S> EnsembleNetT<S>::fuse(Graph<S>& g, const Tensor<S>& candidates, int models, BnMode mode) {
  Var<S> scores = score_maps(g, candidates, mode);
  Var<S> weights = upsample_nearest(softmax_over_models(scores, models), kReduction);
  return weighted_fuse(weights, g.constant(candidates), models);
}

template <typename S>
std::vector<NamedParam<S>> EnsembleNetT<S>::named_parameters() {
  std::vector<NamedParam<S>> out;
  for (int i = 0; i < 3; ++i) {
    const std::string base = "stage" + std::to_string(i + 1);
    out.push_back({base + ".conv.weight", &convs_[i].weight});
    out.push_back({base + ".conv.bias", &convs_[i].bias});
    out.push_back({base + ".bn.gamma", &gamma_[i]});
    out.push_back({base + ".bn.beta", &beta_[i]});
  }
  out.push_back({"score.weight", &score_.weight});
  out.push_back({"score.bias", &score_.bias});
  return out;
}

template <typename S>
std::vector<Tensor<S>*> EnsembleNetT<S>::parameters() {
  std::vector<Tensor<S>*> out;
  for (auto& np : named_parameters()) out.push_back(np.tensor);
  return out;
}

template <typename S>
std::size_t EnsembleNetT<S>::parameter_count() const {
  std::size_t total = 0;
  for (auto& np : const_cast<EnsembleNetT*>(this)->named_parameters()) total += np.tensor->numel();
  return total;
}

template class EnsembleNetT<float>;
template class EnsembleNetT<double>;

// ---------------------------------------------------------------------------

EnsembleNet build_ensemble_net(std::uint64_t seed) { return EnsembleNet(seed); }

TensorF score_map(EnsembleNet& net, const TensorF& candidate) {
  Graph<float> g;
  g.set_recording(false);
  return net.score_maps(g, candidate, BnMode::eval).value();
}

FusionWeights fusion_weights(const TensorF& score_maps) {
  Graph<float> g;
  g.set_recording(false);
  Var<float> w = upsample_nearest(softmax_over_models(g.constant(score_maps)),
                                  EnsembleNet::kReduction);
  return {w.value()};
}

TensorF fuse(const CandidateSet& cands, const FusionWeights& w) {
  cands.validate();
  if (w.weights.n() != cands.size()) {
    throw DimensionError("fuse", "n (models)", cands.size(), w.weights.n());
  }
  Graph<float> g;
  g.set_recording(false);
  return weighted_fuse(g.constant(w.weights), g.constant(cands.stacked()), cands.size()).value();
}

TensorF average_ensemble(const CandidateSet& cands) {
  cands.validate();
  const TensorF& ref = cands.candidates.front();
  TensorF out(ref.shape());
  const double inv = 1.0 / cands.size();
  for (std::size_t i = 0; i < out.numel(); ++i) {
    double acc = 0.0;
    for (const auto& c : cands.candidates) acc += c.data()[i];
    out.data()[i] = static_cast<float>(acc * inv);
  }
  return out;
}

TensorF reflect_pad(const TensorF& img, int pad_h, int pad_w) {
  if (pad_h == 0 && pad_w == 0) return img;
  const int oh = img.h() + pad_h, ow = img.w() + pad_w;
  TensorF out({img.n(), img.c(), oh, ow});
  for (int n = 0; n < img.n(); ++n) {
    for (int c = 0; c < img.c(); ++c) {
      for (int y = 0; y < oh; ++y) {
        const int sy = reflect_index(y, img.h());
        for (int x = 0; x < ow; ++x) out.at(n, c, y, x) = img.at(n, c, sy, reflect_index(x, img.w()));
      }
    }
  }
  return out;
}

namespace {

int pad_to(int extent, int multiple) { return (multiple - extent % multiple) % multiple; }

CandidateSet padded(const CandidateSet& cands, int& pad_h, int& pad_w) {
  cands.validate();
  const Shape s = cands.candidates.front().shape();
  pad_h = pad_to(s.h, EnsembleNet::kReduction);
  pad_w = pad_to(s.w, EnsembleNet::kReduction);
  CandidateSet out{{}, cands.names};
  for (const auto& c : cands.candidates) out.candidates.push_back(reflect_pad(c, pad_h, pad_w));
  return out;
}

}  // namespace

FusionWeights adaptive_weights(EnsembleNet& net, const CandidateSet& cands) {
  int ph = 0, pw = 0;
  const CandidateSet p = padded(cands, ph, pw);
  Graph<float> g;
  g.set_recording(false);
  Var<float> scores = net.score_maps(g, p.stacked(), BnMode::eval);
  return fusion_weights(scores.value());
}

TensorF adaptive_fuse(EnsembleNet& net, const CandidateSet& cands) {
  int ph = 0, pw = 0;
  const CandidateSet p = padded(cands, ph, pw);
  Graph<float> g;
  g.set_recording(false);
  const TensorF fused = net.fuse(g, p.stacked(), p.size(), BnMode::eval).value();
  const Shape s = cands.candidates.front().shape();
  return crop(fused, 0, 0, s.h, s.w);
}

double train_ensemble_step(EnsembleNet& net, Optimizer<float>& opt, const TensorF& candidates,
                           const TensorF& ground_truth, int models) {
  if (models < 1 || candidates.n() != ground_truth.n() * models) {
    throw DimensionError("train_ensemble_step", "n", ground_truth.n() * models, candidates.n());
  }
  auto params = net.parameters();
  for (auto* p : params) p->zero_grad();
  Graph<float> g;
  Var<float> fused = net.fuse(g, candidates, models, BnMode::train);
  const double per_block = 3.0 * EnsembleNet::kReduction * EnsembleNet::kReduction;
  Var<float> l = scale(loss(fused, g.constant(ground_truth), LossKind::l1), per_block);
  g.backward(l);
  opt.step(params);
  return l.value().data()[0];
}

std::vector<Record> ensemble_records(EnsembleNet& net) {
  std::vector<Record> records{scalar_record("config.kind", 1.0)};
  for (auto& np : net.named_parameters()) records.push_back(tensor_record(np.name, *np.tensor));
  auto& stats = net.bn_stats();
  for (int i = 0; i < 3; ++i) {
    const std::string base = "stage" + std::to_string(i + 1) + ".bn.";
    const auto c = static_cast<int>(stats[i].running_mean.size());
    records.push_back(tensor_record(base + "running_mean", TensorF({1, c, 1, 1}, stats[i].running_mean)));
    records.push_back(tensor_record(base + "running_var", TensorF({1, c, 1, 1}, stats[i].running_var)));
  }
  return records;
}

void load_ensemble_records(std::span<const Record> records, EnsembleNet& net) {
  load_parameters(records, net.named_parameters());
  auto& stats = net.bn_stats();
  for (int i = 0; i < 3; ++i) {
    const std::string base = "stage" + std::to_string(i + 1) + ".bn.";
    TensorF mean = record_tensor(find_record(records, base + "running_mean"));
    TensorF var = record_tensor(find_record(records, base + "running_var"));
    if (mean.numel() != stats[i].running_mean.size() || var.numel() != stats[i].running_var.size()) {
      throw DimensionError("load_ensemble", base + "running_stats",
                           static_cast<long>(stats[i].running_mean.size()),
                           static_cast<long>(mean.numel()));
    }
    stats[i].running_mean = mean.storage();
    stats[i].running_var = var.storage();
  }
}

void save_ensemble_checkpoint(const std::filesystem::path& path, EnsembleNet& net) {
  write_container(path, ensemble_records(net));
}

EnsembleNet load_ensemble_checkpoint(const std::filesystem::path& path) {
  const auto records = read_container(path);
  const Record* kind = try_find_record(records, "config.kind");
  if (kind == nullptr || record_scalar(*kind) != 1.0) {
    throw Error(path.string() + " is not an ensemble checkpoint");
  }
  EnsembleNet net(0);
  load_ensemble_records(records, net);
  return net;
}

}  // namespace vsr
