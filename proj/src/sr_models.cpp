#include "vsr/sr_models.hpp"

#include <cmath>
#include <sstream>

#include "vsr/resize.hpp"

namespace vsr {

std::string to_string(Arch arch) {
  switch (arch) {
    case Arch::rdn: return "rdn";
    case Arch::rcan: return "rcan";
    case Arch::edsr: return "edsr";
  }
  return "unknown";
}

Arch parse_arch(const std::string& name) {
  if (name == "rdn") return Arch::rdn;
  if (name == "rcan") return Arch::rcan;
  if (name == "edsr") return Arch::edsr;
  throw ConfigError("unknown architecture '" + name + "' (expected rdn, rcan or edsr)");
}

std::vector<std::string> SrConfig::violations() const {
  std::vector<std::string> v;
  auto bad = [&v](const std::string& field, const std::string& rule, double value) {
    std::ostringstream os;
    os << field << " " << rule << ", got " << value;
    v.push_back(os.str());
  };
  if (radius < 0) bad("T", "must be >= 0", radius);
  if (width < 1) bad("width", "must be >= 1", width);
  if (num_blocks < 1) bad("num_blocks", "must be >= 1", num_blocks);
  if (scale != 4) bad("scale", "must be 4", scale);
  if (arch == Arch::rdn) {
    if (growth < 1) bad("growth", "must be >= 1", growth);
    if (dense_layers < 1) bad("dense_layers", "must be >= 1", dense_layers);
  }
  if (arch == Arch::rcan) {
    if (ca_reduction < 1) bad("ca_reduction", "must be >= 1", ca_reduction);
    if (ca_reduction > width) bad("ca_reduction", "must not exceed width", ca_reduction);
    if (ca_reduction >= 1 && width % ca_reduction != 0) {
      bad("ca_reduction", "must divide width " + std::to_string(width), ca_reduction);
    }
  }
  if (arch == Arch::edsr && !(res_scale > 0.0)) bad("res_scale", "must be > 0", res_scale);
  return v;
}

void SrConfig::validate() const {
  auto v = violations();
  if (!v.empty()) throw ConfigError(std::move(v));
}

// ---------------------------------------------------------------------------
// layers

template <typename S>
ConvLayer<S>::ConvLayer(int c_in, int c_out, int k, int stride_, int padding_)
    : weight({c_out, c_in, k, k}), bias({1, c_out, 1, 1}), stride(stride_), padding(padding_) {}

template <typename S>
Var<S> ConvLayer<S>::operator()(Var<S> x) {
  Graph<S>& g = *x.graph;
  return conv2d(x, g.parameter(weight), g.parameter(bias), stride, padding);
}

template <typename S>
void kaiming_uniform(Tensor<S>& weight, Rng& rng) {
  const double fan_in = static_cast<double>(weight.c()) * weight.h() * weight.w();
  const double bound = 1.0 / std::sqrt(fan_in);
  for (S& v : weight.data()) v = static_cast<S>(rng.uniform(-bound, bound));
}

template <typename S>
DenseBlockParams<S> make_dense_block(int width, int growth, int layers) {
  DenseBlockParams<S> p;
  for (int l = 0; l < layers; ++l) p.layers.emplace_back(width + l * growth, growth, 3, 1, 1);
  p.fusion = ConvLayer<S>(width + layers * growth, width, 1, 1, 0);
  return p;
}

template <typename S>
AttentionBlockParams<S> make_attention_block(int width, int reduction) {
  if (reduction < 1 || width % reduction != 0) {
    throw ConfigError("channel-attention reduction " + std::to_string(reduction) +
                      " must divide width " + std::to_string(width));
  }
  AttentionBlockParams<S> p;
  p.conv1 = ConvLayer<S>(width, width, 3, 1, 1);
  p.conv2 = ConvLayer<S>(width, width, 3, 1, 1);
  p.down = ConvLayer<S>(width, width / reduction, 1, 1, 0);
  p.up = ConvLayer<S>(width / reduction, width, 1, 1, 0);
  return p;
}

template <typename S>
ResidualBlockParams<S> make_residual_block(int width) {
  return {ConvLayer<S>(width, width, 3, 1, 1), ConvLayer<S>(width, width, 3, 1, 1)};
}

template <typename S>
Var<S> residual_dense_block(Var<S> x, DenseBlockParams<S>& p, std::vector<int>* concat_trace) {
  std::vector<Var<S>> features{x};
  for (auto& layer : p.layers) {
    Var<S> cat = features.size() == 1 ? x : concat_channels<S>(features);
    if (concat_trace) concat_trace->push_back(cat.shape().c);
    features.push_back(relu(layer(cat)));
  }
  Var<S> cat = concat_channels<S>(features);
  if (concat_trace) concat_trace->push_back(cat.shape().c);
  return add(p.fusion(cat), x);
}

template <typename S>
Var<S> channel_attention_block(Var<S> x, AttentionBlockParams<S>& p) {
  Var<S> trunk = p.conv2(relu(p.conv1(x)));
  Var<S> gate = sigmoid(p.up(relu(p.down(global_avg_pool(trunk)))));
  return add(x, mul_channel(trunk, gate));
}

template <typename S>
Var<S> residual_block(Var<S> x, ResidualBlockParams<S>& p, double res_scale) {
  Var<S> trunk = p.conv2(relu(p.conv1(x)));
  return add(x, scale(trunk, res_scale));
}

// ---------------------------------------------------------------------------
// network

template <typename S>
SrNet<S>::SrNet(SrConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  const int w = config_.width;
  head_ = ConvLayer<S>(config_.input_channels(), w, 3, 1, 1);
  switch (config_.arch) {
    case Arch::rdn:
      sfe2_ = ConvLayer<S>(w, w, 3, 1, 1);
      for (int b = 0; b < config_.num_blocks; ++b) {
        dense_.push_back(make_dense_block<S>(w, config_.growth, config_.dense_layers));
      }
      gff1_ = ConvLayer<S>(w * config_.num_blocks, w, 1, 1, 0);
      break;
    case Arch::rcan:
      for (int b = 0; b < config_.num_blocks; ++b) {
        attention_.push_back(make_attention_block<S>(w, config_.ca_reduction));
      }
      break;
    case Arch::edsr:
      for (int b = 0; b < config_.num_blocks; ++b) residual_.push_back(make_residual_block<S>(w));
      break;
  }
  body_tail_ = ConvLayer<S>(w, w, 3, 1, 1);
  tail_ = ConvLayer<S>(w, 3 * config_.scale * config_.scale, 3, 1, 1);

  // Each layer draws from its own stream so adding layers never shifts others.
  std::uint64_t stream = 0;
  for (auto& np : named_parameters()) {
    if (np.name.ends_with(".bias")) {
      np.tensor->fill(S(0));
      continue;
    }
    Rng rng(derive_seed(seed, stream++));
    kaiming_uniform(*np.tensor, rng);
  }
}

template <typename S>
std::vector<NamedParam<S>> SrNet<S>::named_parameters() {
  std::vector<NamedParam<S>> out;
  auto conv = [&out](const std::string& name, ConvLayer<S>& c) {
    out.push_back({name + ".weight", &c.weight});
    out.push_back({name + ".bias", &c.bias});
  };
  conv("head", head_);
  if (config_.arch == Arch::rdn) conv("sfe2", sfe2_);
  for (std::size_t b = 0; b < dense_.size(); ++b) {
    const std::string base = "block" + std::to_string(b);
    for (std::size_t l = 0; l < dense_[b].layers.size(); ++l) {
      conv(base + ".layer" + std::to_string(l), dense_[b].layers[l]);
    }
    conv(base + ".fusion", dense_[b].fusion);
  }
  for (std::size_t b = 0; b < attention_.size(); ++b) {
    const std::string base = "block" + std::to_string(b);
    conv(base + ".conv1", attention_[b].conv1);
    conv(base + ".conv2", attention_[b].conv2);
    conv(base + ".ca_down", attention_[b].down);
    conv(base + ".ca_up", attention_[b].up);
  }
  for (std::size_t b = 0; b < residual_.size(); ++b) {
    const std::string base = "block" + std::to_string(b);
    conv(base + ".conv1", residual_[b].conv1);
    conv(base + ".conv2", residual_[b].conv2);
  }
  if (config_.arch == Arch::rdn) conv("gff1", gff1_);
  conv("body_tail", body_tail_);
  conv("tail", tail_);
  return out;
}

template <typename S>
std::vector<Tensor<S>*> SrNet<S>::parameters() {
  std::vector<Tensor<S>*> out;
  for (auto& np : named_parameters()) out.push_back(np.tensor);
  return out;
}

template <typename S>
std::size_t SrNet<S>::parameter_count() const {
  std::size_t total = 0;
  for (auto& np : const_cast<SrNet*>(this)->named_parameters()) total += np.tensor->numel();
  return total;
}

template <typename S>
Var<S> SrNet<S>::forward(Graph<S>& g, const Tensor<S>& input) {
  if (input.c() != config_.input_channels()) {
    throw DimensionError("sr_forward", "c", config_.input_channels(), input.c());
  }
  Var<S> x = g.constant(input);
  Var<S> shallow = head_(x);
  Var<S> f = shallow;
  switch (config_.arch) {
    case Arch::rdn: {
      f = sfe2_(shallow);
      std::vector<Var<S>> outs;
      for (auto& block : dense_) {
        f = residual_dense_block(f, block);
        outs.push_back(f);
      }
      f = gff1_(outs.size() == 1 ? outs.front() : concat_channels<S>(outs));
      break;
    }
    case Arch::rcan:
      for (auto& block : attention_) f = channel_attention_block(f, block);
      break;
    case Arch::edsr:
      for (auto& block : residual_) f = residual_block(f, block, config_.res_scale);
      break;
  }
  f = add(body_tail_(f), shallow);
  Var<S> out = pixel_shuffle(tail_(f), config_.scale);
  if (config_.bicubic_residual) {
    const TensorF center = slice_channels(input.template cast<float>(), 3 * config_.radius, 3);
    const TensorF up = bicubic_resize(center, ResizeFactor::up4);
    out = add(out, g.constant(up.template cast<S>()));
  }
  return out;
}

template <typename S>
Tensor<S> SrNet<S>::infer(const Tensor<S>& input) {
  Graph<S> g;
  g.set_recording(false);
  return forward(g, input).value();
}

#define VSR_INSTANTIATE(S)                                                                   \
  template struct ConvLayer<S>;                                                              \
  template void kaiming_uniform<S>(Tensor<S>&, Rng&);                                        \
  template DenseBlockParams<S> make_dense_block<S>(int, int, int);                           \
  template AttentionBlockParams<S> make_attention_block<S>(int, int);                        \
  template ResidualBlockParams<S> make_residual_block<S>(int);                               \
  template Var<S> residual_dense_block<S>(Var<S>, DenseBlockParams<S>&, std::vector<int>*);  \
  template Var<S> channel_attention_block<S>(Var<S>, AttentionBlockParams<S>&);              \
  template Var<S> residual_block<S>(Var<S>, ResidualBlockParams<S>&, double);                \
  template class SrNet<S>;

VSR_INSTANTIATE(float)
VSR_INSTANTIATE(double)
#undef VSR_INSTANTIATE

// ---------------------------------------------------------------------------

TensorF sr_forward(SrModel& model, const SuperImage& s) {
  if (s.tensor.c() != model.config().input_channels()) {
    throw DimensionError("sr_forward", "c (expected 3(2T+1))", model.config().input_channels(),
                         s.tensor.c());
  }
  return model.infer(s.tensor);
}

std::vector<Record> config_records(const SrConfig& c) {
  return {
      scalar_record("config.arch", static_cast<double>(static_cast<int>(c.arch))),
      scalar_record("config.T", c.radius),
      scalar_record("config.width", c.width),
      scalar_record("config.num_blocks", c.num_blocks),
      scalar_record("config.growth", c.growth),
      scalar_record("config.dense_layers", c.dense_layers),
      scalar_record("config.ca_reduction", c.ca_reduction),
      f64_record("config.res_scale", c.res_scale),
      scalar_record("config.bicubic_residual", c.bicubic_residual ? 1.0 : 0.0),
      scalar_record("config.scale", c.scale),
  };
}

SrConfig config_from_records(std::span<const Record> records) {
  auto get = [&](const char* name) {
    return static_cast<int>(record_scalar(find_record(records, name)));
  };
  SrConfig c;
  const int arch = get("config.arch");
  if (arch < 0 || arch > 2) throw ConfigError("checkpoint has unknown arch id " + std::to_string(arch));
  c.arch = static_cast<Arch>(arch);
  c.radius = get("config.T");
  c.width = get("config.width");
  c.num_blocks = get("config.num_blocks");
  c.growth = get("config.growth");
  c.dense_layers = get("config.dense_layers");
  c.ca_reduction = get("config.ca_reduction");
  c.res_scale = record_f64(find_record(records, "config.res_scale"));
  c.bicubic_residual = get("config.bicubic_residual") != 0;
  c.scale = get("config.scale");
  c.validate();
  return c;
}

void load_parameters(std::span<const Record> records, std::vector<NamedParam<float>> params,
                     const std::string& prefix) {
  for (auto& np : params) {
    const Record& r = find_record(records, prefix + np.name);
    TensorF t = record_tensor(r);
    require_same_shape(("load " + np.name).c_str(), np.tensor->shape(), t.shape());
    np.tensor->storage() = std::move(t.storage());
  }
}

void save_sr_checkpoint(const std::filesystem::path& path, SrModel& model) {
  std::vector<Record> records = config_records(model.config());
  for (auto& np : model.named_parameters()) records.push_back(tensor_record(np.name, *np.tensor));
  write_container(path, records);
}

SrModel load_sr_checkpoint(const std::filesystem::path& path) {
  const auto records = read_container(path);
  SrModel model(config_from_records(records), 0);
  load_parameters(records, model.named_parameters());
  return model;
}

}  // namespace vsr
