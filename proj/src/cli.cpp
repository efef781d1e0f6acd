#include "vsr/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>

#include "vsr/augment.hpp"
#include "vsr/dataset.hpp"
#include "vsr/ensemble.hpp"
#include "vsr/image_io.hpp"
#include "vsr/metrics.hpp"
#include "vsr/parallel.hpp"
#include "vsr/trainer.hpp"

namespace vsr::cli {
namespace fs = std::filesystem;

namespace {

class UsageError : public Error {
 public:
  using Error::Error;
};

constexpr const char* kRequired = "Required";

// Values from the subcommand's --config file fill every option the command
// line left unset; unknown keys are rejected.
void merge_config_file(CLI::App& sub, const std::string& path) {
  if (!path.empty()) {
    if (!fs::is_regular_file(path)) throw UsageError("config file not found: " + path);
    for (const auto& item : CLI::ConfigINI().from_file(path)) {
      if (item.name == "++" || item.name == "--") continue;
      if (!item.parents.empty()) throw UsageError("config sections are not supported: " + item.fullname());
      CLI::Option* opt = sub.get_option_no_throw("--" + item.name);
      if (opt == nullptr || item.name == "config") {
        throw UsageError("unknown config key '" + item.name + "' for " + sub.get_name());
      }
      if (opt->count() > 0) continue;
      opt->clear();
      for (const auto& v : item.inputs) opt->add_result(v);
      opt->run_callback();
    }
  }
  for (const CLI::Option* opt : sub.get_options()) {
    if (opt->get_group() == kRequired && opt->count() == 0) {
      throw UsageError(opt->get_name() + " is required");
    }
  }
}

struct MakeDataOpts {
  std::string out;
  std::uint64_t seed = 0;
  int sequences = 8;
  int frames = 32;
  int height = 96;
  int width = 96;
  int train = -1, select = -1, test = -1;
  double min_pan = 0.5, max_pan = 2.0, object_speed = 1.5;
  int objects = 3;
};

struct TrainSrOpts {
  std::string data, out, log, state, resume;
  std::string arch = "rdn", loss = "l1", optimizer = "adam";
  int radius = 2, width = 32, blocks = 4, growth = 16, dense_layers = 3, ca_reduction = 4;
  double res_scale = 0.1;
  bool bicubic_residual = false;
  double lr = 1e-4;
  std::vector<double> lr_drops{5e-5, 3e-5, 1e-5};
  double plateau_delta = 0.01;
  int plateau_patience = 5;
  int batch = 16, patch = 24, steps = 1000, eval_interval = 100;
  bool no_augment = false;
  double grad_clip = 0.0;
  std::uint64_t seed = 0;
};

struct TrainEnsembleOpts {
  std::string data, out, log, split = "select";
  std::vector<std::string> models;
  bool bicubic = false;
  int passes = 150, pass_drop = 50, batch = 4, patch = 48;
  double lr = 0.1;
  std::uint64_t seed = 0;
};

struct InferOpts {
  std::string model, data, split = "test", sequence, t = "all", out;
  bool self_ensemble = false;
};

struct FuseOpts {
  std::vector<std::string> models, candidates;
  std::string mode = "adaptive", ensemble, data, split = "test", sequence, t = "all", out;
  bool bicubic = false;
};

struct EvalOpts {
  std::string data, split = "test", report, fuse = "none", ensemble;
  std::vector<std::string> models;
  bool bicubic = false, self_ensemble = false;
};

std::string model_name(const std::string& path) { return fs::path(path).stem().string(); }

std::vector<int> select_sequences(const Dataset& d, const std::string& split, const std::string& id) {
  std::vector<int> out;
  for (int i : d.indices(parse_split_role(split))) {
    if (id.empty() || d.hr[static_cast<std::size_t>(i)].id == id) out.push_back(i);
  }
  if (out.empty()) throw UsageError("no sequences match split '" + split + "'" + (id.empty() ? "" : " and id '" + id + "'"));
  return out;
}

std::vector<int> select_frames(const std::string& spec, int length) {
  std::vector<int> out;
  if (spec == "all") {
    for (int t = 0; t < length; ++t) out.push_back(t);
    return out;
  }
  std::size_t used = 0;
  int t = -1;
  try {
    t = std::stoi(spec, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != spec.size() || t < 0) throw UsageError("--t expects a frame index or 'all', got '" + spec + "'");
  if (t >= length) throw UsageError("--t " + spec + " is past the end of a " + std::to_string(length) + "-frame sequence");
  return {t};
}

std::string frame_file(int t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%03d.ppm", t);
  return buf;
}

void print_resolved(std::ostream& out, const CLI::App& sub, const std::string& seed_note) {
  out << "# " << sub.get_name() << " resolved config\n" << sub.config_to_str(true, false);
  out << "# seed: " << seed_note << "\n";
}

int run_make_data(const MakeDataOpts& o, std::ostream& out) {
  const int eighth = static_cast<int>(std::lround(o.sequences / 8.0));
  const int select = o.select < 0 ? eighth : o.select;
  const int test = o.test < 0 ? eighth : o.test;
  const int train = o.train < 0 ? o.sequences - select - test : o.train;
  MotionSpec motion{o.min_pan, o.max_pan, o.objects, o.object_speed};
  auto hr = generate_toy_dataset(o.sequences, o.frames, {o.height, o.width}, motion, o.seed);
  hr = assign_splits(std::move(hr), {train, select, test, o.seed});
  Dataset d;
  for (const auto& s : hr) d.lr.push_back(degrade(s));
  d.hr = std::move(hr);
  write_dataset(o.out, d);
  out << "wrote " << d.hr.size() << " sequences (" << train << " train, " << select << " select, "
      << test << " test) to " << o.out << "\n";
  return kExitOk;
}

int run_train_sr(const TrainSrOpts& o, std::ostream& out) {
  TrainConfig c;
  c.model.arch = parse_arch(o.arch);
  c.model.radius = o.radius;
  c.model.width = o.width;
  c.model.num_blocks = o.blocks;
  c.model.growth = o.growth;
  c.model.dense_layers = o.dense_layers;
  c.model.ca_reduction = o.ca_reduction;
  c.model.res_scale = o.res_scale;
  c.model.bicubic_residual = o.bicubic_residual;
  if (o.loss != "l1" && o.loss != "mse") throw UsageError("--loss must be l1 or mse");
  c.loss = o.loss == "l1" ? LossKind::l1 : LossKind::mse;
  if (o.optimizer != "adam" && o.optimizer != "sgd") throw UsageError("--optimizer must be adam or sgd");
  c.optimizer = o.optimizer == "adam" ? OptimizerKind::adam : OptimizerKind::sgd;
  c.lr = o.lr;
  c.lr_drops = o.lr_drops;
  c.plateau = {o.plateau_delta, o.plateau_patience};
  c.batch = o.batch;
  c.lr_patch = o.patch;
  c.steps = o.steps;
  c.eval_interval = o.eval_interval;
  c.augment = !o.no_augment;
  c.grad_clip = o.grad_clip;
  c.seed = o.seed;
  c.checkpoint = o.out;
  c.log_path = o.log;
  c.state_path = o.state;
  const Dataset data = read_dataset(o.data);
  SrTrainer trainer(c, data);
  if (!o.resume.empty()) {
    trainer.load_state(o.resume);
    out << "resumed at step " << trainer.step() << "\n";
  }
  out << "parameters: " << trainer.model().parameter_count() << "\n";
  trainer.run();
  for (const auto& r : trainer.log()) {
    out << "step " << r.step << " lr " << r.lr << " loss " << r.loss << " select_psnr " << r.select_psnr << "\n";
  }
  out << "best select psnr " << trainer.best_psnr() << " dB, checkpoint " << o.out << "\n";
  return kExitOk;
}

std::vector<FrameSource> load_members(const std::vector<std::string>& paths, bool bicubic,
                                      std::vector<SrModel>& storage) {
  storage.clear();
  storage.reserve(paths.size());
  for (const auto& p : paths) storage.push_back(load_sr_checkpoint(p));
  std::vector<FrameSource> members;
  for (auto& m : storage) members.push_back(model_source(m, false));
  if (bicubic) members.push_back(bicubic_source());
  return members;
}

int run_train_ensemble(const TrainEnsembleOpts& o, std::ostream& out) {
  if (o.models.size() + (o.bicubic ? 1 : 0) < 2) {
    throw UsageError("train-ensemble needs at least 2 candidates (--model ... [--bicubic])");
  }
  const Dataset data = read_dataset(o.data);
  std::vector<SrModel> storage;
  const auto members = load_members(o.models, o.bicubic, storage);
  EnsembleTrainConfig c;
  c.passes = o.passes;
  c.lr = o.lr;
  c.pass_drop = o.pass_drop;
  c.batch = o.batch;
  c.patch = o.patch;
  c.seed = o.seed;
  c.checkpoint = o.out;
  c.log_path = o.log;
  const auto result = train_ensemble(c, members, data, data.indices(parse_split_role(o.split)));
  for (const auto& r : result.log) out << "pass " << r.step << " lr " << r.lr << " loss " << r.loss << "\n";
  out << "ensemble checkpoint " << o.out << "\n";
  return kExitOk;
}

int run_infer(const InferOpts& o, std::ostream& out) {
  SrModel model = load_sr_checkpoint(o.model);
  const Dataset data = read_dataset(o.data);
  int written = 0;
  for (int i : select_sequences(data, o.split, o.sequence)) {
    const auto& lr = data.lr[static_cast<std::size_t>(i)];
    const fs::path dir = fs::path(o.out) / lr.id;
    fs::create_directories(dir);
    const FrameSource src = model_source(model, o.self_ensemble);
    for (int t : select_frames(o.t, lr.length())) {
      write_ppm(dir / frame_file(t), src(lr, t));
      ++written;
    }
  }
  out << "wrote " << written << " frames to " << o.out << "\n";
  return kExitOk;
}

int run_fuse(const FuseOpts& o, std::ostream& out) {
  if (o.mode != "adaptive" && o.mode != "average") throw UsageError("--mode must be adaptive or average");
  const std::size_t n = o.models.size() + o.candidates.size() + (o.bicubic ? 1 : 0);
  if (n < 2) throw UsageError("fuse needs at least 2 candidates, got " + std::to_string(n));
  if (o.mode == "adaptive" && o.ensemble.empty()) throw UsageError("--mode adaptive needs --ensemble");
  std::optional<EnsembleNet> net;
  if (o.mode == "adaptive") net = load_ensemble_checkpoint(o.ensemble);
  const Dataset data = read_dataset(o.data);
  std::vector<SrModel> storage;
  auto members = load_members(o.models, o.bicubic, storage);
  for (const auto& dir : o.candidates) {
    members.push_back([dir](const VideoSequence& lr, int t) {
      return read_ppm(fs::path(dir) / lr.id / frame_file(t));
    });
  }
  const FrameSource fused = ensemble_source(members, net ? &*net : nullptr);
  int written = 0;
  for (int i : select_sequences(data, o.split, o.sequence)) {
    const auto& lr = data.lr[static_cast<std::size_t>(i)];
    const fs::path dir = fs::path(o.out) / lr.id;
    fs::create_directories(dir);
    for (int t : select_frames(o.t, lr.length())) {
      write_ppm(dir / frame_file(t), fused(lr, t));
      ++written;
    }
  }
  out << "fused " << n << " candidates (" << o.mode << ") into " << written << " frames at " << o.out << "\n";
  return kExitOk;
}

int run_eval(const EvalOpts& o, std::ostream& out) {
  if (o.fuse != "none" && o.fuse != "adaptive" && o.fuse != "average") {
    throw UsageError("--fuse must be none, adaptive or average");
  }
  if (o.models.empty() && !o.bicubic) throw UsageError("eval needs --model or --bicubic");
  const Dataset data = read_dataset(o.data);
  std::vector<SrModel> storage;
  storage.reserve(o.models.size());
  for (const auto& p : o.models) storage.push_back(load_sr_checkpoint(p));
  std::vector<NamedSource> sources;
  std::vector<FrameSource> members;
  for (std::size_t i = 0; i < storage.size(); ++i) {
    sources.push_back({model_name(o.models[i]), model_source(storage[i], o.self_ensemble)});
    members.push_back(sources.back().source);
  }
  if (o.bicubic) {
    sources.push_back({"bicubic", bicubic_source()});
    members.push_back(sources.back().source);
  }
  std::optional<EnsembleNet> net;
  if (o.fuse != "none") {
    if (members.size() < 2) throw UsageError("--fuse needs at least 2 candidates");
    if (o.fuse == "adaptive") {
      if (o.ensemble.empty()) throw UsageError("--fuse adaptive needs --ensemble");
      net = load_ensemble_checkpoint(o.ensemble);
    }
    sources.push_back({o.fuse + "_ensemble", ensemble_source(members, net ? &*net : nullptr)});
  }
  const EvalReport report = evaluate(sources, data, data.indices(parse_split_role(o.split)), o.self_ensemble);
  if (!o.report.empty()) {
    const std::string csv = report.to_csv();
    write_file_bytes(o.report, std::span(reinterpret_cast<const std::uint8_t*>(csv.data()), csv.size()));
  }
  out << report.summary();
  return kExitOk;
}

int resolve_threads(int flag) {
  if (flag > 0) return flag;
  if (const char* env = std::getenv("VSR_THREADS"); env != nullptr && *env != '\0') {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (*end != '\0' || v < 1) throw UsageError(std::string("VSR_THREADS must be a positive integer, got '") + env + "'");
    return static_cast<int>(v);
  }
  return 0;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Video super-resolution toolkit: early-fused super-image SR models and adaptive ensembles.", "vsr"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1, 1);
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (0: VSR_THREADS or all logical cores)");

  MakeDataOpts md;
  auto* make_data = app.add_subcommand("make-data", "Generate, degrade and split a synthetic dataset");
  make_data->add_option("--out", md.out, "Output dataset root")->group(kRequired);
  make_data->add_option("--seed", md.seed, "Generator and split seed");
  make_data->add_option("--sequences", md.sequences, "Number of sequences");
  make_data->add_option("--frames", md.frames, "Frames per sequence");
  make_data->add_option("--height", md.height, "HR frame height (multiple of 4)");
  make_data->add_option("--width", md.width, "HR frame width (multiple of 4)");
  make_data->add_option("--train", md.train, "Train sequences (-1: sequences minus select and test)");
  make_data->add_option("--select", md.select, "Select sequences (-1: sequences/8)");
  make_data->add_option("--test", md.test, "Test sequences (-1: sequences/8)");
  make_data->add_option("--min-pan", md.min_pan, "Minimum camera speed, HR px/frame");
  make_data->add_option("--max-pan", md.max_pan, "Maximum camera speed, HR px/frame");
  make_data->add_option("--objects", md.objects, "Moving objects per sequence");
  make_data->add_option("--object-speed", md.object_speed, "Maximum object speed, HR px/frame");

  TrainSrOpts ts;
  auto* train_sr_cmd = app.add_subcommand("train-sr", "Train one SR model on the train split");
  train_sr_cmd->add_option("--data", ts.data, "Dataset root")->group(kRequired);
  train_sr_cmd->add_option("--out", ts.out, "Best-by-select checkpoint path")->group(kRequired);
  train_sr_cmd->add_option("--log", ts.log, "Metric log CSV path");
  train_sr_cmd->add_option("--state", ts.state, "Resumable training state path");
  train_sr_cmd->add_option("--resume", ts.resume, "Continue from a saved training state");
  train_sr_cmd->add_option("--arch", ts.arch, "rdn, rcan or edsr");
  train_sr_cmd->add_option("--T", ts.radius, "Temporal radius");
  train_sr_cmd->add_option("--width", ts.width, "Feature channels");
  train_sr_cmd->add_option("--blocks", ts.blocks, "Residual blocks");
  train_sr_cmd->add_option("--growth", ts.growth, "Dense growth (rdn)");
  train_sr_cmd->add_option("--dense-layers", ts.dense_layers, "Conv layers per dense block (rdn)");
  train_sr_cmd->add_option("--ca-reduction", ts.ca_reduction, "Channel attention reduction (rcan)");
  train_sr_cmd->add_option("--res-scale", ts.res_scale, "Residual scaling (edsr)");
  train_sr_cmd->add_flag("--bicubic-residual", ts.bicubic_residual, "Add the bicubic upsampled center frame");
  train_sr_cmd->add_option("--loss", ts.loss, "l1 or mse");
  train_sr_cmd->add_option("--optimizer", ts.optimizer, "adam or sgd");
  train_sr_cmd->add_option("--lr", ts.lr, "Initial learning rate");
  train_sr_cmd->add_option("--lr-drops", ts.lr_drops, "Rates taken at successive plateaus")->delimiter(',');
  train_sr_cmd->add_option("--plateau-delta", ts.plateau_delta, "Select PSNR improvement that counts, dB");
  train_sr_cmd->add_option("--plateau-patience", ts.plateau_patience, "Evaluations without improvement before a drop");
  train_sr_cmd->add_option("--batch", ts.batch, "Patches per step");
  train_sr_cmd->add_option("--patch", ts.patch, "LR patch side");
  train_sr_cmd->add_option("--steps", ts.steps, "Optimizer steps");
  train_sr_cmd->add_option("--eval-interval", ts.eval_interval, "Steps between select evaluations");
  train_sr_cmd->add_flag("--no-augment", ts.no_augment, "Disable flip/rotate/time-reverse augmentation");
  train_sr_cmd->add_option("--grad-clip", ts.grad_clip, "Global gradient norm limit (0: off)");
  train_sr_cmd->add_option("--seed", ts.seed, "Initialization and sampling seed");

  TrainEnsembleOpts te;
  auto* train_ens = app.add_subcommand("train-ensemble", "Train the adaptive ensemble on frozen candidates");
  train_ens->add_option("--data", te.data, "Dataset root")->group(kRequired);
  train_ens->add_option("--out", te.out, "Ensemble checkpoint path")->group(kRequired);
  train_ens->add_option("--model", te.models, "SR checkpoint (repeat for each candidate)");
  train_ens->add_flag("--bicubic", te.bicubic, "Add bicubic upsampling as a candidate");
  train_ens->add_option("--split", te.split, "Split used for training");
  train_ens->add_option("--log", te.log, "Per-pass log CSV path");
  train_ens->add_option("--passes", te.passes, "Passes over the training frames");
  train_ens->add_option("--lr", te.lr, "Initial SGD learning rate");
  train_ens->add_option("--pass-drop", te.pass_drop, "Divide the rate by 10 every this many passes");
  train_ens->add_option("--batch", te.batch, "Frames per step");
  train_ens->add_option("--patch", te.patch, "HR crop side, multiple of 8 (0: whole frame)");
  train_ens->add_option("--seed", te.seed, "Initialization and sampling seed");

  InferOpts in;
  auto* infer = app.add_subcommand("infer", "Super-resolve frames with one model");
  infer->add_option("--model", in.model, "SR checkpoint")->group(kRequired);
  infer->add_option("--data", in.data, "Dataset root")->group(kRequired);
  infer->add_option("--out", in.out, "Output directory")->group(kRequired);
  infer->add_option("--split", in.split, "Split to process");
  infer->add_option("--sequence", in.sequence, "Only this sequence id (empty: all)");
  infer->add_option("--t", in.t, "Frame index or 'all'");
  infer->add_flag("--self-ensemble", in.self_ensemble, "Average over the 16 geometric transforms");

  FuseOpts fu;
  auto* fuse_cmd = app.add_subcommand("fuse", "Fuse N candidate outputs");
  fuse_cmd->add_option("--model", fu.models, "SR checkpoint candidate (repeatable)");
  fuse_cmd->add_option("--candidates", fu.candidates, "Directory of cached candidate frames (repeatable)");
  fuse_cmd->add_flag("--bicubic", fu.bicubic, "Add bicubic upsampling as a candidate");
  fuse_cmd->add_option("--mode", fu.mode, "adaptive or average");
  fuse_cmd->add_option("--ensemble", fu.ensemble, "Ensemble checkpoint (adaptive mode)");
  fuse_cmd->add_option("--data", fu.data, "Dataset root")->group(kRequired);
  fuse_cmd->add_option("--out", fu.out, "Output directory")->group(kRequired);
  fuse_cmd->add_option("--split", fu.split, "Split to process");
  fuse_cmd->add_option("--sequence", fu.sequence, "Only this sequence id (empty: all)");
  fuse_cmd->add_option("--t", fu.t, "Frame index or 'all'");

  EvalOpts ev;
  auto* eval = app.add_subcommand("eval", "PSNR report for models and ensembles");
  eval->add_option("--data", ev.data, "Dataset root")->group(kRequired);
  eval->add_option("--model", ev.models, "SR checkpoint (repeatable)");
  eval->add_flag("--bicubic", ev.bicubic, "Include the bicubic baseline");
  eval->add_option("--fuse", ev.fuse, "none, adaptive or average over all candidates");
  eval->add_option("--ensemble", ev.ensemble, "Ensemble checkpoint (--fuse adaptive)");
  eval->add_option("--split", ev.split, "Split to evaluate");
  eval->add_option("--report", ev.report, "CSV report path");
  eval->add_flag("--self-ensemble", ev.self_ensemble, "Average over the 16 geometric transforms");

  std::map<CLI::App*, std::string> config_paths;
  for (auto* sub : app.get_subcommands({})) {
    sub->add_option("--config", config_paths[sub], "Flat key = value file; flags override it");
    for (CLI::Option* opt : sub->get_options()) {
      if (!opt->get_type_name().empty() && opt->get_default_str().empty() && opt->get_group() != kRequired) {
        opt->default_str("\"\"");
      }
    }
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    set_num_threads(resolve_threads(threads));
    CLI::App* sub = app.get_subcommands().front();
    merge_config_file(*sub, config_paths[sub]);
    const std::string name = sub->get_name();
    if (name == "make-data") {
      print_resolved(out, *sub, std::to_string(md.seed));
      return run_make_data(md, out);
    }
    if (name == "train-sr") {
      print_resolved(out, *sub, std::to_string(ts.seed));
      return run_train_sr(ts, out);
    }
    if (name == "train-ensemble") {
      print_resolved(out, *sub, std::to_string(te.seed));
      return run_train_ensemble(te, out);
    }
    print_resolved(out, *sub, "none (deterministic)");
    if (name == "infer") return run_infer(in, out);
    if (name == "fuse") return run_fuse(fu, out);
    return run_eval(ev, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dispatch(args, std::cout, std::cerr);
}

}  // namespace vsr::cli
