#include "vsr/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "vsr/image_io.hpp"
#include "vsr/resize.hpp"

namespace vsr {

std::string to_string(SplitRole role) {
  switch (role) {
    case SplitRole::train: return "train";
    case SplitRole::select: return "select";
    case SplitRole::test: return "test";
  }
  return "train";
}

SplitRole parse_split_role(const std::string& name) {
  if (name == "train") return SplitRole::train;
  if (name == "select") return SplitRole::select;
  if (name == "test") return SplitRole::test;
  throw ConfigError("unknown split '" + name + "'");
}

void VideoSequence::validate() const {
  if (frames.empty()) throw ConfigError("sequence '" + id + "' has no frames");
  const Shape ref = frames.front().shape();
  require_same_shape("VideoSequence", {1, 3, ref.h, ref.w}, ref);
  for (const auto& f : frames) require_same_shape("VideoSequence", ref, f.shape());
}

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

using Rgb = std::array<double, 3>;

struct Grating {
  double amp = 0, fx = 0, fy = 0, phase = 0;
  Rgb color{};

  Rgb at(double x, double y) const {
    const double s = amp * std::sin(kTwoPi * (fx * x + fy * y) + phase);
    return {s * color[0], s * color[1], s * color[2]};
  }
};

Grating random_grating(Rng& rng, double min_period, double max_period, double max_amp) {
  Grating g;
  const double period = rng.uniform(min_period, max_period);
  const double angle = rng.uniform(0.0, std::numbers::pi);
  g.fx = std::cos(angle) / period;
  g.fy = std::sin(angle) / period;
  g.phase = rng.uniform(0.0, kTwoPi);
  g.amp = rng.uniform(0.3 * max_amp, max_amp);
  for (auto& c : g.color) c = rng.uniform(0.3, 1.0);
  return g;
}

// Flat-filled disc or square with a grating texture in its own frame.
struct Shape2d {
  bool disc = false;
  double cx = 0, cy = 0, half = 0;
  Rgb fill{};
  Grating texture;

  bool covers(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    if (disc) return dx * dx + dy * dy <= half * half;
    return std::abs(dx) <= half && std::abs(dy) <= half;
  }
  Rgb color(double x, double y) const {
    Rgb v = texture.at(x, y);
    for (int c = 0; c < 3; ++c) v[c] += fill[c];
    return v;
  }
};

Shape2d random_shape(Rng& rng, double x0, double x1, double y0, double y1, double half_lo,
                     double half_hi, double max_period, double max_amp) {
  Shape2d s;
  s.disc = rng.coin();
  s.cx = rng.uniform(x0, x1);
  s.cy = rng.uniform(y0, y1);
  s.half = rng.uniform(half_lo, half_hi);
  for (auto& c : s.fill) c = rng.uniform(0.1, 0.9);
  s.texture = random_grating(rng, 3.0, max_period, max_amp);
  return s;
}

struct MovingObject {
  Shape2d shape;
  double vx = 0, vy = 0;
};

// Background: colour gradient under a dense field of small static shapes,
// panned rigidly by the camera. Objects move on top with their own velocity.
struct Scene {
  Rgb base{}, gx{}, gy{};
  std::vector<Shape2d> decor;
  double pan_x = 0, pan_y = 0;
  std::vector<MovingObject> objects;

  Rgb background(double x, double y, FrameSize size) const {
    for (auto it = decor.rbegin(); it != decor.rend(); ++it) {
      if (it->covers(x, y)) return it->color(x, y);
    }
    Rgb v{};
    for (int c = 0; c < 3; ++c) v[c] = base[c] + gx[c] * (x / size.w - 0.5) + gy[c] * (y / size.h - 0.5);
    return v;
  }

  Rgb sample(double x, double y, int t, FrameSize size) const {
    for (auto it = objects.rbegin(); it != objects.rend(); ++it) {
      const double ox = x - it->vx * t, oy = y - it->vy * t;
      if (it->shape.covers(ox, oy)) return it->shape.color(ox, oy);
    }
    return background(x + pan_x * t, y + pan_y * t, size);
  }
};

constexpr int kDecorShapes = 200;

double signed_speed(Rng& rng, double lo, double hi) {
  const double s = rng.uniform(lo, hi);
  return rng.coin() ? s : -s;
}

Scene random_scene(Rng& rng, FrameSize size, const MotionSpec& motion, int frames) {
  Scene s;
  for (int c = 0; c < 3; ++c) {
    s.base[c] = rng.uniform(0.3, 0.7);
    s.gx[c] = rng.uniform(-0.3, 0.3);
    s.gy[c] = rng.uniform(-0.3, 0.3);
  }
  s.pan_x = signed_speed(rng, motion.min_pan, motion.max_pan);
  s.pan_y = signed_speed(rng, motion.min_pan, motion.max_pan);
  // Decor covers every position the camera visits.
  const double reach_x = std::abs(s.pan_x) * (frames - 1), reach_y = std::abs(s.pan_y) * (frames - 1);
  const double x0 = s.pan_x < 0 ? -reach_x : 0.0, x1 = s.pan_x < 0 ? size.w : size.w + reach_x;
  const double y0 = s.pan_y < 0 ? -reach_y : 0.0, y1 = s.pan_y < 0 ? size.h : size.h + reach_y;
  const double density = kDecorShapes / (static_cast<double>(size.w) * size.h);
  const int decor = static_cast<int>(std::lround(density * (x1 - x0 + 20) * (y1 - y0 + 20)));
  for (int i = 0; i < decor; ++i) {
    s.decor.push_back(random_shape(rng, x0 - 10, x1 + 10, y0 - 10, y1 + 10, 2.0, 10.0, 10.0, 0.08));
  }
  for (int i = 0; i < motion.objects; ++i) {
    MovingObject o;
    o.shape = random_shape(rng, 0.0, size.w, 0.0, size.h, 6.0, 16.0, 8.0, 0.12);
    o.vx = rng.uniform(-motion.max_object_speed, motion.max_object_speed);
    o.vy = rng.uniform(-motion.max_object_speed, motion.max_object_speed);
    s.objects.push_back(o);
  }
  return s;
}

TensorF render(const Scene& scene, int t, FrameSize size) {
  constexpr std::array<double, 2> kSub{0.25, 0.75};
  TensorF frame({1, 3, size.h, size.w});
  for (int y = 0; y < size.h; ++y) {
    for (int x = 0; x < size.w; ++x) {
      Rgb acc{};
      for (double sy : kSub) {
        for (double sx : kSub) {
          const Rgb v = scene.sample(x + sx, y + sy, t, size);
          for (int c = 0; c < 3; ++c) acc[c] += v[c];
        }
      }
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(acc[c] / 4.0, 0.0, 1.0);
        frame.at(0, c, y, x) = dequantize(quantize(static_cast<float>(v)));
      }
    }
  }
  return frame;
}

std::string sequence_id(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "seq_%03d", i);
  return buf;
}

}  // namespace

std::vector<VideoSequence> generate_toy_dataset(int n_sequences, int frames_per_seq,
                                                FrameSize hr_size, const MotionSpec& motion,
                                                std::uint64_t seed) {
  std::vector<std::string> bad;
  if (n_sequences < 1) bad.push_back("n_sequences must be >= 1");
  if (frames_per_seq < 1) bad.push_back("frames_per_seq must be >= 1");
  if (hr_size.h < 4 || hr_size.h % 4 != 0) bad.push_back("hr height must be a positive multiple of 4");
  if (hr_size.w < 4 || hr_size.w % 4 != 0) bad.push_back("hr width must be a positive multiple of 4");
  if (motion.min_pan < 0 || motion.max_pan < motion.min_pan) bad.push_back("pan range is invalid");
  if (motion.objects < 0) bad.push_back("objects must be >= 0");
  if (!bad.empty()) throw ConfigError(bad);

  std::vector<VideoSequence> out(static_cast<std::size_t>(n_sequences));
  for (int i = 0; i < n_sequences; ++i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    const Scene scene = random_scene(rng, hr_size, motion, frames_per_seq);
    VideoSequence& seq = out[static_cast<std::size_t>(i)];
    seq.id = sequence_id(i);
    for (int t = 0; t < frames_per_seq; ++t) seq.frames.push_back(render(scene, t, hr_size));
  }
  return out;
}

VideoSequence degrade(const VideoSequence& seq) {
  VideoSequence out{seq.id, {}, seq.role};
  out.frames.reserve(seq.frames.size());
  for (const auto& f : seq.frames) out.frames.push_back(bicubic_resize(f, ResizeFactor::down4));
  return out;
}

SplitConfig SplitConfig::from_ratio(int total, int train_weight, int select_weight,
                                    std::uint64_t seed) {
  if (total < 0 || train_weight < 0 || select_weight < 0 || train_weight + select_weight == 0) {
    throw ConfigError("invalid split ratio");
  }
  const int select = static_cast<int>(
      std::lround(static_cast<double>(total) * select_weight / (train_weight + select_weight)));
  return {total - select, select, 0, seed};
}

std::vector<VideoSequence> assign_splits(std::vector<VideoSequence> sequences,
                                         const SplitConfig& split) {
  std::vector<std::string> bad;
  if (split.train < 0 || split.select < 0 || split.test < 0) bad.push_back("split counts must be >= 0");
  if (split.total() != static_cast<int>(sequences.size())) {
    bad.push_back("split counts sum to " + std::to_string(split.total()) + " but there are " +
                  std::to_string(sequences.size()) + " sequences");
  }
  if (!bad.empty()) throw ConfigError(bad);

  std::vector<int> order(sequences.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  Rng rng(derive_seed(split.seed, 0x5EED));
  for (int i = static_cast<int>(order.size()) - 1; i > 0; --i) {
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(rng.index(i + 1))]);
  }
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    const int r = static_cast<int>(rank);
    const SplitRole role = r < split.train                  ? SplitRole::train
                           : r < split.train + split.select ? SplitRole::select
                                                            : SplitRole::test;
    sequences[static_cast<std::size_t>(order[rank])].role = role;
  }
  return sequences;
}

PatchPair extract_patch_pair(const VideoSequence& lr_seq, const VideoSequence& hr_seq,
                             int radius, int lr_patch, int t, int y, int x) {
  if (lr_seq.length() != hr_seq.length()) {
    throw DimensionError("extract_patch_pair", "frames", hr_seq.length(), lr_seq.length());
  }
  if (lr_patch < 1 || lr_patch > lr_seq.height() || lr_patch > lr_seq.width()) {
    throw DimensionError("extract_patch_pair", "lr_patch", std::min(lr_seq.height(), lr_seq.width()),
                         lr_patch);
  }
  if (hr_seq.height() != 4 * lr_seq.height() || hr_seq.width() != 4 * lr_seq.width()) {
    throw DimensionError("extract_patch_pair", "h (hr must be 4x lr)", 4 * lr_seq.height(),
                         hr_seq.height());
  }
  const TemporalWindow window = temporal_window(lr_seq.length(), t, radius);
  std::vector<TensorF> crops;
  crops.reserve(window.indices.size());
  for (int idx : window.indices) {
    crops.push_back(crop(lr_seq.frames[static_cast<std::size_t>(idx)], y, x, lr_patch, lr_patch));
  }
  TemporalWindow local = window;
  for (std::size_t k = 0; k < local.indices.size(); ++k) local.indices[k] = static_cast<int>(k);
  PatchPair p;
  p.lr_patch = build_super_image(crops, local);
  p.lr_patch.indices = window.indices;
  p.hr_patch = crop(hr_seq.frames[static_cast<std::size_t>(t)], 4 * y, 4 * x, 4 * lr_patch,
                    4 * lr_patch);
  p.sequence = lr_seq.id;
  p.t = t;
  p.y = y;
  p.x = x;
  return p;
}

PatchPair sample_patch_pair(const VideoSequence& lr_seq, const VideoSequence& hr_seq, int radius,
                            int lr_patch, Rng& rng) {
  if (lr_patch < 1 || lr_patch > lr_seq.height() || lr_patch > lr_seq.width()) {
    throw DimensionError("sample_patch_pair", "lr_patch", std::min(lr_seq.height(), lr_seq.width()),
                         lr_patch);
  }
  const int t = rng.index(lr_seq.length());
  const int y = rng.index(lr_seq.height() - lr_patch + 1);
  const int x = rng.index(lr_seq.width() - lr_patch + 1);
  return extract_patch_pair(lr_seq, hr_seq, radius, lr_patch, t, y, x);
}

std::vector<int> Dataset::indices(SplitRole role) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < hr.size(); ++i) {
    if (hr[i].role == role) out.push_back(static_cast<int>(i));
  }
  return out;
}

namespace {

std::string frame_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%03d.ppm", i);
  return buf;
}

void write_sequences(const std::filesystem::path& root, const std::vector<VideoSequence>& seqs) {
  for (const auto& seq : seqs) {
    const auto dir = root / to_string(seq.role) / seq.id;
    std::filesystem::create_directories(dir);
    for (int t = 0; t < seq.length(); ++t) {
      write_ppm(dir / frame_name(t), seq.frames[static_cast<std::size_t>(t)]);
    }
  }
}

std::vector<VideoSequence> read_sequences(const std::filesystem::path& root) {
  std::vector<VideoSequence> out;
  for (SplitRole role : {SplitRole::train, SplitRole::select, SplitRole::test}) {
    const auto split_dir = root / to_string(role);
    if (!std::filesystem::is_directory(split_dir)) continue;
    std::vector<std::filesystem::path> dirs;
    for (const auto& e : std::filesystem::directory_iterator(split_dir)) {
      if (e.is_directory()) dirs.push_back(e.path());
    }
    std::sort(dirs.begin(), dirs.end());
    for (const auto& dir : dirs) {
      VideoSequence seq{dir.filename().string(), {}, role};
      for (int t = 0;; ++t) {
        const auto file = dir / frame_name(t);
        if (!std::filesystem::exists(file)) break;
        seq.frames.push_back(read_ppm(file));
      }
      seq.validate();
      out.push_back(std::move(seq));
    }
  }
  std::sort(out.begin(), out.end(),
            [](const VideoSequence& a, const VideoSequence& b) { return a.id < b.id; });
  return out;
}

}  // namespace

void write_dataset(const std::filesystem::path& root, const Dataset& data) {
  if (data.hr.size() != data.lr.size()) {
    throw DimensionError("write_dataset", "sequences", static_cast<long>(data.hr.size()),
                         static_cast<long>(data.lr.size()));
  }
  write_sequences(root / "hr", data.hr);
  write_sequences(root / "lr", data.lr);
}

Dataset read_dataset(const std::filesystem::path& root) {
  Dataset d{read_sequences(root / "hr"), read_sequences(root / "lr")};
  if (d.hr.empty()) throw Error("no sequences found under " + (root / "hr").string());
  if (d.hr.size() != d.lr.size()) {
    throw DimensionError("read_dataset", "sequences", static_cast<long>(d.hr.size()),
                         static_cast<long>(d.lr.size()));
  }
  for (std::size_t i = 0; i < d.hr.size(); ++i) {
    if (d.hr[i].id != d.lr[i].id || d.hr[i].length() != d.lr[i].length()) {
      throw Error("hr/lr mismatch for sequence " + d.hr[i].id);
    }
  }
  return d;
}

}  // namespace vsr
