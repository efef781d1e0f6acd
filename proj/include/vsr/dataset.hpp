#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vsr/rng.hpp"
#include "vsr/temporal.hpp"

namespace vsr {

enum class SplitRole { train, select, test };
std::string to_string(SplitRole role);
SplitRole parse_split_role(const std::string& name);

struct VideoSequence {
  std::string id;
  std::vector<TensorF> frames;  // each (1, 3, H, W)
  SplitRole role = SplitRole::train;

  int length() const { return static_cast<int>(frames.size()); }
  int height() const { return frames.empty() ? 0 : frames.front().h(); }
  int width() const { return frames.empty() ? 0 : frames.front().w(); }
  /// Throws when empty or when frame shapes disagree.
  void validate() const;
};

struct FrameSize {
  int h = 96;
  int w = 96;
};

/// Scene motion of the procedural generator, in HR pixels per frame.
struct MotionSpec {
  double min_pan = 0.5;   // |camera velocity| per axis lies in [min_pan, max_pan]
  double max_pan = 2.0;
  int objects = 3;
  double max_object_speed = 1.5;
};

/// A gradient covered in static textured shapes under a panning camera, plus
/// rigid textured objects with their own subpixel velocity. Values are quantized to
/// the 8-bit grid so a PPM round trip is lossless.
std::vector<VideoSequence> generate_toy_dataset(int n_sequences, int frames_per_seq,
                                                FrameSize hr_size, const MotionSpec& motion,
                                                std::uint64_t seed);

/// Per-frame bicubic x1/4.
VideoSequence degrade(const VideoSequence& seq);

struct SplitConfig {
  int train = 0;
  int select = 0;
  int test = 0;
  std::uint64_t seed = 0;

  int total() const { return train + select + test; }
  /// Counts for `total` sequences in the ratio train_weight : select_weight
  /// (no test split); the select count is rounded to nearest.
  static SplitConfig from_ratio(int total, int train_weight, int select_weight,
                                std::uint64_t seed);
};

/// Seeded shuffle, then the first `train` become train, the next `select`
/// select and the rest test. Order of the returned list is unchanged.
std::vector<VideoSequence> assign_splits(std::vector<VideoSequence> sequences,
                                         const SplitConfig& split);

struct PatchPair {
  SuperImage lr_patch;  // (1, 3(2T+1), p, p)
  TensorF hr_patch;     // (1, 3, 4p, 4p)
  std::string sequence;
  int t = 0;
  int y = 0;  // LR offset
  int x = 0;
};

PatchPair sample_patch_pair(const VideoSequence& lr_seq, const VideoSequence& hr_seq, int radius,
                            int lr_patch, Rng& rng);
/// Deterministic variant with an explicit target frame and LR offset.
PatchPair extract_patch_pair(const VideoSequence& lr_seq, const VideoSequence& hr_seq,
                             int radius, int lr_patch, int t, int y, int x);

/// HR and LR sequences of one dataset, index-aligned.
struct Dataset {
  std::vector<VideoSequence> hr;
  std::vector<VideoSequence> lr;

  std::vector<int> indices(SplitRole role) const;
};

/// Layout: <root>/{hr,lr}/<split>/<seq_id>/<frame %03d>.ppm
void write_dataset(const std::filesystem::path& root, const Dataset& data);
Dataset read_dataset(const std::filesystem::path& root);

}  // namespace vsr
