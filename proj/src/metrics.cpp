#include "vsr/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "vsr/augment.hpp"
#include "vsr/resize.hpp"

namespace vsr {

double psnr(const TensorF& a, const TensorF& b) {
  require_same_shape("psnr", a.shape(), b.shape());
  if (a.empty()) throw DimensionError("psnr", "numel", 1, 0);
  double acc = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i]);
    acc += d * d;
  }
  if (acc == 0.0) return kIdenticalPsnr;
  const double mse = acc / static_cast<double>(a.numel());
  return 10.0 * std::log10(1.0 / mse);
}

double EvalReport::overall_mean(const std::string& model) const {
  double acc = 0.0;
  int n = 0;
  for (const auto& r : rows) {
    if (r.model == model) {
      acc += r.psnr_db;
      ++n;
    }
  }
  if (n == 0) throw Error("report has no rows for model '" + model + "'");
  return acc / n;
}

std::map<std::string, double> EvalReport::sequence_means(const std::string& model) const {
  std::map<std::string, std::pair<double, int>> acc;
  for (const auto& r : rows) {
    if (r.model != model) continue;
    auto& [sum, n] = acc[r.sequence];
    sum += r.psnr_db;
    ++n;
  }
  std::map<std::string, double> out;
  for (const auto& [seq, v] : acc) out[seq] = v.first / v.second;
  return out;
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os << "# psnr: rgb, max=1, full frame, no border crop, identical=" << fmt(kIdenticalPsnr)
     << " dB; self_ensemble=" << (self_ensemble ? "on" : "off") << "\n";
  os << "model,sequence,frame,psnr_db\n";
  for (const auto& r : rows) {
    os << r.model << "," << r.sequence << "," << r.frame << "," << fmt(r.psnr_db) << "\n";
  }
  for (const auto& m : models) {
    for (const auto& [seq, mean] : sequence_means(m)) {
      os << m << "," << seq << ",mean," << fmt(mean) << "\n";
    }
    os << m << ",all,mean," << fmt(overall_mean(m)) << "\n";
  }
  return os.str();
}

std::string EvalReport::summary() const {
  std::ostringstream os;
  os << "PSNR (RGB, full frame), self-ensemble " << (self_ensemble ? "on" : "off") << "\n";
  for (const auto& m : models) {
    os << "  " << m << ": " << fmt(overall_mean(m)) << " dB\n";
    for (const auto& [seq, mean] : sequence_means(m)) {
      os << "    " << seq << ": " << fmt(mean) << " dB\n";
    }
  }
  return os.str();
}

FrameSource model_source(SrModel& model, bool self_ensemble) {
  return [&model, self_ensemble](const VideoSequence& lr, int t) {
    const TemporalWindow w = temporal_window(lr.length(), t, model.config().radius);
    const SuperImage s = build_super_image(lr.frames, w);
    return self_ensemble ? self_ensemble_infer(model, s).output : sr_forward(model, s);
  };
}

FrameSource bicubic_source() {
  return [](const VideoSequence& lr, int t) {
    return bicubic_resize(lr.frames[static_cast<std::size_t>(t)], ResizeFactor::up4);
  };
}

FrameSource ensemble_source(std::vector<FrameSource> members, EnsembleNet* net) {
  if (members.empty()) throw ConfigError("ensemble needs at least one member");
  return [members = std::move(members), net](const VideoSequence& lr, int t) {
    CandidateSet cands;
    for (const auto& m : members) cands.candidates.push_back(m(lr, t));
    return net != nullptr ? adaptive_fuse(*net, cands) : average_ensemble(cands);
  };
}

EvalReport evaluate(std::span<const NamedSource> sources, const Dataset& data,
                    const std::vector<int>& which, bool self_ensemble_flag) {
  EvalReport report;
  report.self_ensemble = self_ensemble_flag;
  for (const auto& src : sources) {
    report.models.push_back(src.name);
    for (int i : which) {
      const auto& lr = data.lr.at(static_cast<std::size_t>(i));
      const auto& hr = data.hr.at(static_cast<std::size_t>(i));
      if (hr.length() != lr.length()) {
        throw Error("sequence " + lr.id + " is missing ground-truth frames");
      }
      for (int t = 0; t < lr.length(); ++t) {
        const TensorF out = src.source(lr, t);
        report.rows.push_back({src.name, lr.id, t, psnr(out, hr.frames[static_cast<std::size_t>(t)])});
      }
    }
  }
  return report;
}

double mean_psnr(const FrameSource& source, const Dataset& data, const std::vector<int>& which) {
  double acc = 0.0;
  int n = 0;
  for (int i : which) {
    const auto& lr = data.lr.at(static_cast<std::size_t>(i));
    const auto& hr = data.hr.at(static_cast<std::size_t>(i));
    for (int t = 0; t < lr.length(); ++t) {
      acc += psnr(source(lr, t), hr.frames[static_cast<std::size_t>(t)]);
      ++n;
    }
  }
  if (n == 0) throw Error("mean_psnr: no frames to evaluate");
  return acc / n;
}

}  // namespace vsr
