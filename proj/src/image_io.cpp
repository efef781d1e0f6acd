#include "vsr/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>

#include "vsr/container.hpp"

namespace vsr {

std::uint8_t quantize(float v) {
  const double q = std::round(static_cast<double>(v) * 255.0);
  return static_cast<std::uint8_t>(std::clamp(q, 0.0, 255.0));
}

std::vector<std::uint8_t> encode_ppm(const TensorF& img) {
  require_same_shape("encode_ppm", {1, 3, img.h(), img.w()}, img.shape());
  const std::string header =
      "P6\n" + std::to_string(img.w()) + " " + std::to_string(img.h()) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + img.numel());
  for (int y = 0; y < img.h(); ++y) {
    for (int x = 0; x < img.w(); ++x) {
      for (int c = 0; c < 3; ++c) out.push_back(quantize(img.at(0, c, y, x)));
    }
  }
  return out;
}

namespace {

class HeaderReader {
 public:
  explicit HeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void skip_space() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else {
        return;
      }
    }
  }

  long number() {
    skip_space();
    const std::size_t start = pos_;
    long value = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      value = value * 10 + (bytes_[pos_] - '0');
      if (value > 1'000'000) throw ParseError("ppm: header value too large", start);
      ++pos_;
    }
    if (pos_ == start) throw ParseError("ppm: expected a number", pos_);
    return value;
  }

  std::size_t pos() const { return pos_; }
  void advance(std::size_t n) { pos_ += n; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

TensorF decode_ppm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2) throw ParseError("ppm: truncated magic", bytes.size());
  if (bytes[0] != 'P' || bytes[1] != '6') throw ParseError("ppm: bad magic", 0);
  HeaderReader r(bytes);
  r.advance(2);
  const long w = r.number();
  const long h = r.number();
  const long maxval = r.number();
  if (w <= 0 || h <= 0) throw ParseError("ppm: empty image", r.pos());
  if (maxval != 255) throw ParseError("ppm: maxval must be 255", r.pos());
  if (r.pos() >= bytes.size()) throw ParseError("ppm: truncated header", bytes.size());
  if (!std::isspace(bytes[r.pos()])) throw ParseError("ppm: bad header terminator", r.pos());
  r.advance(1);
  const std::size_t start = r.pos();
  const std::size_t payload = static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3;
  if (bytes.size() < start + payload) throw ParseError("ppm: truncated payload", bytes.size());
  if (bytes.size() > start + payload) throw ParseError("ppm: trailing bytes", start + payload);
  TensorF img({1, 3, static_cast<int>(h), static_cast<int>(w)});
  std::size_t i = start;
  for (int y = 0; y < img.h(); ++y) {
    for (int x = 0; x < img.w(); ++x) {
      for (int c = 0; c < 3; ++c) img.at(0, c, y, x) = dequantize(bytes[i++]);
    }
  }
  return img;
}

void write_ppm(const std::filesystem::path& path, const TensorF& img) {
  write_file_bytes(path, encode_ppm(img));
}

TensorF read_ppm(const std::filesystem::path& path) {
  return decode_ppm(read_file_bytes(path));
}

}  // namespace vsr
