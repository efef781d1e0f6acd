#include "vsr/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace vsr {

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void bytes(const std::string& s) { out_.insert(out_.end(), s.begin(), s.end()); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::size_t pos() const { return pos_; }
  void need(std::size_t n, const char* what) const {
    if (in_.size() - pos_ < n) {
      throw ParseError(std::string("truncated container while reading ") + what, in_.size());
    }
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return in_[pos_++];
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = static_cast<std::uint16_t>(in_[pos_] | (in_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

std::size_t element_count(const std::vector<std::uint32_t>& dims) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

}  // namespace

std::vector<std::uint8_t> encode_container(std::span<const Record> records) {
  Writer w;
  w.bytes("VSRT");
  w.u16(kContainerVersion);
  w.u32(static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    if (r.name.size() > 0xFFFF) throw Error("record name too long: " + r.name.substr(0, 32));
    if (r.dims.size() > 0xFF) throw Error("record rank too large: " + r.name);
    if (element_count(r.dims) != r.values.size()) {
      throw DimensionError("encode_container", r.name, static_cast<long>(element_count(r.dims)),
                           static_cast<long>(r.values.size()));
    }
    w.u16(static_cast<std::uint16_t>(r.name.size()));
    w.bytes(r.name);
    w.u8(1);
    w.u8(static_cast<std::uint8_t>(r.dims.size()));
    for (auto d : r.dims) w.u32(d);
    for (float v : r.values) w.f32(v);
  }
  return w.take();
}

std::vector<Record> decode_container(std::span<const std::uint8_t> bytes) {
  Reader rd(bytes);
  if (rd.bytes(4, "magic") != "VSRT") throw ParseError("bad container magic", 0);
  const std::size_t version_at = rd.pos();
  const std::uint16_t version = rd.u16("version");
  if (version != kContainerVersion) {
    throw ParseError("unsupported container version " + std::to_string(version), version_at);
  }
  const std::uint32_t count = rd.u32("record count");
  std::vector<Record> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    Record r;
    const std::uint16_t len = rd.u16("name length");
    r.name = rd.bytes(len, "name");
    const std::size_t dtype_at = rd.pos();
    const std::uint8_t dtype = rd.u8("dtype");
    if (dtype != 1) throw ParseError("unsupported dtype " + std::to_string(dtype), dtype_at);
    const std::uint8_t rank = rd.u8("rank");
    for (int k = 0; k < rank; ++k) r.dims.push_back(rd.u32("dims"));
    const std::size_t n = element_count(r.dims);
    rd.need(n * 4, "payload");
    r.values.resize(n);
    for (std::size_t k = 0; k < n; ++k) r.values[k] = rd.f32("payload");
    out.push_back(std::move(r));
  }
  if (rd.pos() != bytes.size()) throw ParseError("trailing bytes after last record", rd.pos());
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_container(const std::filesystem::path& path, std::span<const Record> records) {
  write_file_bytes(path, encode_container(records));
}

std::vector<Record> read_container(const std::filesystem::path& path) {
  return decode_container(read_file_bytes(path));
}

Record tensor_record(std::string name, const TensorF& t) {
  const Shape s = t.shape();
  return Record{std::move(name),
                {static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c),
                 static_cast<std::uint32_t>(s.h), static_cast<std::uint32_t>(s.w)},
                t.storage()};
}

Record scalar_record(std::string name, double value) {
  return Record{std::move(name), {1}, {static_cast<float>(value)}};
}

Record u64_record(std::string name, std::uint64_t value) {
  Record r{std::move(name), {4}, {}};
  for (int i = 0; i < 4; ++i) r.values.push_back(static_cast<float>((value >> (16 * i)) & 0xFFFF));
  return r;
}

Record f64_record(std::string name, double value) {
  return u64_record(std::move(name), std::bit_cast<std::uint64_t>(value));
}

TensorF record_tensor(const Record& r) {
  if (r.dims.size() > 4) throw DimensionError("record_tensor", r.name, 4, static_cast<long>(r.dims.size()));
  int d[4] = {1, 1, 1, 1};
  const std::size_t pad = 4 - r.dims.size();
  for (std::size_t i = 0; i < r.dims.size(); ++i) d[pad + i] = static_cast<int>(r.dims[i]);
  return TensorF({d[0], d[1], d[2], d[3]}, r.values);
}

double record_scalar(const Record& r) {
  if (r.values.size() != 1) throw DimensionError("record_scalar", r.name, 1, static_cast<long>(r.values.size()));
  return r.values[0];
}

std::uint64_t record_u64(const Record& r) {
  if (r.values.size() != 4) throw DimensionError("record_u64", r.name, 4, static_cast<long>(r.values.size()));
  std::uint64_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint64_t>(r.values[i]) << (16 * i);
  return v;
}

double record_f64(const Record& r) { return std::bit_cast<double>(record_u64(r)); }

Record f64_array_record(std::string name, std::span<const double> values) {
  Record r{std::move(name), {static_cast<std::uint32_t>(values.size()), 4}, {}};
  r.values.reserve(values.size() * 4);
  for (double d : values) {
    const auto bits = std::bit_cast<std::uint64_t>(d);
    for (int i = 0; i < 4; ++i) r.values.push_back(static_cast<float>((bits >> (16 * i)) & 0xFFFF));
  }
  return r;
}

std::vector<double> record_f64_array(const Record& r) {
  if (r.values.size() % 4 != 0) {
    throw DimensionError("record_f64_array", r.name, 4, static_cast<long>(r.values.size() % 4));
  }
  std::vector<double> out(r.values.size() / 4);
  for (std::size_t j = 0; j < out.size(); ++j) {
    std::uint64_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint64_t>(r.values[4 * j + i]) << (16 * i);
    out[j] = std::bit_cast<double>(v);
  }
  return out;
}

const Record* try_find_record(std::span<const Record> records, const std::string& name) {
  for (const auto& r : records) {
    if (r.name == name) return &r;
  }
  return nullptr;
}

const Record& find_record(std::span<const Record> records, const std::string& name) {
  const Record* r = try_find_record(records, name);
  if (r == nullptr) throw Error("container has no record named '" + name + "'");
  return *r;
}

}  // namespace vsr
