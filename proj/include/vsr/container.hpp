#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "vsr/tensor.hpp"

namespace vsr {

/// One named f32 array of the VSRT container.
///
/// Layout (little-endian): "VSRT", u16 version, u32 record count, then per
/// record: u16 name length, name bytes, u8 dtype (1 = f32), u8 rank,
/// u32 dims[rank], f32 payload[prod(dims)].
struct Record {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;
};

inline constexpr std::uint16_t kContainerVersion = 1;

std::vector<std::uint8_t> encode_container(std::span<const Record> records);
/// Throws ParseError with the byte offset of the failure.
std::vector<Record> decode_container(std::span<const std::uint8_t> bytes);

void write_container(const std::filesystem::path& path, std::span<const Record> records);
std::vector<Record> read_container(const std::filesystem::path& path);

/// Rank-4 record (n, c, h, w).
Record tensor_record(std::string name, const TensorF& t);
/// Rank-1 record of length 1.
Record scalar_record(std::string name, double value);
/// Exact 64-bit value split into four 16-bit chunks (each exact in f32).
Record u64_record(std::string name, std::uint64_t value);
Record f64_record(std::string name, double value);
/// Exact doubles, four chunks each; dims (len, 4).
Record f64_array_record(std::string name, std::span<const double> values);

/// Record dims padded on the left to rank 4.
TensorF record_tensor(const Record& r);
double record_scalar(const Record& r);
std::uint64_t record_u64(const Record& r);
double record_f64(const Record& r);
std::vector<double> record_f64_array(const Record& r);

const Record& find_record(std::span<const Record> records, const std::string& name);
const Record* try_find_record(std::span<const Record> records, const std::string& name);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
/// Writes via a temporary file and rename.
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace vsr
