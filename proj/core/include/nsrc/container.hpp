#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nsrc/arrays.hpp"

namespace nsrc::io {

// Self-describing binary container:
//   magic "NSRC" | u16 version | u32 record count |
//   per record: u32 name length, name bytes, u8 dtype, u32 rank,
//               u64 shape[rank], u64 payload offset, u64 payload length |
//   raw little-endian payloads at the stated offsets.
enum class DType : std::uint8_t { kF64 = 0, kC128 = 1, kU8 = 2, kI64 = 3 };

std::size_t dtype_size(DType d);

struct Record {
  std::string name;
  DType dtype = DType::kF64;
  std::vector<std::int64_t> shape;
  std::vector<unsigned char> raw;  // little-endian payload

  std::size_t numel() const;

  static Record f64(std::string name, std::vector<std::int64_t> shape,
                    const std::vector<double>& data);
  static Record c128(std::string name, std::vector<std::int64_t> shape,
                     const std::vector<cplx>& data);
  static Record u8(std::string name, std::vector<std::int64_t> shape,
                   const std::vector<std::uint8_t>& data);
  static Record i64(std::string name, std::vector<std::int64_t> shape,
                    const std::vector<std::int64_t>& data);
  static Record text(std::string name, const std::string& content);

  std::vector<double> as_f64() const;
  std::vector<cplx> as_c128() const;
  std::vector<std::uint8_t> as_u8() const;
  std::vector<std::int64_t> as_i64() const;
  std::string as_text() const;
};

struct Container {
  std::vector<Record> records;
  const Record* find(const std::string& name) const;
  const Record& get(const std::string& name) const;  // errors when missing
};

void write_container(const std::string& path, const Container& c);
Container read_container(const std::string& path);

}  // namespace nsrc::io
