#include "nsrc/container.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

namespace nsrc::io {

static_assert(std::endian::native == std::endian::little,
              "container payloads are memcpy'd; a little-endian host is assumed");

namespace {

constexpr char kMagic[4] = {'N', 'S', 'R', 'C'};
constexpr std::uint16_t kVersion = 1;

template <typename T>
void put(std::vector<unsigned char>& out, T v) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  out.insert(out.end(), b, b + sizeof(T));
}

template <typename T>
T take(const std::vector<unsigned char>& in, std::size_t& pos, const char* what) {
  if (pos + sizeof(T) > in.size()) fail(std::string("container: truncated ") + what);
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

template <typename T>
std::vector<unsigned char> to_raw(const T* data, std::size_t n) {
  std::vector<unsigned char> raw(n * sizeof(T));
  std::memcpy(raw.data(), data, raw.size());
  return raw;
}

template <typename T>
std::vector<T> from_raw(const Record& r, DType want, const char* type_name) {
  if (r.dtype != want)
    fail("container: record '" + r.name + "' is not of type " + type_name);
  std::vector<T> out(r.raw.size() / sizeof(T));
  std::memcpy(out.data(), r.raw.data(), r.raw.size());
  return out;
}

}  // namespace

std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::kF64: return 8;
    case DType::kC128: return 16;
    case DType::kU8: return 1;
    case DType::kI64: return 8;
  }
  fail("container: unknown dtype");
}

std::size_t Record::numel() const {
  std::size_t n = 1;
  for (auto s : shape) {
    require(s >= 0, "container: negative dimension in record '" + name + "'");
    n *= static_cast<std::size_t>(s);
  }
  return n;
}

Record Record::f64(std::string name, std::vector<std::int64_t> shape,
                   const std::vector<double>& data) {
  Record r{std::move(name), DType::kF64, std::move(shape), to_raw(data.data(), data.size())};
  require(r.numel() == data.size(), "container: record '" + r.name + "' shape/size mismatch");
  return r;
}

Record Record::c128(std::string name, std::vector<std::int64_t> shape,
                    const std::vector<cplx>& data) {
  Record r{std::move(name), DType::kC128, std::move(shape), to_raw(data.data(), data.size())};
  require(r.numel() == data.size(), "container: record '" + r.name + "' shape/size mismatch");
  return r;
}

Record Record::u8(std::string name, std::vector<std::int64_t> shape,
                  const std::vector<std::uint8_t>& data) {
  Record r{std::move(name), DType::kU8, std::move(shape), to_raw(data.data(), data.size())};
  require(r.numel() == data.size(), "container: record '" + r.name + "' shape/size mismatch");
  return r;
}

Record Record::i64(std::string name, std::vector<std::int64_t> shape,
                   const std::vector<std::int64_t>& data) {
  Record r{std::move(name), DType::kI64, std::move(shape), to_raw(data.data(), data.size())};
  require(r.numel() == data.size(), "container: record '" + r.name + "' shape/size mismatch");
  return r;
}

Record Record::text(std::string name, const std::string& content) {
  std::vector<std::uint8_t> bytes(content.begin(), content.end());
  return u8(std::move(name), {static_cast<std::int64_t>(bytes.size())}, bytes);
}

std::vector<double> Record::as_f64() const { return from_raw<double>(*this, DType::kF64, "f64"); }
std::vector<cplx> Record::as_c128() const { return from_raw<cplx>(*this, DType::kC128, "c128"); }
std::vector<std::uint8_t> Record::as_u8() const {
  return from_raw<std::uint8_t>(*this, DType::kU8, "u8");
}
std::vector<std::int64_t> Record::as_i64() const {
  return from_raw<std::int64_t>(*this, DType::kI64, "i64");
}
std::string Record::as_text() const {
  if (dtype != DType::kU8) fail("container: record '" + name + "' is not text (u8)");
  return std::string(raw.begin(), raw.end());
}

const Record* Container::find(const std::string& name) const {
  for (const auto& r : records)
    if (r.name == name) return &r;
  return nullptr;
}

const Record& Container::get(const std::string& name) const {
  const Record* r = find(name);
  if (!r) fail("container: missing record '" + name + "'");
  return *r;
}

void write_container(const std::string& path, const Container& c) {
  // Header first, then payloads at sequentially assigned offsets.
  std::vector<unsigned char> header;
  header.insert(header.end(), kMagic, kMagic + 4);
  put<std::uint16_t>(header, kVersion);
  put<std::uint32_t>(header, static_cast<std::uint32_t>(c.records.size()));

  std::size_t header_size = header.size();
  for (const auto& r : c.records) {
    header_size += 4 + r.name.size() + 1 + 4 + 8 * r.shape.size() + 8 + 8;
  }

  std::size_t offset = header_size;
  for (const auto& r : c.records) {
    require(r.raw.size() == r.numel() * dtype_size(r.dtype),
            "container: record '" + r.name + "' length does not match shape");
    put<std::uint32_t>(header, static_cast<std::uint32_t>(r.name.size()));
    header.insert(header.end(), r.name.begin(), r.name.end());
    put<std::uint8_t>(header, static_cast<std::uint8_t>(r.dtype));
    put<std::uint32_t>(header, static_cast<std::uint32_t>(r.shape.size()));
    for (auto s : r.shape) put<std::uint64_t>(header, static_cast<std::uint64_t>(s));
    put<std::uint64_t>(header, offset);
    put<std::uint64_t>(header, r.raw.size());
    offset += r.raw.size();
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail("container: cannot open '" + path + "' for writing");
  f.write(reinterpret_cast<const char*>(header.data()),
          static_cast<std::streamsize>(header.size()));
  for (const auto& r : c.records)
    f.write(reinterpret_cast<const char*>(r.raw.data()),
            static_cast<std::streamsize>(r.raw.size()));
  if (!f) fail("container: write to '" + path + "' failed");
}

Container read_container(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail("container: cannot open '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());

  std::size_t pos = 0;
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    fail("container: '" + path + "' has bad magic (not an NSRC file)");
  pos = 4;
  const auto version = take<std::uint16_t>(bytes, pos, "version");
  if (version != kVersion)
    fail("container: unsupported format version " + std::to_string(version));
  const auto count = take<std::uint32_t>(bytes, pos, "record count");

  struct Entry {
    Record rec;
    std::uint64_t offset = 0, length = 0;
  };
  std::vector<Entry> entries(count);
  for (auto& e : entries) {
    const auto name_len = take<std::uint32_t>(bytes, pos, "record name length");
    if (pos + name_len > bytes.size()) fail("container: truncated record name");
    e.rec.name.assign(bytes.begin() + pos, bytes.begin() + pos + name_len);
    pos += name_len;
    const auto dt = take<std::uint8_t>(bytes, pos, "dtype");
    if (dt > 3) fail("container: record '" + e.rec.name + "' has unknown dtype");
    e.rec.dtype = static_cast<DType>(dt);
    const auto rank = take<std::uint32_t>(bytes, pos, "rank");
    e.rec.shape.resize(rank);
    for (auto& s : e.rec.shape)
      s = static_cast<std::int64_t>(take<std::uint64_t>(bytes, pos, "shape"));
    e.offset = take<std::uint64_t>(bytes, pos, "offset");
    e.length = take<std::uint64_t>(bytes, pos, "length");
  }

  // Validate lengths, bounds and non-overlap.
  std::vector<std::pair<std::uint64_t, std::uint64_t>> spans;
  for (auto& e : entries) {
    const std::uint64_t expect = e.rec.numel() * dtype_size(e.rec.dtype);
    if (e.length != expect)
      fail("container: record '" + e.rec.name + "' declares " + std::to_string(e.length) +
           " bytes but its shape implies " + std::to_string(expect));
    if (e.offset < pos || e.offset + e.length > bytes.size())
      fail("container: record '" + e.rec.name + "' extends past end of file (truncated?)");
    spans.emplace_back(e.offset, e.offset + e.length);
  }
  std::sort(spans.begin(), spans.end());
  for (std::size_t i = 1; i < spans.size(); ++i)
    if (spans[i].first < spans[i - 1].second)
      fail("container: overlapping record payloads in '" + path + "'");

  Container c;
  for (auto& e : entries) {
    e.rec.raw.assign(bytes.begin() + e.offset, bytes.begin() + e.offset + e.length);
    c.records.push_back(std::move(e.rec));
  }
  return c;
}

}  // namespace nsrc::io
