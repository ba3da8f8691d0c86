#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "icanet/nn/layers.hpp"

namespace icanet::engine {

inline constexpr char kCheckpointMagic[4] = {'I', 'C', 'A', 'N'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// One named record: four extents and raw 32-bit values (floats, or integers
/// stored bit-for-bit in the same slots).
struct Record {
  std::string name;
  Shape shape;
  std::vector<std::uint32_t> bits;

  static Record from_floats(std::string name, Shape s, std::span<const float> v) {
    Record r{std::move(name), s, std::vector<std::uint32_t>(v.size())};
    for (std::size_t i = 0; i < v.size(); ++i) r.bits[i] = std::bit_cast<std::uint32_t>(v[i]);
    return r;
  }
  template <Real T>
  static Record from_tensor(std::string name, const Tensor<T>& t) {
    std::vector<float> f(t.numel());
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = static_cast<float>(t[i]);
    return from_floats(std::move(name), t.shape(), f);
  }
  static Record from_words(std::string name, std::vector<std::uint32_t> words) {
    Shape s{1, 1, 1, words.size()};
    return {std::move(name), s, std::move(words)};
  }

  [[nodiscard]] std::vector<float> floats() const {
    std::vector<float> f(bits.size());
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = std::bit_cast<float>(bits[i]);
    return f;
  }
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<unsigned char>& b) : b_(b) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(b_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint16_t u16() {
    need(2);
    const auto v = static_cast<std::uint16_t>(b_[pos_] | (b_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  [[nodiscard]] bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw CheckpointError("checkpoint: truncated data");
  }
  const std::vector<unsigned char>& b_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<unsigned char> encode_checkpoint(const std::vector<Record>& records) {
  std::vector<unsigned char> out(kCheckpointMagic, kCheckpointMagic + 4);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    if (r.name.size() > 0xFFFF) throw CheckpointError("checkpoint: name too long: " + r.name.substr(0, 64));
    if (r.shape.numel() != r.bits.size()) throw CheckpointError("checkpoint: record " + r.name + " has inconsistent size");
    out.push_back(static_cast<unsigned char>(r.name.size() & 0xFF));
    out.push_back(static_cast<unsigned char>(r.name.size() >> 8));
    out.insert(out.end(), r.name.begin(), r.name.end());
    for (std::size_t d : {r.shape.n, r.shape.c, r.shape.h, r.shape.w}) {
      if (d > 0xFFFFFFFFu) throw CheckpointError("checkpoint: extent overflow in " + r.name);
      detail::put_u32(out, static_cast<std::uint32_t>(d));
    }
    for (std::uint32_t v : r.bits) detail::put_u32(out, v);
  }
  return out;
}

inline std::vector<Record> decode_checkpoint(const std::vector<unsigned char>& bytes) {
  detail::Reader rd(bytes);
  if (rd.bytes(4) != std::string(kCheckpointMagic, 4)) throw CheckpointError("checkpoint: bad magic");
  const std::uint32_t version = rd.u32();
  if (version != kCheckpointVersion) throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  const std::uint32_t count = rd.u32();
  std::vector<Record> out;
  for (std::uint32_t k = 0; k < count; ++k) {
    Record r;
    r.name = rd.bytes(rd.u16());
    r.shape.n = rd.u32();
    r.shape.c = rd.u32();
    r.shape.h = rd.u32();
    r.shape.w = rd.u32();
    const std::size_t n = r.shape.numel();
    if (n > bytes.size()) throw CheckpointError("checkpoint: record " + r.name + " larger than file");
    r.bits.resize(n);
    for (auto& v : r.bits) v = rd.u32();
    out.push_back(std::move(r));
  }
  if (!rd.done()) throw CheckpointError("checkpoint: trailing bytes");
  return out;
}

inline void write_checkpoint(const std::string& path, const std::vector<Record>& records) {
  const auto bytes = encode_checkpoint(records);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot write checkpoint " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!f) throw CheckpointError("write failed: " + path);
}

inline std::vector<unsigned char> read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint " + path);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline std::vector<Record> read_checkpoint(const std::string& path) { return decode_checkpoint(read_bytes(path)); }

inline const Record& find_record(const std::vector<Record>& recs, const std::string& name) {
  for (const auto& r : recs)
    if (r.name == name) return r;
  throw CheckpointError("checkpoint: missing record " + name);
}

inline const Record* try_find_record(const std::vector<Record>& recs, const std::string& name) {
  for (const auto& r : recs)
    if (r.name == name) return &r;
  return nullptr;
}

/// UTF-8 text packed into 32-bit words: byte count first, then little-endian bytes.
inline Record text_record(std::string name, const std::string& text) {
  std::vector<std::uint32_t> words{static_cast<std::uint32_t>(text.size())};
  for (std::size_t i = 0; i < text.size(); i += 4) {
    std::uint32_t w = 0;
    for (std::size_t k = 0; k < 4 && i + k < text.size(); ++k) w |= std::uint32_t(static_cast<unsigned char>(text[i + k])) << (8 * k);
    words.push_back(w);
  }
  return Record::from_words(std::move(name), std::move(words));
}

inline std::string record_text(const Record& r) {
  if (r.bits.empty()) throw CheckpointError("checkpoint: empty text record " + r.name);
  const std::size_t n = r.bits[0];
  if ((n + 3) / 4 != r.bits.size() - 1) throw CheckpointError("checkpoint: malformed text record " + r.name);
  std::string s(n, '\0');
  for (std::size_t i = 0; i < n; ++i) s[i] = static_cast<char>((r.bits[1 + i / 4] >> (8 * (i % 4))) & 0xFF);
  return s;
}

/// Parameters and buffers of a registry, in registry order.
template <Real T>
std::vector<Record> registry_records(const nn::ParamRegistry<T>& reg) {
  std::vector<Record> out;
  for (const auto& p : reg.params) out.push_back(Record::from_tensor(p.name, *p.tensor));
  for (const auto& b : reg.buffers) out.push_back(Record::from_tensor(b.name, *b.tensor));
  return out;
}

/// Fills every parameter and buffer of `reg` from matching records; all must be present.
template <Real T>
void load_registry(nn::ParamRegistry<T>& reg, const std::vector<Record>& recs) {
  auto fill = [&](auto& refs) {
    for (auto& p : refs) {
      const Record& r = find_record(recs, p.name);
      if (r.shape != p.tensor->shape()) {
        throw CheckpointError("checkpoint: " + p.name + " has shape " + r.shape.str() + ", expected " +
                              p.tensor->shape().str());
      }
      const auto f = r.floats();
      for (std::size_t i = 0; i < f.size(); ++i) (*p.tensor)[i] = static_cast<T>(f[i]);
    }
  };
  fill(reg.params);
  fill(reg.buffers);
}

}  // namespace icanet::engine
