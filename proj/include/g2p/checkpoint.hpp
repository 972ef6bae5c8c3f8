#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "g2p/data.hpp"
#include "g2p/errors.hpp"
#include "g2p/model.hpp"

namespace g2p {

inline constexpr char kCheckpointMagic[8] = {'G', '2', 'P', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  int epoch = 0;
  double dev_wer = 0.0;
  double lr = 0.0;
};

struct Checkpoint {
  ParameterSet<float> params;
  Vocabulary graphemes;
  Vocabulary phonemes;
  CheckpointMeta meta;
};

namespace detail {

// Explicit little-endian byte IO; round-trips are bit-exact regardless of
// host conventions.
class ByteWriter {
 public:
  explicit ByteWriter(std::ostream& out) : out_(out) {}
  void u8(std::uint8_t v) { out_.put(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

 private:
  std::ostream& out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::istream& in) : in_(in) {}
  std::uint8_t u8() {
    int c = in_.get();
    if (c == EOF) fail(ErrorKind::parse, "truncated checkpoint");
    return static_cast<std::uint8_t>(c);
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    std::uint32_t n = u32();
    std::string s(n, '\0');
    in_.read(s.data(), static_cast<std::streamsize>(n));
    if (in_.gcount() != static_cast<std::streamsize>(n))
      fail(ErrorKind::parse, "truncated checkpoint");
    return s;
  }

 private:
  std::istream& in_;
};

}  // namespace detail

inline void save_checkpoint(const std::string& path, const ParameterSet<float>& params,
                            const Vocabulary& graphemes, const Vocabulary& phonemes,
                            const CheckpointMeta& meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::data, "cannot write checkpoint " + path);
  detail::ByteWriter w(out);
  out.write(kCheckpointMagic, 8);
  w.u32(kCheckpointVersion);

  const ModelConfig& c = params.config;
  w.str(to_string(c.encoder_mode));
  w.str(to_string(c.attention));
  w.i32(c.layers);
  w.i32(c.units);
  w.i32(c.embed_dim);
  w.i32(c.window);
  w.u8(c.input_feeding ? 1 : 0);
  w.f64(c.p_drop);
  w.u64(c.seed);

  auto write_vocab = [&](const Vocabulary& v) {
    w.u32(static_cast<std::uint32_t>(v.size()));
    for (const auto& s : v.symbols()) w.str(s);
  };
  write_vocab(graphemes);
  write_vocab(phonemes);

  auto named = params.named();
  w.u32(static_cast<std::uint32_t>(named.size()));
  for (const auto& [name, t] : named) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) w.i32(d);
    for (float v : t.data()) w.f32(v);
  }

  w.i32(meta.epoch);
  w.f64(meta.dev_wer);
  w.f64(meta.lr);
  if (!out) fail(ErrorKind::data, "write failed for checkpoint " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::data, "cannot open checkpoint " + path);
  detail::ByteReader r(in);
  char magic[8];
  in.read(magic, 8);
  if (in.gcount() != 8 || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    fail(ErrorKind::parse, path + " is not a checkpoint file");
  std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    fail(ErrorKind::parse, "unsupported checkpoint version " + std::to_string(version));

  ModelConfig c;
  c.encoder_mode = encoder_mode_from(r.str());
  c.attention = attention_from(r.str());
  c.layers = r.i32();
  c.units = r.i32();
  c.embed_dim = r.i32();
  c.window = r.i32();
  c.input_feeding = r.u8() != 0;
  c.p_drop = r.f64();
  c.seed = r.u64();

  auto read_vocab = [&]() {
    std::uint32_t n = r.u32();
    std::vector<std::string> symbols;
    symbols.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) symbols.push_back(r.str());
    return Vocabulary::from_id_order(std::move(symbols));
  };
  Checkpoint ck;
  ck.graphemes = read_vocab();
  ck.phonemes = read_vocab();
  ck.params = make_parameters<float>(c, ck.graphemes.size(), ck.phonemes.size());

  auto named = ck.params.named();
  std::uint32_t count = r.u32();
  if (count != named.size())
    fail(ErrorKind::parse, "checkpoint holds " + std::to_string(count) +
                               " tensors, model expects " +
                               std::to_string(named.size()));
  for (auto& [name, t] : named) {
    std::string got = r.str();
    if (got != name)
      fail(ErrorKind::parse, "checkpoint tensor '" + got + "' where '" + name +
                                 "' was expected");
    std::uint32_t rank = r.u32();
    std::vector<int> shape(rank);
    for (auto& d : shape) d = r.i32();
    if (shape != t.shape())
      fail(ErrorKind::parse, "checkpoint tensor " + name + " has shape " +
                                 detail::shape_str(shape) + ", expected " +
                                 detail::shape_str(t.shape()));
    for (auto& v : t.data()) v = r.f32();
  }

  ck.meta.epoch = r.i32();
  ck.meta.dev_wer = r.f64();
  ck.meta.lr = r.f64();
  return ck;
}

}  // namespace g2p
