#include "btts/checkpoint.hpp"

#include "btts/io.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cstring>

namespace btts {

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void bytes(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.append(s);
  }
  void raw(std::string_view s) { out_.append(s); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}
  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
  std::uint32_t u32() {
    auto s = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[static_cast<std::size_t>(i)])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    auto s = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[static_cast<std::size_t>(i)])) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string bytes() { return std::string(take(u32())); }
  std::string_view take(std::size_t n) {
    if (pos_ + n > in_.size()) throw CheckpointError("checkpoint truncated");
    auto s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::string_view in_;
  std::size_t pos_ = 0;
};

constexpr std::string_view kMagic = "BTTSCKPT";

}  // namespace

std::string model_config_to_json(const ModelConfig& cfg) {
  nlohmann::ordered_json j;
  j["d_model"] = cfg.d_model;
  j["n_layers_enc"] = cfg.n_layers_enc;
  j["n_layers_dec"] = cfg.n_layers_dec;
  j["n_layers_ext"] = cfg.n_layers_ext;
  j["n_heads"] = cfg.n_heads;
  j["d_ff"] = cfg.d_ff;
  j["vocab_size"] = cfg.vocab_size;
  j["max_len"] = cfg.max_len;
  j["dropout"] = cfg.dropout;
  j["style_dim"] = cfg.style_dim;
  return j.dump();
}

ModelConfig model_config_from_json(std::string_view text) {
  try {
    auto j = nlohmann::json::parse(text);
    ModelConfig cfg;
    cfg.d_model = j.at("d_model").get<int>();
    cfg.n_layers_enc = j.at("n_layers_enc").get<int>();
    cfg.n_layers_dec = j.at("n_layers_dec").get<int>();
    cfg.n_layers_ext = j.at("n_layers_ext").get<int>();
    cfg.n_heads = j.at("n_heads").get<int>();
    cfg.d_ff = j.at("d_ff").get<int>();
    cfg.vocab_size = j.at("vocab_size").get<int>();
    cfg.max_len = j.at("max_len").get<int>();
    cfg.dropout = j.at("dropout").get<double>();
    cfg.style_dim = j.at("style_dim").get<int>();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint model config: ") + e.what());
  }
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  if (static_cast<std::size_t>(ckpt.params.config.vocab_size) != ckpt.vocab.size()) {
    throw CheckpointError("checkpoint: vocabulary size does not match the model config");
  }
  Writer w;
  w.raw(kMagic);
  w.u32(kCheckpointVersion);
  w.bytes(model_config_to_json(ckpt.params.config));
  w.u8(ckpt.vocab.has_rate_tokens() ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(ckpt.vocab.regular_count()));
  for (std::size_t i = 0; i < ckpt.vocab.regular_count(); ++i)
    w.bytes(ckpt.vocab.tokens()[Vocab::kFirstRegular + i]);
  std::uint32_t n_tensors = 0;
  visit_tensors(ckpt.params, [&](const std::string&, const MatrixXr&) { ++n_tensors; });
  w.u32(n_tensors);
  visit_tensors(ckpt.params, [&](const std::string& name, const MatrixXr& t) {
    w.bytes(name);
    w.u32(2);
    w.u32(static_cast<std::uint32_t>(t.rows()));
    w.u32(static_cast<std::uint32_t>(t.cols()));
    for (Eigen::Index i = 0; i < t.size(); ++i) w.f32(static_cast<float>(t.data()[i]));
  });
  w.u64(ckpt.step);
  w.bytes(ckpt.rng_state);
  return w.take();
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(kMagic.size()) != kMagic) throw CheckpointError("not a checkpoint file (bad magic)");
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  ModelConfig cfg = model_config_from_json(r.bytes());
  const bool rate_tokens = r.u8() != 0;
  std::vector<std::string> regular(r.u32());
  for (auto& tok : regular) tok = r.bytes();
  Checkpoint ckpt;
  ckpt.vocab = Vocab(std::move(regular), rate_tokens);
  try {
    ckpt.params = zero_model<double>(cfg);
  } catch (const ModelError& e) {
    throw CheckpointError(std::string("checkpoint: ") + e.what());
  }
  if (ckpt.vocab.size() != static_cast<std::size_t>(cfg.vocab_size)) {
    throw CheckpointError("checkpoint: vocabulary size does not match the model config");
  }
  const auto n_tensors = r.u32();
  std::uint32_t seen = 0;
  visit_tensors(ckpt.params, [&](const std::string& name, MatrixXr& t) {
    if (seen++ >= n_tensors) throw CheckpointError("checkpoint: missing tensor " + name);
    const auto stored = r.bytes();
    if (stored != name) throw CheckpointError("checkpoint: expected tensor " + name + ", found " + stored);
    const auto rank = r.u32();
    const auto rows = r.u32();
    const auto cols = r.u32();
    if (rank != 2 || rows != t.rows() || cols != t.cols()) {
      throw CheckpointError("checkpoint: shape mismatch for " + name);
    }
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<double>(r.f32());
  });
  if (seen != n_tensors) throw CheckpointError("checkpoint: unexpected extra tensors");
  ckpt.step = r.u64();
  ckpt.rng_state = r.bytes();
  if (!r.done()) throw CheckpointError("checkpoint: trailing bytes");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file_atomic(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return deserialize_checkpoint(read_file(path));
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

}  // namespace btts
