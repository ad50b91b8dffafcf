#include "btts/model.hpp"

namespace btts {

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw ModelError(std::string("model config: ") + name + " must be positive");
  };
  positive(d_model, "d_model");
  positive(n_layers_enc, "n_layers_enc");
  positive(n_layers_dec, "n_layers_dec");
  positive(n_layers_ext, "n_layers_ext");
  positive(n_heads, "n_heads");
  positive(d_ff, "d_ff");
  positive(max_len, "max_len");
  if (d_model % n_heads != 0) {
    throw ModelError("model config: d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                     std::to_string(n_heads));
  }
  if (style_dim != d_model) throw ModelError("model config: style_dim must equal d_model");
  if (vocab_size < 5) throw ModelError("model config: vocab_size must be at least 5");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ModelError("model config: dropout must be in [0, 1)");
}

void check_sequence_length(const ModelConfig& cfg, std::size_t length, const char* what) {
  if (length == 0) throw ModelError(std::string(what) + " is empty");
  if (length > static_cast<std::size_t>(cfg.max_len)) {
    throw ModelError(std::string(what) + " length " + std::to_string(length) + " exceeds max_len " +
                     std::to_string(cfg.max_len));
  }
}

}  // namespace btts
