#include "btts/run_config.hpp"

#include "btts/io.hpp"

#include <charconv>
#include <cstdio>
#include <set>
#include <sstream>

namespace btts {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string fmt_double(double v) {
  // shortest text that parses back to the same double
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw ConfigError("expected a number, got '" + s + "'");
  }
  if (used != s.size()) throw ConfigError("expected a number, got '" + s + "'");
  return v;
}

template <typename Int>
Int parse_int(const std::string& s) {
  Int v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ConfigError("expected an integer, got '" + s + "'");
  return v;
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError("expected a boolean, got '" + s + "'");
}

std::string section_name(ConfigSection s) {
  switch (s) {
    case ConfigSection::kModel:
      return "model";
    case ConfigSection::kTraining:
      return "training";
    case ConfigSection::kLoss:
      return "loss";
    case ConfigSection::kCorruption:
      return "corruption";
    case ConfigSection::kData:
      return "data";
    case ConfigSection::kInference:
      return "inference";
    case ConfigSection::kJudge:
      return "judge";
  }
  return "";
}

template <typename T, typename Member>
ConfigField int_field(ConfigSection sec, const std::string& name, std::string help, Member member) {
  return {section_name(sec) + "." + name, sec, std::move(help),
          [member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); },
          [member](RunConfig& c, const std::string& v) { member(c) = parse_int<T>(v); }};
}

template <typename Member>
ConfigField double_field(ConfigSection sec, const std::string& name, std::string help, Member member) {
  return {section_name(sec) + "." + name, sec, std::move(help),
          [member](const RunConfig& c) { return fmt_double(member(const_cast<RunConfig&>(c))); },
          [member](RunConfig& c, const std::string& v) { member(c) = parse_double(v); }};
}

template <typename Member>
ConfigField string_field(ConfigSection sec, const std::string& name, std::string help, Member member) {
  return {section_name(sec) + "." + name, sec, std::move(help),
          [member](const RunConfig& c) { return member(const_cast<RunConfig&>(c)); },
          [member](RunConfig& c, const std::string& v) { member(c) = v; }};
}

// Escapes newlines and backslashes so multi-line prompt templates fit on one line.
std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '\\') out += "\\\\";
    else if (c == '\n') out += "\\n";
    else out += c;
  }
  return out;
}

std::string unescape(const std::string& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\\' && i + 1 < s.size()) {
      const char n = s[++i];
      out += n == 'n' ? '\n' : n;
    } else {
      out += s[i];
    }
  }
  return out;
}

std::vector<ConfigField> make_fields() {
  using S = ConfigSection;
  std::vector<ConfigField> f;
  f.push_back(int_field<int>(S::kModel, "d_model", "model width", [](RunConfig& c) -> int& { return c.model.d_model; }));
  f.push_back(int_field<int>(S::kModel, "n_layers_enc", "encoder layers", [](RunConfig& c) -> int& { return c.model.n_layers_enc; }));
  f.push_back(int_field<int>(S::kModel, "n_layers_dec", "decoder layers", [](RunConfig& c) -> int& { return c.model.n_layers_dec; }));
  f.push_back(int_field<int>(S::kModel, "n_layers_ext", "extractor layers", [](RunConfig& c) -> int& { return c.model.n_layers_ext; }));
  f.push_back(int_field<int>(S::kModel, "n_heads", "attention heads", [](RunConfig& c) -> int& { return c.model.n_heads; }));
  f.push_back(int_field<int>(S::kModel, "d_ff", "feed-forward width", [](RunConfig& c) -> int& { return c.model.d_ff; }));
  f.push_back(int_field<int>(S::kModel, "max_len", "longest sequence", [](RunConfig& c) -> int& { return c.model.max_len; }));
  f.push_back(double_field(S::kModel, "dropout", "dropout rate", [](RunConfig& c) -> double& { return c.model.dropout; }));
  f.push_back(int_field<int>(S::kModel, "style_dim", "style vector width (equals d_model)", [](RunConfig& c) -> int& { return c.model.style_dim; }));

  f.push_back(double_field(S::kTraining, "lr", "Adam learning rate", [](RunConfig& c) -> double& { return c.train.lr; }));
  f.push_back(double_field(S::kTraining, "adam_beta1", "Adam beta1", [](RunConfig& c) -> double& { return c.train.adam_beta1; }));
  f.push_back(double_field(S::kTraining, "adam_beta2", "Adam beta2", [](RunConfig& c) -> double& { return c.train.adam_beta2; }));
  f.push_back(double_field(S::kTraining, "adam_eps", "Adam epsilon", [](RunConfig& c) -> double& { return c.train.adam_eps; }));
  f.push_back(int_field<int>(S::kTraining, "batch_size", "pairs per step", [](RunConfig& c) -> int& { return c.train.batch_size; }));
  f.push_back(int_field<int>(S::kTraining, "steps", "optimizer steps", [](RunConfig& c) -> int& { return c.train.steps; }));
  f.push_back(int_field<std::uint64_t>(S::kTraining, "seed", "random seed", [](RunConfig& c) -> std::uint64_t& { return c.train.seed; }));
  f.push_back(int_field<int>(S::kTraining, "checkpoint_every", "steps between checkpoints", [](RunConfig& c) -> int& { return c.train.checkpoint_every; }));
  f.push_back(int_field<int>(S::kTraining, "group_size", "consecutive same-document pairs per run", [](RunConfig& c) -> int& { return c.train.group_size; }));

  f.push_back(double_field(S::kLoss, "lambda", "contrastive loss weight", [](RunConfig& c) -> double& { return c.train.loss.lambda; }));
  f.push_back({"loss.bt_level", S::kLoss, "sentence, paragraph or both",
               [](const RunConfig& c) { return std::string(to_string(c.train.loss.bt_level)); },
               [](RunConfig& c, const std::string& v) {
                 try {
                   c.train.loss.bt_level = parse_bt_level(v);
                 } catch (const LossError& e) {
                   throw ConfigError(e.what());
                 }
               }});
  f.push_back(double_field(S::kLoss, "delta", "off-diagonal weight", [](RunConfig& c) -> double& { return c.train.bt.delta; }));
  f.push_back(double_field(S::kLoss, "eps", "variance floor", [](RunConfig& c) -> double& { return c.train.bt.eps; }));

  f.push_back(double_field(S::kCorruption, "drop_min", "lowest token drop rate", [](RunConfig& c) -> double& { return c.train.corruption.drop_rate_range.lo; }));
  f.push_back(double_field(S::kCorruption, "drop_max", "highest token drop rate", [](RunConfig& c) -> double& { return c.train.corruption.drop_rate_range.hi; }));
  f.push_back(double_field(S::kCorruption, "replace_min", "lowest token replace rate", [](RunConfig& c) -> double& { return c.train.corruption.replace_rate_range.lo; }));
  f.push_back(double_field(S::kCorruption, "replace_max", "highest token replace rate", [](RunConfig& c) -> double& { return c.train.corruption.replace_rate_range.hi; }));
  f.push_back({"corruption.emit_rate_tokens", S::kCorruption, "prepend rate control tokens to the decoder input",
               [](const RunConfig& c) { return std::string(c.train.corruption.emit_rate_tokens ? "true" : "false"); },
               [](RunConfig& c, const std::string& v) { c.train.corruption.emit_rate_tokens = parse_bool(v); }});

  f.push_back(int_field<std::size_t>(S::kData, "min_freq", "minimum token count for the vocabulary", [](RunConfig& c) -> std::size_t& { return c.min_freq; }));

  f.push_back(double_field(S::kInference, "beta", "restyling strength", [](RunConfig& c) -> double& { return c.inference.beta; }));
  f.push_back({"inference.decode", S::kInference, "greedy or beam",
               [](const RunConfig& c) { return std::string(to_string(c.inference.decode.mode)); },
               [](RunConfig& c, const std::string& v) {
                 try {
                   c.inference.decode.mode = parse_decode_mode(v);
                 } catch (const std::exception& e) {
                   throw ConfigError(e.what());
                 }
               }});
  f.push_back(int_field<int>(S::kInference, "beam_width", "beam width", [](RunConfig& c) -> int& { return c.inference.decode.beam_width; }));
  f.push_back(int_field<int>(S::kInference, "max_new_tokens", "generation budget", [](RunConfig& c) -> int& { return c.inference.decode.max_new_tokens; }));

  f.push_back(string_field(S::kJudge, "base_url", "chat completions base URL", [](RunConfig& c) -> std::string& { return c.judge.base_url; }));
  f.push_back(string_field(S::kJudge, "model_name", "judge model", [](RunConfig& c) -> std::string& { return c.judge.model_name; }));
  f.push_back(int_field<int>(S::kJudge, "max_in_flight", "concurrent requests", [](RunConfig& c) -> int& { return c.judge.max_in_flight; }));
  f.push_back(int_field<int>(S::kJudge, "max_retries", "retries per request", [](RunConfig& c) -> int& { return c.judge.max_retries; }));
  f.push_back(double_field(S::kJudge, "timeout_s", "request timeout in seconds", [](RunConfig& c) -> double& { return c.judge.timeout_s; }));
  f.push_back({"judge.system_prompt", S::kJudge, "system message",
               [](const RunConfig& c) { return escape(c.judge.system_prompt); },
               [](RunConfig& c, const std::string& v) { c.judge.system_prompt = unescape(v); }});
  f.push_back({"judge.prompt_template", S::kJudge, "user message with {{styles}} and {{text}}",
               [](const RunConfig& c) { return escape(c.judge.prompt_template); },
               [](RunConfig& c, const std::string& v) { c.judge.prompt_template = unescape(v); }});
  return f;
}

}  // namespace

const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = make_fields();
  return fields;
}

const ConfigField& config_field(std::string_view key) {
  for (const auto& f : config_fields())
    if (f.key == key) return f;
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

void set_config_value(RunConfig& cfg, std::string_view key, const std::string& value) {
  const auto& f = config_field(key);
  try {
    f.set(cfg, value);
  } catch (const ConfigError& e) {
    throw ConfigError(f.key + ": " + e.what());
  }
}

void apply_config_text(RunConfig& cfg, std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string section;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  for (std::string raw; std::getline(in, raw);) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    const auto where = "config line " + std::to_string(line_no) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      bool known = false;
      for (const auto& f : config_fields()) known = known || f.key.rfind(section + ".", 0) == 0;
      if (!known) throw ConfigError(where + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!section.empty() && key.find('.') == std::string::npos) key = section + "." + key;
    if (!seen.insert(key).second) throw ConfigError(where + "duplicate key '" + key + "'");
    try {
      set_config_value(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
}

void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) { apply_config_text(cfg, read_file(path)); }

std::string to_config_text(const RunConfig& cfg) {
  std::string out;
  std::string section;
  for (const auto& f : config_fields()) {
    const auto dot = f.key.find('.');
    const auto sec = f.key.substr(0, dot);
    if (sec != section) {
      out += (section.empty() ? "[" : "\n[") + sec + "]\n";
      section = sec;
    }
    out += f.key.substr(dot + 1) + " = " + f.get(cfg) + "\n";
  }
  return out;
}

void validate(const RunConfig& cfg) {
  try {
    ModelConfig m = cfg.model;
    if (m.vocab_size == 0) m.vocab_size = 5;  // filled from the corpus later
    m.validate();
    cfg.train.validate();
    cfg.inference.validate();
    cfg.judge.validate();
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  if (cfg.min_freq < 1) throw ConfigError("data.min_freq must be at least 1");
}

}  // namespace btts
