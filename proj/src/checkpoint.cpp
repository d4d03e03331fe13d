#include "diffalign/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "diffalign/errors.hpp"

namespace diffalign {

namespace {

using nlohmann::json;

constexpr int kVersion = 1;

std::string encode_hex(const std::vector<double>& values) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  out.reserve(values.size() * 16);
  for (double v : values) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    for (int shift = 0; shift < 64; shift += 8) {
      unsigned byte = static_cast<unsigned>((bits >> shift) & 0xff);
      out.push_back(digits[byte >> 4]);
      out.push_back(digits[byte & 0xf]);
    }
  }
  return out;
}

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  throw CheckpointError("checkpoint: invalid hex character");
}

std::vector<double> decode_hex(const std::string& hex) {
  if (hex.size() % 16 != 0) throw CheckpointError("checkpoint: bad parameter hex length");
  std::vector<double> out(hex.size() / 16);
  for (size_t i = 0; i < out.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) {
      unsigned hi = static_cast<unsigned>(hex_value(hex[i * 16 + 2 * b]));
      unsigned lo = static_cast<unsigned>(hex_value(hex[i * 16 + 2 * b + 1]));
      bits |= static_cast<std::uint64_t>((hi << 4) | lo) << (8 * b);
    }
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    out[i] = v;
  }
  return out;
}

}  // namespace

Checkpoint Checkpoint::for_field(const ScalarFieldParams& params,
                                 const DiffusionSchedule& schedule, std::uint64_t seed) {
  Checkpoint c;
  c.kind = "scalar_field";
  c.seed = seed;
  c.schedule = schedule;
  c.field = params.config;
  c.flat = params.flat;
  return c;
}

Checkpoint Checkpoint::for_critic(const CriticParams& critic, const DiffusionSchedule& schedule,
                                  std::uint64_t seed) {
  Checkpoint c;
  c.kind = "critic";
  c.seed = seed;
  c.schedule = schedule;
  CriticParams arch = critic;
  arch.flat.clear();
  c.critic = arch;
  c.flat = critic.flat;
  return c;
}

ScalarFieldParams Checkpoint::to_field() const {
  if (kind != "scalar_field" || !field.has_value()) {
    throw CheckpointError("checkpoint: not a scalar_field checkpoint");
  }
  ScalarFieldParams p;
  p.config = *field;
  p.flat = flat;
  if (static_cast<long>(p.flat.size()) != layout_of(p.config).total) {
    throw CheckpointError("checkpoint: parameter count does not match architecture");
  }
  return p;
}

CriticParams Checkpoint::to_critic() const {
  if (kind != "critic" || !critic.has_value()) {
    throw CheckpointError("checkpoint: not a critic checkpoint");
  }
  CriticParams c = *critic;
  c.flat = flat;
  c.validate();
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  json j;
  j["format"] = "diffalign.checkpoint";
  j["version"] = kVersion;
  j["kind"] = ckpt.kind;
  j["endianness"] = "little";
  j["seed"] = ckpt.seed;
  j["schedule"] = {{"beta_min", ckpt.schedule.beta_min},
                   {"beta_max", ckpt.schedule.beta_max},
                   {"t_min", ckpt.schedule.t_min}};
  if (ckpt.field.has_value()) {
    const FieldConfig& f = *ckpt.field;
    j["field"] = {{"action_dim", f.action_dim},     {"state_dim", f.state_dim},
                  {"time_embed_dim", f.time_embed_dim}, {"width", f.width},
                  {"blocks", f.blocks},             {"dropout", f.dropout},
                  {"ln_eps", f.ln_eps}};
  }
  if (ckpt.critic.has_value()) {
    const CriticParams& c = *ckpt.critic;
    j["critic"] = {{"state_dim", c.state_dim},
                   {"action_dim", c.action_dim},
                   {"width", c.width},
                   {"hidden_layers", c.hidden_layers}};
  }
  j["params_hex"] = encode_hex(ckpt.flat);

  std::ofstream out(path);
  if (!out) throw InputError("cannot write checkpoint: " + path);
  out << j.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open checkpoint: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw CheckpointError("checkpoint: malformed JSON in " + path + ": " + e.what());
  }
  try {
    if (j.at("format") != "diffalign.checkpoint" || j.at("version") != kVersion) {
      throw CheckpointError("checkpoint: unsupported container in " + path);
    }
    Checkpoint c;
    c.kind = j.at("kind");
    c.seed = j.at("seed");
    c.schedule.beta_min = j.at("schedule").at("beta_min");
    c.schedule.beta_max = j.at("schedule").at("beta_max");
    c.schedule.t_min = j.at("schedule").at("t_min");
    if (j.contains("field")) {
      FieldConfig f;
      f.action_dim = j["field"].at("action_dim");
      f.state_dim = j["field"].at("state_dim");
      f.time_embed_dim = j["field"].at("time_embed_dim");
      f.width = j["field"].at("width");
      f.blocks = j["field"].at("blocks");
      f.dropout = j["field"].at("dropout");
      f.ln_eps = j["field"].at("ln_eps");
      c.field = f;
    }
    if (j.contains("critic")) {
      CriticParams cp;
      cp.state_dim = j["critic"].at("state_dim");
      cp.action_dim = j["critic"].at("action_dim");
      cp.width = j["critic"].at("width");
      cp.hidden_layers = j["critic"].at("hidden_layers");
      c.critic = cp;
    }
    c.flat = decode_hex(j.at("params_hex"));
    return c;
  } catch (const json::exception& e) {
    throw CheckpointError("checkpoint: missing fields in " + path + ": " + e.what());
  }
}

}  // namespace diffalign
