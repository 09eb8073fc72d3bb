#pragma once

// Checkpoint container: u64 little-endian manifest length, the JSON manifest,
// then raw little-endian float32 payloads at the offsets listed in the
// manifest's tensor directory.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "wordpool/model.hpp"
#include "wordpool/optim.hpp"

namespace wordpool {

struct Checkpoint {
  ModelConfig config;
  std::vector<nn::Tensor<float>> tensors;  // model parameters in spec order
  std::vector<std::string> names;
  // Optimizer state, optional.
  bool has_optimizer = false;
  std::size_t optimizer_steps = 0;
  std::vector<std::vector<float>> adam_m;
  std::vector<std::vector<float>> adam_v;
  std::size_t epoch = 0;       // completed epochs
  std::size_t step = 0;        // global optimizer steps
  std::size_t epoch_step = 0;  // steps into the current epoch
  std::string rng_state;
  double loss_sum = 0.0;  // running train loss since the last log line
  std::size_t loss_count = 0;
  nlohmann::json experiment = nlohmann::json::object();
  nlohmann::json tokenizer = nlohmann::json::object();
};

inline Checkpoint make_checkpoint(const Model<float>& m) {
  Checkpoint c;
  c.config = m.config;
  for (const auto& p : m.params) {
    c.names.push_back(p.name);
    c.tensors.emplace_back(p.shape, std::vector<float>(p.value.begin(), p.value.end()));
  }
  return c;
}

inline void attach_optimizer(Checkpoint& c, AdamW<float>& opt) {
  c.has_optimizer = true;
  c.optimizer_steps = opt.steps();
  c.adam_m = opt.first_moments();
  c.adam_v = opt.second_moments();
}

/// Rebuilds the model described by a checkpoint. Names and shapes must match
/// the configuration exactly.
inline Model<float> restore_model(const Checkpoint& c) {
  Model<float> m(c.config, 0);
  if (m.params.size() != c.tensors.size()) throw DataError("checkpoint: tensor count does not match config");
  for (std::size_t i = 0; i < c.tensors.size(); ++i) {
    auto& p = m.params[i];
    if (p.name != c.names[i] || p.shape != c.tensors[i].shape) {
      throw DataError("checkpoint: tensor " + c.names[i] + " does not match config");
    }
    p.value.assign(c.tensors[i].data.begin(), c.tensors[i].data.end());
  }
  return m;
}

inline void restore_optimizer(const Checkpoint& c, AdamW<float>& opt) {
  if (!c.has_optimizer) throw DataError("checkpoint: no optimizer state");
  if (opt.first_moments().size() != c.adam_m.size()) throw DataError("checkpoint: optimizer state size mismatch");
  for (std::size_t i = 0; i < c.adam_m.size(); ++i) {
    if (opt.first_moments()[i].size() != c.adam_m[i].size()) throw DataError("checkpoint: optimizer tensor mismatch");
  }
  opt.first_moments() = c.adam_m;
  opt.second_moments() = c.adam_v;
  opt.set_steps(c.optimizer_steps);
}

namespace detail {

inline void append_f32(std::string& out, const std::vector<float>& v) {
  for (float f : v) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
  }
}

inline std::vector<float> read_f32(const std::string& payload, std::size_t offset, std::size_t count) {
  if (offset + count * 4 > payload.size()) throw DataError("checkpoint: tensor payload out of bounds");
  std::vector<float> v(count);
  for (std::size_t i = 0; i < count; ++i) {
    v[i] = nn::detail::get_f32(reinterpret_cast<const unsigned char*>(payload.data()) + offset + 4 * i);
  }
  return v;
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& c) {
  std::string payload;
  nlohmann::json dir = nlohmann::json::array();
  auto put = [&](const std::string& name, const nn::Shape& shape, const std::vector<float>& data) {
    if (!nn::all_finite<float>(data)) throw NonFiniteError("checkpoint: tensor " + name + " is not finite");
    dir.push_back({{"name", name},
                   {"shape", shape},
                   {"dtype", "f32"},
                   {"offset", payload.size()},
                   {"nbytes", data.size() * 4}});
    detail::append_f32(payload, data);
  };
  for (std::size_t i = 0; i < c.tensors.size(); ++i) put(c.names[i], c.tensors[i].shape, c.tensors[i].data);
  if (c.has_optimizer) {
    for (std::size_t i = 0; i < c.adam_m.size(); ++i) {
      put("adam.m/" + c.names[i], c.tensors[i].shape, c.adam_m[i]);
      put("adam.v/" + c.names[i], c.tensors[i].shape, c.adam_v[i]);
    }
  }
  nlohmann::json manifest{{"format", "wordpool-checkpoint"},
                          {"version", 1},
                          {"config", c.config.to_json()},
                          {"tensors", dir},
                          {"payload_bytes", payload.size()},
                          {"epoch", c.epoch},
                          {"step", c.step},
                          {"epoch_step", c.epoch_step},
                          {"rng_state", c.rng_state},
                          {"loss_sum", c.loss_sum},
                          {"loss_count", c.loss_count},
                          {"optimizer_steps", c.optimizer_steps},
                          {"has_optimizer", c.has_optimizer},
                          {"experiment", c.experiment},
                          {"tokenizer", c.tokenizer}};
  const std::string text = manifest.dump();
  std::string out;
  const std::uint64_t n = text.size();
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((n >> (8 * i)) & 0xFF));
  out += text;
  out += payload;
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < 8) throw DataError("checkpoint: truncated header");
  std::uint64_t n = 0;
  for (int i = 0; i < 8; ++i) n |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[i])) << (8 * i);
  if (8 + n > bytes.size()) throw DataError("checkpoint: manifest length exceeds file size");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(8, n));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: bad manifest: ") + e.what());
  }
  const std::string payload = bytes.substr(8 + n);
  if (manifest.at("payload_bytes").get<std::size_t>() != payload.size()) {
    throw DataError("checkpoint: payload length does not match manifest");
  }
  Checkpoint c;
  c.config = ModelConfig::from_json(manifest.at("config"));
  c.epoch = manifest.at("epoch");
  c.step = manifest.at("step");
  c.epoch_step = manifest.value("epoch_step", 0);
  c.rng_state = manifest.at("rng_state");
  c.loss_sum = manifest.value("loss_sum", 0.0);
  c.loss_count = manifest.value("loss_count", std::size_t{0});
  c.has_optimizer = manifest.at("has_optimizer");
  c.optimizer_steps = manifest.at("optimizer_steps");
  c.experiment = manifest.at("experiment");
  c.tokenizer = manifest.at("tokenizer");
  std::map<std::string, std::vector<float>> by_name;
  for (const auto& e : manifest.at("tensors")) {
    const auto shape = e.at("shape").get<nn::Shape>();
    const std::size_t count = nn::numel(shape);
    if (e.at("dtype") != "f32" || e.at("nbytes").get<std::size_t>() != count * 4) {
      throw DataError("checkpoint: bad tensor entry " + e.at("name").get<std::string>());
    }
    by_name[e.at("name")] = detail::read_f32(payload, e.at("offset"), count);
  }
  for (const auto& spec : param_specs(c.config)) {
    auto it = by_name.find(spec.name);
    if (it == by_name.end()) throw DataError("checkpoint: missing tensor " + spec.name);
    c.names.push_back(spec.name);
    c.tensors.emplace_back(spec.shape, std::move(it->second));
    if (c.has_optimizer) {
      auto m = by_name.find("adam.m/" + spec.name);
      auto v = by_name.find("adam.v/" + spec.name);
      if (m == by_name.end() || v == by_name.end()) throw DataError("checkpoint: missing optimizer state " + spec.name);
      c.adam_m.push_back(std::move(m->second));
      c.adam_v.push_back(std::move(v->second));
    }
  }
  for (const auto& t : c.tensors) {
    if (!nn::all_finite<float>(t.data)) throw DataError("checkpoint: non-finite tensor");
  }
  return c;
}

/// Writes to a sibling temporary file and renames it, so an interrupted write
/// never replaces the previous checkpoint.
inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(c);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw std::runtime_error("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_checkpoint(buf.str());
}

}  // namespace wordpool
