#include "mact/checkpoint.hpp"

#include <cstring>

#include <json.hpp>

#include "mact/io_util.hpp"

namespace mact {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'M', 'A', 'C', 'T', 'C', 'K', 'P', '1'};

void append_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t read_u64_le(const std::string& buf, size_t off) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[off + i])) << (8 * i);
  }
  return v;
}

template <typename T>
void append_value_le(std::string& out, T v) {
  static_assert(sizeof(T) == 4 || sizeof(T) == 8);
  // Build guaranteed little-endian output regardless of host order.
  if constexpr (sizeof(T) == 8) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  } else {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
}

double read_f64_le(const std::string& buf, size_t off) {
  std::uint64_t bits = read_u64_le(buf, off);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

float read_f32_le(const std::string& buf, size_t off) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) {
    bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[off + i])) << (8 * i);
  }
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model, Precision dtype,
                     const std::string& meta_json) {
  const char* dtype_name = dtype == Precision::f64 ? "f64" : "f32";
  const size_t elem = dtype == Precision::f64 ? 8 : 4;

  json params = json::array();
  std::string payload;
  std::uint64_t offset = 0;
  for (const Parameter& p : model.params().all()) {
    params.push_back({{"name", p.name},
                      {"shape", p.shape},
                      {"dtype", dtype_name},
                      {"offset", offset},
                      {"trainable", p.trainable}});
    for (double v : p.value) {
      if (dtype == Precision::f64) {
        append_value_le(payload, v);
      } else {
        append_value_le(payload, static_cast<float>(v));
      }
    }
    offset += static_cast<std::uint64_t>(p.value.size()) * elem;
  }

  json header;
  header["config"] = json::parse(model_config_to_json(model.config()));
  header["meta"] = json::parse(meta_json);
  header["params"] = std::move(params);
  const std::string header_str = header.dump();

  std::string out;
  out.append(kMagic, sizeof(kMagic));
  append_u64_le(out, header_str.size());
  out += header_str;
  out += payload;
  atomic_write_file(path, out);
}

CheckpointedModel load_checkpoint(const std::string& path) {
  const std::string buf = read_file(path);
  if (buf.size() < 16 || std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) {
    throw parse_error("checkpoint: bad magic in " + path);
  }
  const std::uint64_t header_len = read_u64_le(buf, 8);
  if (16 + header_len > buf.size()) throw parse_error("checkpoint: truncated header");
  json header;
  try {
    header = json::parse(buf.substr(16, header_len));
  } catch (const json::parse_error& e) {
    throw parse_error(std::string("checkpoint: invalid header JSON: ") + e.what());
  }
  const size_t payload_off = 16 + header_len;

  const ModelConfig cfg = model_config_from_json(header["config"].dump());
  CheckpointedModel out{Model(cfg, 0), header.contains("meta") ? header["meta"].dump() : "{}"};

  ParameterStore& store = out.model.params();
  if (!header.contains("params") || !header["params"].is_array()) {
    throw parse_error("checkpoint: missing params table");
  }
  size_t loaded = 0;
  for (const json& jp : header["params"]) {
    const std::string name = jp["name"].get<std::string>();
    Parameter* p = store.find(name);
    if (p == nullptr) {
      throw validation_error("checkpoint: parameter '" + name +
                             "' does not exist in the configured model");
    }
    const Shape shape = jp["shape"].get<Shape>();
    if (shape != p->shape) {
      throw validation_error("checkpoint: parameter '" + name + "' has shape " +
                             shape_str(shape) + " but the model expects " + shape_str(p->shape));
    }
    const std::string dtype = jp["dtype"].get<std::string>();
    const size_t elem = dtype == "f64" ? 8 : 4;
    if (dtype != "f64" && dtype != "f32") {
      throw parse_error("checkpoint: unknown dtype '" + dtype + "'");
    }
    const size_t off = payload_off + jp["offset"].get<std::uint64_t>();
    const size_t need = off + static_cast<size_t>(p->size()) * elem;
    if (need > buf.size()) throw parse_error("checkpoint: truncated payload for '" + name + "'");
    for (int i = 0; i < p->size(); ++i) {
      p->value[static_cast<size_t>(i)] =
          dtype == "f64" ? read_f64_le(buf, off + static_cast<size_t>(i) * 8)
                         : static_cast<double>(read_f32_le(buf, off + static_cast<size_t>(i) * 4));
    }
    ++loaded;
  }
  if (loaded != static_cast<size_t>(store.count())) {
    throw validation_error("checkpoint: file provides " + std::to_string(loaded) +
                           " parameters but the model has " + std::to_string(store.count()));
  }
  return out;
}

}  // namespace mact
