#pragma once

#include <string>

#include "mact/model.hpp"

namespace mact {

/// Container layout: 8-byte magic "MACTCKP1", u64 little-endian header length,
/// JSON header {config, meta, params: [{name, shape, dtype, offset}]}, then
/// the raw little-endian value payload. Writes are atomic.
void save_checkpoint(const std::string& path, const Model& model, Precision dtype,
                     const std::string& meta_json = "{}");

struct CheckpointedModel {
  Model model;
  std::string meta_json;
};

/// Rebuilds the model from the stored configuration and loads every
/// parameter, validating names and shapes against the fresh model.
CheckpointedModel load_checkpoint(const std::string& path);

}  // namespace mact
