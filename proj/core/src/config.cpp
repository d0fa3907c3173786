#include "mact/config.hpp"

#include <json.hpp>

namespace mact {

using nlohmann::json;

const char* fusion_kind_name(FusionKind k) {
  return k == FusionKind::bilateral ? "bilateral" : "stack";
}

FusionKind fusion_kind_from_name(const std::string& name) {
  if (name == "bilateral") return FusionKind::bilateral;
  if (name == "stack") return FusionKind::stack;
  throw config_error("unknown fusion kind: " + name);
}

void ModelConfig::validate() const {
  if (D < 2 || K < 1 || n_segments < 1 || points_per_segment < 1 || n_neighbors < 0 || h < 1 ||
      f < 1 || heads < 1) {
    throw config_error("model config: all capacity constants must be positive");
  }
  if (D % heads != 0) {
    throw config_error("model config: heads (" + std::to_string(heads) +
                       ") must divide D (" + std::to_string(D) + ")");
  }
  if (bq_heads < 1 || D % bq_heads != 0) {
    throw config_error("model config: bq_heads must divide D");
  }
  if (D % 2 != 0) throw config_error("model config: D must be even for positional embedding");
  if (K < 2) {
    throw config_error("model config: K >= 2 is required for the margin loss");
  }
}

double TrainConfig::lr_at_epoch(int epoch) const {
  double out = lr;
  for (size_t i = 0; i < decay_epochs.size(); ++i) {
    if (epoch >= decay_epochs[i]) out *= decay_factors[i];
  }
  return out;
}

void TrainConfig::validate() const {
  if (lr <= 0.0) throw config_error("train config: lr must be positive");
  if (epochs < 1) throw config_error("train config: epochs must be positive");
  if (batch_size < 1) throw config_error("train config: batch_size must be positive");
  if (threads < 1) throw config_error("train config: threads must be positive");
  if (decay_epochs.size() != decay_factors.size()) {
    throw config_error("train config: decay_epochs and decay_factors must have equal length");
  }
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  if (data.h != model.h || data.f != model.f) {
    throw config_error("run config: generator h/f must match model h/f");
  }
}

namespace {

json model_to_json(const ModelConfig& m) {
  return json{{"D", m.D},
              {"K", m.K},
              {"N_m", m.n_segments},
              {"P_m", m.points_per_segment},
              {"N_a", m.n_neighbors},
              {"h", m.h},
              {"f", m.f},
              {"heads", m.heads},
              {"fusion", fusion_kind_name(m.fusion)},
              {"bq_heads", m.bq_heads},
              {"use_relative_motions", m.use_relative_motions},
              {"use_bilateral_query", m.use_bilateral_query},
              {"use_reference_extractor", m.use_reference_extractor},
              {"skip_token_self_attention", m.skip_token_self_attention}};
}

ModelConfig model_from_json(const json& j) {
  ModelConfig m;
  if (j.contains("D")) m.D = j["D"].get<int>();
  if (j.contains("K")) m.K = j["K"].get<int>();
  if (j.contains("N_m")) m.n_segments = j["N_m"].get<int>();
  if (j.contains("P_m")) m.points_per_segment = j["P_m"].get<int>();
  if (j.contains("N_a")) m.n_neighbors = j["N_a"].get<int>();
  if (j.contains("h")) m.h = j["h"].get<int>();
  if (j.contains("f")) m.f = j["f"].get<int>();
  if (j.contains("heads")) m.heads = j["heads"].get<int>();
  if (j.contains("fusion")) m.fusion = fusion_kind_from_name(j["fusion"].get<std::string>());
  if (j.contains("bq_heads")) m.bq_heads = j["bq_heads"].get<int>();
  if (j.contains("use_relative_motions")) m.use_relative_motions = j["use_relative_motions"].get<bool>();
  if (j.contains("use_bilateral_query")) m.use_bilateral_query = j["use_bilateral_query"].get<bool>();
  if (j.contains("use_reference_extractor")) {
    m.use_reference_extractor = j["use_reference_extractor"].get<bool>();
  }
  if (j.contains("skip_token_self_attention")) {
    m.skip_token_self_attention = j["skip_token_self_attention"].get<bool>();
  }
  return m;
}

json train_to_json(const TrainConfig& t) {
  return json{{"lr", t.lr},
              {"decay_epochs", t.decay_epochs},
              {"decay_factors", t.decay_factors},
              {"epochs", t.epochs},
              {"batch_size", t.batch_size},
              {"seed", t.seed},
              {"use_couple_loss", t.use_couple_loss},
              {"use_capture_loss", t.use_capture_loss},
              {"margin", t.margin},
              {"precision", t.precision == Precision::f64 ? "f64" : "f32"},
              {"threads", t.threads}};
}

TrainConfig train_from_json(const json& j) {
  TrainConfig t;
  if (j.contains("lr")) t.lr = j["lr"].get<double>();
  if (j.contains("decay_epochs")) t.decay_epochs = j["decay_epochs"].get<std::vector<int>>();
  if (j.contains("decay_factors")) t.decay_factors = j["decay_factors"].get<std::vector<double>>();
  if (j.contains("epochs")) t.epochs = j["epochs"].get<int>();
  if (j.contains("batch_size")) t.batch_size = j["batch_size"].get<int>();
  if (j.contains("seed")) t.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("use_couple_loss")) t.use_couple_loss = j["use_couple_loss"].get<bool>();
  if (j.contains("use_capture_loss")) t.use_capture_loss = j["use_capture_loss"].get<bool>();
  if (j.contains("margin")) t.margin = j["margin"].get<double>();
  if (j.contains("precision")) {
    const std::string p = j["precision"].get<std::string>();
    if (p == "f64") {
      t.precision = Precision::f64;
    } else if (p == "f32") {
      t.precision = Precision::f32;
    } else {
      throw config_error("train config: unknown precision '" + p + "'");
    }
  }
  if (j.contains("threads")) t.threads = j["threads"].get<int>();
  return t;
}

json generator_to_json(const GeneratorConfig& g) {
  return json{{"lanes", g.lanes},
              {"family", lane_family_name(g.family)},
              {"agents", g.agents},
              {"h", g.h},
              {"f", g.f},
              {"dt", g.dt},
              {"noise_scale", g.noise_scale},
              {"speed_min", g.speed_min},
              {"speed_max", g.speed_max},
              {"lane_width", g.lane_width},
              {"point_spacing", g.point_spacing},
              {"lane_length", g.lane_length},
              {"points_per_segment", g.points_per_segment},
              {"max_segments", g.max_segments},
              {"corridor_half_width", g.corridor_half_width}};
}

GeneratorConfig generator_from_json(const json& j) {
  GeneratorConfig g;
  if (j.contains("lanes")) g.lanes = j["lanes"].get<int>();
  if (j.contains("family")) g.family = lane_family_from_name(j["family"].get<std::string>());
  if (j.contains("agents")) g.agents = j["agents"].get<int>();
  if (j.contains("h")) g.h = j["h"].get<int>();
  if (j.contains("f")) g.f = j["f"].get<int>();
  if (j.contains("dt")) g.dt = j["dt"].get<double>();
  if (j.contains("noise_scale")) g.noise_scale = j["noise_scale"].get<double>();
  if (j.contains("speed_min")) g.speed_min = j["speed_min"].get<double>();
  if (j.contains("speed_max")) g.speed_max = j["speed_max"].get<double>();
  if (j.contains("lane_width")) g.lane_width = j["lane_width"].get<double>();
  if (j.contains("point_spacing")) g.point_spacing = j["point_spacing"].get<double>();
  if (j.contains("lane_length")) g.lane_length = j["lane_length"].get<double>();
  if (j.contains("points_per_segment")) g.points_per_segment = j["points_per_segment"].get<int>();
  if (j.contains("max_segments")) g.max_segments = j["max_segments"].get<int>();
  if (j.contains("corridor_half_width")) g.corridor_half_width = j["corridor_half_width"].get<double>();
  return g;
}

}  // namespace

std::string run_config_to_json(const RunConfig& c) {
  json j{{"seed", c.seed},
         {"model", model_to_json(c.model)},
         {"train", train_to_json(c.train)},
         {"data", generator_to_json(c.data)}};
  return j.dump(2) + "\n";
}

RunConfig run_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw parse_error(std::string("config: invalid JSON: ") + e.what());
  }
  RunConfig c;
  if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("model")) c.model = model_from_json(j["model"]);
  if (j.contains("train")) c.train = train_from_json(j["train"]);
  if (j.contains("data")) c.data = generator_from_json(j["data"]);
  return c;
}

std::string model_config_to_json(const ModelConfig& c) { return model_to_json(c).dump(); }

ModelConfig model_config_from_json(const std::string& text) {
  return model_from_json(json::parse(text));
}

}  // namespace mact
