#include "stosa/checkpoint.hpp"

namespace stosa {

nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"variant", to_string(c.variant)},
          {"num_items", c.num_items},
          {"d", c.d},
          {"max_len", c.max_len},
          {"layers", c.layers},
          {"heads", c.heads},
          {"dropout", c.dropout},
          {"attention_dropout", c.attention_dropout},
          {"normalization", to_string(c.normalization)},
          {"layer_norm_eps", c.layer_norm_eps}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  const std::string variant = j.at("variant");
  if (variant == "stosa")
    c.variant = Variant::Stosa;
  else if (variant == "dot")
    c.variant = Variant::DotBaseline;
  else
    throw CheckpointError("unknown variant '" + variant + "'");
  c.num_items = j.at("num_items");
  c.d = j.at("d");
  c.max_len = j.at("max_len");
  c.layers = j.at("layers");
  c.heads = j.at("heads");
  c.dropout = j.at("dropout");
  c.attention_dropout = j.at("attention_dropout");
  const std::string norm = j.at("normalization");
  if (norm == "softmax")
    c.normalization = Normalization::Softmax;
  else if (norm == "distance-ratio")
    c.normalization = Normalization::DistanceRatio;
  else
    throw CheckpointError("unknown normalization '" + norm + "'");
  c.layer_norm_eps = j.at("layer_norm_eps");
  return c;
}

namespace detail {

std::string expect_line(std::istream& in, const std::string& prefix) {
  std::string line;
  if (!std::getline(in, line) || line.rfind(prefix, 0) != 0)
    throw CheckpointError("expected a '" + prefix + "' line");
  return line.substr(prefix.size());
}

}  // namespace detail

}  // namespace stosa
