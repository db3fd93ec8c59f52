#pragma once

// Checkpoint layout (all text lines end in '\n'):
//
//   STOSA-CHECKPOINT 1
//   dtype f32|f64
//   model <one-line JSON: variant, num_items, d, max_len, layers, heads,
//          dropout, attention_dropout, normalization, layer_norm_eps>
//   config <byte count>
//   <RunConfig text, exactly byte-count bytes>
//   provenance <one-line JSON>
//   tensors <count>
//   then per tensor, in parameter visit order:
//     tensor <name> <rows> <cols>
//     <rows*cols raw IEEE-754 little-endian values, column-major>
//   end
//
// Values are written as raw bytes, so save followed by load is bit-exact.

#include "stosa/common.hpp"
#include "stosa/config.hpp"
#include "stosa/model.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace stosa {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

nlohmann::json model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

template <class S>
constexpr const char* dtype_name() {
  static_assert(std::is_same_v<S, float> || std::is_same_v<S, double>);
  return std::is_same_v<S, float> ? "f32" : "f64";
}

template <class S>
struct Checkpoint {
  Model<S> model;
  RunConfig config;
  nlohmann::json provenance = nlohmann::json::object();
};

template <class S>
void save_checkpoint(std::ostream& out, const Checkpoint<S>& ckpt) {
  const std::string config_text = ckpt.config.to_text();
  out << "STOSA-CHECKPOINT 1\n";
  out << "dtype " << dtype_name<S>() << '\n';
  out << "model " << model_config_to_json(ckpt.model.config).dump() << '\n';
  out << "config " << config_text.size() << '\n' << config_text;
  out << "provenance " << ckpt.provenance.dump() << '\n';
  std::size_t count = 0;
  ckpt.model.visit([&](const std::string&, const Mat<S>&) { ++count; });
  out << "tensors " << count << '\n';
  ckpt.model.visit([&](const std::string& name, const Mat<S>& m) {
    out << "tensor " << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(S)));
    out << '\n';
  });
  out << "end\n";
  if (!out) throw CheckpointError("failed writing checkpoint");
}

template <class S>
void save_checkpoint(const std::string& path, const Checkpoint<S>& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open '" + path + "' for writing");
  save_checkpoint(out, ckpt);
}

namespace detail {

std::string expect_line(std::istream& in, const std::string& prefix);

template <class Stored, class S>
void read_values(std::istream& in, Mat<S>& m) {
  std::vector<Stored> buf(static_cast<std::size_t>(m.size()));
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(Stored)));
  if (!in) throw CheckpointError("truncated tensor data");
  for (std::size_t i = 0; i < buf.size(); ++i) m.data()[i] = static_cast<S>(buf[i]);
}

}  // namespace detail

/// Loads a checkpoint; values stored at another precision are converted.
template <class S>
Checkpoint<S> load_checkpoint(std::istream& in) {
  std::string magic;
  if (!std::getline(in, magic) || magic != "STOSA-CHECKPOINT 1") throw CheckpointError("not a checkpoint (bad magic)");
  const std::string dtype = detail::expect_line(in, "dtype ");
  if (dtype != "f32" && dtype != "f64") throw CheckpointError("unknown dtype '" + dtype + "'");
  Checkpoint<S> ckpt;
  ModelConfig mc;
  try {
    mc = model_config_from_json(nlohmann::json::parse(detail::expect_line(in, "model ")));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad model header: ") + e.what());
  }
  const auto config_bytes = std::stoull(detail::expect_line(in, "config "));
  std::string config_text(config_bytes, '\0');
  in.read(config_text.data(), static_cast<std::streamsize>(config_bytes));
  if (!in) throw CheckpointError("truncated config block");
  ckpt.config = RunConfig::parse(config_text);
  try {
    ckpt.provenance = nlohmann::json::parse(detail::expect_line(in, "provenance "));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad provenance: ") + e.what());
  }
  const auto count = std::stoull(detail::expect_line(in, "tensors "));

  Rng unused(0);
  ckpt.model = init_model<S>(mc, unused);
  std::size_t seen = 0;
  ckpt.model.visit([&](const std::string& name, Mat<S>& m) {
    std::istringstream header(detail::expect_line(in, "tensor "));
    std::string stored_name;
    Eigen::Index rows = 0, cols = 0;
    header >> stored_name >> rows >> cols;
    if (stored_name != name || rows != m.rows() || cols != m.cols())
      throw CheckpointError("tensor '" + stored_name + "' does not match expected '" + name + "' " +
                            std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
    if (dtype == "f32")
      detail::read_values<float>(in, m);
    else
      detail::read_values<double>(in, m);
    if (in.get() != '\n') throw CheckpointError("missing tensor terminator after '" + name + "'");
    ++seen;
  });
  if (seen != count) throw CheckpointError("tensor count mismatch");
  std::string end;
  if (!std::getline(in, end) || end != "end") throw CheckpointError("missing end marker");
  return ckpt;
}

template <class S>
Checkpoint<S> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
  return load_checkpoint<S>(in);
}

}  // namespace stosa
