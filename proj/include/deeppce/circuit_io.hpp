#pragma once
/**
 * @file circuit_io.hpp
 * @brief Save and load CircuitModel files.
 *
 * The header records the configuration, partition and batch-norm flags; the
 * payload holds, for every leaf, block sum and the head in that order:
 * weights (column-major), bias, gamma, beta, running mean, running variance.
 */

#include <string>

#include <nlohmann/json.hpp>

#include "deeppce/circuit.hpp"
#include "deeppce/serialization.hpp"

namespace deeppce {

inline constexpr const char* kModelMagic = "DEEPPCE-MODEL";
inline constexpr int kModelSchemaVersion = 1;

namespace detail {

inline void append(std::vector<double>& out, const Eigen::MatrixXd& m) { out.insert(out.end(), m.data(), m.data() + m.size()); }
inline void append(std::vector<double>& out, const Eigen::VectorXd& v) { out.insert(out.end(), v.data(), v.data() + v.size()); }

template <class F>
void for_each_sum(CircuitModel& model, F&& f) {
  for (auto& leaf : model.leaves) f(leaf.sum);
  for (std::size_t l = 0; l < model.blocks.size(); ++l)
    for (std::size_t j = 0; j < model.blocks[l].size(); ++j)
      if (!model.graph.merge_plan[l][j].pass_through()) f(model.blocks[l][j]);
  f(model.head);
}

}  // namespace detail

inline nlohmann::json to_json(const CircuitConfig& c) {
  return {{"d_in", c.d_in},
          {"d_out", c.d_out},
          {"scope_size", c.scope_size},
          {"max_order", c.max_order},
          {"width", c.width},
          {"seed", c.seed},
          {"batch_norm", c.batch_norm},
          {"marginals", marginals_to_json(c.marginals)}};
}

inline CircuitConfig circuit_config_from_json(const nlohmann::json& j) {
  try {
    CircuitConfig c;
    c.d_in = j.at("d_in").get<int>();
    c.d_out = j.at("d_out").get<int>();
    c.scope_size = j.at("scope_size").get<int>();
    c.max_order = j.at("max_order").get<int>();
    c.width = j.at("width").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.batch_norm = j.at("batch_norm").get<bool>();
    c.marginals = marginals_from_json(j.at("marginals"));
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedFile, std::string("bad model config: ") + e.what());
  }
}

/// Writes `model`; `metadata` (config echo, seeds, ...) is stored verbatim in the header.
inline void save(const CircuitModel& model, const std::string& path, const nlohmann::json& metadata = nlohmann::json::object()) {
  CircuitModel copy = model;
  std::vector<double> payload;
  nlohmann::json norms = nlohmann::json::array();
  detail::for_each_sum(copy, [&](SumLayer& sum) {
    detail::append(payload, sum.weights);
    detail::append(payload, sum.bias);
    detail::append(payload, sum.norm.gamma);
    detail::append(payload, sum.norm.beta);
    detail::append(payload, sum.norm.running_mean);
    detail::append(payload, sum.norm.running_var);
    norms.push_back({{"active", sum.norm.active}, {"tracked_batches", sum.norm.tracked_batches}});
  });
  nlohmann::json header = {{"format", "deeppce-model"},
                           {"schema_version", kModelSchemaVersion},
                           {"config", to_json(model.config)},
                           {"partition", model.graph.partition},
                           {"norms", norms},
                           {"metadata", metadata}};
  write_framed(path, kModelMagic, std::move(header), payload);
}

struct LoadedModel {
  CircuitModel model;
  nlohmann::json metadata;
};

inline LoadedModel load_with_metadata(const std::string& path) {
  const FramedFile file = read_framed(path, kModelMagic, kModelSchemaVersion);
  if (!file.header.contains("config") || !file.header.contains("partition") || !file.header.contains("norms")) {
    throw Error(ErrorCode::MalformedFile, "'" + path + "': model header incomplete");
  }
  CircuitConfig config = circuit_config_from_json(file.header["config"]);
  LoadedModel loaded;
  try {
    loaded.model = build(std::move(config));
  } catch (const Error& e) {
    throw Error(ErrorCode::MalformedFile, "'" + path + "': " + e.what());
  }
  CircuitModel& model = loaded.model;
  std::vector<std::vector<int>> partition;
  try {
    partition = file.header["partition"].get<std::vector<std::vector<int>>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedFile, "'" + path + "': bad partition");
  }
  if (partition != model.graph.partition) {
    throw Error(ErrorCode::MalformedFile, "'" + path + "': stored partition does not match the seeded graph");
  }
  const auto& norms = file.header["norms"];
  PayloadReader reader(file.payload);
  std::size_t index = 0;
  detail::for_each_sum(model, [&](SumLayer& sum) {
    if (!norms.is_array() || index >= norms.size()) {
      throw Error(ErrorCode::MalformedFile, "'" + path + "': batch-norm flags missing");
    }
    try {
      sum.norm.active = norms[index].at("active").get<bool>();
      sum.norm.tracked_batches = norms[index].at("tracked_batches").get<std::uint64_t>();
    } catch (const nlohmann::json::exception&) {
      throw Error(ErrorCode::MalformedFile, "'" + path + "': bad batch-norm flags");
    }
    ++index;
    reader.read_into(sum.weights);
    reader.read_into(sum.bias);
    reader.read_into(sum.norm.gamma);
    reader.read_into(sum.norm.beta);
    reader.read_into(sum.norm.running_mean);
    reader.read_into(sum.norm.running_var);
  });
  if (index != norms.size() || !reader.done()) {
    throw Error(ErrorCode::MalformedFile, "'" + path + "': payload longer than declared shapes");
  }
  audit_structure(model);
  loaded.metadata = file.header.value("metadata", nlohmann::json::object());
  return loaded;
}

inline CircuitModel load(const std::string& path) { return load_with_metadata(path).model; }

}  // namespace deeppce
