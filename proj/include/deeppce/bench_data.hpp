#pragma once
/**
 * @file bench_data.hpp
 * @brief Benchmark generators, dataset files and splitting.
 */

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "deeppce/circuit.hpp"
#include "deeppce/dataset.hpp"
#include "deeppce/error.hpp"
#include "deeppce/rng.hpp"
#include "deeppce/serialization.hpp"
#include "deeppce/training.hpp"

namespace deeppce {

inline constexpr int kBench100dDim = 100;

/// Marginals of the 100-dimensional benchmark: U(1, 2), except X_20 ~ U(1, 3).
inline std::vector<PolyFamily> marginals_100d() {
  std::vector<PolyFamily> m(kBench100dDim, PolyFamily::uniform(1.0, 2.0));
  m[19] = PolyFamily::uniform(1.0, 3.0);
  return m;
}

/// The 100D sensitivity benchmark; x holds X_1..X_100 at positions 0..99.
inline double f_100d(std::span<const double> x) {
  require(x.size() == kBench100dDim, ErrorCode::DimensionMismatch, "f_100d: expected 100 inputs");
  const double d = kBench100dDim;
  double linear = 0.0, cubic = 0.0, logs = 0.0;
  for (int i = 1; i <= kBench100dDim; ++i) {
    const double xi = x[static_cast<std::size_t>(i - 1)];
    const double x2 = xi * xi;
    linear += i * xi;
    cubic += i * x2 * xi;
    logs += i * std::log(x2 + x2 * x2);
  }
  auto X = [&](int i) { return x[static_cast<std::size_t>(i - 1)]; };
  return 3.0 - 5.0 / d * linear + cubic / d + logs / (3.0 * d) + X(1) * X(2) * X(2) + X(2) * X(4) - X(3) * X(5) +
         X(51) + X(50) * X(54) * X(54);
}

inline Eigen::MatrixXd f_100d_batch(const Eigen::MatrixXd& inputs) {
  require(inputs.cols() == kBench100dDim, ErrorCode::DimensionMismatch, "f_100d: expected 100 input columns");
  Eigen::MatrixXd out(inputs.rows(), 1);
  std::array<double, kBench100dDim> row{};
  for (Eigen::Index i = 0; i < inputs.rows(); ++i) {
    for (int d = 0; d < kBench100dDim; ++d) row[static_cast<std::size_t>(d)] = inputs(i, d);
    out(i, 0) = f_100d(row);
  }
  return out;
}

inline Dataset gen_100d(std::size_t n, std::uint64_t seed) {
  require(n >= 1, ErrorCode::InvalidArgument, "gen_100d: n must be >= 1");
  Dataset ds;
  ds.marginals = marginals_100d();
  ds.inputs.resize(static_cast<Eigen::Index>(n), kBench100dDim);
  CounterRng rng(seed, 0x100D);
  for (Eigen::Index i = 0; i < ds.inputs.rows(); ++i)
    for (int d = 0; d < kBench100dDim; ++d) ds.inputs(i, d) = sample_marginal(ds.marginals[static_cast<std::size_t>(d)], rng);
  ds.targets = f_100d_batch(ds.inputs);
  ds.provenance = "gen_100d n=" + std::to_string(n) + " seed=" + std::to_string(seed) + " rng=splitmix64-counter";
  return ds;
}

struct PlantedProblem {
  Dataset data;
  CircuitModel model;  // the generating circuit, no batch norm
};

/// Targets produced by a randomly initialized circuit without batch norm.
/// A model of the same shape can represent them exactly.
inline PlantedProblem gen_planted(std::size_t n, std::uint64_t seed, int d_in = 4, int d_out = 1, int width = 3,
                                  int max_order = 2, int scope_size = 1) {
  require(n >= 1, ErrorCode::InvalidArgument, "gen_planted: n must be >= 1");
  CircuitConfig config;
  config.d_in = d_in;
  config.d_out = d_out;
  config.scope_size = scope_size;
  config.max_order = max_order;
  config.width = width;
  config.seed = seed;
  config.batch_norm = false;
  PlantedProblem problem{Dataset{}, build(config)};
  TrainConfig init;
  init.init_decay = 0.5;
  init_weights(problem.model, init, derive_seed(seed, 0x9A17));
  Dataset& ds = problem.data;
  ds.marginals = problem.model.marginals();
  ds.inputs.resize(static_cast<Eigen::Index>(n), d_in);
  CounterRng rng(seed, 0x9A18);
  for (Eigen::Index i = 0; i < ds.inputs.rows(); ++i)
    for (int d = 0; d < d_in; ++d) ds.inputs(i, d) = sample_marginal(ds.marginals[static_cast<std::size_t>(d)], rng);
  ds.targets = forward_chunked(problem.model, ds.inputs);
  ds.provenance = "planted n=" + std::to_string(n) + " seed=" + std::to_string(seed) + " rng=splitmix64-counter";
  return problem;
}

/// Synthetic vector regression: x ~ U(-1, 1)^D, latent z = Q x (4 features),
/// y = c + P z + R (z0 z1, z1 z2, z2 z3, z3 z0).
inline Dataset gen_quadratic_map(std::size_t n, std::uint64_t seed, int d_in = 64, int d_out = 16) {
  require(n >= 1 && d_in >= 1 && d_out >= 1, ErrorCode::InvalidArgument, "gen_quadratic_map: bad size");
  constexpr int kLatent = 4;
  CounterRng coef(seed, 0x0A0A);
  Eigen::MatrixXd q(kLatent, d_in), p(d_out, kLatent), r(d_out, kLatent);
  Eigen::VectorXd c(d_out);
  for (Eigen::Index i = 0; i < q.size(); ++i) q.data()[i] = coef.normal() * std::sqrt(3.0 / d_in);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = coef.normal();
  for (Eigen::Index i = 0; i < r.size(); ++i) r.data()[i] = coef.normal();
  for (Eigen::Index i = 0; i < c.size(); ++i) c[i] = coef.normal();

  Dataset ds;
  ds.marginals.assign(static_cast<std::size_t>(d_in), PolyFamily::legendre());
  ds.inputs.resize(static_cast<Eigen::Index>(n), d_in);
  CounterRng rng(seed, 0x0A0B);
  for (Eigen::Index i = 0; i < ds.inputs.rows(); ++i)
    for (int d = 0; d < d_in; ++d) ds.inputs(i, d) = rng.uniform(-1.0, 1.0);
  const Eigen::MatrixXd z = ds.inputs * q.transpose();
  Eigen::MatrixXd pairs(z.rows(), kLatent);
  for (int k = 0; k < kLatent; ++k) pairs.col(k) = z.col(k).cwiseProduct(z.col((k + 1) % kLatent));
  ds.targets = z * p.transpose() + pairs * r.transpose();
  ds.targets.rowwise() += c.transpose();
  ds.provenance = "quadratic_map n=" + std::to_string(n) + " seed=" + std::to_string(seed) + " rng=splitmix64-counter";
  return ds;
}

// ---------------------------------------------------------------------------
// Splitting

/// Seeded shuffle, then consecutive blocks of floor(f_k N) rows; the last
/// block takes the remainder.
inline std::vector<Dataset> split(const Dataset& ds, const std::vector<double>& fractions, std::uint64_t seed) {
  require(!fractions.empty(), ErrorCode::InvalidArgument, "split: no fractions");
  double total = 0.0;
  for (double f : fractions) {
    require(f >= 0.0, ErrorCode::InvalidArgument, "split: fractions must be non-negative");
    total += f;
  }
  require(std::abs(total - 1.0) <= 1e-9, ErrorCode::InvalidArgument, "split: fractions must sum to 1");
  CounterRng rng(seed, 0x5911);
  const std::vector<std::size_t> perm = random_permutation(static_cast<std::size_t>(ds.size()), rng);
  std::vector<Dataset> parts;
  std::size_t start = 0;
  for (std::size_t k = 0; k < fractions.size(); ++k) {
    const std::size_t count = k + 1 == fractions.size()
                                  ? perm.size() - start
                                  : static_cast<std::size_t>(std::floor(fractions[k] * static_cast<double>(perm.size())));
    std::vector<std::size_t> rows(perm.begin() + static_cast<std::ptrdiff_t>(start),
                                  perm.begin() + static_cast<std::ptrdiff_t>(start + count));
    parts.push_back(ds.rows(rows));
    start += count;
  }
  return parts;
}

inline std::tuple<Dataset, Dataset, Dataset> split3(const Dataset& ds, double train, double val, double test,
                                                    std::uint64_t seed) {
  auto parts = split(ds, {train, val, test}, seed);
  return {std::move(parts[0]), std::move(parts[1]), std::move(parts[2])};
}

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    fields.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

}  // namespace detail

/// Header x_1..x_D,y_1..y_O; shortest round-trip decimal formatting.
inline void save_csv(const Dataset& ds, const std::string& path) {
  ds.validate();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot open '" + path + "' for writing");
  for (int d = 0; d < ds.input_dim(); ++d) out << (d ? "," : "") << "x_" << d + 1;
  for (int o = 0; o < ds.output_dim(); ++o) out << (ds.input_dim() + o ? "," : "") << "y_" << o + 1;
  out << '\n';
  for (Eigen::Index i = 0; i < ds.size(); ++i) {
    for (int d = 0; d < ds.input_dim(); ++d) out << (d ? "," : "") << detail::format_double(ds.inputs(i, d));
    for (int o = 0; o < ds.output_dim(); ++o)
      out << (ds.input_dim() + o ? "," : "") << detail::format_double(ds.targets(i, o));
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::Io, "write to '" + path + "' failed");
}

/// CSV carries no marginal descriptors; pass them, or get standard normals.
inline Dataset load_csv(const std::string& path, std::vector<PolyFamily> marginals = {}) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + path + "' for reading");
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::MalformedFile, path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = detail::split_fields(line);
  int d_in = 0, d_out = 0;
  for (std::size_t k = 0; k < header.size(); ++k) {
    const std::string expect_x = "x_" + std::to_string(d_in + 1);
    const std::string expect_y = "y_" + std::to_string(d_out + 1);
    if (d_out == 0 && header[k] == expect_x) {
      ++d_in;
    } else if (header[k] == expect_y) {
      ++d_out;
    } else {
      throw Error(ErrorCode::MalformedFile, path + ":1: unexpected header column '" + std::string(header[k]) + "'");
    }
  }
  require(d_in >= 1 && d_out >= 1, ErrorCode::MalformedFile, path + ":1: need x_ and y_ columns");
  std::vector<double> values;
  std::size_t rows = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = detail::split_fields(line);
    if (fields.size() != header.size()) {
      throw Error(ErrorCode::MalformedFile, path + ":" + std::to_string(line_no) + ": ragged row with " +
                                                std::to_string(fields.size()) + " cells, expected " +
                                                std::to_string(header.size()));
    }
    for (std::size_t k = 0; k < fields.size(); ++k) {
      double v = 0.0;
      const char* first = fields[k].data();
      const char* last = first + fields[k].size();
      if (first != last && *first == '+') ++first;
      const auto res = std::from_chars(first, last, v);
      if (res.ec != std::errc() || res.ptr != last || fields[k].empty()) {
        throw Error(ErrorCode::MalformedFile, path + ":" + std::to_string(line_no) + ": non-numeric cell in column " +
                                                  std::to_string(k + 1) + " ('" + std::string(fields[k]) + "')");
      }
      values.push_back(v);
    }
    ++rows;
  }
  Dataset ds;
  ds.inputs.resize(static_cast<Eigen::Index>(rows), d_in);
  ds.targets.resize(static_cast<Eigen::Index>(rows), d_out);
  const std::size_t cols = header.size();
  for (std::size_t i = 0; i < rows; ++i) {
    for (int d = 0; d < d_in; ++d) ds.inputs(static_cast<Eigen::Index>(i), d) = values[i * cols + static_cast<std::size_t>(d)];
    for (int o = 0; o < d_out; ++o)
      ds.targets(static_cast<Eigen::Index>(i), o) = values[i * cols + static_cast<std::size_t>(d_in + o)];
  }
  if (marginals.empty()) marginals.assign(static_cast<std::size_t>(d_in), PolyFamily::hermite());
  require(marginals.size() == static_cast<std::size_t>(d_in), ErrorCode::DimensionMismatch,
          "load_csv: " + std::to_string(marginals.size()) + " marginals for " + std::to_string(d_in) + " inputs");
  ds.marginals = std::move(marginals);
  ds.provenance = "csv " + path;
  return ds;
}

// ---------------------------------------------------------------------------
// Tensor files

inline constexpr const char* kTensorMagic = "DEEPPCE-TENSOR";
inline constexpr int kTensorSchemaVersion = 1;

/// Payload: inputs then targets, each row-major.
inline void save_tensor(const Dataset& ds, const std::string& path) {
  ds.validate();
  std::vector<double> payload;
  payload.reserve(static_cast<std::size_t>(ds.inputs.size() + ds.targets.size()));
  for (Eigen::Index i = 0; i < ds.size(); ++i)
    for (Eigen::Index d = 0; d < ds.inputs.cols(); ++d) payload.push_back(ds.inputs(i, d));
  for (Eigen::Index i = 0; i < ds.size(); ++i)
    for (Eigen::Index o = 0; o < ds.targets.cols(); ++o) payload.push_back(ds.targets(i, o));
  nlohmann::json header = {{"format", "deeppce-tensor"},
                           {"schema_version", kTensorSchemaVersion},
                           {"n", ds.size()},
                           {"d_in", ds.input_dim()},
                           {"d_out", ds.output_dim()},
                           {"marginals", marginals_to_json(ds.marginals)},
                           {"provenance", ds.provenance}};
  write_framed(path, kTensorMagic, std::move(header), payload);
}

inline Dataset load_tensor(const std::string& path) {
  const FramedFile file = read_framed(path, kTensorMagic, kTensorSchemaVersion);
  std::uint64_t n = 0, d_in = 0, d_out = 0;
  Dataset ds;
  try {
    n = file.header.at("n").get<std::uint64_t>();
    d_in = file.header.at("d_in").get<std::uint64_t>();
    d_out = file.header.at("d_out").get<std::uint64_t>();
    ds.marginals = marginals_from_json(file.header.at("marginals"));
    ds.provenance = file.header.value("provenance", "");
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedFile, "'" + path + "': bad tensor header (" + e.what() + ")");
  }
  const std::uint64_t width = d_in + d_out;
  if (d_in == 0 || d_out == 0 || width < d_in ||
      (n != 0 && width > std::numeric_limits<std::uint64_t>::max() / sizeof(double) / n)) {
    throw Error(ErrorCode::MalformedFile, "'" + path + "': header shape overflows the payload length");
  }
  if (n * width != file.payload.size()) {
    throw Error(ErrorCode::MalformedFile, "'" + path + "': header N*(D+O) = " + std::to_string(n * width) +
                                              " disagrees with payload of " + std::to_string(file.payload.size()));
  }
  if (ds.marginals.size() != d_in) {
    throw Error(ErrorCode::MalformedFile, "'" + path + "': marginal count differs from d_in");
  }
  const auto rows = static_cast<Eigen::Index>(n);
  ds.inputs.resize(rows, static_cast<Eigen::Index>(d_in));
  ds.targets.resize(rows, static_cast<Eigen::Index>(d_out));
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index d = 0; d < ds.inputs.cols(); ++d) ds.inputs(i, d) = file.payload[k++];
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index o = 0; o < ds.targets.cols(); ++o) ds.targets(i, o) = file.payload[k++];
  return ds;
}

/// Picks the reader by the file's first bytes (tensor magic) or falls back to CSV.
inline Dataset load_dataset(const std::string& path, std::vector<PolyFamily> csv_marginals = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + path + "' for reading");
  std::string first;
  std::getline(in, first);
  if (first == kTensorMagic) return load_tensor(path);
  return load_csv(path, std::move(csv_marginals));
}

}  // namespace deeppce
