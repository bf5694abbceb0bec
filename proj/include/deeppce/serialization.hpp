#pragma once
/**
 * @file serialization.hpp
 * @brief Shared binary framing for model and tensor files.
 *
 * Layout:
 *
 *   <magic>\n
 *   <one-line JSON header>\n
 *   <payload: little-endian IEEE-754 float64 values>
 *
 * The writer adds "payload_doubles" and "crc32" (zlib CRC-32 of the payload
 * bytes) to the header. Readers check the magic, the schema version, the
 * payload length and the checksum, in that order.
 */

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <zlib.h>

#include "deeppce/error.hpp"
#include "deeppce/orthopoly.hpp"

namespace deeppce {

struct FramedFile {
  nlohmann::json header;
  std::vector<double> payload;
};

namespace detail {

inline std::uint64_t byteswap64(std::uint64_t v) noexcept {
  v = ((v & 0x00FF00FF00FF00FFULL) << 8) | ((v >> 8) & 0x00FF00FF00FF00FFULL);
  v = ((v & 0x0000FFFF0000FFFFULL) << 16) | ((v >> 16) & 0x0000FFFF0000FFFFULL);
  return (v << 32) | (v >> 32);
}

inline std::string encode_le(std::span<const double> values) {
  std::string bytes(values.size() * sizeof(double), '\0');
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto bits = std::bit_cast<std::uint64_t>(values[i]);
    if constexpr (std::endian::native == std::endian::big) bits = byteswap64(bits);
    std::memcpy(bytes.data() + i * sizeof(double), &bits, sizeof(bits));
  }
  return bytes;
}

inline std::vector<double> decode_le(const char* data, std::size_t count) {
  std::vector<double> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t bits = 0;
    std::memcpy(&bits, data + i * sizeof(double), sizeof(bits));
    if constexpr (std::endian::native == std::endian::big) bits = byteswap64(bits);
    values[i] = std::bit_cast<double>(bits);
  }
  return values;
}

inline std::uint32_t crc32_of(const char* data, std::size_t size) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (size > 0) {
    const auto piece = static_cast<uInt>(std::min<std::size_t>(size, std::numeric_limits<uInt>::max()));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data), piece);
    data += piece;
    size -= piece;
  }
  return static_cast<std::uint32_t>(crc);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + path + "' for reading");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

}  // namespace detail

/// `header` must not already contain payload_doubles or crc32.
inline void write_framed(const std::string& path, const std::string& magic, nlohmann::json header,
                         std::span<const double> payload) {
  const std::string bytes = detail::encode_le(payload);
  header["payload_doubles"] = payload.size();
  header["crc32"] = detail::crc32_of(bytes.data(), bytes.size());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot open '" + path + "' for writing");
  out << magic << '\n' << header.dump() << '\n';
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::Io, "write to '" + path + "' failed");
}

inline FramedFile read_framed(const std::string& path, const std::string& magic, int schema_version) {
  const std::string bytes = detail::read_file(path);
  const std::size_t magic_end = bytes.find('\n');
  if (magic_end == std::string::npos || bytes.compare(0, magic_end, magic) != 0) {
    throw Error(ErrorCode::MalformedFile, "'" + path + "' is not a " + magic + " file");
  }
  const std::size_t header_end = bytes.find('\n', magic_end + 1);
  if (header_end == std::string::npos) throw Error(ErrorCode::MalformedFile, "'" + path + "': truncated header");
  FramedFile file;
  try {
    file.header = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(magic_end) + 1,
                                        bytes.begin() + static_cast<std::ptrdiff_t>(header_end));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedFile, "'" + path + "': header is not valid JSON (" + e.what() + ")");
  }
  if (!file.header.is_object() || !file.header.contains("schema_version") ||
      !file.header["schema_version"].is_number_integer()) {
    throw Error(ErrorCode::MalformedFile, "'" + path + "': header lacks schema_version");
  }
  const int version = file.header["schema_version"].get<int>();
  if (version != schema_version) {
    throw Error(ErrorCode::VersionMismatch, "'" + path + "': schema version " + std::to_string(version) +
                                                ", expected " + std::to_string(schema_version));
  }
  if (!file.header.contains("payload_doubles") || !file.header["payload_doubles"].is_number_unsigned() ||
      !file.header.contains("crc32") || !file.header["crc32"].is_number_unsigned()) {
    throw Error(ErrorCode::MalformedFile, "'" + path + "': header lacks payload_doubles or crc32");
  }
  const auto count = file.header["payload_doubles"].get<std::uint64_t>();
  const std::size_t payload_bytes = bytes.size() - header_end - 1;
  if (count > payload_bytes / sizeof(double) || count * sizeof(double) != payload_bytes) {
    throw Error(ErrorCode::MalformedFile, "'" + path + "': payload has " + std::to_string(payload_bytes) +
                                              " bytes, header declares " + std::to_string(count) + " doubles");
  }
  const char* data = bytes.data() + header_end + 1;
  if (detail::crc32_of(data, payload_bytes) != file.header["crc32"].get<std::uint32_t>()) {
    throw Error(ErrorCode::ChecksumMismatch, "'" + path + "': payload checksum mismatch");
  }
  file.payload = detail::decode_le(data, static_cast<std::size_t>(count));
  return file;
}

/// Sequential reader over a payload with length checks.
class PayloadReader {
 public:
  explicit PayloadReader(std::span<const double> payload) : payload_(payload) {}

  template <class Dense>
  void read_into(Dense& target) {
    const auto n = static_cast<std::size_t>(target.size());
    if (n > payload_.size() - pos_) throw Error(ErrorCode::MalformedFile, "payload shorter than declared shapes");
    std::memcpy(target.data(), payload_.data() + pos_, n * sizeof(double));
    pos_ += n;
  }

  bool done() const noexcept { return pos_ == payload_.size(); }

 private:
  std::span<const double> payload_;
  std::size_t pos_ = 0;
};

inline nlohmann::json to_json(const PolyFamily& family) {
  return {{"family", to_string(family.kind())}, {"location", family.location()}, {"scale", family.scale()}};
}

inline PolyFamily family_from_json(const nlohmann::json& j) {
  try {
    return PolyFamily(poly_kind_from_string(j.at("family").get<std::string>()), j.at("location").get<double>(),
                      j.at("scale").get<double>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedFile, std::string("bad marginal descriptor: ") + e.what());
  }
}

inline nlohmann::json marginals_to_json(std::span<const PolyFamily> marginals) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& m : marginals) out.push_back(to_json(m));
  return out;
}

inline std::vector<PolyFamily> marginals_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw Error(ErrorCode::MalformedFile, "marginals must be an array");
  std::vector<PolyFamily> out;
  for (const auto& item : j) out.push_back(family_from_json(item));
  return out;
}

/// Parses "normal:m:s", "uniform:a:b", "hermite" or "legendre".
inline PolyFamily parse_marginal(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ':');) parts.push_back(item);
  auto number = [&](std::size_t i) {
    try {
      std::size_t used = 0;
      const double v = std::stod(parts.at(i), &used);
      if (used != parts[i].size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw Error(ErrorCode::InvalidArgument, "bad number in marginal '" + text + "'");
    }
  };
  if (parts.size() == 1 && (parts[0] == "hermite" || parts[0] == "normal")) return PolyFamily::hermite();
  if (parts.size() == 1 && (parts[0] == "legendre" || parts[0] == "uniform")) return PolyFamily::legendre();
  if (parts.size() == 3 && parts[0] == "normal") return PolyFamily::normal(number(1), number(2));
  if (parts.size() == 3 && parts[0] == "uniform") return PolyFamily::uniform(number(1), number(2));
  throw Error(ErrorCode::InvalidArgument, "unknown marginal '" + text + "'");
}

}  // namespace deeppce
