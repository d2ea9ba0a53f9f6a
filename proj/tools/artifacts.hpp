#pragma once

// Artifact plumbing for the command-line tool: config hashing, header lines
// and verified reads.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <iomanip>
#include <sstream>
#include <string>
#include <string_view>

#include <json.hpp>

#include "eptomo/errors.hpp"

namespace eptomo::cli {

using json = nlohmann::json;
namespace fs = std::filesystem;

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

inline std::string config_hash(const json& config) { return hex64(fnv1a(config.dump())); }

/// Every text artifact opens with these lines. Readers skip '#' lines, so the
/// header never disturbs the module parsers.
inline std::string artifact_header(const std::string& command, const json& config) {
  std::string h = "# eptomo " + command + "\n";
  h += "# config=" + config.dump() + "\n";
  h += "# config_hash=" + config_hash(config) + "\n";
  return h;
}

struct Artifact {
  std::string text;
  std::optional<json> config;  // embedded config, when the file has a header
};

/// Reads a file and checks its embedded config against its embedded hash.
inline Artifact read_artifact(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  Artifact a{buf.str(), std::nullopt};

  std::istringstream lines(a.text);
  std::string line;
  std::optional<std::string> config_text;
  std::optional<std::string> hash;
  while (std::getline(lines, line)) {
    if (line.empty() || line[0] != '#') {
      if (!line.empty()) break;
      continue;
    }
    if (line.rfind("# config=", 0) == 0) config_text = line.substr(9);
    if (line.rfind("# config_hash=", 0) == 0) hash = line.substr(14);
  }
  if (config_text.has_value() != hash.has_value()) {
    throw DataError("'" + path.string() + "': config header without matching config_hash");
  }
  if (config_text) {
    try {
      a.config = json::parse(*config_text);
    } catch (const json::exception&) {
      throw DataError("'" + path.string() + "': embedded config is not valid JSON");
    }
    if (config_hash(*a.config) != *hash) {
      throw DataError("'" + path.string() + "': config_hash mismatch (embedded " + *hash + ", recomputed " +
                      config_hash(*a.config) + ")");
    }
  }
  return a;
}

/// Value of a "# key=value" header line, if present.
inline std::optional<std::string> header_value(const std::string& text, const std::string& key) {
  std::istringstream lines(text);
  std::string line;
  const std::string prefix = "# " + key + "=";
  while (std::getline(lines, line)) {
    if (line.rfind(prefix, 0) == 0) return line.substr(prefix.size());
  }
  return std::nullopt;
}

class ArtifactWriter {
 public:
  ArtifactWriter(fs::path dir, std::string command, json config)
      : dir_(std::move(dir)), command_(std::move(command)), config_(std::move(config)) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec || !fs::is_directory(dir_)) throw DataError("cannot create output directory '" + dir_.string() + "'");
  }

  const fs::path& dir() const { return dir_; }

  /// Text artifact: header, optional extra header lines, then the body.
  void text(const std::string& name, const std::string& body, const std::string& extra_header = {}) const {
    write(name, artifact_header(command_, config_) + extra_header + body);
  }

  /// JSON artifact with "config" and "config_hash" members.
  void json_file(const std::string& name, json body) const {
    body["command"] = command_;
    body["config"] = config_;
    body["config_hash"] = config_hash(config_);
    write(name, body.dump(2) + "\n");
  }

 private:
  void write(const std::string& name, const std::string& content) const {
    const fs::path p = dir_ / name;
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << content;
    if (!out) throw DataError("cannot write '" + p.string() + "'");
  }

  fs::path dir_;
  std::string command_;
  json config_;
};

}  // namespace eptomo::cli
