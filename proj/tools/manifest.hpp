#pragma once

#include <openssl/sha.h>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rpt/core/error.hpp"

namespace rpt::cli {

namespace fs = std::filesystem;

inline std::string sha1_hex(const std::string& bytes) {
  unsigned char digest[SHA_DIGEST_LENGTH];
  SHA1(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), digest);
  std::ostringstream os;
  for (unsigned char b : digest) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(b);
  return os.str();
}

inline std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  return {std::istreambuf_iterator<char>(in), {}};
}

// Git object ids: blobs hash "blob <size>\0<content>"; a directory hashes the
// sorted "<relative path> <blob id>" lines of every regular file below it.
inline std::string blob_id(const fs::path& file) {
  const std::string content = read_bytes(file);
  return sha1_hex("blob " + std::to_string(content.size()) + '\0' + content);
}

inline std::string content_id(const fs::path& path, const fs::path& skip = {}) {
  if (!fs::is_directory(path)) return blob_id(path);
  std::vector<std::string> lines;
  for (const auto& e : fs::recursive_directory_iterator(path)) {
    if (!e.is_regular_file() || (!skip.empty() && e.path().filename() == skip)) continue;
    lines.push_back(fs::relative(e.path(), path).generic_string() + ' ' + blob_id(e.path()));
  }
  std::sort(lines.begin(), lines.end());
  std::string body;
  for (const auto& l : lines) body += l + '\n';
  return sha1_hex("tree " + std::to_string(body.size()) + '\0' + body);
}

inline std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

/// One per artifact directory (manifest.json). `hash` covers the command,
/// resolved configuration, seed and input contents, not timestamps or outputs.
class RunManifest {
 public:
  RunManifest(std::string command, fs::path out_dir) : command_(std::move(command)), out_(std::move(out_dir)) {
    started_ = utc_now();
  }

  void set_config(const std::string& text) { config_ = text; }
  void set_seed(std::uint64_t seed) { seed_ = seed; }

  void add_input(const std::string& role, const fs::path& path) {
    inputs_.push_back({{"role", role}, {"path", path.string()}, {"content_hash", content_id(path)}});
  }

  std::string hash() const {
    nlohmann::json key = {{"command", command_}, {"config", config_}, {"seed", seed_}};
    nlohmann::json ins = nlohmann::json::array();
    for (const auto& in : inputs_) ins.push_back({{"role", in["role"]}, {"content_hash", in["content_hash"]}});
    key["inputs"] = ins;
    return sha1_hex(key.dump());
  }

  /// Lists every file in the output directory and writes manifest.json.
  void write() const {
    nlohmann::json outputs = nlohmann::json::array();
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(out_))
      if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files)
      outputs.push_back({{"path", fs::relative(f, out_).generic_string()}, {"content_hash", blob_id(f)}});
    const nlohmann::json j = {{"command", command_}, {"seed", seed_},         {"config", config_},
                              {"inputs", inputs_},   {"outputs", outputs},    {"hash", hash()},
                              {"started", started_}, {"finished", utc_now()}};
    std::ofstream f(out_ / "manifest.json");
    if (!f) throw IoError("cannot write " + (out_ / "manifest.json").string());
    f << j.dump(2) << '\n';
  }

 private:
  std::string command_;
  fs::path out_;
  std::string config_;
  std::uint64_t seed_ = 0;
  nlohmann::json inputs_ = nlohmann::json::array();
  std::string started_;
};

}  // namespace rpt::cli
