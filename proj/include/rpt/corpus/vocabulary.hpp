#pragma once

#include <algorithm>
#include <cctype>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "rpt/core/error.hpp"

namespace rpt {

/// Token <-> id map. Ordinary tokens get ids 0..n-1 in lexicographic order;
/// the reserved [PAD], [MASK] and [SOD] follow as n, n+1, n+2.
class Vocabulary {
 public:
  static constexpr std::string_view kPad = "[PAD]";
  static constexpr std::string_view kMask = "[MASK]";
  static constexpr std::string_view kSod = "[SOD]";

  Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

  /// Builds from raw tokens (normalized, deduplicated, sorted).
  explicit Vocabulary(const std::vector<std::string>& raw_tokens) {
    std::set<std::string> uniq;
    for (const auto& t : raw_tokens) {
      std::string n = normalize(t);
      if (!n.empty()) uniq.insert(std::move(n));
    }
    tokens_.assign(uniq.begin(), uniq.end());
    for (std::string_view r : {kPad, kMask, kSod}) tokens_.emplace_back(r);
    for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], i);
  }

  /// Trims surrounding whitespace and lowercases. Reserved names are upper-case,
  /// so normalized raw text can never collide with them.
  static std::string normalize(std::string_view raw) {
    auto first = raw.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    auto last = raw.find_last_not_of(" \t\r\n");
    std::string out(raw.substr(first, last - first + 1));
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
  }

  std::size_t size() const noexcept { return tokens_.size(); }
  std::size_t ordinary_size() const noexcept { return tokens_.size() - 3; }
  std::size_t pad_id() const noexcept { return tokens_.size() - 3; }
  std::size_t mask_id() const noexcept { return tokens_.size() - 2; }
  std::size_t sod_id() const noexcept { return tokens_.size() - 1; }
  bool is_reserved(std::size_t id) const noexcept { return id >= pad_id(); }

  /// Looks up a raw token after normalization.
  std::optional<std::size_t> find(std::string_view raw) const {
    auto it = index_.find(normalize(raw));
    if (it == index_.end() || is_reserved(it->second)) return std::nullopt;
    return it->second;
  }

  std::size_t id(std::string_view raw) const {
    if (auto v = find(raw)) return *v;
    throw ValidationError("token not in vocabulary: " + std::string(raw));
  }

  const std::string& token(std::size_t id) const {
    if (id >= tokens_.size()) throw ValidationError("token id out of range: " + std::to_string(id));
    return tokens_[id];
  }

  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace rpt
