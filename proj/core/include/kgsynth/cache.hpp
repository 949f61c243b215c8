#pragma once

#include <atomic>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <shared_mutex>
#include <string>

#include <nlohmann/json.hpp>

namespace kgsynth {

/// Key/value store persisted as a flat JSON object. Reads run concurrently;
/// writes are serialized.
class ResponseCache {
 public:
  ResponseCache() = default;
  /// Loads `file` if it exists; `save()` writes back to it.
  explicit ResponseCache(std::filesystem::path file);

  ResponseCache(const ResponseCache&) = delete;
  ResponseCache& operator=(const ResponseCache&) = delete;

  std::optional<nlohmann::json> get(const std::string& key) const;
  void put(const std::string& key, nlohmann::json value);

  /// No-op for in-memory caches.
  void save() const;

  std::size_t size() const;
  std::size_t hits() const noexcept { return hits_; }
  std::size_t misses() const noexcept { return misses_; }

 private:
  std::optional<std::filesystem::path> file_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, nlohmann::json> entries_;
  mutable std::atomic<std::size_t> hits_{0};
  mutable std::atomic<std::size_t> misses_{0};
};

}  // namespace kgsynth
