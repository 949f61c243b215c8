#include "kgsynth/cache.hpp"

#include <mutex>

#include "kgsynth/error.hpp"
#include "kgsynth/support.hpp"

namespace kgsynth {

ResponseCache::ResponseCache(std::filesystem::path file) : file_(std::move(file)) {
  std::error_code ec;
  if (!std::filesystem::exists(*file_, ec)) return;
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_text_file(*file_));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::io, file_->string() + ": " + e.what());
  }
  if (!doc.is_object()) throw Error(ErrorKind::io, file_->string() + ": expected an object");
  for (auto& [key, value] : doc.items()) entries_.emplace(key, value);
}

std::optional<nlohmann::json> ResponseCache::get(const std::string& key) const {
  std::shared_lock lock(mutex_);
  auto it = entries_.find(key);
  if (it == entries_.end()) {
    ++misses_;
    return std::nullopt;
  }
  ++hits_;
  return std::optional<nlohmann::json>(std::in_place, it->second);
}

void ResponseCache::put(const std::string& key, nlohmann::json value) {
  std::unique_lock lock(mutex_);
  entries_.insert_or_assign(key, std::move(value));
}

void ResponseCache::save() const {
  if (!file_) return;
  nlohmann::json doc = nlohmann::json::object();
  {
    std::shared_lock lock(mutex_);
    for (const auto& [key, value] : entries_) doc[key] = value;
  }
  write_file_atomic(*file_, doc.dump(1) + "\n");
}

std::size_t ResponseCache::size() const {
  std::shared_lock lock(mutex_);
  return entries_.size();
}

}  // namespace kgsynth
