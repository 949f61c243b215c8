#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace kgsynth {

enum class ErrorKind {
  corpus_access,
  empty_corpus,
  rules,
  id_collision,
  lookup,
  domain,
  precondition,
  provider,
  scoring,
  template_error,
  stall,
  empty_search,
  dependency,
  usage,
  io,
  schema,
};

std::string_view to_string(ErrorKind kind) noexcept;

// Single exception type for the library; callers branch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace kgsynth
