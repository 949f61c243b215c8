#pragma once

#include <cstddef>
#include <span>
#include <string>

namespace kgsynth {

/// A non-fatal finding. `line` is 1-based; 0 means the finding is not tied
/// to an input line.
struct Diagnostic {
  std::string source;
  std::size_t line = 0;
  std::string message;

  bool operator==(const Diagnostic&) const = default;
};

/// `path:lineno: message`, or `path: message` when there is no line.
std::string format_diagnostic(const Diagnostic& diagnostic);
std::string format_diagnostics(std::span<const Diagnostic> diagnostics);

}  // namespace kgsynth
