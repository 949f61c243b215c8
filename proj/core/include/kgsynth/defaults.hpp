#pragma once

#include <string_view>

namespace kgsynth {

// Data files compiled into the library at configure time.
std::string_view default_rules_json() noexcept;
std::string_view default_question_template() noexcept;
std::string_view default_code_template() noexcept;

}  // namespace kgsynth
