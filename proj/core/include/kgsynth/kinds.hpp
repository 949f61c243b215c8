#pragma once

#include <optional>
#include <string_view>

namespace kgsynth {

enum class EntityKind {
  module,
  namespace_,
  class_,
  interface,
  enum_,
  method,
  property,
  unknown,
};

std::string_view to_string(EntityKind kind) noexcept;
std::optional<EntityKind> parse_entity_kind(std::string_view text) noexcept;

/// Kinds that may own members. Everything else is a leaf.
constexpr bool is_container(EntityKind kind) noexcept {
  return kind == EntityKind::module || kind == EntityKind::namespace_ ||
         kind == EntityKind::class_ || kind == EntityKind::interface ||
         kind == EntityKind::enum_;
}

enum class SeedType { single, multi };

std::string_view to_string(SeedType type) noexcept;
std::optional<SeedType> parse_seed_type(std::string_view text) noexcept;

}  // namespace kgsynth
