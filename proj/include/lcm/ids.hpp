#pragma once

#include <string>
#include <string_view>

namespace lcm {

// Record ids are "<kind>_<ulid>": a short kind tag followed by a 26-char
// Crockford-base32 ULID. Ids generated later in the same process sort
// lexicographically after earlier ones (millisecond timestamp prefix plus
// a monotonic counter within the same millisecond).
namespace id_kind {
inline constexpr const char* message = "msg";
inline constexpr const char* summary = "sum";
inline constexpr const char* file = "fil";
inline constexpr const char* session = "ses";
inline constexpr const char* map_job = "job";
}  // namespace id_kind

std::string generate_id(std::string_view kind);

// Kind tag of an id ("" when the id has no underscore).
std::string_view id_kind_of(std::string_view id);

}  // namespace lcm
