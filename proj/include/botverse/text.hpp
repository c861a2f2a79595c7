#pragma once

#include <cstddef>
#include <string>
#include <string_view>

namespace botverse {

// Number of code points; invalid bytes count as one each.
std::size_t utf8_length(std::string_view s);
bool utf8_valid(std::string_view s);
// Longest prefix holding at most `max_chars` code points, never splitting one.
std::string utf8_truncate(std::string_view s, std::size_t max_chars);

}  // namespace botverse
