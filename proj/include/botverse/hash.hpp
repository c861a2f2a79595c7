#pragma once

#include <string>
#include <string_view>

namespace botverse {

// Lowercase hex SHA-256 of `data`.
std::string sha256_hex(std::string_view data);

// Hash chain over an append-only sequence of lines:
//   h_0 = 64 zeros, h_i = SHA256(h_{i-1} || line_i).
// The chain head is a plain string, so it can be checkpointed and resumed.
class LogHash {
 public:
  LogHash();
  explicit LogHash(std::string head) : head_(std::move(head)) {}

  void append(std::string_view line);
  const std::string& hex() const noexcept { return head_; }

 private:
  std::string head_;
};

}  // namespace botverse
