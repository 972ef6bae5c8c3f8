#pragma once

#include <stdexcept>
#include <string>

namespace g2p {

// Error taxonomy shared by the library and the CLI. The CLI maps kinds to
// process exit codes: config -> 1 (usage), parse/vocabulary/data -> 2,
// everything else -> 3 (runtime).
enum class ErrorKind {
  config,      // bad flag or config value
  parse,       // malformed input file
  vocabulary,  // unknown symbol or id out of range
  data,        // missing file, empty input, bad split
  dimension,   // tensor shape mismatch
  contract,    // API precondition violated
  numeric,     // NaN/Inf detected in a debug-checked pass
};

class G2pError : public std::runtime_error {
 public:
  G2pError(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) {
  throw G2pError(kind, msg);
}

inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config:
      return 1;
    case ErrorKind::parse:
    case ErrorKind::vocabulary:
    case ErrorKind::data:
      return 2;
    default:
      return 3;
  }
}

}  // namespace g2p
