#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace powerskel {

enum class ErrorKind {
  kInvalidTopology,
  kShape,
  kOrdering,
  kNumeric,
  kRange,
  kIndex,
  kConfig,
  kEncode,
  kDecode,
  kTransport,
  kDegeneratePose,
  kEmptyReport,
  kIo,
};

std::string_view ToString(ErrorKind kind);

/// Every failure raised by the library carries a machine-checkable kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string &what)
      : std::runtime_error(std::string(ToString(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

enum class DecodeReason { kTruncated, kMagic, kVersion, kLength, kSelfPath, kNonFinite };

std::string_view ToString(DecodeReason reason);

class DecodeError : public Error {
 public:
  DecodeError(DecodeReason reason, const std::string &what)
      : Error(ErrorKind::kDecode, std::string(ToString(reason)) + ": " + what), reason_(reason) {}

  DecodeReason reason() const noexcept { return reason_; }

 private:
  DecodeReason reason_;
};

[[noreturn]] inline void Fail(ErrorKind kind, const std::string &what) { throw Error(kind, what); }

inline void Require(bool cond, ErrorKind kind, const std::string &what) {
  if (!cond) Fail(kind, what);
}

}  // namespace powerskel
