#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace shapmkt {

enum class ErrorCode {
  kRange,
  kParameter,
  kIncompleteShares,
  kShape,
  kDealerExhausted,
  kAbort,
  kParse,
  kValidation,
  kUnsupportedGate,
  kNonceReuse,
  kFormat,
  kVersion,
  kDivergence,
  kUndefined,
  kInsufficientFunds,
  kUnknownTx,
  kAlreadySettled,
  kDeadlinePassed,
  kUnknownParty,
  kConfig,
  kIo,
};

std::string_view ErrorCodeName(ErrorCode code);

// Every failure raised by the library carries a machine-checkable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(ErrorCodeName(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace shapmkt
