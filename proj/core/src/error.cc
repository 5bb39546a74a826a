#include "shapmkt/error.h"

namespace shapmkt {

std::string_view ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kRange: return "range error";
    case ErrorCode::kParameter: return "parameter error";
    case ErrorCode::kIncompleteShares: return "incomplete shares";
    case ErrorCode::kShape: return "shape mismatch";
    case ErrorCode::kDealerExhausted: return "dealer exhausted";
    case ErrorCode::kAbort: return "protocol abort";
    case ErrorCode::kParse: return "parse error";
    case ErrorCode::kValidation: return "validation error";
    case ErrorCode::kUnsupportedGate: return "unsupported gate";
    case ErrorCode::kNonceReuse: return "nonce reuse";
    case ErrorCode::kFormat: return "format error";
    case ErrorCode::kVersion: return "version mismatch";
    case ErrorCode::kDivergence: return "divergence";
    case ErrorCode::kUndefined: return "undefined result";
    case ErrorCode::kInsufficientFunds: return "insufficient funds";
    case ErrorCode::kUnknownTx: return "unknown transaction";
    case ErrorCode::kAlreadySettled: return "already settled";
    case ErrorCode::kDeadlinePassed: return "deadline passed";
    case ErrorCode::kUnknownParty: return "unknown party";
    case ErrorCode::kConfig: return "config error";
    case ErrorCode::kIo: return "io error";
  }
  return "error";
}

}  // namespace shapmkt
