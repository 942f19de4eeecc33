#pragma once

#include <stdexcept>
#include <string>

namespace fedqnn {

/// Base class for every error this library throws on its own behalf.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// qstate
struct ArityMismatch : Error { using Error::Error; };
struct DuplicateTarget : Error { using Error::Error; };
struct IndexOutOfRange : Error { using Error::Error; };
struct ZeroVector : Error { using Error::Error; };
struct TooLong : Error { using Error::Error; };

// qnn
struct ParamCountMismatch : Error { using Error::Error; };
struct EmptyDataset : Error { using Error::Error; };

// optim (DimensionMismatch is shared with the data module)
struct DimensionMismatch : Error { using Error::Error; };
struct NonFiniteGradient : Error { using Error::Error; };
struct WrongOptimizerKind : Error { using Error::Error; };

// fed
struct EmptyUpdateSet : Error { using Error::Error; };
struct LengthMismatch : Error { using Error::Error; };
struct NonPositiveWeight : Error { using Error::Error; };

// fednet
struct MalformedMessage : Error { using Error::Error; };
struct VersionMismatch : Error { using Error::Error; };
struct OversizeLine : Error { using Error::Error; };
struct Timeout : Error { using Error::Error; };
struct DuplicateClient : Error { using Error::Error; };
struct ConnectionLost : Error { using Error::Error; };
struct ProtocolViolation : Error { using Error::Error; };

// data
struct InsufficientLesions : Error { using Error::Error; };
struct InsufficientHealthyArea : Error { using Error::Error; };
struct DegenerateSplit : Error { using Error::Error; };
struct TooFewPatches : Error { using Error::Error; };
struct MalformedRow : Error { using Error::Error; };
struct MissingHeader : Error { using Error::Error; };

// metrics / cli
struct EmptyMatrix : Error { using Error::Error; };
struct EmptyHistory : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };

} // namespace fedqnn
