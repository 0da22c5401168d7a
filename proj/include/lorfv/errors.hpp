#pragma once

#include <stdexcept>
#include <string>

namespace lorfv {

/// Base class for every error thrown by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

struct EmptyGridError : Error { using Error::Error; };
struct EmptyRangeError : Error { using Error::Error; };
struct DegenerateFaceError : Error { using Error::Error; };
struct BadDimensionsError : Error { using Error::Error; };
struct NonMonotoneGridError : Error { using Error::Error; };
struct ShearTooLargeError : Error { using Error::Error; };
struct MeshParseError : Error { using Error::Error; };
struct MeshInvalidError : Error { using Error::Error; };

/// mu_inverse could not bracket the requested value inside the declared range.
struct OutOfRangeError : Error { using Error::Error; };
/// A scheme step hit OutOfRangeError while inverting an outflow average.
struct InversionOutOfRangeError : Error { using Error::Error; };
/// Diffusion constant below the monotonicity bound.
struct DTooSmallError : Error { using Error::Error; };
struct NeighborMissingError : Error { using Error::Error; };
/// Test function support touches the final slice of the trajectory.
struct UnsupportedPhiError : Error { using Error::Error; };
struct InconsistentFamilyError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };

} // namespace lorfv
