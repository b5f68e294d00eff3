#pragma once

#include <stdexcept>
#include <string>

namespace mmpg {

/// Base class for all errors raised by this library.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// structure_io
struct MalformedRecord : Error { using Error::Error; };
struct MissingBackbone : Error { using Error::Error; };
struct EmptyChain : Error { using Error::Error; };

// geometry
struct DegenerateGeometry : Error { using Error::Error; };

// potential
struct OutOfRange : Error { using Error::Error; };
struct BadMagic : Error { using Error::Error; };
struct ShapeMismatch : Error { using Error::Error; };
struct TruncatedPayload : Error { using Error::Error; };

// graph construction
struct ZeroEmbedding : Error { using Error::Error; };

// autodiff
struct NotScalar : Error { using Error::Error; };

// model / training
struct LabelArityMismatch : Error { using Error::Error; };
struct ConfigInvalid : Error { using Error::Error; };
struct FileNotFound : Error { using Error::Error; };

}  // namespace mmpg
