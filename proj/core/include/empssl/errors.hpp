#pragma once

#include <stdexcept>
#include <string>

namespace empssl {

// Numerical failures.
struct NotPositiveDefinite : std::runtime_error { using std::runtime_error::runtime_error; };
struct DimensionMismatch : std::runtime_error { using std::runtime_error::runtime_error; };
struct ZeroMatrix : std::runtime_error { using std::runtime_error::runtime_error; };

// Network / tensor failures.
struct ShapeMismatch : std::runtime_error { using std::runtime_error::runtime_error; };
struct CacheMismatch : std::runtime_error { using std::runtime_error::runtime_error; };

// Divergence signals; carry enough context to locate the blow-up.
struct NonFiniteActivation : std::runtime_error {
  explicit NonFiniteActivation(std::size_t layer, const std::string& what)
      : std::runtime_error(what), layer_index(layer) {}
  std::size_t layer_index;
};
struct NonFiniteUpdate : std::runtime_error { using std::runtime_error::runtime_error; };

// Data layer.
struct TruncatedFile : std::runtime_error { using std::runtime_error::runtime_error; };
struct BadLabel : std::runtime_error { using std::runtime_error::runtime_error; };
struct PatchTooLarge : std::runtime_error { using std::runtime_error::runtime_error; };
struct IoError : std::runtime_error { using std::runtime_error::runtime_error; };

// Config layer.
struct ParseError : std::runtime_error { using std::runtime_error::runtime_error; };
struct ValidationError : std::runtime_error { using std::runtime_error::runtime_error; };

}  // namespace empssl
