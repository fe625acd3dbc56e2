#pragma once

#include <stdexcept>

namespace avnft {

/// Raised when a computation produces numerically unusable results
/// (non-finite losses, failed derivative verification). The command-line
/// layer maps this to its own exit status, distinct from usage errors.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace avnft
