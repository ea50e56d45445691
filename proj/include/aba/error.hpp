#pragma once

#include <stdexcept>
#include <string>

namespace aba {

/// Shape or value outside an operation's contract.
struct InvalidArgument : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A loss or gradient became NaN/Inf.
struct NumericFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Requested data does not exist (e.g. ground-truth flow on a real sequence).
struct Unavailable : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// NCC template with no variance.
struct DegenerateTemplate : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// File/format problems; message carries the file (and line when known).
struct LoadError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Predicted parameters broke the simplex constraints after the fix-up.
struct InternalConsistency : std::logic_error {
  using std::logic_error::logic_error;
};

/// Training diverged. The network passed by reference keeps the last finite weights.
struct TrainingFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw InvalidArgument(what);
}

}  // namespace aba
