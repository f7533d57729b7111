// SPDX-FileCopyrightText: 2026 mms contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace mms {

// Base class for everything this library throws on purpose. Callers that
// want a single catch site can catch mms::Error; the CLI maps these to
// exit code 1 (runtime failure) vs 2 (bad flags/config).
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor construction with inconsistent shape/data.
struct InvalidShape : Error {
  using Error::Error;
};

// Op applied to operands whose shapes don't line up.
struct ShapeError : Error {
  using Error::Error;
};

// Row/column/patch index out of range.
struct IndexError : Error {
  using Error::Error;
};

// backward() called on a non-scalar or untracked tensor.
struct InvalidLoss : Error {
  using Error::Error;
};

// finite_diff_check step size outside the sane window.
struct InvalidEps : Error {
  using Error::Error;
};

// Image/patch geometry mismatch (divisibility, grid vs mask, ...).
struct GeometryError : Error {
  using Error::Error;
};

// Loss asked for over an empty mask.
struct EmptyMaskError : Error {
  using Error::Error;
};

// A selection rule (e.g. char-overlap filter) matched nothing.
struct EmptySelectionError : Error {
  using Error::Error;
};

// Synthesizer can't fit the requested word into the canvas.
struct LayoutError : Error {
  using Error::Error;
};

// Bad config value or unknown preset/strategy name.
struct ConfigError : Error {
  using Error::Error;
};

// Scalar argument outside its documented domain.
struct RangeError : Error {
  using Error::Error;
};

// File / stream level failure (missing file, truncated blob, bad magic).
struct IoError : Error {
  using Error::Error;
};

// Internal invariant broken; seeing one of these is a bug in this library,
// not in the caller.
struct ContractViolation : Error {
  using Error::Error;
};

}  // namespace mms
