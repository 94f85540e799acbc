// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace lipctx {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A point (query or atom) fell outside the domain a certificate was issued
/// for. `stage` identifies the layer: 0 is the model input, 2l+1 the
/// attention of block l, 2l+2 its MLP; -1 when not evaluated inside a model.
class DomainError : public Error {
 public:
  DomainError(const std::string& what, int stage = -1)
      : Error(what), stage_(stage) {}
  int stage() const noexcept { return stage_; }

 private:
  int stage_;
};

/// Unreadable, unwritable or malformed file.
class IoError : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

}  // namespace lipctx
