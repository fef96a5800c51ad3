#pragma once

#include <stdexcept>
#include <string>

namespace freeflow {

/// Invalid inputs, broken invariants, failed preconditions. CLI maps these to exit 1.
class DomainError : public std::runtime_error {
public:
  explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Filesystem and serialization failures.
class IoError : public std::runtime_error {
public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Chip extraction with insufficient raster coverage.
class CoverageError : public DomainError {
public:
  explicit CoverageError(const std::string& msg) : DomainError(msg) {}
};

}  // namespace freeflow
