#pragma once

#include <stdexcept>
#include <string>

namespace semshape {

// File and format problems: malformed headers, truncated payloads,
// inconsistent dimensions, non-finite data on disk.
class FormatError : public std::runtime_error {
public:
    explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

// Numerical failures at run time (as opposed to bad files or bad arguments).
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

// Degenerate geometry, e.g. a zero-length measurement segment.
class SingularityError : public NumericalError {
public:
    explicit SingularityError(const std::string& what) : NumericalError(what) {}
};

// A request would materialize something larger than the configured cap.
class CapacityError : public NumericalError {
public:
    explicit CapacityError(const std::string& what) : NumericalError(what) {}
};

}  // namespace semshape
