#pragma once

#include <stdexcept>
#include <string>

namespace aggcap {

/// A well-formed request that violates a mathematical precondition
/// (e.g. two multisets handed to a certifier are delta-equivalent).
class DomainError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed textual input: fixtures, dataset files, config files.
class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace aggcap
