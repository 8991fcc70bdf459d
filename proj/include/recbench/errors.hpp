#pragma once

#include <stdexcept>
#include <string>

namespace recbench {

// Root of the library's exception hierarchy. Every throwing operation in
// recbench raises a subclass of this.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class InvalidConfigError : public Error {
public:
    explicit InvalidConfigError(const std::string& msg) : Error("invalid config: " + msg) {}
};

class MissingColumnError : public Error {
public:
    explicit MissingColumnError(const std::string& col) : Error("missing column: " + col) {}
};

class EmptyInputError : public Error {
public:
    explicit EmptyInputError(const std::string& what) : Error("empty input: " + what) {}
};

class NonFiniteError : public Error {
public:
    explicit NonFiniteError(const std::string& where) : Error("non-finite value in " + where) {}
};

class InvalidDimError : public Error {
public:
    explicit InvalidDimError(const std::string& msg) : Error("invalid dimension: " + msg) {}
};

class ShapeMismatchError : public Error {
public:
    explicit ShapeMismatchError(const std::string& msg) : Error("shape mismatch: " + msg) {}
};

class UnknownNodeError : public Error {
public:
    explicit UnknownNodeError(int node) : Error("unknown node: " + std::to_string(node)) {}
};

class KindMismatchError : public Error {
public:
    explicit KindMismatchError(const std::string& msg) : Error("model kind mismatch: " + msg) {}
};

class EmptyTrainingSetError : public Error {
public:
    EmptyTrainingSetError() : Error("empty training set") {}
};

class DivergedLossError : public Error {
public:
    explicit DivergedLossError(int epoch)
        : Error("training loss diverged (non-finite) at epoch " + std::to_string(epoch)),
          epoch_(epoch) {}
    int epoch() const { return epoch_; }

private:
    int epoch_;
};

class UniverseTooSmallError : public Error {
public:
    explicit UniverseTooSmallError(const std::string& msg) : Error("universe too small: " + msg) {}
};

class EmptyUniverseError : public Error {
public:
    EmptyUniverseError() : Error("empty evaluation universe") {}
};

class ListTooShortError : public Error {
public:
    explicit ListTooShortError(const std::string& msg) : Error("ranked list too short: " + msg) {}
};

class NoUsableQueriesError : public Error {
public:
    NoUsableQueriesError() : Error("no usable evaluation queries (all sessions shorter than 2 items)") {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error("io error: " + msg) {}
};

}  // namespace recbench
