#pragma once

#include <stdexcept>
#include <string>

namespace lcm {

// Base class for every failure the engine is willing to surface. Tool
// dispatch catches Error and turns it into a model-visible tool error;
// anything escaping that is a bug in the engine itself.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// An id that does not resolve to a record.
class NotFoundError : public Error {
public:
    using Error::Error;
};

// A write that would break referential integrity or graph shape.
class IntegrityError : public Error {
public:
    using Error::Error;
};

// Malformed caller input: bad regex, bad JSONL line, bad schema.
class ValidationError : public Error {
public:
    using Error::Error;
};

// An operation invoked on the wrong kind of thing or with missing args.
class UsageError : public Error {
public:
    using Error::Error;
};

// The storage layer failed underneath us.
class StorageError : public Error {
public:
    using Error::Error;
};

// A model backend failed. retriable() distinguishes transport trouble
// (timeouts, 5xx) from deterministic rejections.
class ProviderError : public Error {
public:
    ProviderError(const std::string& what, bool retriable)
        : Error(what), retriable_(retriable) {}

    bool retriable() const { return retriable_; }

private:
    bool retriable_ = false;
};

}  // namespace lcm
