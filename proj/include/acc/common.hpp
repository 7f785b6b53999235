#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace acc {

#ifdef ACC_REAL_FLOAT
using real = float;
#else
using real = double;
#endif

// Error hierarchy. The CLI maps these onto exit codes:
//   UsageError -> 2, DataError (and subtypes) -> 3, NumericError/LogicError -> 4.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct UsageError : Error {
    using Error::Error;
};
struct DataError : Error {
    using Error::Error;
};
struct NumericError : Error {
    using Error::Error;
};
struct LogicError : Error {
    using Error::Error;
};

// Data-side failures.
struct IoError : DataError {
    using DataError::DataError;
};
struct ParseError : DataError {
    using DataError::DataError;
};
struct FormatError : DataError {
    using DataError::DataError;
};
struct UnsupportedEncoding : DataError {
    using DataError::DataError;
};
struct OverlapError : DataError {
    using DataError::DataError;
};
struct OrderError : DataError {
    using DataError::DataError;
};
struct UnknownPhoneme : DataError {
    using DataError::DataError;
};
struct IncompleteMap : DataError {
    using DataError::DataError;
};
struct ContradictsClassTable : DataError {
    using DataError::DataError;
};
struct LengthMismatch : DataError {
    using DataError::DataError;
};
struct InsufficientSpeakers : DataError {
    using DataError::DataError;
};
struct WrongMode : DataError {
    using DataError::DataError;
};
struct EmptyBatch : DataError {
    using DataError::DataError;
};

// Numeric / programming failures.
struct ShapeMismatch : LogicError {
    using LogicError::LogicError;
};
struct NotScalar : LogicError {
    using LogicError::LogicError;
};
struct StaleTape : LogicError {
    using LogicError::LogicError;
};
struct IndexOutOfRange : LogicError {
    using LogicError::LogicError;
};
struct NonFiniteLoss : NumericError {
    using NumericError::NumericError;
};

// 64-bit FNV-1a, used for stable config/content hashes.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t fnv1a64(const std::string& s) {
    return fnv1a64(s.data(), s.size());
}

}  // namespace acc
