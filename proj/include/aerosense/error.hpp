#pragma once

#include <stdexcept>
#include <string>

namespace aero {

// Error categories map to CLI exit codes: usage -> 2, data -> 3, numeric -> 4.
enum class ErrorKind { usage, data, numeric };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

#define AERO_DEFINE_ERROR(Name, Kind)                                                  \
    class Name : public Error {                                                        \
    public:                                                                            \
        explicit Name(const std::string& msg) : Error(ErrorKind::Kind, #Name ": " + msg) {} \
    }

AERO_DEFINE_ERROR(InvalidConfig, usage);
AERO_DEFINE_ERROR(InvalidRange, usage);
AERO_DEFINE_ERROR(InvalidProbability, usage);

AERO_DEFINE_ERROR(MalformedHeader, data);
AERO_DEFINE_ERROR(ErrorBudgetExceeded, data);
AERO_DEFINE_ERROR(InsufficientCoverage, data);
AERO_DEFINE_ERROR(EmptyDataset, data);
AERO_DEFINE_ERROR(EmptyTrainingSet, data);
AERO_DEFINE_ERROR(EmptyTestSet, data);
AERO_DEFINE_ERROR(EmptySampleSet, data);
AERO_DEFINE_ERROR(EmptySituation, data);
AERO_DEFINE_ERROR(CapacityExceeded, data);
AERO_DEFINE_ERROR(GeometryMismatch, data);
AERO_DEFINE_ERROR(GeometryError, data);

AERO_DEFINE_ERROR(ShapeMismatch, numeric);
AERO_DEFINE_ERROR(NonScalarRoot, numeric);
AERO_DEFINE_ERROR(DivergenceDetected, numeric);

#undef AERO_DEFINE_ERROR

} // namespace aero
