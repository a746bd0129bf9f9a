#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace headfem {

/// Coarse failure class, mapped onto CLI exit codes (2 and 3 respectively).
enum class ErrorCategory { Input, Runtime };

class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& message, ErrorCategory category)
        : std::runtime_error(message), kind_(std::move(kind)), category_(category) {}

    const std::string& kind() const noexcept { return kind_; }
    ErrorCategory category() const noexcept { return category_; }

private:
    std::string kind_;
    ErrorCategory category_;
};

#define HEADFEM_DEFINE_ERROR(Name, Category)                                   \
    class Name : public Error {                                                \
    public:                                                                    \
        explicit Name(const std::string& message)                              \
            : Error(#Name, message, ErrorCategory::Category) {}                \
    };

// input / configuration problems
HEADFEM_DEFINE_ERROR(FormatError, Input)
HEADFEM_DEFINE_ERROR(IndexError, Input)
HEADFEM_DEFINE_ERROR(TopologyError, Input)
HEADFEM_DEFINE_ERROR(ConfigError, Input)
HEADFEM_DEFINE_ERROR(IoError, Input)
HEADFEM_DEFINE_ERROR(ParameterError, Input)
HEADFEM_DEFINE_ERROR(ElectrodeError, Input)
HEADFEM_DEFINE_ERROR(CurrentPatternError, Input)
HEADFEM_DEFINE_ERROR(DataError, Input)

// numerical / runtime problems
HEADFEM_DEFINE_ERROR(EmptyMeshError, Runtime)
HEADFEM_DEFINE_ERROR(AssemblyError, Runtime)
HEADFEM_DEFINE_ERROR(LocationError, Runtime)
HEADFEM_DEFINE_ERROR(SingularPreconditionerError, Runtime)
HEADFEM_DEFINE_ERROR(SingularSystemError, Runtime)
HEADFEM_DEFINE_ERROR(DofError, Runtime)
HEADFEM_DEFINE_ERROR(NumericalError, Runtime)
HEADFEM_DEFINE_ERROR(RoiError, Runtime)
HEADFEM_DEFINE_ERROR(DecompositionError, Runtime)
HEADFEM_DEFINE_ERROR(UndefinedMetricError, Runtime)
HEADFEM_DEFINE_ERROR(EmptyAnomalyError, Runtime)

#undef HEADFEM_DEFINE_ERROR

} // namespace headfem
