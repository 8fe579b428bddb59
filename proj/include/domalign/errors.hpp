#pragma once

#include <stdexcept>
#include <string>

namespace domalign {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define DOMALIGN_DEFINE_ERROR(Name)              \
    class Name : public Error {                  \
    public:                                      \
        using Error::Error;                      \
    }

DOMALIGN_DEFINE_ERROR(IoError);
DOMALIGN_DEFINE_ERROR(FormatError);
DOMALIGN_DEFINE_ERROR(EmptyDatasetError);
DOMALIGN_DEFINE_ERROR(DimensionMismatchError);
DOMALIGN_DEFINE_ERROR(DegenerateSourceError);
DOMALIGN_DEFINE_ERROR(NonConvergenceError);
DOMALIGN_DEFINE_ERROR(ImageTooSmallError);
DOMALIGN_DEFINE_ERROR(InsufficientCorrectPixelsError);
DOMALIGN_DEFINE_ERROR(DegenerateDataError);
DOMALIGN_DEFINE_ERROR(AllClassesAbsentError);
DOMALIGN_DEFINE_ERROR(MissingCenterError);
DOMALIGN_DEFINE_ERROR(SingleClassError);
DOMALIGN_DEFINE_ERROR(WarpMismatchError);
DOMALIGN_DEFINE_ERROR(ConfigError);
DOMALIGN_DEFINE_ERROR(InvariantViolation);

#undef DOMALIGN_DEFINE_ERROR

}  // namespace domalign
