#pragma once

#include <stdexcept>
#include <string>

namespace dttbsr {

// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define DTTBSR_DEFINE_ERROR(Name)           \
  class Name : public Error {               \
   public:                                  \
    using Error::Error;                     \
  }

DTTBSR_DEFINE_ERROR(ArgumentError);
DTTBSR_DEFINE_ERROR(ShapeError);
DTTBSR_DEFINE_ERROR(ConfigError);
DTTBSR_DEFINE_ERROR(IoError);
DTTBSR_DEFINE_ERROR(FormatError);
DTTBSR_DEFINE_ERROR(UnsupportedError);
DTTBSR_DEFINE_ERROR(CorruptFileError);
DTTBSR_DEFINE_ERROR(EmptyInputError);
DTTBSR_DEFINE_ERROR(DegenerateWindowError);
DTTBSR_DEFINE_ERROR(LengthError);
DTTBSR_DEFINE_ERROR(ChecksumError);
DTTBSR_DEFINE_ERROR(VersionError);
DTTBSR_DEFINE_ERROR(ConfigMismatchError);
DTTBSR_DEFINE_ERROR(EmptyDatasetError);
DTTBSR_DEFINE_ERROR(NonFiniteLossError);

#undef DTTBSR_DEFINE_ERROR

}  // namespace dttbsr
