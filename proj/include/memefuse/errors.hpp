#pragma once

#include <stdexcept>
#include <string>

namespace memefuse {

/// Coarse failure classes. The CLI maps each one onto a distinct exit code.
enum class ErrorKind {
  argument,
  config,
  data,
  transport,
  integrity,
  pipeline,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define MEMEFUSE_DEFINE_ERROR(Name, Kind)                                   \
  class Name : public Error {                                               \
   public:                                                                  \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

MEMEFUSE_DEFINE_ERROR(ArgumentError, argument)
MEMEFUSE_DEFINE_ERROR(ShapeError, argument)
MEMEFUSE_DEFINE_ERROR(EncodingError, argument)
MEMEFUSE_DEFINE_ERROR(ConfigError, config)
MEMEFUSE_DEFINE_ERROR(ParseError, data)
MEMEFUSE_DEFINE_ERROR(UnknownLabelError, data)
MEMEFUSE_DEFINE_ERROR(MissingLabelError, data)
MEMEFUSE_DEFINE_ERROR(DecodeError, data)
MEMEFUSE_DEFINE_ERROR(FileError, data)
MEMEFUSE_DEFINE_ERROR(IntegrityError, integrity)
MEMEFUSE_DEFINE_ERROR(TransportError, transport)
MEMEFUSE_DEFINE_ERROR(EmptyRationaleError, transport)
MEMEFUSE_DEFINE_ERROR(PipelineError, pipeline)
MEMEFUSE_DEFINE_ERROR(GuardError, pipeline)

#undef MEMEFUSE_DEFINE_ERROR

}  // namespace memefuse
