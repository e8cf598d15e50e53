#pragma once

#include <stdexcept>
#include <string>

namespace freeevent {

// Every error raised by the library derives from Error. The CLI maps the
// category onto its exit-code contract (usage=1, data=2, numeric=3).
enum class ErrorCategory { usage, data, numeric };

class Error : public std::runtime_error {
public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}
  ErrorCategory category() const noexcept { return category_; }

private:
  ErrorCategory category_;
};

#define FREEEVENT_DEFINE_ERROR(Name, Category)                                    \
  class Name : public Error {                                                     \
  public:                                                                         \
    explicit Name(const std::string& what) : Error(ErrorCategory::Category, what) {} \
  };

FREEEVENT_DEFINE_ERROR(ParameterError, usage)
FREEEVENT_DEFINE_ERROR(ConfigError, usage)
FREEEVENT_DEFINE_ERROR(AddressError, usage)
FREEEVENT_DEFINE_ERROR(IndexError, usage)
FREEEVENT_DEFINE_ERROR(VocabularyError, usage)
FREEEVENT_DEFINE_ERROR(ShapeError, data)
FREEEVENT_DEFINE_ERROR(DataError, data)
FREEEVENT_DEFINE_ERROR(IoError, data)
FREEEVENT_DEFINE_ERROR(ConsistencyError, data)
FREEEVENT_DEFINE_ERROR(OrderingError, usage)
FREEEVENT_DEFINE_ERROR(DomainError, numeric)
FREEEVENT_DEFINE_ERROR(NumericError, numeric)
FREEEVENT_DEFINE_ERROR(TrainingError, numeric)

#undef FREEEVENT_DEFINE_ERROR

}  // namespace freeevent
