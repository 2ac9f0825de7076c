#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace macode {

/// Coarse grouping used by the command-line tool to pick an exit code.
enum class ErrorCategory { Usage, Data, Numeric };

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

#define MACODE_DEFINE_ERROR(Name, Category)                         \
  class Name : public Error {                                       \
   public:                                                          \
    explicit Name(const std::string& what)                          \
        : Error(ErrorCategory::Category, std::string(#Name ": ") + what) {} \
  }

MACODE_DEFINE_ERROR(InvalidArgument, Usage);
MACODE_DEFINE_ERROR(ConfigError, Usage);
MACODE_DEFINE_ERROR(IndexOutOfRange, Usage);
MACODE_DEFINE_ERROR(InfeasibleRate, Usage);
MACODE_DEFINE_ERROR(HeaderMismatch, Data);
MACODE_DEFINE_ERROR(UnknownCategory, Data);
MACODE_DEFINE_ERROR(SchemaMismatch, Data);
MACODE_DEFINE_ERROR(DegenerateColumn, Data);
MACODE_DEFINE_ERROR(NoContinuousColumns, Data);
MACODE_DEFINE_ERROR(EmptyTrain, Data);
MACODE_DEFINE_ERROR(VersionMismatch, Data);
MACODE_DEFINE_ERROR(CheckpointError, Data);
MACODE_DEFINE_ERROR(ZeroMassCondition, Data);
MACODE_DEFINE_ERROR(LengthMismatch, Usage);
MACODE_DEFINE_ERROR(ShapeMismatch, Numeric);
MACODE_DEFINE_ERROR(NonFinite, Numeric);
MACODE_DEFINE_ERROR(LineSearchFailed, Numeric);
MACODE_DEFINE_ERROR(QuadratureFailure, Numeric);

#undef MACODE_DEFINE_ERROR

/// Malformed CSV cell. Row numbers count data rows from 1 (the header is row 0).
class ParseError : public Error {
 public:
  ParseError(std::size_t row, std::string column, const std::string& detail)
      : Error(ErrorCategory::Data, "ParseError: row " + std::to_string(row) + ", column '" +
                                       column + "': " + detail),
        row_(row),
        column_(std::move(column)) {}

  std::size_t row() const noexcept { return row_; }
  const std::string& column() const noexcept { return column_; }

 private:
  std::size_t row_;
  std::string column_;
};

}  // namespace macode
