#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace prlm {

// Bad input data, bad schema, bad arguments. The CLI maps these to exit code 1.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Failure while computing. The CLI maps these to exit code 2.
struct RuntimeFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ParseError : ConfigError {
  ParseError(std::size_t line_no, const std::string& reason)
      : ConfigError("parse error at line " + std::to_string(line_no) + ": " + reason),
        line(line_no) {}
  std::size_t line;
};

struct SchemaError : ConfigError {
  explicit SchemaError(const std::string& detail) : ConfigError("schema error: " + detail) {}
};

struct DanglingUser : ConfigError {
  DanglingUser(const std::string& example, const std::string& user)
      : ConfigError("example '" + example + "' references unknown user '" + user + "'"),
        example_id(example),
        user_id(user) {}
  std::string example_id;
  std::string user_id;
};

struct InvalidN : ConfigError {
  explicit InvalidN(int n) : ConfigError("invalid n-gram order: " + std::to_string(n)) {}
};

struct EmptyInput : ConfigError {
  explicit EmptyInput(const std::string& what_empty) : ConfigError(what_empty + " is empty") {}
};

struct EmptyProfile : ConfigError {
  EmptyProfile() : ConfigError("profile is empty") {}
};

struct EmptyReference : ConfigError {
  EmptyReference() : ConfigError("reference is empty") {}
};

struct DimMismatch : ConfigError {
  DimMismatch(std::size_t got, std::size_t want)
      : ConfigError("vector dimension " + std::to_string(got) + " does not match table dimension " +
                    std::to_string(want)) {}
};

struct ZeroQuery : ConfigError {
  ZeroQuery() : ConfigError("query vector has zero norm") {}
};

struct TemplateError : ConfigError {
  explicit TemplateError(const std::string& placeholder)
      : ConfigError("prompt template is missing placeholder " + placeholder) {}
};

struct GenerationFailure : RuntimeFailure {
  explicit GenerationFailure(const std::string& example, const std::string& reason)
      : RuntimeFailure("generation failed for example '" + example + "': " + reason),
        example_id(example) {}
  std::string example_id;
};

struct NonFiniteLoss : RuntimeFailure {
  explicit NonFiniteLoss(const std::string& diagnostic)
      : RuntimeFailure("non-finite loss: " + diagnostic) {}
};

struct NonFiniteGradient : RuntimeFailure {
  explicit NonFiniteGradient(const std::string& diagnostic)
      : RuntimeFailure("non-finite gradient: " + diagnostic) {}
};

struct GroupTooSmall : ConfigError {
  explicit GroupTooSmall(std::size_t g)
      : ConfigError("reward group needs at least 2 samples, got " + std::to_string(g)) {}
};

struct ShapeMismatch : ConfigError {
  explicit ShapeMismatch(const std::string& detail) : ConfigError("shape mismatch: " + detail) {}
};

struct Unsupported : ConfigError {
  explicit Unsupported(const std::string& detail) : ConfigError("unsupported: " + detail) {}
};

struct RemoteError : RuntimeFailure {
  RemoteError(int http_status, const std::string& body)
      : RuntimeFailure("remote endpoint error, status " + std::to_string(http_status) + ": " + body),
        status(http_status) {}
  int status;
};

struct TimeoutError : RuntimeFailure {
  explicit TimeoutError(const std::string& detail) : RuntimeFailure("timeout: " + detail) {}
};

}  // namespace prlm
