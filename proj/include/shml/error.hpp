#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace shml {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration or precondition violation on user-supplied input.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Dimension or schema mismatch between data and a model/spec.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Malformed text (action grammar, LLM listings). Carries the offending span.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::string text, std::size_t offset = 0, std::size_t length = 0)
      : Error(what), text_(std::move(text)), offset_(offset), length_(length) {}

  const std::string& text() const noexcept { return text_; }
  std::size_t offset() const noexcept { return offset_; }
  std::size_t length() const noexcept { return length_; }
  std::string span() const { return offset_ <= text_.size() ? text_.substr(offset_, length_) : std::string{}; }

 private:
  std::string text_;
  std::size_t offset_;
  std::size_t length_;
};

}  // namespace shml
