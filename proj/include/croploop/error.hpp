// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace croploop
{

/// Base for every error the library raises.
class Error: public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

class InvalidArgument: public Error
{
  public:
    using Error::Error;
};

class OutOfBounds: public Error
{
  public:
    using Error::Error;
};

class InvalidDecay: public Error
{
  public:
    using Error::Error;
};

class AnswererFailure: public Error
{
  public:
    AnswererFailure(std::string message, std::size_t rung): Error(std::move(message)), _rung(rung) {}

    [[nodiscard]] auto rung() const noexcept -> std::size_t { return _rung; }

  private:
    std::size_t _rung;
};

/// Network-level failure of a policy backend after all retries.
class TransportError: public Error
{
  public:
    TransportError(std::string message, int attempts): Error(std::move(message)), _attempts(attempts) {}

    [[nodiscard]] auto attempts() const noexcept -> int { return _attempts; }

  private:
    int _attempts;
};

/// Non-retryable HTTP error reported by a policy backend.
class RemoteError: public Error
{
  public:
    RemoteError(int status, std::string bodyExcerpt):
        Error("remote error " + std::to_string(status) + ": " + bodyExcerpt),
        _status(status),
        _body(std::move(bodyExcerpt))
    {
    }

    [[nodiscard]] auto status() const noexcept -> int { return _status; }
    [[nodiscard]] auto body() const noexcept -> const std::string& { return _body; }

  private:
    int _status;
    std::string _body;
};

class NonFiniteGradient: public Error
{
  public:
    using Error::Error;
};

class MissingGt: public Error
{
  public:
    using Error::Error;
};

class DatasetMismatch: public Error
{
  public:
    using Error::Error;
};

class ParseError: public Error
{
  public:
    ParseError(std::string message, std::size_t line):
        Error("line " + std::to_string(line) + ": " + message), _line(line)
    {
    }

    [[nodiscard]] auto line() const noexcept -> std::size_t { return _line; }

  private:
    std::size_t _line;
};

class ImageMissing: public Error
{
  public:
    explicit ImageMissing(std::string path): Error("image missing: " + path), _path(std::move(path)) {}

    [[nodiscard]] auto path() const noexcept -> const std::string& { return _path; }

  private:
    std::string _path;
};

class ValidationError: public Error
{
  public:
    using Error::Error;
};

} // namespace croploop
