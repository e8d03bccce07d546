/*
 * Copyright 2026 The nlfeat Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef NLFEAT_ERROR_HPP_
#define NLFEAT_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace nlfeat {

// Failure classes. The numeric values double as CLI exit codes.
enum class ErrorKind : int {
  kUsage = 1,
  kData = 2,
  kBackend = 3,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& message)
      : Error(ErrorKind::kUsage, message) {}
};

// Malformed inputs, violated preconditions, and anything else caused by the
// data handed to the pipeline.
class DataError : public Error {
 public:
  explicit DataError(const std::string& message)
      : Error(ErrorKind::kData, message) {}
};

// A metric that is undefined for its input, e.g. AUROC with one class.
class IllDefinedError : public DataError {
 public:
  explicit IllDefinedError(const std::string& message)
      : DataError("ill-defined: " + message) {}
};

class ScorerError : public Error {
 public:
  enum class Reason {
    kUnavailable,  // transport failure or retries exhausted
    kHttpStatus,   // non-retryable non-2xx status
    kSchema,       // response body does not match the wire contract
    kContract,     // malformed request or unknown routing key
  };

  ScorerError(Reason reason, const std::string& message)
      : Error(ErrorKind::kBackend, message), reason_(reason) {}

  Reason reason() const noexcept { return reason_; }

 private:
  Reason reason_;
};

}  // namespace nlfeat

#endif  // NLFEAT_ERROR_HPP_
