// conseg/errors.hpp

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABILITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#ifndef CONSEG_ERRORS_HPP_
#define CONSEG_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace conseg {

// Invalid configuration value. The message names the offending field.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string &msg)
      : std::runtime_error("config error: " + msg) {}
};

// Malformed runtime input (shape mismatch, empty set, bad argument).
class InputError : public std::runtime_error {
 public:
  explicit InputError(const std::string &msg)
      : std::runtime_error("input error: " + msg) {}
};

// Problem with on-disk dataset content. The message names the file.
class DatasetError : public std::runtime_error {
 public:
  explicit DatasetError(const std::string &msg)
      : std::runtime_error("dataset error: " + msg) {}
};

// Operation requested on a model that was not built with the needed part.
class CapabilityError : public std::runtime_error {
 public:
  explicit CapabilityError(const std::string &msg)
      : std::runtime_error("capability error: " + msg) {}
};

// Numerical failure during optimisation. The message names the component.
class TrainingError : public std::runtime_error {
 public:
  explicit TrainingError(const std::string &msg)
      : std::runtime_error("training error: " + msg) {}
};

}  // namespace conseg

#endif  // CONSEG_ERRORS_HPP_
