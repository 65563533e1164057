// Copyright 2026 The FuseFL Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace fusefl {

// Root of every error raised by the library. The CLI maps ConfigError to
// exit code 2 and everything else to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

class InternalError : public Error {
 public:
  using Error::Error;
};

class PartitionError : public Error {
 public:
  using Error::Error;
};

class FusionError : public Error {
 public:
  using Error::Error;
};

class ProbeError : public Error {
 public:
  using Error::Error;
};

enum class LoadErrorCode { kBadMagic, kTruncated, kCountMismatch, kEmptyDataset, kIo };

class LoadError : public Error {
 public:
  LoadError(LoadErrorCode code, const std::string& what) : Error(what), code_(code) {}
  LoadErrorCode code() const noexcept { return code_; }

 private:
  LoadErrorCode code_;
};

enum class CheckpointErrorCode { kBadMagic, kVersion, kDigest, kTruncated, kFormat, kIo };

class CheckpointError : public Error {
 public:
  CheckpointError(CheckpointErrorCode code, const std::string& what)
      : Error(what), code_(code) {}
  CheckpointErrorCode code() const noexcept { return code_; }

 private:
  CheckpointErrorCode code_;
};

}  // namespace fusefl
