// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace orthomoe {

// Library-wide error taxonomy. The code names the violated contract; what()
// carries context for humans.
class Error : public std::runtime_error {
 public:
  enum class Code {
    RankDeficient,
    Singular,
    DimMismatch,
    InvalidRank,
    InvalidConfig,
    WrongVariant,
    ShapeMismatch,
    NonFiniteInput,
    CacheMismatch,
    EmptySequence,
    InvalidDim,
    AllMasked,
    NotOnSimplex,
    EmptyMask,
    ConfigParse,
    Io,
    NonFiniteLoss,
  };

  Error(Code code, const std::string& what) : std::runtime_error(what), code_(code) {}

  Code code() const { return code_; }

 private:
  Code code_;
};

const char* error_code_name(Error::Code code);

}  // namespace orthomoe
