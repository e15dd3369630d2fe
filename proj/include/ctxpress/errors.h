// Copyright 2026 The ctxpress Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef CTXPRESS_ERRORS_H_
#define CTXPRESS_ERRORS_H_

#include <stdexcept>
#include <string>

namespace ctxpress {

// Root of every error the harness throws. Callers that only need to report
// and exit can catch this one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define CTXPRESS_DEFINE_ERROR(Name)       \
  class Name : public Error {             \
   public:                                \
    using Error::Error;                   \
  }

CTXPRESS_DEFINE_ERROR(InvalidKeyError);
CTXPRESS_DEFINE_ERROR(SchemaError);
CTXPRESS_DEFINE_ERROR(CurationError);
CTXPRESS_DEFINE_ERROR(PairingError);
CTXPRESS_DEFINE_ERROR(BankError);
CTXPRESS_DEFINE_ERROR(RangeError);
CTXPRESS_DEFINE_ERROR(PreconditionError);
CTXPRESS_DEFINE_ERROR(TemplateError);
CTXPRESS_DEFINE_ERROR(TransportError);
CTXPRESS_DEFINE_ERROR(AuthError);
CTXPRESS_DEFINE_ERROR(ProtocolError);
CTXPRESS_DEFINE_ERROR(OracleError);
CTXPRESS_DEFINE_ERROR(NumericError);
CTXPRESS_DEFINE_ERROR(EmptyInputError);
CTXPRESS_DEFINE_ERROR(UndefinedMetricError);
CTXPRESS_DEFINE_ERROR(AlignmentError);
CTXPRESS_DEFINE_ERROR(MatrixError);
CTXPRESS_DEFINE_ERROR(ConfigError);
CTXPRESS_DEFINE_ERROR(ReportError);
CTXPRESS_DEFINE_ERROR(IoError);

#undef CTXPRESS_DEFINE_ERROR

}  // namespace ctxpress

#endif  // CTXPRESS_ERRORS_H_
