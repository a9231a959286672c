#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace evoflow {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

#define EVOFLOW_DEFINE_ERROR(Name)                                                                 \
    class Name : public Error {                                                                    \
      public:                                                                                      \
        using Error::Error;                                                                        \
    }

// workflow-model
EVOFLOW_DEFINE_ERROR(ValidationError);
EVOFLOW_DEFINE_ERROR(CycleError);
EVOFLOW_DEFINE_ERROR(InvalidEdit);
EVOFLOW_DEFINE_ERROR(WouldCreateCycle);

// mcp-client
EVOFLOW_DEFINE_ERROR(TransportError);
EVOFLOW_DEFINE_ERROR(ProtocolError);
EVOFLOW_DEFINE_ERROR(VersionError);
EVOFLOW_DEFINE_ERROR(DuplicateToolError);
EVOFLOW_DEFINE_ERROR(SchemaError);

// provider
EVOFLOW_DEFINE_ERROR(BackendError);
EVOFLOW_DEFINE_ERROR(ConfigError);

// archive
EVOFLOW_DEFINE_ERROR(DimMismatch);
EVOFLOW_DEFINE_ERROR(ZeroVector);
EVOFLOW_DEFINE_ERROR(StorageError);
EVOFLOW_DEFINE_ERROR(NotFound);

// executor
EVOFLOW_DEFINE_ERROR(SandboxError);
EVOFLOW_DEFINE_ERROR(GateConfigError);

// judge / orchestrator
EVOFLOW_DEFINE_ERROR(TemplateError);
EVOFLOW_DEFINE_ERROR(SynthesisError);
EVOFLOW_DEFINE_ERROR(MutationExhausted);
EVOFLOW_DEFINE_ERROR(PlanEmptyError);

#undef EVOFLOW_DEFINE_ERROR

/// Malformed input. `offset` is the byte position where parsing gave up.
class ParseError : public Error {
  public:
    ParseError(const std::string& what, std::size_t offset)
        : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

  private:
    std::size_t offset_;
};

} // namespace evoflow
