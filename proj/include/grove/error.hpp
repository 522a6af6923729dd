#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace grove {

enum class ErrorCode {
    MalformedCase,
    EmptyCorpus,
    UnknownParent,
    UnknownNode,
    DeprecatedNode,
    VerticalityViolation,
    ShapeGuardViolation,
    MissingApplyConditions,
    CycleError,
    JsonSyntaxError,
    SchemaError,
    AmbiguousPath,
    AtomicAbort,
    AgentProtocolFailure,
    NoScriptProduced,
    PreconditionViolation,
    TransportError,
    AuthError,
    TimeoutError,
    DomainError,
    FixParseError,
    ToolError,
    IoError,
    FormatVersionError,
    CorruptTree,
    ScriptExhausted,
    LockHeld,
};

inline std::string_view to_string(ErrorCode code) noexcept
{
    switch (code) {
    case ErrorCode::MalformedCase: return "MalformedCase";
    case ErrorCode::EmptyCorpus: return "EmptyCorpus";
    case ErrorCode::UnknownParent: return "UnknownParent";
    case ErrorCode::UnknownNode: return "UnknownNode";
    case ErrorCode::DeprecatedNode: return "DeprecatedNode";
    case ErrorCode::VerticalityViolation: return "VerticalityViolation";
    case ErrorCode::ShapeGuardViolation: return "ShapeGuardViolation";
    case ErrorCode::MissingApplyConditions: return "MissingApplyConditions";
    case ErrorCode::CycleError: return "CycleError";
    case ErrorCode::JsonSyntaxError: return "JsonSyntaxError";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::AmbiguousPath: return "AmbiguousPath";
    case ErrorCode::AtomicAbort: return "AtomicAbort";
    case ErrorCode::AgentProtocolFailure: return "AgentProtocolFailure";
    case ErrorCode::NoScriptProduced: return "NoScriptProduced";
    case ErrorCode::PreconditionViolation: return "PreconditionViolation";
    case ErrorCode::TransportError: return "TransportError";
    case ErrorCode::AuthError: return "AuthError";
    case ErrorCode::TimeoutError: return "TimeoutError";
    case ErrorCode::DomainError: return "DomainError";
    case ErrorCode::FixParseError: return "FixParseError";
    case ErrorCode::ToolError: return "ToolError";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::FormatVersionError: return "FormatVersionError";
    case ErrorCode::CorruptTree: return "CorruptTree";
    case ErrorCode::ScriptExhausted: return "ScriptExhausted";
    case ErrorCode::LockHeld: return "LockHeld";
    }
    return "Unknown";
}

/// Base exception for every engine failure. `code()` is the stable,
/// machine-checkable part; `what()` carries a human-readable detail.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& detail)
        : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code)
    {
    }

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

/// Raised by script application when one op fails; the tree is left untouched.
class AtomicAbort : public Error {
public:
    AtomicAbort(std::size_t op_index, ErrorCode cause, const std::string& detail)
        : Error(ErrorCode::AtomicAbort,
                "op " + std::to_string(op_index) + " failed with " +
                    std::string(to_string(cause)) + ": " + detail),
          op_index_(op_index), cause_(cause), cause_detail_(detail)
    {
    }

    std::size_t op_index() const noexcept { return op_index_; }
    ErrorCode cause() const noexcept { return cause_; }
    const std::string& cause_detail() const noexcept { return cause_detail_; }

private:
    std::size_t op_index_;
    ErrorCode cause_;
    std::string cause_detail_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& detail)
{
    throw Error(code, detail);
}

} // namespace grove
