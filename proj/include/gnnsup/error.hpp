#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gnnsup {

enum class ErrorCode {
    NonFinite,
    NoConvergence,
    ShapeMismatch,
    InvalidConfig,
    GenerationExhausted,
    WrongDataset,
    SingleClass,
    EmptyClass,
    ZeroRow,
    Undefined,
    Io,
};

constexpr std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::GenerationExhausted: return "GenerationExhausted";
    case ErrorCode::WrongDataset: return "WrongDataset";
    case ErrorCode::SingleClass: return "SingleClass";
    case ErrorCode::EmptyClass: return "EmptyClass";
    case ErrorCode::ZeroRow: return "ZeroRow";
    case ErrorCode::Undefined: return "Undefined";
    case ErrorCode::Io: return "Io";
    }
    return "Unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace gnnsup
