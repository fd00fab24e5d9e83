#pragma once

#include <stdexcept>
#include <string>

namespace twostage {

// Coarse error categories surfaced on stderr by the CLI.
enum class ErrorCategory { io, validation, numeric, config };

inline const char* to_string(ErrorCategory c) {
    switch (c) {
        case ErrorCategory::io: return "io";
        case ErrorCategory::validation: return "validation";
        case ErrorCategory::numeric: return "numeric";
        case ErrorCategory::config: return "config";
    }
    return "unknown";
}

class Error : public std::runtime_error {
   public:
    Error(ErrorCategory cat, const std::string& msg)
        : std::runtime_error(msg), category_(cat) {}

    ErrorCategory category() const { return category_; }

   private:
    ErrorCategory category_;
};

}  // namespace twostage
