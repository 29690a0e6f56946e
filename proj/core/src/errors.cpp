#include "anogen/errors.hpp"

namespace anogen {
namespace {

std::string join_issues(const std::vector<std::string>& issues) {
    std::string out = "dataset validation failed (" + std::to_string(issues.size()) + " issue";
    out += issues.size() == 1 ? ")" : "s)";
    for (const auto& issue : issues) {
        out += "\n  - " + issue;
    }
    return out;
}

}  // namespace

ValidationError::ValidationError(std::vector<std::string> issues)
    : Error(join_issues(issues)), issues_(std::move(issues)) {}

StageError::StageError(std::string stage, const std::string& what)
    : Error("[" + stage + "] " + what), stage_(std::move(stage)) {}

}  // namespace anogen
