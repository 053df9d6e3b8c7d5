#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace exmap {

enum class ErrorKind {
  kShape,            // tensor/layer shape disagreement
  kInvalidArgument,  // precondition on a value (range, size, ordering)
  kDegenerate,       // input is valid but carries no usable structure
  kConvergence,      // iterative solver hit its cap
  kIo,               // filesystem failure
  kFormat,           // malformed or truncated file contents
  kConfig,           // config-file schema violation
  kMissingArtifact,  // pipeline stage input not produced yet
};

std::string_view kind_name(ErrorKind kind);

/// Exception type thrown by every exmap module. The kind is a stable,
/// machine-readable category; the CLI maps it to its exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace exmap
