#include "adair/tensor.hpp"

#include <sstream>

namespace adair {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::DivisionByZero: return "DivisionByZero";
    case ErrorKind::InvalidGroups: return "InvalidGroups";
    case ErrorKind::NonScalarLoss: return "NonScalarLoss";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::UnsupportedSize: return "UnsupportedSize";
    case ErrorKind::OddExtent: return "OddExtent";
    case ErrorKind::InvalidRange: return "InvalidRange";
    case ErrorKind::HeadMismatch: return "HeadMismatch";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::CorruptCheckpoint: return "CorruptCheckpoint";
    case ErrorKind::ConfigMismatch: return "ConfigMismatch";
    case ErrorKind::UnnormalizedKernel: return "UnnormalizedKernel";
    case ErrorKind::PatchTooLarge: return "PatchTooLarge";
    case ErrorKind::NaNLoss: return "NaNLoss";
    case ErrorKind::ImageTooSmall: return "ImageTooSmall";
    case ErrorKind::MalformedHeader: return "MalformedHeader";
    case ErrorKind::TruncatedPayload: return "TruncatedPayload";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index e : shape) {
    if (e < 0) fail(ErrorKind::ShapeMismatch, "negative extent in " + shape_string(shape));
    n *= e;
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

}  // namespace adair
