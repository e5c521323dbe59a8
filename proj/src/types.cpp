#include "dgppu/types.hpp"

#include "dgppu/error.hpp"

namespace dgppu {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput: return "invalid-input";
    case ErrorKind::InvalidConfig: return "invalid-config";
    case ErrorKind::EmptyInput: return "empty-input";
    case ErrorKind::InsufficientPoints: return "insufficient-points";
    case ErrorKind::Domain: return "domain";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Schema: return "schema";
    case ErrorKind::Validation: return "validation";
    case ErrorKind::WrongFrame: return "wrong-frame";
    case ErrorKind::Corruption: return "corruption";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

std::optional<BoneLabel> label_from_code(int code) {
  if (code < 0 || code >= kNumClasses) return std::nullopt;
  return static_cast<BoneLabel>(code);
}

std::string_view to_string(BoneLabel label) {
  switch (label) {
    case BoneLabel::Femur: return "femur";
    case BoneLabel::Patella: return "patella";
    case BoneLabel::Tibia: return "tibia";
  }
  return "?";
}

std::optional<BoneLabel> parse_label(std::string_view name) {
  for (auto label : kAllLabels) {
    if (to_string(label) == name) return label;
  }
  return std::nullopt;
}

std::string_view to_string(Position position) {
  switch (position) {
    case Position::P0: return "P0";
    case Position::P1: return "P1";
    case Position::P2: return "P2";
    case Position::P3: return "P3";
  }
  return "?";
}

std::optional<Position> parse_position(std::string_view name) {
  for (auto p : kAllPositions) {
    if (to_string(p) == name) return p;
  }
  return std::nullopt;
}

std::string_view to_string(ScanKind kind) {
  return kind == ScanKind::Thorough ? "thorough" : "partial";
}

std::optional<ScanKind> parse_scan_kind(std::string_view name) {
  if (name == "thorough") return ScanKind::Thorough;
  if (name == "partial") return ScanKind::Partial;
  return std::nullopt;
}

}  // namespace dgppu
