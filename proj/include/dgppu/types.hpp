#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace dgppu {

// Row-major so that a row is one point / one feature vector.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

enum class BoneLabel : std::uint8_t { Femur = 0, Patella = 1, Tibia = 2 };

inline constexpr int kNumClasses = 3;
inline constexpr std::array<BoneLabel, kNumClasses> kAllLabels = {
    BoneLabel::Femur, BoneLabel::Patella, BoneLabel::Tibia};

constexpr int code(BoneLabel label) { return static_cast<int>(label); }

std::optional<BoneLabel> label_from_code(int code);
std::string_view to_string(BoneLabel label);
std::optional<BoneLabel> parse_label(std::string_view name);

// P0 is full flexion, P3 full extension.
enum class Position : std::uint8_t { P0 = 0, P1 = 1, P2 = 2, P3 = 3 };

inline constexpr std::array<Position, 4> kAllPositions = {Position::P0, Position::P1,
                                                          Position::P2, Position::P3};

std::string_view to_string(Position position);
std::optional<Position> parse_position(std::string_view name);

enum class ScanKind : std::uint8_t { Thorough = 0, Partial = 1 };

std::string_view to_string(ScanKind kind);
std::optional<ScanKind> parse_scan_kind(std::string_view name);

using LabelCounts = std::array<std::size_t, kNumClasses>;

}  // namespace dgppu
