#pragma once

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

#include "panodream/image.hpp"

namespace panodream {

// Semantic classes of the synthetic indoor worlds.
enum class SemanticClass : std::int32_t {
  kVoid = 0,
  kFloor = 1,
  kCeiling = 2,
  kWall = 3,
  kDoor = 4,
  kWindow = 5,
  kTable = 6,
  kChair = 7,
  kBed = 8,
  kSofa = 9,
  kCabinet = 10,
  kLamp = 11,
  kAppliance = 12,
};

inline constexpr int kDefaultClassCount = 13;

constexpr std::int32_t class_id(SemanticClass c) { return static_cast<std::int32_t>(c); }

inline constexpr std::array<std::string_view, kDefaultClassCount> kClassNames = {
    "void", "floor", "ceiling", "wall", "door", "window", "table",
    "chair", "bed", "sofa", "cabinet", "lamp", "appliance"};

// Base colors per class, indexed by class id.
inline const std::vector<Rgb8>& default_palette() {
  static const std::vector<Rgb8> palette = {
      {0, 0, 0},       {164, 132, 96},  {236, 236, 228}, {200, 190, 170}, {120, 72, 40},
      {150, 200, 240}, {180, 110, 60},  {90, 140, 70},   {200, 80, 110},  {70, 90, 170},
      {130, 100, 80},  {250, 220, 90},  {170, 170, 180}};
  return palette;
}

}  // namespace panodream
