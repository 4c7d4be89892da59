#pragma once

#include <array>
#include <cstdint>
#include <string>

namespace taco {

inline constexpr int kNumColors = 14;

// The six textual attributes carried by every character and segment.
struct AttributeLabel {
  int font_id = 0;
  int color_id = 0;
  bool bold = false;
  bool italic = false;
  bool underline = false;
  bool strike = false;

  bool operator==(const AttributeLabel&) const = default;
};

struct NamedColor {
  const char* name;
  std::uint8_t r, g, b;
};

// Fixed 14-color palette; ids index this table.
inline constexpr std::array<NamedColor, kNumColors> kColorTable = {{
    {"black", 0, 0, 0},
    {"white", 255, 255, 255},
    {"red", 220, 30, 30},
    {"green", 20, 140, 50},
    {"blue", 30, 60, 210},
    {"yellow", 240, 220, 40},
    {"orange", 245, 140, 20},
    {"purple", 130, 40, 160},
    {"brown", 130, 80, 40},
    {"gray", 128, 128, 128},
    {"cyan", 40, 190, 210},
    {"magenta", 220, 40, 180},
    {"dark-red", 120, 10, 10},
    {"dark-blue", 10, 20, 110},
}};

inline const char* attribute_name(int i) {
  static const char* names[6] = {"font", "color", "bold", "italic", "underline", "strike"};
  return names[i];
}

}  // namespace taco
