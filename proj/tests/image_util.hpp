#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "memefuse/data.hpp"

namespace memefuse::testing {

/// Binary PPM (P6) whose pixel at (x, y) is `color(x, y)` as {r, g, b}.
inline Bytes make_ppm(int width, int height, const std::function<std::array<std::uint8_t, 3>(int, int)>& color) {
  const std::string header = "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  Bytes out(header.begin(), header.end());
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const auto c = color(x, y);
      out.insert(out.end(), c.begin(), c.end());
    }
  return out;
}

inline Bytes solid_ppm(int width, int height, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  return make_ppm(width, height, [=](int, int) { return std::array<std::uint8_t, 3>{r, g, b}; });
}

}  // namespace memefuse::testing
