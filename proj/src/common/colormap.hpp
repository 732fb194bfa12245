#pragma once

#include <algorithm>
#include <array>
#include <cstdint>

namespace cactus {

/// Jet colormap: 0 -> dark blue, 0.5 -> green/yellow, 1 -> dark red.
inline std::array<std::uint8_t, 3> jet(double t) {
  t = std::clamp(t, 0.0, 1.0);
  auto ramp = [](double x) { return std::clamp(1.5 - std::abs(4.0 * x), 0.0, 1.0); };
  const double r = ramp(t - 0.75);
  const double g = ramp(t - 0.5);
  const double b = ramp(t - 0.25);
  return {static_cast<std::uint8_t>(r * 255.0 + 0.5), static_cast<std::uint8_t>(g * 255.0 + 0.5),
          static_cast<std::uint8_t>(b * 255.0 + 0.5)};
}

}  // namespace cactus
