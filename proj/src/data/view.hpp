#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cactus::data {

/// Cardiac view label. Ordinal values are part of the file formats.
enum class ViewClass : int { A4C = 0, SC = 1, PL = 2, PSAV = 3, PSMV = 4, RANDOM = 5 };

inline constexpr int kNumViews = 6;
inline constexpr std::array<ViewClass, kNumViews> kAllViews{
    ViewClass::A4C, ViewClass::SC,   ViewClass::PL,
    ViewClass::PSAV, ViewClass::PSMV, ViewClass::RANDOM};

/// Class list used by the initial classifier before PSMV is introduced.
inline const std::vector<ViewClass>& default_initial_classes() {
  static const std::vector<ViewClass> classes{ViewClass::A4C, ViewClass::PL, ViewClass::PSAV,
                                              ViewClass::SC, ViewClass::RANDOM};
  return classes;
}

std::string_view to_string(ViewClass view);

/// Accepts the uppercase codes and, case-insensitively, folder spellings such
/// as "Random". Returns nullopt for anything else.
std::optional<ViewClass> parse_view(std::string_view text);

/// Throws cactus::Error naming the offending text.
ViewClass view_from_string(std::string_view text);

inline int index_of(ViewClass view) { return static_cast<int>(view); }

// ---------------------------------------------------------------------------
// Quality grade bands.

struct GradeBand {
  int index = 0;       // 0..7
  double lower = 0.0;  // inclusive
  double upper = 0.0;  // exclusive, except the last band which includes 10
  std::string_view description;
};

inline constexpr int kNumGradeBands = 8;

/// Band containing `value`; throws for values outside [0, 10] or NaN.
GradeBand grade_band(double value);

const std::array<GradeBand, kNumGradeBands>& grade_bands();

/// A quality grade on the 0..10 scale together with its band.
class GradeValue {
 public:
  GradeValue() = default;
  explicit GradeValue(double value);

  double value() const { return value_; }
  int band() const { return band_; }

 private:
  double value_ = 0.0;
  int band_ = 0;
};

/// RANDOM frames carry exactly grade 0 and no other view may; throws otherwise.
void check_grade_for_view(ViewClass view, double grade, std::string_view id);

}  // namespace cactus::data
