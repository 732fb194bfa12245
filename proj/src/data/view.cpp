#include "data/view.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "common/error.hpp"

namespace cactus::data {

namespace {

constexpr std::array<std::string_view, kNumViews> kNames{"A4C", "SC", "PL", "PSAV", "PSMV",
                                                         "RANDOM"};

constexpr std::array<GradeBand, kNumGradeBands> kBands{{
    {0, 0.0, 1.0,
     "The image does not capture a specific cardiac window; cardiac structures cannot be "
     "interpreted."},
    {1, 1.0, 2.0,
     "View lightly visible; one or more structures missing or obstructed, blurry borders and "
     "high noise suggesting insufficient gain/power."},
    {2, 2.0, 3.0,
     "View partially visible; some structures only partly interpretable or missing, "
     "inadequate gain/power, significant obstructions."},
    {3, 3.0, 4.0,
     "Partial view of the anatomy; some structures partly discernible, inadequate gain/power, "
     "fewer obstructions."},
    {4, 4.0, 5.0,
     "Most of the view visible; structures visible but may be obstructed, satisfactory "
     "gain/power."},
    {5, 5.0, 6.0,
     "Clear view and identification of cardiac structures; slight chance of minor "
     "obstructions, adequate gain/power."},
    {6, 6.0, 7.0,
     "Structures visible and identifiable; minimal chance of minor obstructions, sufficient "
     "gain/power."},
    {7, 7.0, 10.0,
     "View fully visible with clearly identifiable structures; grade 7 is near-optimal "
     "gain/power and 10 signifies optimal gain/power."},
}};

std::string upper(std::string_view text) {
  std::string out(text);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  return out;
}

}  // namespace

std::string_view to_string(ViewClass view) {
  const int i = index_of(view);
  if (i < 0 || i >= kNumViews) fail(ErrorCode::InvalidArgument, "invalid view ordinal");
  return kNames[static_cast<std::size_t>(i)];
}

std::optional<ViewClass> parse_view(std::string_view text) {
  const std::string code = upper(text);
  for (int i = 0; i < kNumViews; ++i)
    if (code == kNames[static_cast<std::size_t>(i)]) return static_cast<ViewClass>(i);
  return std::nullopt;
}

ViewClass view_from_string(std::string_view text) {
  if (auto view = parse_view(text)) return *view;
  fail(ErrorCode::InvalidArgument, "unknown view class " + std::string(text));
}

const std::array<GradeBand, kNumGradeBands>& grade_bands() { return kBands; }

GradeBand grade_band(double value) {
  if (!(value >= 0.0 && value <= 10.0))
    fail(ErrorCode::InvalidArgument, "grade " + std::to_string(value) + " outside [0, 10]");
  const int index = std::min(static_cast<int>(std::floor(value)), kNumGradeBands - 1);
  return kBands[static_cast<std::size_t>(index)];
}

GradeValue::GradeValue(double value) : value_(value), band_(grade_band(value).index) {}

void check_grade_for_view(ViewClass view, double grade, std::string_view id) {
  if (!(grade >= 0.0 && grade <= 10.0))
    fail(ErrorCode::InvalidArgument,
         "grade " + std::to_string(grade) + " outside [0, 10] for sample " + std::string(id));
  if (view == ViewClass::RANDOM && grade != 0.0)
    fail(ErrorCode::InvalidArgument,
         "RANDOM sample " + std::string(id) + " must have grade 0, got " + std::to_string(grade));
  if (view != ViewClass::RANDOM && grade == 0.0)
    fail(ErrorCode::InvalidArgument,
         "grade 0 is reserved for RANDOM frames (sample " + std::string(id) + ")");
}

}  // namespace cactus::data
