#include "synth/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "common/error.hpp"

namespace cactus::synth {

namespace fs = std::filesystem;
using data::GrayImage;

namespace {

// Imaging sector: apex near the top centre, opening downwards.
constexpr double kApexU = 0.5;
constexpr double kApexV = 0.06;
constexpr double kFanRadius = 0.88;
constexpr double kFanHalfAngle = 0.72;

constexpr double kWall = 0.82;
constexpr double kLumen = 0.06;

struct Polar {
  double r;
  double theta;  // 0 points straight down, negative to the left
};

Polar to_polar(double u, double v) {
  const double dx = u - kApexU;
  const double dy = v - kApexV;
  return {std::hypot(dx, dy), std::atan2(dx, dy)};
}

bool in_fan(const Polar& p) { return p.r <= kFanRadius && std::abs(p.theta) <= kFanHalfAngle; }

struct Ellipse {
  double cx, cy, rx, ry, angle;
  double c = std::cos(angle);
  double s = std::sin(angle);

  // Squared normalized radius; <= 1 inside.
  double rho2(double u, double v) const {
    const double du = u - cx;
    const double dv = v - cy;
    const double a = (c * du + s * dv) / rx;
    const double b = (-s * du + c * dv) / ry;
    return a * a + b * b;
  }
};

// Chambers are drawn wall-first so shared walls survive as septa.
double chambers(const std::vector<Ellipse>& cavities, double u, double v, double background) {
  double value = background;
  for (const auto& e : cavities)
    if (e.rho2(u, v) <= 1.25 * 1.25) value = kWall;
  for (const auto& e : cavities)
    if (e.rho2(u, v) <= 1.0) value = kLumen;
  return value;
}

std::vector<Ellipse> four_chamber(double cx, double cy, double scale, double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  const std::array<std::array<double, 4>, 4> layout{{
      {-0.09, -0.12, 0.075, 0.12},  // ventricles (dx, dy, rx, ry)
      {0.09, -0.12, 0.075, 0.12},
      {-0.09, 0.14, 0.075, 0.085},  // atria
      {0.09, 0.14, 0.075, 0.085},
  }};
  std::vector<Ellipse> out;
  for (const auto& [dx, dy, rx, ry] : layout) {
    const double x = scale * dx;
    const double y = scale * dy;
    out.push_back(Ellipse{cx + c * x - s * y, cy + s * x + c * y, scale * rx, scale * ry, angle});
  }
  return out;
}

double template_value(ViewClass view, double u, double v) {
  const Polar p = to_polar(u, v);
  if (!in_fan(p)) return 0.0;
  const double tissue = 0.34 - 0.1 * p.r;
  switch (view) {
    case ViewClass::A4C: {
      static const auto cavities = four_chamber(0.5, 0.52, 1.0, 0.0);
      return chambers(cavities, u, v, tissue);
    }
    case ViewClass::SC: {
      static const auto cavities = four_chamber(0.52, 0.5, 0.85, 0.75);
      return chambers(cavities, u, v, tissue);
    }
    case ViewClass::PL: {
      static const std::vector<Ellipse> cavities{Ellipse{0.42, 0.54, 0.24, 0.075, -0.25},
                                                 Ellipse{0.67, 0.36, 0.07, 0.05, 0.0}};
      return chambers(cavities, u, v, tissue);
    }
    case ViewClass::PSAV: {
      const double r = std::hypot(u - 0.5, v - 0.48);
      if (r <= 0.11) {
        const double a = std::atan2(u - 0.5, v - 0.48);
        for (double leaflet : {0.0, 2.0944, -2.0944})
          if (std::abs(std::remainder(a - leaflet, 2.0 * std::numbers::pi)) * r < 0.012) return kWall;
        return kLumen;
      }
      if (r <= 0.17) return kWall;
      return tissue;
    }
    case ViewClass::PSMV: {
      if (std::abs(v - 0.52) < 0.015 && std::abs(u - 0.5) < 0.17) return 0.9;
      const double r = std::hypot(u - 0.5, v - 0.52);
      if (r <= 0.22) return kLumen;
      if (r <= 0.27) return kWall;
      return tissue;
    }
    case ViewClass::RANDOM:
      break;
  }
  return tissue;
}

std::vector<double> render_clean(ViewClass view, int size, std::uint64_t seed) {
  std::vector<double> field(static_cast<std::size_t>(size) * size, 0.0);
  if (view == ViewClass::RANDOM) {
    std::mt19937_64 rng(seed ^ 0x52414e444f4dULL);
    std::uniform_real_distribution<double> noise(0.0, 0.7);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const double u = (x + 0.5) / size;
        const double v = (y + 0.5) / size;
        const double sample = noise(rng);
        if (in_fan(to_polar(u, v))) field[static_cast<std::size_t>(y) * size + x] = sample;
      }
    return field;
  }
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      field[static_cast<std::size_t>(y) * size + x] =
          template_value(view, (x + 0.5) / size, (y + 0.5) / size);
  return field;
}

// Unit-variance Gaussian field with grains of about grain * size pixels:
// a coarse i.i.d. grid, bilinearly interpolated and rescaled per pixel so the
// marginal variance stays 1.
std::vector<double> speckle_field(int size, double grain, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> out(static_cast<std::size_t>(size) * size);
  const double cell = grain * size;
  if (cell <= 1.0) {
    for (double& v : out) v = gauss(rng);
    return out;
  }
  const int grid = static_cast<int>(std::ceil(size / cell)) + 2;
  std::vector<double> coarse(static_cast<std::size_t>(grid) * grid);
  for (double& v : coarse) v = gauss(rng);
  for (int y = 0; y < size; ++y) {
    const double gy = (y + 0.5) / cell;
    const int y0 = static_cast<int>(gy);
    const double b = gy - y0;
    for (int x = 0; x < size; ++x) {
      const double gx = (x + 0.5) / cell;
      const int x0 = static_cast<int>(gx);
      const double a = gx - x0;
      const auto at = [&](int yy, int xx) { return coarse[static_cast<std::size_t>(yy) * grid + xx]; };
      const double v = (1 - b) * ((1 - a) * at(y0, x0) + a * at(y0, x0 + 1)) +
                       b * ((1 - a) * at(y0 + 1, x0) + a * at(y0 + 1, x0 + 1));
      const double norm = std::sqrt(((1 - a) * (1 - a) + a * a) * ((1 - b) * (1 - b) + b * b));
      out[static_cast<std::size_t>(y) * size + x] = v / norm;
    }
  }
  return out;
}

GrayImage quantize(const std::vector<double>& field, int size) {
  GrayImage image(size, size);
  for (std::size_t i = 0; i < field.size(); ++i)
    image.pixels[i] =
        static_cast<std::uint8_t>(std::lround(std::clamp(field[i], 0.0, 1.0) * 255.0));
  return image;
}

std::string format_id(ViewClass view, int index) {
  std::ostringstream id;
  id << data::to_string(view) << '_' << std::setw(5) << std::setfill('0') << index;
  return id.str();
}

}  // namespace

void SynthConfig::validate() const {
  auto unit = [](double x) { return x >= 0.0 && x <= 1.0; };
  require(unit(completeness), "completeness must lie in [0, 1]");
  require(unit(clarity), "clarity must lie in [0, 1]");
  require(unit(occlusion_fraction), "occlusion_fraction must lie in [0, 1]");
  require(speckle_sigma >= 0.0, "speckle_sigma must be non-negative");
  require(speckle_grain >= 0.0 && speckle_grain <= 0.5, "speckle_grain must lie in [0, 0.5]");
  require(std::isfinite(gain_shift), "gain_shift must be finite");
  require(size >= 8, "synthetic frame size must be at least 8");
}

GrayImage clean_template(ViewClass view, int size, std::uint64_t seed) {
  require(size >= 8, "synthetic frame size must be at least 8");
  return quantize(render_clean(view, size, seed), size);
}

data::ImageSample render_view(const SynthConfig& config) {
  config.validate();
  const int size = config.size;
  std::vector<double> field = render_clean(config.view, size, config.seed);
  std::mt19937_64 rng(config.seed);

  if (config.view != ViewClass::RANDOM) {
    const double removed = config.occlusion_fraction * (1.0 - config.completeness);
    if (removed > 0.0) {
      const bool from_left = std::uniform_int_distribution<int>(0, 1)(rng) == 0;
      const double edge = -kFanHalfAngle + 2.0 * kFanHalfAngle * removed;
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          const Polar p = to_polar((x + 0.5) / size, (y + 0.5) / size);
          const double theta = from_left ? p.theta : -p.theta;
          if (theta < edge) field[static_cast<std::size_t>(y) * size + x] = 0.0;
        }
    }
  }

  if (config.gain_shift != 0.0)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        if (in_fan(to_polar((x + 0.5) / size, (y + 0.5) / size)))
          field[static_cast<std::size_t>(y) * size + x] += config.gain_shift;

  if (config.view != ViewClass::RANDOM) {
    const double sigma = config.speckle_sigma * (1.0 - config.clarity);
    if (sigma > 0.0) {
      const std::vector<double> noise = speckle_field(size, config.speckle_grain, rng);
      for (std::size_t i = 0; i < field.size(); ++i)
        field[i] *= std::max(0.0, 1.0 + sigma * noise[i]);
    }
  }

  data::ImageSample sample;
  sample.image = std::make_shared<const GrayImage>(quantize(field, size));
  sample.view = config.view;
  sample.grade = grade_of(config);
  return sample;
}

data::GradeValue grade_of(const SynthConfig& config, double completeness_weight) {
  if (config.view == ViewClass::RANDOM) return data::GradeValue(0.0);
  const double mix =
      completeness_weight * config.completeness + (1.0 - completeness_weight) * config.clarity;
  return data::GradeValue(std::clamp(10.0 * mix, 1.0, 10.0));
}

SyntheticDataset generate_dataset(const GenerateOptions& options) {
  require(options.n_per_class >= 3, "n_per_class must be at least 3");
  require(options.grade_spread > 0.0 && options.grade_spread <= 1.0,
          "grade_spread must lie in (0, 1]");
  SyntheticDataset out;
  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> quality(1.0 - options.grade_spread, 1.0);
  std::uniform_real_distribution<double> gain(-options.max_gain_shift, options.max_gain_shift);
  for (ViewClass view : options.views) {
    for (int i = 0; i < options.n_per_class; ++i) {
      SynthConfig config;
      config.view = view;
      config.completeness = quality(rng);
      config.clarity = quality(rng);
      config.speckle_sigma = options.speckle_sigma;
      config.speckle_grain = options.speckle_grain;
      config.gain_shift = gain(rng);
      config.occlusion_fraction = options.occlusion_fraction;
      config.seed = rng();
      config.size = options.size;
      if (view == ViewClass::RANDOM) {
        config.completeness = 0.0;
        config.clarity = 0.0;
      }
      data::ImageSample sample = render_view(config);
      sample.id = format_id(view, i);
      sample.source_path = std::string(data::to_string(view)) + "/" + sample.id + ".png";
      out.emission_log.push_back({sample.id, config, sample.grade.value()});
      out.manifest.samples.push_back(std::move(sample));
    }
  }
  out.manifest.seed = options.seed;
  return out;
}

void write_emission_log(const fs::path& path, const std::vector<EmissionRecord>& log) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::Io, "cannot open " + path.string() + " for writing");
  out << "id,view,completeness,clarity,grade\n";
  out << std::setprecision(17);
  for (const auto& record : log)
    out << record.id << ',' << data::to_string(record.config.view) << ','
        << record.config.completeness << ',' << record.config.clarity << ',' << record.grade
        << '\n';
}

data::DatasetManifest write_dataset(const SyntheticDataset& dataset, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream grades(dir / "grades.csv");
  if (!grades) fail(ErrorCode::Io, "cannot write " + (dir / "grades.csv").string());
  grades << "id,view,grade\n" << std::setprecision(17);
  data::DatasetManifest manifest = dataset.manifest;
  manifest.base_dir = dir;
  for (auto& sample : manifest.samples) {
    fs::create_directories(dir / data::to_string(sample.view));
    data::write_png(dir / sample.source_path, *sample.image);
    grades << sample.id << ',' << data::to_string(sample.view) << ',' << sample.grade.value()
           << '\n';
    sample.image.reset();
  }
  data::write_manifest(dir / "manifest.jsonl", manifest);
  write_emission_log(dir / "emission_log.csv", dataset.emission_log);
  return manifest;
}

}  // namespace cactus::synth
