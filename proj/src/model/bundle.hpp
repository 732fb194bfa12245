#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "data/image.hpp"
#include "data/preprocess.hpp"
#include "data/view.hpp"
#include "json.hpp"
#include "model/encoder.hpp"
#include "model/heads.hpp"

namespace cactus::model {

inline constexpr std::uint32_t kBundleFormatVersion = 1;

/// Trained artifact: shared encoder, optional classification head over an
/// ordered class list, optional grading head, and the preprocessing that
/// produced its inputs.
struct ModelBundle {
  Encoder<float> encoder;
  std::vector<data::ViewClass> classes;
  std::optional<LinearHead<float>> classifier;
  std::optional<LinearHead<float>> grader;
  data::PreprocessSpec preprocess;
  nlohmann::json provenance = nlohmann::json::object();

  ModelBundle() = default;
  explicit ModelBundle(EncoderSpec spec) : encoder(std::move(spec)) {}

  int feature_dim() const { return encoder.spec().feature_dim(); }
  int class_index(data::ViewClass view) const;
};

/// Fresh bundle: He-initialized encoder, classification head over `classes`
/// (omitted when empty), grading head when `with_grader`.
ModelBundle make_bundle(const EncoderSpec& spec, std::vector<data::ViewClass> classes,
                        bool with_grader, std::uint64_t seed);

/// Preprocesses grayscale frames into an encoder batch.
Activation<float> preprocess_batch(std::span<const data::GrayImage* const> images,
                                   const data::PreprocessSpec& spec);

/// Eval-mode encoder pass. `final_map` receives the last convolutional map.
Features<float> forward_features(const ModelBundle& bundle, const Activation<float>& batch,
                                 Activation<float>* final_map = nullptr);

struct ClassOutput {
  Features<float> logits;
  Features<float> probabilities;
  std::vector<int> predicted;  // index into the bundle's class list
};

struct GradeOutput {
  std::vector<float> raw;
  std::vector<float> reported;  // clamped to [0, 10]
};

ClassOutput apply_classifier(const ModelBundle& bundle, const Features<float>& features);
GradeOutput apply_grader(const ModelBundle& bundle, const Features<float>& features);

ClassOutput classify(const ModelBundle& bundle, const Activation<float>& batch);
GradeOutput grade(const ModelBundle& bundle, const Activation<float>& batch);

/// Both heads on a single encoder pass.
struct Prediction {
  ClassOutput classes;
  GradeOutput grades;
};
Prediction predict(const ModelBundle& bundle, const Activation<float>& batch);

enum class NewRowInit { Zero, Random };

/// Appends `new_class` to the class list with one extra head row. Existing
/// rows and biases are copied unchanged.
ModelBundle expand_classification_head(const ModelBundle& bundle, data::ViewClass new_class,
                                       NewRowInit init = NewRowInit::Zero,
                                       std::uint64_t seed = 0);

/// CRC-32 over every encoder parameter and buffer value.
std::uint32_t encoder_checksum(const Encoder<float>& encoder);

void save_bundle(const ModelBundle& bundle, const std::filesystem::path& path);
std::vector<std::byte> serialize_bundle(const ModelBundle& bundle);
ModelBundle load_bundle(const std::filesystem::path& path);
ModelBundle deserialize_bundle(std::span<const std::byte> bytes);

/// Metadata summary (classes, heads, preprocessing, provenance, sizes).
nlohmann::json bundle_info(const ModelBundle& bundle);

nlohmann::json preprocess_to_json(const data::PreprocessSpec& spec);
data::PreprocessSpec preprocess_from_json(const nlohmann::json& in);
nlohmann::json encoder_spec_to_json(const EncoderSpec& spec);
EncoderSpec encoder_spec_from_json(const nlohmann::json& in);

}  // namespace cactus::model
