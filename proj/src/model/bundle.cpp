#include "model/bundle.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>

#include "common/checksum.hpp"
#include "common/error.hpp"

namespace cactus::model {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'C', 'A', 'C', 'T', 'U', 'S', 'B', '\0'};

template <typename U>
void put(std::vector<std::byte>& out, U value) {
  const auto* p = reinterpret_cast<const std::byte*>(&value);
  out.insert(out.end(), p, p + sizeof(U));
}

template <typename U>
U get(std::span<const std::byte> bytes, std::size_t offset) {
  U value;
  std::memcpy(&value, bytes.data() + offset, sizeof(U));
  return value;
}

struct NamedArray {
  std::string name;
  std::vector<int> shape;
  const std::vector<float>* values;
};

std::vector<NamedArray> arrays_of(const ModelBundle& bundle) {
  std::vector<NamedArray> arrays;
  for (const auto& p : bundle.encoder.params()) arrays.push_back({p.name, p.shape, &p.value});
  if (bundle.classifier) {
    const auto& h = *bundle.classifier;
    arrays.push_back({"classifier.weight", {h.out_dim, h.in_dim}, &h.weight});
    arrays.push_back({"classifier.bias", {h.out_dim}, &h.bias});
  }
  if (bundle.grader) {
    const auto& h = *bundle.grader;
    arrays.push_back({"grader.weight", {h.out_dim, h.in_dim}, &h.weight});
    arrays.push_back({"grader.bias", {h.out_dim}, &h.bias});
  }
  return arrays;
}

}  // namespace

int ModelBundle::class_index(data::ViewClass view) const {
  const auto it = std::find(classes.begin(), classes.end(), view);
  return it == classes.end() ? -1 : static_cast<int>(it - classes.begin());
}

json preprocess_to_json(const data::PreprocessSpec& spec) {
  json out;
  out["target_size"] = spec.target_size;
  out["normalization"] = {{"mean", spec.normalization.mean}, {"std", spec.normalization.std}};
  if (spec.crop)
    out["crop"] = {{"x", spec.crop->x},
                   {"y", spec.crop->y},
                   {"width", spec.crop->width},
                   {"height", spec.crop->height}};
  else
    out["crop"] = nullptr;
  return out;
}

data::PreprocessSpec preprocess_from_json(const json& in) {
  data::PreprocessSpec spec;
  spec.target_size = in.value("target_size", 224);
  if (in.contains("normalization")) {
    spec.normalization.mean = in.at("normalization").at("mean").get<std::array<double, 3>>();
    spec.normalization.std = in.at("normalization").at("std").get<std::array<double, 3>>();
  }
  if (in.contains("crop") && !in.at("crop").is_null()) {
    const json& c = in.at("crop");
    spec.crop = data::CropBox{c.at("x").get<int>(), c.at("y").get<int>(), c.at("width").get<int>(),
                              c.at("height").get<int>()};
  }
  require(spec.target_size >= 8, "target_size must be at least 8");
  return spec;
}

json encoder_spec_to_json(const EncoderSpec& spec) {
  return {{"in_channels", spec.in_channels},
          {"base_width", spec.base_width},
          {"stage_blocks", spec.stage_blocks}};
}

EncoderSpec encoder_spec_from_json(const json& in) {
  EncoderSpec spec;
  spec.in_channels = in.value("in_channels", spec.in_channels);
  spec.base_width = in.value("base_width", spec.base_width);
  if (in.contains("stage_blocks")) spec.stage_blocks = in.at("stage_blocks").get<std::vector<int>>();
  return spec;
}

ModelBundle make_bundle(const EncoderSpec& spec, std::vector<data::ViewClass> classes,
                        bool with_grader, std::uint64_t seed) {
  ModelBundle bundle(spec);
  bundle.encoder.initialize(seed);
  const int dim = spec.feature_dim();
  if (!classes.empty()) {
    for (std::size_t i = 0; i < classes.size(); ++i)
      for (std::size_t j = i + 1; j < classes.size(); ++j)
        require(classes[i] != classes[j], "duplicate class in class list");
    bundle.classifier.emplace(dim, static_cast<int>(classes.size()));
    bundle.classifier->initialize(seed ^ 0x636c6173ULL);
  }
  bundle.classes = std::move(classes);
  if (with_grader) {
    bundle.grader.emplace(dim, 1);
    bundle.grader->initialize(seed ^ 0x67726164ULL);
  }
  return bundle;
}

Activation<float> preprocess_batch(std::span<const data::GrayImage* const> images,
                                   const data::PreprocessSpec& spec) {
  require(!images.empty(), "empty image batch");
  const int n = static_cast<int>(images.size());
  const int s = spec.target_size;
  Activation<float> batch;
  batch.resize(3, n, s, s);
  std::vector<float> planar(spec.output_size());
  const std::size_t hw = static_cast<std::size_t>(s) * s;
  for (int i = 0; i < n; ++i) {
    data::preprocess_into(*images[static_cast<std::size_t>(i)], spec, planar);
    for (int c = 0; c < 3; ++c)
      std::copy_n(planar.data() + c * hw, hw, batch.at(c, i));
  }
  return batch;
}

Features<float> forward_features(const ModelBundle& bundle, const Activation<float>& batch,
                                 Activation<float>* final_map) {
  return bundle.encoder.forward_eval(batch, final_map);
}

ClassOutput apply_classifier(const ModelBundle& bundle, const Features<float>& features) {
  if (!bundle.classifier) fail(ErrorCode::State, "bundle has no classification head");
  ClassOutput out;
  out.logits = bundle.classifier->forward(features);
  out.probabilities = softmax(out.logits);
  out.predicted.resize(static_cast<std::size_t>(features.batch));
  for (int n = 0; n < features.batch; ++n) {
    int best = 0;
    for (int k = 1; k < out.logits.dim; ++k)
      if (out.logits.at(k, n) > out.logits.at(best, n)) best = k;
    out.predicted[static_cast<std::size_t>(n)] = best;
  }
  return out;
}

GradeOutput apply_grader(const ModelBundle& bundle, const Features<float>& features) {
  if (!bundle.grader) fail(ErrorCode::State, "bundle has no grading head");
  const Features<float> y = bundle.grader->forward(features);
  GradeOutput out;
  out.raw = y.data;
  out.reported.reserve(out.raw.size());
  for (float r : out.raw) out.reported.push_back(static_cast<float>(clamp_grade(r)));
  return out;
}

ClassOutput classify(const ModelBundle& bundle, const Activation<float>& batch) {
  if (!bundle.classifier) fail(ErrorCode::State, "bundle has no classification head");
  return apply_classifier(bundle, forward_features(bundle, batch));
}

GradeOutput grade(const ModelBundle& bundle, const Activation<float>& batch) {
  if (!bundle.grader) fail(ErrorCode::State, "bundle has no grading head");
  return apply_grader(bundle, forward_features(bundle, batch));
}

Prediction predict(const ModelBundle& bundle, const Activation<float>& batch) {
  const Features<float> features = forward_features(bundle, batch);
  Prediction out;
  if (bundle.classifier) out.classes = apply_classifier(bundle, features);
  if (bundle.grader) out.grades = apply_grader(bundle, features);
  return out;
}

ModelBundle expand_classification_head(const ModelBundle& bundle, data::ViewClass new_class,
                                       NewRowInit init, std::uint64_t seed) {
  if (!bundle.classifier) fail(ErrorCode::State, "bundle has no classification head");
  if (bundle.class_index(new_class) >= 0)
    fail(ErrorCode::InvalidArgument,
         "class " + std::string(data::to_string(new_class)) + " is already in the class list");
  ModelBundle out = bundle;
  const LinearHead<float>& old = *bundle.classifier;
  LinearHead<float> head(old.in_dim, old.out_dim + 1);
  std::copy(old.weight.begin(), old.weight.end(), head.weight.begin());
  std::copy(old.bias.begin(), old.bias.end(), head.bias.begin());
  if (init == NewRowInit::Random) {
    LinearHead<float> fresh(old.in_dim, 1);
    fresh.initialize(seed);
    std::copy(fresh.weight.begin(), fresh.weight.end(), head.weight.begin() + static_cast<std::ptrdiff_t>(old.weight.size()));
    head.bias.back() = fresh.bias[0];
  }
  out.classifier = std::move(head);
  out.classes.push_back(new_class);
  return out;
}

std::uint32_t encoder_checksum(const Encoder<float>& encoder) {
  std::uint32_t crc = 0;
  for (const auto& p : encoder.params()) crc = crc32_of(std::span<const float>(p.value), crc);
  return crc;
}

json bundle_info(const ModelBundle& bundle) {
  json info;
  info["format_version"] = kBundleFormatVersion;
  info["encoder"] = encoder_spec_to_json(bundle.encoder.spec());
  json classes = json::array();
  for (auto v : bundle.classes) classes.push_back(std::string(data::to_string(v)));
  info["classes"] = classes;
  info["has_classifier"] = bundle.classifier.has_value();
  info["has_grader"] = bundle.grader.has_value();
  info["preprocess"] = preprocess_to_json(bundle.preprocess);
  info["provenance"] = bundle.provenance;
  info["feature_dim"] = bundle.feature_dim();
  return info;
}

std::vector<std::byte> serialize_bundle(const ModelBundle& bundle) {
  json meta = bundle_info(bundle);
  json index = json::array();
  std::uint64_t offset = 0;
  const auto arrays = arrays_of(bundle);
  for (const auto& a : arrays) {
    index.push_back({{"name", a.name}, {"shape", a.shape}, {"offset", offset},
                     {"count", a.values->size()}});
    offset += a.values->size();
  }
  meta["arrays"] = index;
  const std::string text = meta.dump();

  std::vector<std::byte> out;
  out.reserve(32 + text.size() + offset * sizeof(float));
  const auto* magic = reinterpret_cast<const std::byte*>(kMagic);
  out.insert(out.end(), magic, magic + sizeof(kMagic));
  put<std::uint32_t>(out, kBundleFormatVersion);
  put<std::uint64_t>(out, text.size());
  const auto* t = reinterpret_cast<const std::byte*>(text.data());
  out.insert(out.end(), t, t + text.size());
  for (const auto& a : arrays) {
    const auto* p = reinterpret_cast<const std::byte*>(a.values->data());
    out.insert(out.end(), p, p + a.values->size() * sizeof(float));
  }
  put<std::uint32_t>(out, crc32(out));
  return out;
}

ModelBundle deserialize_bundle(std::span<const std::byte> bytes) {
  constexpr std::size_t header = sizeof(kMagic) + sizeof(std::uint32_t) + sizeof(std::uint64_t);
  if (bytes.size() < header + sizeof(std::uint32_t) ||
      std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    // A truncated file may still start with the magic; report it as corrupt.
    if (bytes.size() >= sizeof(kMagic) && std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) == 0)
      fail(ErrorCode::Checksum, "bundle checksum mismatch (file truncated)");
    fail(ErrorCode::Format, "not a model bundle");
  }
  const std::size_t body = bytes.size() - sizeof(std::uint32_t);
  const auto stored = get<std::uint32_t>(bytes, body);
  if (crc32(bytes.first(body)) != stored) fail(ErrorCode::Checksum, "bundle checksum mismatch");
  const auto version = get<std::uint32_t>(bytes, sizeof(kMagic));
  if (version != kBundleFormatVersion)
    fail(ErrorCode::Version, "unsupported bundle format version " + std::to_string(version));
  const auto meta_len = get<std::uint64_t>(bytes, sizeof(kMagic) + sizeof(std::uint32_t));
  if (meta_len > body - header) fail(ErrorCode::Format, "bundle metadata length out of range");

  json meta;
  try {
    meta = json::parse(reinterpret_cast<const char*>(bytes.data() + header),
                       reinterpret_cast<const char*>(bytes.data() + header + meta_len));
  } catch (const json::exception& e) {
    fail(ErrorCode::Format, std::string("bundle metadata: ") + e.what());
  }

  try {
    ModelBundle bundle(encoder_spec_from_json(meta.at("encoder")));
    for (const auto& name : meta.at("classes")) bundle.classes.push_back(data::view_from_string(name.get<std::string>()));
    const int dim = bundle.feature_dim();
    if (meta.at("has_classifier").get<bool>())
      bundle.classifier.emplace(dim, static_cast<int>(bundle.classes.size()));
    if (meta.at("has_grader").get<bool>()) bundle.grader.emplace(dim, 1);
    bundle.preprocess = preprocess_from_json(meta.at("preprocess"));
    bundle.provenance = meta.at("provenance");

    const std::size_t data_begin = header + meta_len;
    const std::size_t data_floats = (body - data_begin) / sizeof(float);
    if ((body - data_begin) % sizeof(float) != 0) fail(ErrorCode::Format, "bundle data misaligned");
    auto expected = arrays_of(bundle);
    const json& index = meta.at("arrays");
    if (index.size() != expected.size()) fail(ErrorCode::Format, "bundle array count mismatch");
    for (std::size_t i = 0; i < expected.size(); ++i) {
      const json& entry = index[i];
      const auto offset = entry.at("offset").get<std::uint64_t>();
      const auto count = entry.at("count").get<std::uint64_t>();
      if (entry.at("name").get<std::string>() != expected[i].name ||
          entry.at("shape").get<std::vector<int>>() != expected[i].shape ||
          count != expected[i].values->size() || offset + count > data_floats)
        fail(ErrorCode::Format, "bundle array '" + expected[i].name + "' does not match the model");
      auto* dst = const_cast<std::vector<float>*>(expected[i].values);
      std::memcpy(dst->data(), bytes.data() + data_begin + offset * sizeof(float),
                  count * sizeof(float));
    }
    return bundle;
  } catch (const json::exception& e) {
    fail(ErrorCode::Format, std::string("bundle metadata: ") + e.what());
  }
}

void save_bundle(const ModelBundle& bundle, const std::filesystem::path& path) {
  const auto bytes = serialize_bundle(bundle);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::Io, "write failed for " + path.string());
}

ModelBundle load_bundle(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_bundle(std::as_bytes(std::span(raw.data(), raw.size())));
}

}  // namespace cactus::model
