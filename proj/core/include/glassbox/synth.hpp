#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "glassbox/mask.hpp"
#include "glassbox/tensor.hpp"

// Procedural dataset of images composed from visual attributes, with a
// ground-truth mask for every placed attribute.
namespace glassbox::synth {

enum class PatternKind {
  stripes_h,
  stripes_v,
  checker,
  disk,
  square,
  triangle,
  cross,
  dot_grid,
  ring,
  diagonal,
};

struct Rgb {
  float r = 0, g = 0, b = 0;
};

struct AttributeSpec {
  std::size_t id = 0;
  std::string name;
  PatternKind kind = PatternKind::stripes_h;
  Rgb primary;
  Rgb secondary;
  bool two_tone = false;  // secondary colour fills the rest of the patch
};

/// The ten built-in renderers, ids 0..9.
const std::vector<AttributeSpec>& attribute_catalog();

struct ClassDef {
  std::size_t id = 0;
  std::string name;
  std::vector<std::size_t> attributes;  // sorted

  friend bool operator==(const ClassDef&, const ClassDef&) = default;
};

struct DatasetSpec {
  std::size_t num_classes = 8;
  std::size_t attribute_pool = 10;
  std::size_t attributes_per_class = 3;
  std::size_t train_per_class = 200;
  std::size_t test_per_class = 50;
  double distractor_probability = 0.0;
  double noise_level = 0.05;
  /// Probability of replacing a training label with a different class.
  double label_noise = 0.0;
  std::uint64_t seed = 1;
  std::size_t image_size = 32;
  std::size_t patch_size = 10;

  /// Throws GenerationError when the spec cannot be generated.
  void validate() const;

  friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

struct Placement {
  std::size_t attribute = 0;
  std::size_t x = 0, y = 0;  // top-left of the patch
  bool distractor = false;
  Mask mask;
};

struct SynthSample {
  std::uint64_t id = 0;
  Tensor image;               // {3, S, S}, values in [0, 1]
  std::size_t label = 0;      // training target (may carry label noise)
  std::size_t source_class = 0;  // class whose attributes were rendered
  std::vector<Placement> placements;

  std::set<std::size_t> attributes(bool include_distractors = true) const;
  /// Union of all placement masks.
  Mask attribute_mask() const;
};

struct Dataset {
  DatasetSpec spec;
  std::vector<AttributeSpec> attributes;
  std::vector<ClassDef> classes;
  std::vector<SynthSample> train;
  std::vector<SynthSample> test;

  /// Looks a sample up by id in either split; throws NotFoundError.
  const SynthSample& sample(std::uint64_t id) const;
};

using ClassAttributeTable = std::map<std::size_t, std::set<std::size_t>>;

Dataset generate(const DatasetSpec& spec);
std::vector<ClassDef> make_classes(const DatasetSpec& spec);
ClassAttributeTable class_attribute_table(const DatasetSpec& spec);

/// Draws one attribute into a {3,S,S} image at (x0, y0), setting `mask` for
/// every pixel it colours.
void render_attribute(const AttributeSpec& attr, std::size_t patch, std::size_t x0, std::size_t y0, Tensor& image,
                      Mask& mask);

inline constexpr std::string_view kDatasetMagic = "GBOXDS01";
inline constexpr float kBackground = 0.5f;

void save_dataset(const Dataset& dataset, const std::string& path, std::string_view provenance = {});
Dataset load_dataset(const std::string& path);

}  // namespace glassbox::synth
