#include "glassbox/synth.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>

#include "glassbox/checksum.hpp"
#include "glassbox/errors.hpp"
#include "glassbox/model_io.hpp"
#include "glassbox/rng.hpp"
#include "glassbox/serialization.hpp"

namespace glassbox::synth {

using nlohmann::json;

const std::vector<AttributeSpec>& attribute_catalog() {
  static const std::vector<AttributeSpec> catalog = {
      {0, "horizontal stripes", PatternKind::stripes_h, {1, 1, 1}, {0, 0, 0}, true},
      {1, "vertical stripes", PatternKind::stripes_v, {1, 1, 1}, {0, 0, 0}, true},
      {2, "checker", PatternKind::checker, {1, 1, 1}, {0, 0, 0}, true},
      {3, "red disk", PatternKind::disk, {1, 0, 0}, {}, false},
      {4, "blue square", PatternKind::square, {0, 0, 1}, {}, false},
      {5, "yellow triangle", PatternKind::triangle, {1, 1, 0}, {}, false},
      {6, "green cross", PatternKind::cross, {0, 1, 0}, {}, false},
      {7, "dot grid", PatternKind::dot_grid, {1, 0, 1}, {}, false},
      {8, "ring", PatternKind::ring, {0, 1, 1}, {}, false},
      {9, "diagonal", PatternKind::diagonal, {1, 0.5f, 0}, {0, 0, 0}, true},
  };
  return catalog;
}

void DatasetSpec::validate() const {
  if (num_classes == 0) throw GenerationError("num_classes must be positive");
  if (attribute_pool == 0 || attribute_pool > attribute_catalog().size()) {
    throw GenerationError("attribute_pool must be in [1, " + std::to_string(attribute_catalog().size()) + "]");
  }
  if (attributes_per_class == 0 || attributes_per_class > attribute_pool) {
    throw GenerationError("attributes_per_class must be in [1, attribute_pool]");
  }
  // number of distinct attribute sets available
  double combos = 1.0;
  for (std::size_t i = 0; i < attributes_per_class; ++i) {
    combos = combos * static_cast<double>(attribute_pool - i) / static_cast<double>(i + 1);
  }
  if (static_cast<double>(num_classes) > combos + 0.5) {
    throw GenerationError("only " + std::to_string(static_cast<long long>(combos + 0.5)) +
                          " distinct attribute sets exist for " + std::to_string(num_classes) + " classes");
  }
  if (patch_size == 0 || patch_size > image_size) throw GenerationError("patch_size must be in [1, image_size]");
  const std::size_t per_image = attributes_per_class + (distractor_probability > 0.0 ? 1 : 0);
  const std::size_t grid = image_size / patch_size;
  if (per_image > grid * grid) {
    throw GenerationError(std::to_string(per_image) + " patches of " + std::to_string(patch_size) +
                          " px do not fit a " + std::to_string(image_size) + " px image");
  }
  if (!(distractor_probability >= 0.0 && distractor_probability <= 1.0)) {
    throw GenerationError("distractor_probability must be in [0, 1]");
  }
  if (!(label_noise >= 0.0 && label_noise <= 1.0)) throw GenerationError("label_noise must be in [0, 1]");
  if (label_noise > 0.0 && num_classes < 2) throw GenerationError("label_noise needs at least two classes");
  if (!(noise_level >= 0.0 && noise_level < 0.5)) throw GenerationError("noise_level must be in [0, 0.5)");
}

std::set<std::size_t> SynthSample::attributes(bool include_distractors) const {
  std::set<std::size_t> out;
  for (const auto& p : placements) {
    if (include_distractors || !p.distractor) out.insert(p.attribute);
  }
  return out;
}

Mask SynthSample::attribute_mask() const {
  Mask m(image.dim(1), image.dim(2));
  for (const auto& p : placements) {
    for (std::size_t i = 0; i < m.bits.size(); ++i) m.bits[i] |= p.mask.bits[i];
  }
  return m;
}

const SynthSample& Dataset::sample(std::uint64_t id) const {
  for (const auto* split : {&train, &test}) {
    auto it = std::lower_bound(split->begin(), split->end(), id,
                               [](const SynthSample& s, std::uint64_t v) { return s.id < v; });
    if (it != split->end() && it->id == id) return *it;
  }
  throw NotFoundError("no sample with id " + std::to_string(id));
}

namespace {

std::size_t shared(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  std::size_t n = 0;
  for (auto x : a) n += static_cast<std::size_t>(std::count(b.begin(), b.end(), x));
  return n;
}

}  // namespace

std::vector<ClassDef> make_classes(const DatasetSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, 0xc1a55));
  std::vector<std::size_t> pool(spec.attribute_pool);
  for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;

  // Prefer attribute sets that pairwise share at most m-2 attributes, then fall
  // back to merely distinct sets.
  const std::size_t m = spec.attributes_per_class;
  for (const bool spread : {true, false}) {
    std::vector<ClassDef> classes;
    for (std::size_t attempt = 0; attempt < 20000 && classes.size() < spec.num_classes; ++attempt) {
      shuffle(pool.begin(), pool.end(), rng);
      std::vector<std::size_t> attrs(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(m));
      std::sort(attrs.begin(), attrs.end());
      const bool ok = std::none_of(classes.begin(), classes.end(), [&](const ClassDef& c) {
        const std::size_t s = shared(c.attributes, attrs);
        return s == m || (spread && m >= 2 && s > m - 2);
      });
      if (ok) {
        const std::size_t id = classes.size();
        classes.push_back({id, "class_" + std::to_string(id), std::move(attrs)});
      }
    }
    if (classes.size() == spec.num_classes) return classes;
  }
  throw GenerationError("could not draw " + std::to_string(spec.num_classes) + " distinct attribute sets");
}

ClassAttributeTable class_attribute_table(const DatasetSpec& spec) {
  ClassAttributeTable table;
  for (const auto& c : make_classes(spec)) table[c.id] = std::set<std::size_t>(c.attributes.begin(), c.attributes.end());
  return table;
}

void render_attribute(const AttributeSpec& attr, std::size_t patch, std::size_t x0, std::size_t y0, Tensor& image,
                      Mask& mask) {
  const double c = (static_cast<double>(patch) - 1.0) / 2.0;
  const double radius = static_cast<double>(patch) / 2.0 - 0.5;
  for (std::size_t v = 0; v < patch; ++v) {
    for (std::size_t u = 0; u < patch; ++u) {
      const double du = static_cast<double>(u) - c, dv = static_cast<double>(v) - c;
      const double r2 = du * du + dv * dv;
      int tone = -1;  // -1: untouched, 0: primary, 1: secondary
      switch (attr.kind) {
        case PatternKind::stripes_h: tone = (v / 2) % 2; break;
        case PatternKind::stripes_v: tone = (u / 2) % 2; break;
        case PatternKind::checker: tone = ((u / 2) + (v / 2)) % 2; break;
        case PatternKind::diagonal: tone = ((u + v) / 2) % 2; break;
        case PatternKind::disk:
          if (r2 <= radius * radius + 0.25) tone = 0;
          break;
        case PatternKind::square:
          if (u >= 1 && v >= 1 && u + 1 < patch && v + 1 < patch) tone = 0;
          break;
        case PatternKind::triangle:
          if (v >= 1 && v + 1 < patch && std::abs(du) <= (static_cast<double>(v) - 0.5) / 2.0 + 0.25) tone = 0;
          break;
        case PatternKind::cross:
          if (std::abs(du) < 1.5 || std::abs(dv) < 1.5) tone = 0;
          break;
        case PatternKind::dot_grid:
          if ((u % 4 == 1 || u % 4 == 2) && (v % 4 == 1 || v % 4 == 2)) tone = 0;
          break;
        case PatternKind::ring:
          if (r2 <= radius * radius + 0.25 && r2 >= (radius - 2.0) * (radius - 2.0)) tone = 0;
          break;
      }
      if (tone < 0) continue;
      const Rgb& col = tone == 0 ? attr.primary : attr.secondary;
      image.at(0, y0 + v, x0 + u) = col.r;
      image.at(1, y0 + v, x0 + u) = col.g;
      image.at(2, y0 + v, x0 + u) = col.b;
      mask(y0 + v, x0 + u) = 1;
    }
  }
}

namespace {

struct Rect {
  std::size_t x, y;
};

bool overlaps(const Rect& a, const Rect& b, std::size_t patch) {
  // one pixel of clearance between patches
  const std::size_t span = patch + 1;
  return a.x < b.x + span && b.x < a.x + span && a.y < b.y + span && b.y < a.y + span;
}

SynthSample make_sample(const DatasetSpec& spec, const std::vector<ClassDef>& classes, std::size_t cls,
                        std::uint64_t id, bool training, Rng& rng) {
  const auto& catalog = attribute_catalog();
  SynthSample s;
  s.id = id;
  s.source_class = cls;
  s.label = cls;

  std::vector<std::pair<std::size_t, bool>> todo;
  for (auto a : classes[cls].attributes) todo.emplace_back(a, false);
  if (spec.distractor_probability > 0.0 && uniform01(rng) < spec.distractor_probability) {
    std::vector<std::size_t> others;
    for (std::size_t a = 0; a < spec.attribute_pool; ++a) {
      if (!std::count(classes[cls].attributes.begin(), classes[cls].attributes.end(), a)) others.push_back(a);
    }
    if (!others.empty()) todo.emplace_back(others[uniform_index(rng, others.size())], true);
  }
  if (training && spec.label_noise > 0.0 && uniform01(rng) < spec.label_noise) {
    const std::size_t shift = 1 + uniform_index(rng, spec.num_classes - 1);
    s.label = (cls + shift) % spec.num_classes;
  }

  const std::size_t range = spec.image_size - spec.patch_size + 1;
  std::vector<Rect> rects;
  for (std::size_t layout = 0; layout < 64 && rects.size() < todo.size(); ++layout) {
    rects.clear();
    for (std::size_t k = 0; k < todo.size(); ++k) {
      bool placed = false;
      for (std::size_t tries = 0; tries < 200 && !placed; ++tries) {
        Rect r{uniform_index(rng, range), uniform_index(rng, range)};
        if (std::none_of(rects.begin(), rects.end(), [&](const Rect& o) { return overlaps(r, o, spec.patch_size); })) {
          rects.push_back(r);
          placed = true;
        }
      }
      if (!placed) break;
    }
  }
  if (rects.size() < todo.size()) {
    throw GenerationError("could not place " + std::to_string(todo.size()) + " attributes without overlap in sample " +
                          std::to_string(id));
  }

  s.image = Tensor({3, spec.image_size, spec.image_size}, kBackground);
  for (std::size_t k = 0; k < todo.size(); ++k) {
    Placement p;
    p.attribute = todo[k].first;
    p.distractor = todo[k].second;
    p.x = rects[k].x;
    p.y = rects[k].y;
    p.mask = Mask(spec.image_size, spec.image_size);
    render_attribute(catalog[p.attribute], spec.patch_size, p.x, p.y, s.image, p.mask);
    s.placements.push_back(std::move(p));
  }
  const auto noise = static_cast<float>(spec.noise_level);
  for (auto& v : s.image.data()) {
    v = std::clamp(v + static_cast<float>(uniform(rng, -noise, noise)), 0.0f, 1.0f);
  }
  return s;
}

}  // namespace

Dataset generate(const DatasetSpec& spec) {
  spec.validate();
  Dataset d;
  d.spec = spec;
  d.attributes.assign(attribute_catalog().begin(),
                      attribute_catalog().begin() + static_cast<std::ptrdiff_t>(spec.attribute_pool));
  d.classes = make_classes(spec);

  const std::size_t n_train = spec.num_classes * spec.train_per_class;
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    for (std::size_t i = 0; i < spec.train_per_class; ++i) {
      const std::size_t idx = c * spec.train_per_class + i;
      Rng rng(derive_seed(spec.seed, 0x7a1, idx));
      d.train.push_back(make_sample(spec, d.classes, c, idx, true, rng));
    }
  }
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    for (std::size_t i = 0; i < spec.test_per_class; ++i) {
      const std::size_t idx = c * spec.test_per_class + i;
      Rng rng(derive_seed(spec.seed, 0x7e57, idx));
      d.test.push_back(make_sample(spec, d.classes, c, n_train + idx, false, rng));
    }
  }
  return d;
}

namespace {

json samples_to_json(const std::vector<SynthSample>& samples, std::vector<std::uint8_t>& payload) {
  json list = json::array();
  for (const auto& s : samples) {
    json js = {{"id", s.id}, {"label", s.label}, {"source_class", s.source_class},
               {"image_offset", payload.size()}, {"image_bytes", s.image.size() * 4}};
    append_f32(payload, s.image.data());
    json placements = json::array();
    for (const auto& p : s.placements) {
      placements.push_back({{"attribute", p.attribute}, {"x", p.x}, {"y", p.y}, {"distractor", p.distractor},
                            {"mask_offset", payload.size()}, {"mask_bytes", p.mask.bits.size()}});
      payload.insert(payload.end(), p.mask.bits.begin(), p.mask.bits.end());
    }
    js["placements"] = placements;
    list.push_back(std::move(js));
  }
  return list;
}

void check_range(const std::vector<std::uint8_t>& payload, std::uint64_t offset, std::uint64_t bytes,
                 std::uint64_t want, std::size_t base, const std::string& what) {
  if (bytes != want) {
    throw FormatError(what + " declares " + std::to_string(bytes) + " bytes, expected " + std::to_string(want));
  }
  if (offset > payload.size() || bytes > payload.size() - offset) {
    throw FormatError(what + " overruns the payload at offset " + std::to_string(base + offset));
  }
}

std::vector<SynthSample> samples_from_json(const json& list, const std::vector<std::uint8_t>& payload,
                                           std::size_t base, std::size_t size) {
  std::vector<SynthSample> out;
  for (const auto& js : list) {
    SynthSample s;
    s.id = js.at("id").get<std::uint64_t>();
    s.label = js.at("label").get<std::size_t>();
    s.source_class = js.at("source_class").get<std::size_t>();
    const std::string what = "sample " + std::to_string(s.id);
    const auto off = js.at("image_offset").get<std::uint64_t>();
    check_range(payload, off, js.at("image_bytes").get<std::uint64_t>(), 3 * size * size * 4, base, what + " image");
    std::vector<float> pixels(3 * size * size);
    read_f32(payload.data() + off, pixels);
    s.image = Tensor({3, size, size}, std::move(pixels));
    for (const auto& jp : js.at("placements")) {
      Placement p;
      p.attribute = jp.at("attribute").get<std::size_t>();
      p.x = jp.at("x").get<std::size_t>();
      p.y = jp.at("y").get<std::size_t>();
      p.distractor = jp.at("distractor").get<bool>();
      const auto moff = jp.at("mask_offset").get<std::uint64_t>();
      check_range(payload, moff, jp.at("mask_bytes").get<std::uint64_t>(), size * size, base, what + " mask");
      p.mask = Mask(size, size);
      std::copy_n(payload.begin() + static_cast<std::ptrdiff_t>(moff), size * size, p.mask.bits.begin());
      s.placements.push_back(std::move(p));
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

void save_dataset(const Dataset& dataset, const std::string& path, std::string_view provenance) {
  Container c;
  json manifest;
  manifest["format"] = std::string(kDatasetMagic);
  manifest["version"] = 1;
  manifest["spec"] = dataset.spec;
  json classes = json::array();
  for (const auto& cd : dataset.classes) {
    classes.push_back({{"id", cd.id}, {"name", cd.name}, {"attributes", cd.attributes}});
  }
  manifest["classes"] = classes;
  json attrs = json::array();
  for (const auto& a : dataset.attributes) attrs.push_back({{"id", a.id}, {"name", a.name}});
  manifest["attributes"] = attrs;
  manifest["train"] = samples_to_json(dataset.train, c.payload);
  manifest["test"] = samples_to_json(dataset.test, c.payload);
  manifest["payload_bytes"] = c.payload.size();
  if (!provenance.empty()) manifest["provenance"] = json::parse(provenance);
  c.manifest = manifest.dump();
  write_file_bytes(path, encode_container(kDatasetMagic, c));
}

Dataset load_dataset(const std::string& path) {
  const auto c = decode_container(kDatasetMagic, read_file_bytes(path));
  const std::size_t base = kDatasetMagic.size() + 8 + c.manifest.size();
  try {
    const json m = json::parse(c.manifest);
    Dataset d;
    d.spec = m.at("spec").get<DatasetSpec>();
    d.spec.validate();
    d.attributes.assign(attribute_catalog().begin(),
                        attribute_catalog().begin() + static_cast<std::ptrdiff_t>(d.spec.attribute_pool));
    for (const auto& jc : m.at("classes")) {
      d.classes.push_back({jc.at("id").get<std::size_t>(), jc.at("name").get<std::string>(),
                           jc.at("attributes").get<std::vector<std::size_t>>()});
    }
    d.train = samples_from_json(m.at("train"), c.payload, base, d.spec.image_size);
    d.test = samples_from_json(m.at("test"), c.payload, base, d.spec.image_size);
    return d;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed dataset manifest: ") + e.what());
  } catch (const GenerationError& e) {
    throw FormatError(std::string("dataset manifest carries an invalid spec: ") + e.what());
  }
}

}  // namespace glassbox::synth
