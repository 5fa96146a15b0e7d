#pragma once

#include <json.hpp>

#include "glassbox/synth.hpp"

namespace glassbox::synth {

inline void to_json(nlohmann::json& j, const DatasetSpec& s) {
  j = {{"num_classes", s.num_classes},
       {"attribute_pool", s.attribute_pool},
       {"attributes_per_class", s.attributes_per_class},
       {"train_per_class", s.train_per_class},
       {"test_per_class", s.test_per_class},
       {"distractor_probability", s.distractor_probability},
       {"noise_level", s.noise_level},
       {"label_noise", s.label_noise},
       {"seed", s.seed},
       {"image_size", s.image_size},
       {"patch_size", s.patch_size}};
}

inline void from_json(const nlohmann::json& j, DatasetSpec& s) {
  DatasetSpec d;
  s.num_classes = j.value("num_classes", d.num_classes);
  s.attribute_pool = j.value("attribute_pool", d.attribute_pool);
  s.attributes_per_class = j.value("attributes_per_class", d.attributes_per_class);
  s.train_per_class = j.value("train_per_class", d.train_per_class);
  s.test_per_class = j.value("test_per_class", d.test_per_class);
  s.distractor_probability = j.value("distractor_probability", d.distractor_probability);
  s.noise_level = j.value("noise_level", d.noise_level);
  s.label_noise = j.value("label_noise", d.label_noise);
  s.seed = j.value("seed", d.seed);
  s.image_size = j.value("image_size", d.image_size);
  s.patch_size = j.value("patch_size", d.patch_size);
}

}  // namespace glassbox::synth
