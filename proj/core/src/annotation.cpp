#include "glassbox/annotation.hpp"

#include <algorithm>
#include <cctype>

#include "glassbox/errors.hpp"
#include "glassbox/model_io.hpp"

namespace glassbox::annotation {

using nlohmann::json;

std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::open: return "open";
    case Phase::organize: return "organize";
    case Phase::closed: return "closed";
  }
  return "unknown";
}

Phase phase_from_string(std::string_view s) {
  for (auto p : {Phase::open, Phase::organize, Phase::closed}) {
    if (to_string(p) == s) return p;
  }
  throw ValidationError("unknown phase '" + std::string(s) + "'");
}

Edit Edit::merge(std::vector<std::size_t> sources, std::size_t target) {
  Edit e;
  e.kind = Kind::merge;
  e.sources = std::move(sources);
  e.id = target;
  return e;
}

Edit Edit::split(std::size_t id, std::vector<std::string> names) {
  Edit e;
  e.kind = Kind::split;
  e.id = id;
  e.names = std::move(names);
  return e;
}

Edit Edit::rename(std::size_t id, std::string name) {
  Edit e;
  e.kind = Kind::rename;
  e.id = id;
  e.name = std::move(name);
  return e;
}

Edit Edit::add(std::string name, std::string description) {
  Edit e;
  e.kind = Kind::add;
  e.name = std::move(name);
  e.description = std::move(description);
  return e;
}

Edit Edit::remove(std::size_t id) {
  Edit e;
  e.kind = Kind::remove;
  e.id = id;
  return e;
}

Edit edit_from_json(const json& j) {
  try {
    const auto op = j.at("op").get<std::string>();
    if (op == "merge") return Edit::merge(j.at("sources").get<std::vector<std::size_t>>(), j.at("target").get<std::size_t>());
    if (op == "split") return Edit::split(j.at("id").get<std::size_t>(), j.at("names").get<std::vector<std::string>>());
    if (op == "rename") return Edit::rename(j.at("id").get<std::size_t>(), j.at("name").get<std::string>());
    if (op == "add") return Edit::add(j.at("name").get<std::string>(), j.value("description", std::string{}));
    if (op == "delete") return Edit::remove(j.at("id").get<std::size_t>());
    throw ValidationError("unknown edit op '" + op + "'");
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed edit: ") + e.what());
  }
}

json edit_to_json(const Edit& e) {
  switch (e.kind) {
    case Edit::Kind::merge: return {{"op", "merge"}, {"sources", e.sources}, {"target", e.id}};
    case Edit::Kind::split: return {{"op", "split"}, {"id", e.id}, {"names", e.names}};
    case Edit::Kind::rename: return {{"op", "rename"}, {"id", e.id}, {"name", e.name}};
    case Edit::Kind::add: return {{"op", "add"}, {"name", e.name}, {"description", e.description}};
    case Edit::Kind::remove: return {{"op", "delete"}, {"id", e.id}};
  }
  return {};
}

namespace {

std::string trimmed(const std::string& s) {
  auto first = std::find_if_not(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
  auto last = std::find_if_not(s.rbegin(), s.rend(), [](unsigned char c) { return std::isspace(c); }).base();
  return first < last ? std::string(first, last) : std::string();
}

}  // namespace

void AnnotationStore::log(std::string action, json detail) {
  history_.push_back({history_.size() + 1, round_, phase_, std::move(action), std::move(detail)});
}

void AnnotationStore::transition(Phase next) {
  const bool ok = (phase_ == Phase::open && next == Phase::organize) ||
                  (phase_ == Phase::organize && next == Phase::closed) ||
                  (phase_ == Phase::closed && next == Phase::organize);
  if (!ok) {
    throw PhaseError("cannot move from " + std::string(to_string(phase_)) + " to " + std::string(to_string(next)));
  }
  const Phase from = phase_;
  if (next == Phase::closed) {
    if (closed_before_) ++round_;
    closed_before_ = true;
  }
  phase_ = next;
  log("phase", {{"from", to_string(from)}, {"to", to_string(next)}});
}

void AnnotationStore::open_annotate(std::size_t feature_id, const std::string& text) {
  if (phase_ != Phase::open) throw PhaseError("open annotation requires the open phase");
  const auto t = trimmed(text);
  if (t.empty()) throw ValidationError("annotation text must not be empty");
  open_texts_[feature_id].push_back(t);
  log("open_annotate", {{"feature", feature_id}, {"text", t}});
}

std::optional<std::size_t> AnnotationStore::find_label(std::string_view name) const {
  for (const auto& [id, l] : vocabulary_) {
    if (l.name == name) return id;
  }
  return std::nullopt;
}

std::optional<std::size_t> AnnotationStore::resolve(std::size_t id) const {
  for (std::size_t hops = 0; hops <= aliases_.size(); ++hops) {
    if (vocabulary_.count(id)) return id;
    auto it = aliases_.find(id);
    if (it == aliases_.end()) return std::nullopt;
    id = it->second;
  }
  return std::nullopt;
}

std::size_t AnnotationStore::require_label(std::size_t id, const char* context) const {
  auto r = resolve(id);
  if (!r) throw EditError(std::string(context) + ": label " + std::to_string(id) + " does not exist");
  return *r;
}

void AnnotationStore::require_unique_name(const std::string& name, std::optional<std::size_t> except) const {
  if (trimmed(name).empty()) throw EditError("label names must not be empty");
  auto found = find_label(name);
  if (found && found != except) throw EditError("label name '" + name + "' is already in use");
}

std::vector<std::size_t> AnnotationStore::organize_labels(std::span<const Edit> edits) {
  if (phase_ != Phase::organize) throw PhaseError("label organization requires the organize phase");
  AnnotationStore next = *this;  // edits apply to a copy and commit together
  std::vector<std::size_t> created;
  json applied = json::array();
  for (const auto& e : edits) {
    switch (e.kind) {
      case Edit::Kind::merge: {
        const std::size_t target = next.require_label(e.id, "merge target");
        for (auto src : e.sources) {
          const std::size_t s = next.require_label(src, "merge source");
          if (s == target) continue;
          next.vocabulary_.erase(s);
          next.aliases_[s] = target;
          for (auto& [feature, labels] : next.assignments_) {
            if (labels.erase(s)) labels.insert(target);
          }
        }
        break;
      }
      case Edit::Kind::split: {
        const std::size_t id = next.require_label(e.id, "split");
        if (e.names.empty()) throw EditError("split needs at least one name");
        next.require_unique_name(e.names.front(), id);
        next.vocabulary_[id].name = e.names.front();
        for (std::size_t i = 1; i < e.names.size(); ++i) {
          next.require_unique_name(e.names[i], std::nullopt);
          const std::size_t nid = next.next_label_id_++;
          next.vocabulary_[nid] = {nid, e.names[i], next.vocabulary_[id].description, next.round_};
          created.push_back(nid);
        }
        break;
      }
      case Edit::Kind::rename: {
        const std::size_t id = next.require_label(e.id, "rename");
        next.require_unique_name(e.name, id);
        next.vocabulary_[id].name = e.name;
        break;
      }
      case Edit::Kind::add: {
        next.require_unique_name(e.name, std::nullopt);
        const std::size_t nid = next.next_label_id_++;
        next.vocabulary_[nid] = {nid, e.name, e.description, next.round_};
        created.push_back(nid);
        break;
      }
      case Edit::Kind::remove: {
        const std::size_t id = next.require_label(e.id, "delete");
        next.vocabulary_.erase(id);
        for (auto it = next.aliases_.begin(); it != next.aliases_.end();) {
          it = it->second == id ? next.aliases_.erase(it) : std::next(it);
        }
        for (auto& [feature, labels] : next.assignments_) labels.erase(id);
        break;
      }
    }
    applied.push_back(edit_to_json(e));
  }
  next.log("organize_labels", {{"edits", applied}, {"created", created}});
  *this = std::move(next);
  return created;
}

void AnnotationStore::closed_annotate(std::size_t feature_id, const std::set<std::size_t>& label_ids) {
  if (phase_ != Phase::closed) throw PhaseError("closed annotation requires the closed phase");
  std::set<std::size_t> resolved;
  for (auto id : label_ids) {
    auto r = resolve(id);
    if (!r) throw ValidationError("unknown label " + std::to_string(id));
    resolved.insert(*r);
  }
  assignments_[feature_id] = resolved;
  log("closed_annotate", {{"feature", feature_id}, {"labels", resolved}});
}

std::set<std::size_t> AnnotationStore::labels_of(std::size_t feature_id) const {
  auto it = assignments_.find(feature_id);
  return it == assignments_.end() ? std::set<std::size_t>{} : it->second;
}

std::vector<std::size_t> AnnotationStore::features_with_label(std::size_t label_id) const {
  std::vector<std::size_t> out;
  for (const auto& [feature, labels] : assignments_) {
    if (labels.count(label_id)) out.push_back(feature);
  }
  return out;
}

std::vector<std::string> AnnotationStore::label_names(const std::set<std::size_t>& ids) const {
  std::vector<std::string> out;
  for (auto id : ids) {
    auto it = vocabulary_.find(id);
    if (it != vocabulary_.end()) out.push_back(it->second.name);
  }
  return out;
}

json AnnotationStore::to_json() const {
  json vocab = json::array();
  for (const auto& [id, l] : vocabulary_) {
    vocab.push_back({{"id", id}, {"name", l.name}, {"description", l.description},
                     {"created_in_round", l.created_in_round}});
  }
  json aliases = json::object();
  for (const auto& [from, to] : aliases_) aliases[std::to_string(from)] = to;
  json open = json::object();
  for (const auto& [f, texts] : open_texts_) open[std::to_string(f)] = texts;
  json assigned = json::object();
  for (const auto& [f, labels] : assignments_) assigned[std::to_string(f)] = labels;
  json history = json::array();
  for (const auto& h : history_) {
    history.push_back({{"seq", h.seq}, {"round", h.round}, {"phase", to_string(h.phase)}, {"action", h.action},
                       {"detail", h.detail}});
  }
  return {{"phase", to_string(phase_)}, {"round", round_},          {"closed_before", closed_before_},
          {"next_label_id", next_label_id_}, {"vocabulary", vocab}, {"aliases", aliases},
          {"open_texts", open},              {"assignments", assigned}, {"history", history}};
}

AnnotationStore AnnotationStore::from_json(const json& j) {
  try {
    AnnotationStore s;
    s.phase_ = phase_from_string(j.at("phase").get<std::string>());
    s.round_ = j.at("round").get<std::size_t>();
    s.closed_before_ = j.value("closed_before", s.phase_ == Phase::closed);
    s.next_label_id_ = j.at("next_label_id").get<std::size_t>();
    for (const auto& jl : j.at("vocabulary")) {
      Label l{jl.at("id").get<std::size_t>(), jl.at("name").get<std::string>(), jl.value("description", std::string{}),
              jl.value("created_in_round", std::size_t{1})};
      s.next_label_id_ = std::max(s.next_label_id_, l.id + 1);
      s.vocabulary_[l.id] = std::move(l);
    }
    const json aliases = j.value("aliases", json::object());
    for (const auto& [k, v] : aliases.items()) {
      s.aliases_[std::stoul(k)] = v.get<std::size_t>();
    }
    for (const auto& [k, v] : j.at("open_texts").items()) {
      s.open_texts_[std::stoul(k)] = v.get<std::vector<std::string>>();
    }
    for (const auto& [k, v] : j.at("assignments").items()) {
      auto labels = v.get<std::set<std::size_t>>();
      for (auto id : labels) {
        if (!s.vocabulary_.count(id)) throw FormatError("assignment references unknown label " + std::to_string(id));
      }
      s.assignments_[std::stoul(k)] = std::move(labels);
    }
    for (const auto& jh : j.at("history")) {
      s.history_.push_back({jh.at("seq").get<std::size_t>(), jh.at("round").get<std::size_t>(),
                            phase_from_string(jh.at("phase").get<std::string>()), jh.at("action").get<std::string>(),
                            jh.at("detail")});
    }
    return s;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed annotation store: ") + e.what());
  } catch (const std::invalid_argument&) {
    throw FormatError("annotation store has a non-numeric feature key");
  }
}

void AnnotationStore::save(const std::string& path) const { write_text_file(path, to_json().dump(2) + "\n"); }

AnnotationStore AnnotationStore::load(const std::string& path) {
  try {
    return from_json(json::parse(read_text_file(path)));
  } catch (const json::parse_error& e) {
    throw FormatError(path + ": " + e.what());
  }
}

AnnotationImageSet sample_annotation_images(std::span<const features::InferenceAnalysis> analyses,
                                            std::size_t feature_id, std::size_t n) {
  AnnotationImageSet set;
  set.feature_id = feature_id;
  std::vector<const features::InferenceAnalysis*> members;
  for (const auto& a : analyses) {
    if (feature_id < a.e.size() && a.e.test(feature_id)) members.push_back(&a);
  }
  std::stable_sort(members.begin(), members.end(), [&](const auto* x, const auto* y) {
    if (x->zhat[feature_id] != y->zhat[feature_id]) return x->zhat[feature_id] > y->zhat[feature_id];
    return x->sample_id < y->sample_id;
  });
  for (std::size_t i = 0; i < members.size() && i < n; ++i) {
    set.items.push_back({members[i]->sample_id, members[i]->zhat[feature_id], {}, {}});
  }
  return set;
}

AutoAnnotation auto_annotate(std::span<const Observation> observations, std::size_t feature_dim,
                             std::size_t attribute_count, double precision_threshold) {
  if (!(precision_threshold > 0.0 && precision_threshold <= 1.0)) {
    throw ValidationError("precision threshold must be in (0, 1]");
  }
  AutoAnnotation out;
  out.threshold = precision_threshold;
  out.features.resize(feature_dim);
  for (const auto& obs : observations) {
    if (obs.activated->size() != feature_dim) throw ShapeError("activated feature has the wrong dimension");
    for (std::size_t f = 0; f < feature_dim; ++f) {
      if (!obs.activated->test(f)) continue;
      auto& fp = out.features[f];
      ++fp.activations;
      for (auto t : obs.attributes) {
        if (t >= attribute_count) throw RangeError("attribute " + std::to_string(t) + " out of range");
        ++fp.co_occurrences[t];
      }
    }
  }
  for (std::size_t f = 0; f < feature_dim; ++f) {
    auto& fp = out.features[f];
    if (fp.activations == 0) continue;
    for (const auto& [t, count] : fp.co_occurrences) {
      const double p = static_cast<double>(count) / static_cast<double>(fp.activations);
      fp.precision[t] = p;
      if (p >= precision_threshold) out.assignments[f].insert(t);
    }
  }
  return out;
}

AnnotationStore store_from_auto_annotation(const AutoAnnotation& auto_result,
                                           std::span<const std::string> attribute_names) {
  AnnotationStore store;
  store.transition(Phase::organize);
  std::vector<Edit> adds;
  for (const auto& name : attribute_names) adds.push_back(Edit::add(name, "ground-truth attribute"));
  store.organize_labels(adds);
  store.transition(Phase::closed);
  for (const auto& [feature, attrs] : auto_result.assignments) store.closed_annotate(feature, attrs);
  return store;
}

std::vector<DescribedFeature> describe(const features::InferenceAnalysis& analysis, const AnnotationStore& store) {
  std::vector<DescribedFeature> out;
  for (const auto& tf : analysis.top_features) {
    DescribedFeature d;
    d.feature_id = tf.id;
    d.zhat = tf.zhat;
    const auto labels = store.labels_of(tf.id);
    d.label_ids.assign(labels.begin(), labels.end());
    const auto names = store.label_names(labels);
    if (names.empty()) {
      d.text = "(unlabeled feature " + std::to_string(tf.id) + ")";
    } else {
      for (std::size_t i = 0; i < names.size(); ++i) d.text += (i ? ", " : "") + names[i];
    }
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace glassbox::annotation
