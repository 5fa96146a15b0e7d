#include "glassbox/server.hpp"

#include <httplib.h>

#include <algorithm>
#include <fstream>
#include <regex>

#include "glassbox/errors.hpp"
#include "glassbox/image_io.hpp"
#include "glassbox/model_io.hpp"

namespace glassbox::server {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kPcrPrompt = "Is the inference feature relevant to the whole or parts of the input image?";
constexpr const char* kLcrPrompt =
    "If an object satisfies the inference feature, is it an object in the class of inference (label)?";

std::string task_id_for(consistency::Question q, std::uint64_t sample) {
  return std::string(consistency::to_string(q)) + "-" + std::to_string(sample);
}

json labels_json(const annotation::AnnotationStore& store, const std::set<std::size_t>& ids) {
  json out = json::array();
  for (auto id : ids) out.push_back({{"id", id}, {"name", store.vocabulary().at(id).name}});
  return out;
}

}  // namespace

Service::Service(pipeline::Paths paths, pipeline::PipelineConfig config)
    : paths_(std::move(paths)), config_(std::move(config)) {
  pipeline::require_artifact(paths_.annotation_tasks(), "annotate-export");
  pipeline::require_artifact(paths_.dataset_summary(), "gen-data");
  annotation_tasks_ = pipeline::read_json(paths_.annotation_tasks());
  feature_dim_ = annotation_tasks_.at("features").size();

  if (fs::exists(paths_.annotation_store())) store_ = annotation::AnnotationStore::load(paths_.annotation_store().string());
  if (fs::exists(paths_.auto_annotation())) {
    auto_store_ = annotation::AnnotationStore::from_json(pipeline::read_json(paths_.auto_annotation()).at("store"));
  }
  const nlohmann::json classes_doc = pipeline::read_json(paths_.dataset_summary());
  for (const auto& c : classes_doc.at("classes")) {
    class_names_.push_back(c.at("name").get<std::string>());
  }

  pipeline::require_artifact(paths_.analysis(), "analyze");
  const auto rf = pipeline::read_json([&] {
    pipeline::require_artifact(paths_.rf(), "rf");
    return paths_.rf();
  }());
  std::map<std::uint64_t, const json*> rf_by_sample;
  for (const auto& s : rf.at("samples")) rf_by_sample[s.at("sample_id").get<std::uint64_t>()] = &s;
  const nlohmann::json samples_doc = pipeline::read_json(paths_.analysis());
  for (const auto& sj : samples_doc.at("samples")) {
    TaskSample t;
    t.analysis = pipeline::analysis_from_json(sj);
    t.sample_id = t.analysis.sample_id;
    t.predicted_label = t.analysis.predicted_label;
    t.ground_truth = sj.value("ground_truth", t.predicted_label);
    t.max_softmax = t.analysis.max_softmax;
    auto it = rf_by_sample.find(t.sample_id);
    if (it == rf_by_sample.end()) continue;
    t.image = it->second->at("image").get<std::string>();
    for (const auto& f : it->second->at("features")) t.overlays.push_back(f.at("overlay").get<std::string>());
    samples_.push_back(std::move(t));
  }
  std::sort(samples_.begin(), samples_.end(), [](const auto& a, const auto& b) { return a.sample_id < b.sample_id; });

  if (fs::exists(paths_.responses())) {
    responses_ = consistency::parse_responses_csv(read_text_file(paths_.responses().string()));
  }
}

void Service::require_feature(std::size_t id) const {
  if (id >= feature_dim_) throw NotFoundError("no feature " + std::to_string(id));
}

void Service::persist_store() const { store_.save(paths_.annotation_store().string()); }

json Service::list_features() const {
  std::lock_guard lock(mu_);
  json out = json::array();
  for (std::size_t f = 0; f < feature_dim_; ++f) {
    auto texts = store_.open_texts().count(f) ? store_.open_texts().at(f) : std::vector<std::string>{};
    out.push_back({{"id", f},
                   {"labels", labels_json(store_, store_.labels_of(f))},
                   {"annotated", store_.assignments().count(f) > 0},
                   {"open_texts", texts},
                   {"image_count", annotation_tasks_.at("features").at(f).at("images").size()}});
  }
  return {{"phase", annotation::to_string(store_.phase())}, {"round", store_.round()}, {"features", out}};
}

json Service::feature(std::size_t id) const {
  require_feature(id);
  std::lock_guard lock(mu_);
  auto texts = store_.open_texts().count(id) ? store_.open_texts().at(id) : std::vector<std::string>{};
  return {{"id", id},
          {"phase", annotation::to_string(store_.phase())},
          {"labels", labels_json(store_, store_.labels_of(id))},
          {"annotated", store_.assignments().count(id) > 0},
          {"open_texts", texts}};
}

json Service::feature_images(std::size_t id) const {
  require_feature(id);
  json items = json::array();
  for (const auto& it : annotation_tasks_.at("features").at(id).at("images")) {
    items.push_back({{"sample_id", it.at("sample_id")},
                     {"zhat", it.at("zhat")},
                     {"image_url", "/files/" + it.at("image").get<std::string>()},
                     {"overlay_url", "/files/" + it.at("overlay").get<std::string>()}});
  }
  return {{"feature_id", id}, {"images", items}};
}

json Service::open_annotate(std::size_t id, const json& body) {
  require_feature(id);
  if (!body.is_object() || !body.contains("text") || !body["text"].is_string()) {
    throw ValidationError("body must be {\"text\": string}");
  }
  std::lock_guard lock(mu_);
  store_.open_annotate(id, body["text"].get<std::string>());
  persist_store();
  return {{"id", id}, {"open_texts", store_.open_texts().at(id)}};
}

json Service::vocabulary() const {
  std::lock_guard lock(mu_);
  json labels = json::array();
  for (const auto& [id, l] : store_.vocabulary()) {
    labels.push_back({{"id", id},
                      {"name", l.name},
                      {"description", l.description},
                      {"features", store_.features_with_label(id).size()}});
  }
  return {{"phase", annotation::to_string(store_.phase())}, {"round", store_.round()}, {"labels", labels}};
}

json Service::edit_vocabulary(const json& body) {
  if (!body.is_object() || !body.contains("edits") || !body["edits"].is_array()) {
    throw ValidationError("body must be {\"edits\": [...]}");
  }
  std::vector<annotation::Edit> edits;
  for (const auto& e : body["edits"]) edits.push_back(annotation::edit_from_json(e));
  std::vector<std::size_t> created;
  {
    std::lock_guard lock(mu_);
    created = store_.organize_labels(edits);
    persist_store();
  }
  json out = vocabulary();
  out["created"] = created;
  return out;
}

json Service::closed_annotate(std::size_t id, const json& body) {
  require_feature(id);
  if (!body.is_object() || !body.contains("labels") || !body["labels"].is_array()) {
    throw ValidationError("body must be {\"labels\": [ids]}");
  }
  std::set<std::size_t> labels;
  for (const auto& l : body["labels"]) {
    if (!l.is_number_unsigned()) throw ValidationError("label ids must be non-negative integers");
    labels.insert(l.get<std::size_t>());
  }
  std::lock_guard lock(mu_);
  store_.closed_annotate(id, labels);
  persist_store();
  return {{"id", id}, {"labels", labels_json(store_, store_.labels_of(id))}};
}

json Service::set_phase(const json& body) {
  if (!body.is_object() || !body.contains("phase") || !body["phase"].is_string()) {
    throw ValidationError("body must be {\"phase\": \"open\"|\"organize\"|\"closed\"}");
  }
  const auto next = annotation::phase_from_string(body["phase"].get<std::string>());
  std::lock_guard lock(mu_);
  store_.transition(next);
  persist_store();
  return {{"phase", annotation::to_string(store_.phase())}, {"round", store_.round()}};
}

const annotation::AnnotationStore& Service::description_store() const {
  if (store_.assignments().empty() && auto_store_) return *auto_store_;
  return store_;
}

std::string Service::data_uri(const std::string& rel_path) const {
  return "data:image/png;base64," + image_io::base64(read_file_bytes((paths_.home / rel_path).string()));
}

json Service::task_payload(const TaskSample& s, consistency::Question q) const {
  json desc = json::array();
  for (const auto& d : annotation::describe(s.analysis, description_store())) {
    desc.push_back({{"feature_id", d.feature_id}, {"text", d.text}});
  }
  json p = {{"task_id", task_id_for(q, s.sample_id)},
            {"sample_id", s.sample_id},
            {"question", consistency::to_string(q)},
            {"features", desc}};
  if (q == consistency::Question::pcr) {
    // blinded: no label of any kind
    p["prompt"] = kPcrPrompt;
    p["image"] = data_uri(s.image);
    json overlays = json::array();
    for (const auto& o : s.overlays) overlays.push_back(data_uri(o));
    p["overlays"] = overlays;
  } else {
    // blinded: no image bytes
    p["prompt"] = kLcrPrompt;
    p["predicted_label"] = s.predicted_label;
    p["label_name"] = class_names_.at(s.predicted_label);
  }
  return p;
}

json Service::next_task(consistency::Question q, const std::string& worker) const {
  if (worker.empty()) throw ValidationError("worker query parameter is required");
  std::lock_guard lock(mu_);
  std::map<std::uint64_t, std::size_t> answered;
  std::set<std::uint64_t> mine;
  for (const auto& r : responses_) {
    if (r.question != q) continue;
    ++answered[r.sample_id];
    if (r.worker_id == worker) mine.insert(r.sample_id);
  }
  std::size_t remaining = 0;
  const TaskSample* pick = nullptr;
  for (const auto& s : samples_) {
    if (mine.count(s.sample_id) || answered[s.sample_id] >= config_.redundancy) continue;
    ++remaining;
    if (!pick) pick = &s;
  }
  if (!pick) return {{"task", nullptr}, {"remaining", 0}};
  return {{"task", task_payload(*pick, q)}, {"remaining", remaining}};
}

const Service::TaskSample& Service::task_sample(const std::string& task_id, consistency::Question* q) const {
  static const std::regex re(R"((PCR|LCR)-(\d+))");
  std::smatch m;
  if (!std::regex_match(task_id, m, re)) throw NotFoundError("no task " + task_id);
  *q = consistency::parse_question(m[1].str());
  const auto id = std::stoull(m[2].str());
  auto it = std::lower_bound(samples_.begin(), samples_.end(), id,
                             [](const TaskSample& s, std::uint64_t v) { return s.sample_id < v; });
  if (it == samples_.end() || it->sample_id != id) throw NotFoundError("no task " + task_id);
  return *it;
}

json Service::respond(const std::string& task_id, const json& body) {
  consistency::Question q;
  const auto& s = task_sample(task_id, &q);
  if (!body.is_object() || !body.contains("worker") || !body["worker"].is_string() || !body.contains("answer") ||
      !body["answer"].is_string()) {
    throw ValidationError("body must be {\"worker\": string, \"answer\": likert token}");
  }
  consistency::WorkerResponse r{task_id, s.sample_id, q, body["worker"].get<std::string>(),
                                consistency::parse_answer(body["answer"].get<std::string>())};
  if (r.worker_id.empty() || r.worker_id.find_first_of(",\n\r") != std::string::npos) {
    throw ValidationError("worker id must be non-empty and free of commas and newlines");
  }
  std::lock_guard lock(mu_);
  for (const auto& e : responses_) {
    if (e.sample_id == r.sample_id && e.question == r.question && e.worker_id == r.worker_id) {
      throw UniquenessError("worker '" + r.worker_id + "' already answered " + task_id);
    }
  }
  const bool fresh = !fs::exists(paths_.responses());
  {
    std::ofstream out(paths_.responses(), std::ios::app | std::ios::binary);
    if (!out) throw IoError("cannot append to " + paths_.responses().string());
    if (fresh) out << consistency::kResponseCsvHeader << '\n';
    out << consistency::format_response_row(r) << '\n';
  }
  responses_.push_back(r);
  return {{"task_id", task_id}, {"recorded", true}, {"responses", responses_.size()}};
}

json Service::records() const {
  std::lock_guard lock(mu_);
  json rows = json::array();
  std::map<std::uint64_t, std::set<consistency::Question>> covered;
  for (const auto& r : responses_) {
    rows.push_back({{"task_id", r.task_id},
                    {"sample_id", r.sample_id},
                    {"question", consistency::to_string(r.question)},
                    {"worker_id", r.worker_id},
                    {"answer", consistency::to_string(r.answer)}});
    covered[r.sample_id].insert(r.question);
  }
  std::vector<consistency::SampleOutcome> outcomes;
  for (const auto& s : samples_) {
    if (covered[s.sample_id].size() == 2) {
      outcomes.push_back({s.sample_id, s.predicted_label, s.ground_truth, s.max_softmax});
    }
  }
  std::vector<consistency::WorkerResponse> usable;
  for (const auto& r : responses_) {
    if (covered[r.sample_id].size() == 2) usable.push_back(r);
  }
  json recs = json::array();
  for (const auto& rec : consistency::build_records(outcomes, usable)) {
    recs.push_back(json::parse(consistency::record_to_json_line(rec)));
  }
  return {{"responses", rows}, {"records", recs}};
}

Reply Service::handle(const std::string& method, const std::string& path,
                      const std::map<std::string, std::string>& query, const std::string& body) {
  static const std::regex feature_re(R"(/features/(\d+))");
  static const std::regex images_re(R"(/features/(\d+)/images)");
  static const std::regex open_re(R"(/features/(\d+)/open)");
  static const std::regex closed_re(R"(/features/(\d+)/closed)");
  static const std::regex response_re(R"(/tasks/([^/]+)/response)");
  auto parse_body = [&]() -> json {
    try {
      return body.empty() ? json::object() : json::parse(body);
    } catch (const json::parse_error& e) {
      throw ValidationError(std::string("malformed JSON body: ") + e.what());
    }
  };
  auto id_of = [](const std::smatch& m) -> std::size_t {
    try {
      return std::stoul(m[1].str());
    } catch (const std::exception&) {
      throw NotFoundError("no feature " + m[1].str());
    }
  };
  try {
    std::smatch m;
    if (method == "GET" && path == "/features") return {200, list_features()};
    if (method == "GET" && std::regex_match(path, m, feature_re)) return {200, feature(id_of(m))};
    if (method == "GET" && std::regex_match(path, m, images_re)) return {200, feature_images(id_of(m))};
    if (method == "POST" && std::regex_match(path, m, open_re)) return {200, open_annotate(id_of(m), parse_body())};
    if (method == "GET" && path == "/vocabulary") return {200, vocabulary()};
    if (method == "POST" && path == "/vocabulary") return {200, edit_vocabulary(parse_body())};
    if (method == "POST" && std::regex_match(path, m, closed_re)) return {200, closed_annotate(id_of(m), parse_body())};
    if (method == "POST" && path == "/phase") return {200, set_phase(parse_body())};
    if (method == "GET" && path == "/tasks/next") {
      auto q = query.find("question");
      auto w = query.find("worker");
      if (q == query.end()) throw ValidationError("question query parameter is required");
      return {200, next_task(consistency::parse_question(q->second), w == query.end() ? "" : w->second)};
    }
    if (method == "POST" && std::regex_match(path, m, response_re)) return {200, respond(m[1].str(), parse_body())};
    if (method == "GET" && path == "/records") return {200, records()};
    return {404, {{"error", "no route " + method + " " + path}}};
  } catch (const PhaseError& e) {
    return {409, {{"error", e.what()}}};
  } catch (const UniquenessError& e) {
    return {409, {{"error", e.what()}}};
  } catch (const NotFoundError& e) {
    return {404, {{"error", e.what()}}};
  } catch (const ValidationError& e) {
    return {400, {{"error", e.what()}}};
  } catch (const EditError& e) {
    return {400, {{"error", e.what()}}};
  } catch (const ParseError& e) {
    return {400, {{"error", e.what()}}};
  } catch (const json::exception& e) {
    return {400, {{"error", e.what()}}};
  } catch (const std::exception& e) {
    return {500, {{"error", e.what()}}};
  }
}

void register_routes(httplib::Server& server, Service& service, const std::string& static_dir) {
  auto bridge = [&service](const httplib::Request& req, httplib::Response& res) {
    std::map<std::string, std::string> query;
    for (const auto& [k, v] : req.params) query.emplace(k, v);
    const Reply r = service.handle(req.method, req.path, query, req.body);
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json; charset=utf-8");
  };
  for (const char* pattern : {R"(/features)", R"(/features/\d+)", R"(/features/\d+/images)", R"(/vocabulary)",
                              R"(/tasks/next)", R"(/records)"}) {
    server.Get(pattern, bridge);
  }
  for (const char* pattern : {R"(/features/\d+/open)", R"(/features/\d+/closed)", R"(/vocabulary)", R"(/phase)",
                              R"(/tasks/[^/]+/response)"}) {
    server.Post(pattern, bridge);
  }
  server.set_mount_point("/files", service.home().string());
  if (!static_dir.empty()) server.set_mount_point("/", static_dir);
}

void serve(Service& service, const std::string& host, int port, const std::string& static_dir) {
  httplib::Server server;
  register_routes(server, service, static_dir);
  if (!server.listen(host, port)) throw IoError("cannot listen on " + host + ":" + std::to_string(port));
}

}  // namespace glassbox::server
