#pragma once

#include <filesystem>
#include <json.hpp>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "glassbox/annotation.hpp"
#include "glassbox/consistency.hpp"
#include "glassbox/pipeline.hpp"

namespace httplib {
class Server;
}

// HTTP API behind the annotation UI and the consistency questionnaire. The
// service is usable without sockets (tests call `handle` directly); `serve`
// binds it to httplib.
namespace glassbox::server {

struct Reply {
  int status = 200;
  nlohmann::json body;
};

class Service {
 public:
  /// Needs the annotate-export, analyze and rf artifacts under `paths.home`.
  Service(pipeline::Paths paths, pipeline::PipelineConfig config);

  Reply handle(const std::string& method, const std::string& path, const std::map<std::string, std::string>& query,
               const std::string& body);

  // Endpoint implementations; each throws library errors mapped by `handle`.
  nlohmann::json list_features() const;
  nlohmann::json feature(std::size_t id) const;
  nlohmann::json feature_images(std::size_t id) const;
  nlohmann::json open_annotate(std::size_t id, const nlohmann::json& body);
  nlohmann::json vocabulary() const;
  nlohmann::json edit_vocabulary(const nlohmann::json& body);
  nlohmann::json closed_annotate(std::size_t id, const nlohmann::json& body);
  nlohmann::json set_phase(const nlohmann::json& body);
  /// `null` task when the worker has nothing left for that question.
  nlohmann::json next_task(consistency::Question q, const std::string& worker) const;
  nlohmann::json respond(const std::string& task_id, const nlohmann::json& body);
  nlohmann::json records() const;

  std::size_t feature_dim() const noexcept { return feature_dim_; }
  const std::filesystem::path& home() const noexcept { return paths_.home; }

 private:
  struct TaskSample {
    std::uint64_t sample_id = 0;
    std::size_t predicted_label = 0;
    std::size_t ground_truth = 0;
    double max_softmax = 0.0;
    features::InferenceAnalysis analysis;
    std::string image;                  // home-relative png path
    std::vector<std::string> overlays;  // home-relative, one per top feature
  };

  void require_feature(std::size_t id) const;
  const TaskSample& task_sample(const std::string& task_id, consistency::Question* q) const;
  const annotation::AnnotationStore& description_store() const;
  nlohmann::json task_payload(const TaskSample& s, consistency::Question q) const;
  std::string data_uri(const std::string& rel_path) const;
  void persist_store() const;

  mutable std::mutex mu_;
  pipeline::Paths paths_;
  pipeline::PipelineConfig config_;
  std::size_t feature_dim_ = 0;
  annotation::AnnotationStore store_;
  std::optional<annotation::AnnotationStore> auto_store_;
  nlohmann::json annotation_tasks_;
  std::vector<std::string> class_names_;
  std::vector<TaskSample> samples_;  // sample id order
  std::vector<consistency::WorkerResponse> responses_;
};

/// Registers the API routes plus static mounts (`/files` -> home, `/` -> static_dir when non-empty).
void register_routes(httplib::Server& server, Service& service, const std::string& static_dir);

/// Blocking server loop.
void serve(Service& service, const std::string& host, int port, const std::string& static_dir);

}  // namespace glassbox::server
