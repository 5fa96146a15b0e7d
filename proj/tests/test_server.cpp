#include <gtest/gtest.h>
#include <httplib.h>

#include <thread>

#include "glassbox/errors.hpp"
#include "glassbox/model_io.hpp"
#include "glassbox/server.hpp"
#include "small_home.hpp"

using namespace glassbox;
using namespace glassbox::server;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path& built_home() {
  static const fs::path home = [] {
    pipeline::Pipeline p(fixture::small_config(fixture::fresh_dir("server_base").string()));
    p.run_all();
    return p.paths().home;
  }();
  return home;
}

// Each test mutates its own copy of the home.
Service fresh_service(const std::string& name, std::size_t redundancy = 1) {
  const auto dir = fixture::fresh_dir("server_" + name);
  fs::copy(built_home(), dir, fs::copy_options::recursive | fs::copy_options::overwrite_existing);
  auto cfg = fixture::small_config(dir.string());
  cfg.redundancy = redundancy;
  return Service(pipeline::Paths{dir}, cfg);
}

Reply get(Service& s, const std::string& path, std::map<std::string, std::string> q = {}) {
  return s.handle("GET", path, q, "");
}

Reply post(Service& s, const std::string& path, const json& body) { return s.handle("POST", path, {}, body.dump()); }

}  // namespace

TEST(Server, FeatureListingAndLookups) {
  Service s = fresh_service("list");
  const auto r = get(s, "/features");
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(r.body["features"].size(), 64u);
  EXPECT_EQ(r.body["phase"], "open");
  EXPECT_EQ(get(s, "/features/3").status, 200);
  EXPECT_EQ(get(s, "/features/64").status, 404);
  EXPECT_EQ(get(s, "/features/99999999999999999999999").status, 404);
  EXPECT_EQ(get(s, "/nowhere").status, 404);
  const auto imgs = get(s, "/features/0/images");
  ASSERT_EQ(imgs.status, 200);
  for (const auto& it : imgs.body["images"]) {
    const std::string url = it["overlay_url"];
    ASSERT_EQ(url.rfind("/files/", 0), 0u);
    EXPECT_TRUE(fs::exists(s.home() / url.substr(7)));
  }
}

TEST(Server, PhaseViolationsAre409) {
  Service s = fresh_service("phase");
  EXPECT_EQ(post(s, "/features/0/closed", {{"labels", json::array({0})}}).status, 409);
  EXPECT_EQ(post(s, "/vocabulary", {{"edits", json::array({{{"op", "add"}, {"name", "fur"}}})}}).status, 409);
  EXPECT_EQ(post(s, "/phase", {{"phase", "closed"}}).status, 409);
  EXPECT_EQ(post(s, "/phase", {{"phase", "organize"}}).status, 200);
  EXPECT_EQ(post(s, "/features/0/open", {{"text", "fur"}}).status, 409);
}

TEST(Server, MalformedBodiesAre400) {
  Service s = fresh_service("malformed");
  EXPECT_EQ(s.handle("POST", "/features/0/open", {}, "{not json").status, 400);
  EXPECT_EQ(post(s, "/features/0/open", {{"txt", "fur"}}).status, 400);
  EXPECT_EQ(post(s, "/features/0/open", {{"text", "   "}}).status, 400);
  EXPECT_EQ(post(s, "/phase", {{"phase", "sideways"}}).status, 400);
  EXPECT_EQ(post(s, "/phase", {{"phase", "organize"}}).status, 200);
  EXPECT_EQ(post(s, "/vocabulary", {{"edits", json::array({{{"op", "explode"}}})}}).status, 400);
  EXPECT_EQ(get(s, "/tasks/next", {{"worker", "w1"}}).status, 400);
  EXPECT_EQ(get(s, "/tasks/next", {{"question", "PCR"}}).status, 400);
  EXPECT_EQ(get(s, "/tasks/next", {{"question", "XCR"}, {"worker", "w1"}}).status, 400);
}

TEST(Server, AnnotationRoundTripPersists) {
  Service s = fresh_service("annotate");
  ASSERT_EQ(post(s, "/features/5/open", {{"text", "striped fur"}}).status, 200);
  ASSERT_EQ(post(s, "/features/5/open", {{"text", "fur"}}).status, 200);
  EXPECT_EQ(get(s, "/features/5").body["open_texts"], json::array({"striped fur", "fur"}));
  ASSERT_EQ(post(s, "/phase", {{"phase", "organize"}}).status, 200);
  const auto v = post(s, "/vocabulary", {{"edits", json::array({{{"op", "add"}, {"name", "fur"}},
                                                                 {{"op", "add"}, {"name", "stripes"}}})}});
  ASSERT_EQ(v.status, 200) << v.body.dump();
  ASSERT_EQ(v.body["created"].size(), 2u);
  const std::size_t fur = v.body["created"][0], stripes = v.body["created"][1];
  ASSERT_EQ(post(s, "/phase", {{"phase", "closed"}}).status, 200);
  const auto c = post(s, "/features/5/closed", {{"labels", json::array({fur, stripes})}});
  ASSERT_EQ(c.status, 200) << c.body.dump();
  EXPECT_EQ(post(s, "/features/6/closed", {{"labels", json::array({9999})}}).status, 400);
  EXPECT_EQ(post(s, "/features/6/closed", {{"labels", json::array({-1})}}).status, 400);

  // a new service over the same home sees the persisted store
  Service again(pipeline::Paths{s.home()}, fixture::small_config(s.home().string()));
  const auto f = get(again, "/features/5").body;
  EXPECT_TRUE(f["annotated"].get<bool>());
  ASSERT_EQ(f["labels"].size(), 2u);
  EXPECT_EQ(f["labels"][0]["name"], "fur");
  EXPECT_EQ(f["labels"][1]["name"], "stripes");
}

TEST(Server, TaskPayloadsAreBlinded) {
  Service s = fresh_service("blind");
  std::vector<std::string> class_names;
  for (const auto& c : pipeline::read_json(pipeline::Paths{s.home()}.dataset_summary())["classes"]) {
    class_names.push_back(c["name"]);
  }
  const auto pcr = get(s, "/tasks/next", {{"question", "PCR"}, {"worker", "w1"}});
  ASSERT_EQ(pcr.status, 200);
  const auto& t = pcr.body["task"];
  ASSERT_TRUE(t.is_object());
  EXPECT_FALSE(t.contains("predicted_label"));
  EXPECT_FALSE(t.contains("label_name"));
  const std::string dump = t.dump();
  for (const auto& n : class_names) EXPECT_EQ(dump.find(n), std::string::npos) << n;
  EXPECT_EQ(t["image"].get<std::string>().rfind("data:image/png;base64,", 0), 0u);
  EXPECT_EQ(pcr.body["remaining"], 32);

  const auto lcr = get(s, "/tasks/next", {{"question", "LCR"}, {"worker", "w1"}});
  ASSERT_EQ(lcr.status, 200);
  const auto& l = lcr.body["task"];
  EXPECT_FALSE(l.contains("image"));
  EXPECT_FALSE(l.contains("overlays"));
  EXPECT_EQ(l.dump().find("data:image"), std::string::npos);
  EXPECT_TRUE(l.contains("label_name"));
}

TEST(Server, ResponsesAndRecords) {
  Service s = fresh_service("respond", 2);
  const auto first = get(s, "/tasks/next", {{"question", "PCR"}, {"worker", "w1"}}).body["task"];
  const std::uint64_t sid = first["sample_id"];
  const std::string pcr_id = first["task_id"], lcr_id = "LCR-" + std::to_string(sid);
  EXPECT_EQ(pcr_id, "PCR-" + std::to_string(sid));

  EXPECT_EQ(post(s, "/tasks/" + pcr_id + "/response", {{"worker", "w1"}, {"answer", "agree"}}).status, 200);
  EXPECT_EQ(post(s, "/tasks/" + pcr_id + "/response", {{"worker", "w1"}, {"answer", "disagree"}}).status, 409);
  EXPECT_EQ(post(s, "/tasks/" + pcr_id + "/response", {{"worker", "w2"}, {"answer", "maybe"}}).status, 400);
  EXPECT_EQ(post(s, "/tasks/" + pcr_id + "/response", {{"answer", "agree"}}).status, 400);
  EXPECT_EQ(post(s, "/tasks/" + pcr_id + "/response", {{"worker", "a,b"}, {"answer", "agree"}}).status, 400);
  EXPECT_EQ(post(s, "/tasks/PCR-99999999/response", {{"worker", "w1"}, {"answer", "agree"}}).status, 404);
  EXPECT_EQ(post(s, "/tasks/XYZ-1/response", {{"worker", "w1"}, {"answer", "agree"}}).status, 404);

  // w1 moves on; w2 still gets the half-covered sample
  EXPECT_NE(get(s, "/tasks/next", {{"question", "PCR"}, {"worker", "w1"}}).body["task"]["sample_id"], sid);
  EXPECT_EQ(get(s, "/tasks/next", {{"question", "PCR"}, {"worker", "w2"}}).body["task"]["sample_id"], sid);

  EXPECT_EQ(post(s, "/tasks/" + pcr_id + "/response", {{"worker", "w2"}, {"answer", "strongly_disagree"}}).status,
            200);
  // redundancy reached: nobody else is offered it
  EXPECT_NE(get(s, "/tasks/next", {{"question", "PCR"}, {"worker", "w3"}}).body["task"]["sample_id"], sid);

  auto recs = get(s, "/records").body;
  EXPECT_EQ(recs["responses"].size(), 2u);
  EXPECT_TRUE(recs["records"].empty());  // LCR still missing
  EXPECT_EQ(post(s, "/tasks/" + lcr_id + "/response", {{"worker", "w1"}, {"answer", "strongly_agree"}}).status, 200);
  recs = get(s, "/records").body;
  ASSERT_EQ(recs["records"].size(), 1u);
  EXPECT_EQ(recs["records"][0]["sample_id"], sid);
  EXPECT_DOUBLE_EQ(recs["records"][0]["pcr"].get<double>(), 0.5);
  EXPECT_DOUBLE_EQ(recs["records"][0]["lcr"].get<double>(), 1.0);

  // responses.csv is reloaded by a restarted service and feeds the pipeline
  const auto csv = pipeline::Paths{s.home()}.responses();
  const auto rows = consistency::parse_responses_csv(read_text_file(csv.string()));
  EXPECT_EQ(rows.size(), 3u);
  Service again(pipeline::Paths{s.home()}, fixture::small_config(s.home().string()));
  EXPECT_EQ(post(again, "/tasks/" + pcr_id + "/response", {{"worker", "w1"}, {"answer", "agree"}}).status, 409);
  pipeline::Pipeline p(fixture::small_config(s.home().string()));
  EXPECT_EQ(p.consistency(csv.string()).at("records"), 1);
}

TEST(Server, WorkerExhaustsQueue) {
  Service s = fresh_service("exhaust");
  std::size_t answered = 0;
  for (;;) {
    const auto r = get(s, "/tasks/next", {{"question", "LCR"}, {"worker", "solo"}}).body;
    if (r["task"].is_null()) break;
    ASSERT_EQ(post(s, "/tasks/" + r["task"]["task_id"].get<std::string>() + "/response",
                   {{"worker", "solo"}, {"answer", "disagree"}})
                  .status,
              200);
    ++answered;
    ASSERT_LE(answered, 32u);
  }
  EXPECT_EQ(answered, 32u);
}

TEST(Server, RequiresUpstreamArtifacts) {
  const auto dir = fixture::fresh_dir("server_missing");
  EXPECT_THROW(Service(pipeline::Paths{dir}, fixture::small_config(dir.string())), DependencyError);
}

TEST(Server, OverHttp) {
  Service s = fresh_service("http");
  httplib::Server srv;
  register_routes(srv, s, "");
  const int port = srv.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread loop([&] { srv.listen_after_bind(); });
  struct Stop {
    httplib::Server& srv;
    std::thread& loop;
    ~Stop() {
      srv.stop();
      loop.join();
    }
  } stop{srv, loop};
  srv.wait_until_ready();
  httplib::Client cli("127.0.0.1", port);

  auto r = cli.Get("/features");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  EXPECT_EQ(json::parse(r->body)["features"].size(), 64u);
  r = cli.Post("/features/2/open", R"({"text": "red disk"})", "application/json");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  r = cli.Post("/features/2/closed", R"({"labels": [0]})", "application/json");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 409);
  r = cli.Get("/tasks/next?question=LCR&worker=w9");
  ASSERT_TRUE(r);
  const auto task = json::parse(r->body)["task"];
  r = cli.Post("/tasks/" + task["task_id"].get<std::string>() + "/response", R"({"worker": "w9", "answer": "agree"})",
               "application/json");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  // images are served from the home directory
  std::string url;
  for (std::size_t f = 0; f < 64 && url.empty(); ++f) {
    const auto imgs = json::parse(cli.Get(("/features/" + std::to_string(f) + "/images").c_str())->body)["images"];
    if (!imgs.empty()) url = imgs[0]["image_url"];
  }
  ASSERT_FALSE(url.empty());
  r = cli.Get(url.c_str());
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  EXPECT_EQ(r->body.substr(1, 3), "PNG");
}
