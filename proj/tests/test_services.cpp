#include <doctest.h>

#include <atomic>
#include <chrono>
#include <thread>

#include "support.hpp"
#include "vlc/error.hpp"
#include "vlc/knowledge.hpp"
#include "vlc/selection.hpp"

#include <httplib.h>
#include <json.hpp>

using namespace vlc;
using nlohmann::json;

namespace {

class LocalServer {
 public:
  void start() {
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~LocalServer() {
    if (!thread_.joinable()) return;
    server_.stop();
    thread_.join();
  }
  httplib::Server& server() { return server_; }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

const knowledge::RelationType& relation(const std::string& name) {
  for (const auto& r : knowledge::default_relations())
    if (r.name == name) return r;
  throw std::runtime_error("no relation " + name);
}

}  // namespace

TEST_CASE("service source parses replies into ranked inferences") {
  LocalServer local;
  std::atomic<int> calls{0};
  local.server().Post("/generate", [&](const httplib::Request& req, httplib::Response& res) {
    ++calls;
    const auto body = json::parse(req.body);
    CHECK(body.at("beam") == 5);
    json out = {{"inferences", json::array()}};
    for (const auto& r : body.at("relations")) {
      out["inferences"].push_back({{"relation", r}, {"tail", "closet"}, {"rank", 2}});
      out["inferences"].push_back({{"relation", r}, {"tail", "store"}, {"rank", 1}});
    }
    res.set_content(out.dump(), "application/json");
  });
  local.start();

  knowledge::ServiceSource source({local.url(), std::chrono::milliseconds(2000), 2, 1});
  const auto phrase = knowledge::build_qo_phrase("The purpose of the umbrella is", {"umbrella"});
  const std::vector<knowledge::RelationType> rels{relation("AtLocation")};
  std::vector<std::string> warnings;
  const auto out = knowledge::generate_inferences(phrase, rels, 5, source, &warnings);
  CHECK(warnings.empty());
  CHECK(calls == 1);
  REQUIRE(out.size() == 2);
  CHECK(out[0].sentence == "You are likely to find umbrella at store");
  CHECK(out[0].source == knowledge::SourceKind::service);
  CHECK(out[1].beam_rank == 2);
}

TEST_CASE("service source degrades to empty with a warning after one retry") {
  LocalServer local;
  std::atomic<int> calls{0};
  local.server().Post("/generate", [&](const httplib::Request&, httplib::Response& res) {
    ++calls;
    res.status = 503;
  });
  local.start();
  knowledge::ServiceSource source({local.url(), std::chrono::milliseconds(2000), 1, 1});
  const auto phrase = knowledge::build_qo_phrase("X is", {"cat"});
  const std::vector<knowledge::RelationType> rels{relation("UsedFor")};
  std::vector<std::string> warnings;
  CHECK(knowledge::generate_inferences(phrase, rels, 5, source, &warnings).empty());
  CHECK(calls == 2);
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("503") != std::string::npos);
}

TEST_CASE("service source times out and degrades") {
  LocalServer local;
  local.server().Post("/generate", [&](const httplib::Request&, httplib::Response& res) {
    std::this_thread::sleep_for(std::chrono::milliseconds(600));
    res.set_content(R"({"inferences": []})", "application/json");
  });
  local.start();
  knowledge::ServiceSource source({local.url(), std::chrono::milliseconds(150), 1, 1});
  const auto phrase = knowledge::build_qo_phrase("X is", {"cat"});
  const std::vector<knowledge::RelationType> rels{relation("UsedFor")};
  std::vector<std::string> warnings;
  const auto start = std::chrono::steady_clock::now();
  CHECK(knowledge::generate_inferences(phrase, rels, 5, source, &warnings).empty());
  CHECK(std::chrono::steady_clock::now() - start < std::chrono::seconds(3));
  CHECK(warnings.size() == 1);
}

TEST_CASE("an unreachable service degrades without throwing") {
  knowledge::ServiceSource source({"http://127.0.0.1:1", std::chrono::milliseconds(200), 1, 1});
  std::vector<std::string> warnings;
  const std::vector<knowledge::RelationType> rels{relation("UsedFor")};
  CHECK(knowledge::generate_inferences(knowledge::build_qo_phrase("X is", {}), rels, 5, source, &warnings).empty());
  CHECK(warnings.size() == 1);
}

TEST_CASE("cache source backed by a service stores replies for offline reuse") {
  LocalServer local;
  std::atomic<int> calls{0};
  local.server().Post("/generate", [&](const httplib::Request& req, httplib::Response& res) {
    ++calls;
    json out = {{"inferences", json::array()}};
    const auto body = json::parse(req.body);
    for (const auto& r : body.at("relations"))
      out["inferences"].push_back({{"relation", r}, {"tail", "rain"}, {"rank", 1}});
    res.set_content(out.dump(), "application/json");
  });
  local.start();
  testing::TempDir dir("svc_cache");
  const auto phrase = knowledge::build_qo_phrase("The umbrella is used for", {"umbrella"});
  const std::vector<knowledge::RelationType> rels{relation("UsedFor")};
  std::vector<knowledge::Inference> live;
  {
    knowledge::CacheSource cache(dir.file("c.jsonl"),
                                 std::make_unique<knowledge::ServiceSource>(
                                     knowledge::ServiceOptions{local.url(), std::chrono::milliseconds(2000), 1, 1}));
    std::vector<std::string> warnings;
    live = knowledge::generate_inferences(phrase, rels, 5, cache, &warnings);
    knowledge::generate_inferences(phrase, rels, 5, cache, &warnings);
    CHECK(warnings.empty());
    CHECK(live.size() == 1);
  }
  CHECK(calls.load() == 1);
  knowledge::CacheSource offline(dir.file("c.jsonl"));
  const auto again = knowledge::generate_inferences(phrase, rels, 5, offline);
  REQUIRE(again.size() == 1);
  CHECK(again[0].sentence == live[0].sentence);
}

TEST_CASE("service encoder normalizes vectors and enforces a fixed dimension") {
  LocalServer local;
  std::atomic<int> dim{3};
  local.server().Post("/embed", [&](const httplib::Request& req, httplib::Response& res) {
    json out = {{"vectors", json::array()}};
    const std::size_t n = json::parse(req.body).at("texts").size();
    for (std::size_t i = 0; i < n; ++i)
      out["vectors"].push_back(std::vector<double>(static_cast<std::size_t>(dim.load()), 2.0));
    res.set_content(out.dump(), "application/json");
  });
  local.start();
  selection::ServiceEncoder enc({local.url(), std::chrono::milliseconds(2000)});
  CHECK(enc.dim() == 3);
  const auto v = enc.encode("anything");
  CHECK(v.values.norm() == doctest::Approx(1.0));
  CHECK(enc.encode_batch({"a", "b"}).size() == 2);
  dim = 4;
  CHECK_THROWS_AS(enc.encode("again"), DimensionError);
}

TEST_CASE("service encoder reports HTTP failures and malformed replies") {
  LocalServer local;
  local.server().Post("/embed", [&](const httplib::Request& req, httplib::Response& res) {
    if (req.body.find("bad") != std::string::npos) {
      res.set_content("{\"nope\": 1}", "application/json");
    } else {
      res.status = 500;
    }
  });
  local.start();
  selection::ServiceEncoder enc({local.url(), std::chrono::milliseconds(2000)});
  CHECK_THROWS_AS(enc.encode("bad"), ParseError);
  CHECK_THROWS_AS(enc.encode("other"), Error);
}
