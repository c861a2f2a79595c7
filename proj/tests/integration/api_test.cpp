#include <doctest.h>

#include "api_harness.hpp"
#include "botverse/errors.hpp"

using namespace botverse;

namespace {

// Six virtual hours in about three wall seconds.
const json kFastScaled = {{"type", "set_pacing"}, {"pacing", {{"mode", "scaled"}, {"factor", 0.00015}}}};

}  // namespace

TEST_SUITE("api") {

TEST_CASE("endpoints answer 503 until the engine is ready") {
  testing::ApiHarness h(testing::desk(), 42, false);
  int status = 0;
  h.get("/simulation", &status);
  CHECK(status == 503);
  CHECK(h.control(json{{"type", "resume"}}).first == 503);
  const json health = h.get("/health", &status);
  CHECK(status == 200);
  CHECK(health.at("ready") == false);
  h.start();
  h.get("/simulation", &status);
  CHECK(status == 200);
}

TEST_CASE("control conflicts and validation") {
  testing::ApiHarness h(testing::desk());
  auto [s1, b1] = h.control(json{{"type", "pause"}});
  CHECK(s1 == 409);
  CHECK(b1.at("error") == "Conflict");

  CHECK(h.control(json{{"type", "bogus"}}).first == 400);
  CHECK(h.control(json{{"type", "inject_narrative"}, {"narrative_id", "Z"}, {"assignees", {{"agents", {"ghost"}}}}})
            .first == 400);
  auto c = h.client();
  auto bad = c.Post("/control", "{not json", "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 400);

  auto [s2, b2] = h.control(json{{"type", "resume"}});
  CHECK(s2 == 202);
  CHECK(b2.at("command_id") == 1);
  CHECK(h.control(json{{"type", "resume"}}).first == 409);
  auto [s3, b3] = h.control(json{{"type", "pause"}});
  CHECK(s3 == 202);
  CHECK(b3.at("command_id") == 2);
  CHECK(h.wait_snapshot([](const Snapshot& s) { return s.last_command_id == 2 && s.status == "paused"; }));
}

TEST_CASE("agents, posts and memory params") {
  testing::ApiHarness h(testing::desk());
  int status = 0;
  const json page = h.get("/agents?limit=20", &status);
  CHECK(status == 200);
  CHECK(page.at("total") == 50);
  CHECK(page.at("agents").size() == 20);
  CHECK(page.at("next_cursor") == "20");
  const json rest = h.get("/agents?limit=100&cursor=20");
  CHECK(rest.at("agents").size() == 30);
  CHECK(rest.at("next_cursor").is_null());

  const std::string id = page.at("agents").at(0).at("agent_id");
  const json detail = h.get("/agents/" + id, &status);
  CHECK(status == 200);
  CHECK(detail.contains("persona"));
  CHECK(detail.contains("memory_top"));
  h.get("/agents/nobody", &status);
  CHECK(status == 404);

  auto c = h.client();
  auto res = c.Patch("/agents/" + id + "/memory_params", R"({"alpha":0.5})", "application/json");
  REQUIRE(res);
  CHECK(res->status == 202);
  CHECK(json::parse(res->body).at("memory_params").at("alpha") == 0.5);
  res = c.Patch("/agents/" + id + "/memory_params", R"({"alpha":-1})", "application/json");
  CHECK(res->status == 400);
  res = c.Patch("/agents/nobody/memory_params", R"({"alpha":1})", "application/json");
  CHECK(res->status == 404);
  CHECK(h.wait_snapshot([&](const Snapshot& s) { return s.memory_params.at(id).alpha == 0.5; }));

  h.get("/posts/none", &status);
  CHECK(status == 404);
  h.get("/posts?limit=0", &status);
  CHECK(status == 400);
  h.get("/posts?cursor=zzz", &status);
  CHECK(status == 400);
}

TEST_CASE("cors allows only configured origins") {
  testing::ApiHarness h(testing::desk());
  auto c = h.client();
  httplib::Headers ok = {{"Origin", "http://localhost:5173"}};
  auto res = c.Get("/health", ok);
  REQUIRE(res);
  CHECK(res->get_header_value("Access-Control-Allow-Origin") == "http://localhost:5173");
  res = c.Get("/health", httplib::Headers{{"Origin", "http://evil.example"}});
  CHECK_FALSE(res->has_header("Access-Control-Allow-Origin"));
  res = c.Options("/control", ok);
  CHECK(res->status == 204);
  res = c.Options("/control", httplib::Headers{{"Origin", "http://evil.example"}});
  CHECK(res->status == 403);
}

TEST_CASE("paused stream deltas equal the paged reads") {
  testing::ApiHarness h(testing::desk());
  std::vector<std::uint64_t> issued;
  auto issue = [&](const json& body) {
    auto [status, reply] = h.control(body);
    REQUIRE(status == 202);
    issued.push_back(reply.at("command_id").get<std::uint64_t>());
    return issued.back();
  };
  issue(kFastScaled);
  std::atomic<std::uint64_t> pause_id{0};
  testing::StreamReader reader(h.port, [&](const json& f) {
    return pause_id != 0 && testing::frame_has_control(f, pause_id);
  });
  issue(json{{"type", "resume"}});
  REQUIRE(h.wait_snapshot([](const Snapshot& s) { return s.clock.ms > 2 * kMsPerHour; }));
  issue(json{{"type", "inject_narrative"}, {"narrative_id", "N2"}, {"text", "the water is unsafe"}});
  CHECK(h.control(json{{"type", "inject_narrative"}, {"narrative_id", "N2"}}).first == 409);
  pause_id = issue(json{{"type", "pause"}});
  reader.join();
  REQUIRE(reader.matched());
  REQUIRE(h.wait_snapshot([](const Snapshot& s) { return s.status == "paused"; }));

  const auto frames = reader.frames();
  const auto consistency = testing::compare_stream_with_rest(h, frames);
  CHECK_MESSAGE(consistency.ok, consistency.detail);
  const auto once = testing::commands_logged_once(*h.store, issued);
  CHECK_MESSAGE(once.ok, once.detail);

  const json sim = h.get("/simulation");
  CHECK(sim.at("status") == "paused");
  CHECK(sim.at("last_command_id") == pause_id.load());
  CHECK(sim.at("narratives").contains("N2"));
  CHECK(frames.back().at("counters").at("status") == "paused");
}

TEST_CASE("finished runs refuse further commands") {
  testing::ApiHarness h(scenario_from_json(testing::small_scenario_json(3, 1, "1h")));
  CHECK(h.control(json{{"type", "resume"}}).first == 202);
  REQUIRE(h.wait_snapshot([](const Snapshot& s) { return s.status == "finished"; }));
  auto [status, body] = h.control(json{{"type", "pause"}});
  CHECK(status == 409);
  const json stats = h.get("/ingestion/stats");
  CHECK(stats.at("mode") == "none");
}

}  // TEST_SUITE
