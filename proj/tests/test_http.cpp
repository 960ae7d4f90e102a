#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <httplib.h>

#include <chrono>
#include <thread>

#include "nesy/scenario.hpp"
#include "nesy/server.hpp"
#include "support/session_fixture.hpp"

using namespace nesy;
using nesy::testing::copy_session;
using nesy::testing::TempDir;
using json = nlohmann::json;

namespace {

struct Live {
  TempDir tmp{"http"};
  std::unique_ptr<Session> session;
  std::unique_ptr<ApiServer> server;
  std::thread thread;
  std::unique_ptr<httplib::Client> client;

  Live() {
    session = Session::open(copy_session(tmp));
    server = std::make_unique<ApiServer>(*session);
    const int port = server->bind("127.0.0.1", 0);
    REQUIRE(port > 0);
    thread = std::thread([this] { server->run(); });
    client = std::make_unique<httplib::Client>("127.0.0.1", port);
    client->set_read_timeout(120, 0);
  }
  ~Live() {
    server->stop();
    thread.join();
  }

  struct Reply {
    int status = 0;
    json body;
    std::string epoch;
  };
  static Reply reply(const httplib::Result& r) {
    REQUIRE(r);
    return {r->status, json::parse(r->body), r->get_header_value("X-Session-Epoch")};
  }
  Reply get(const std::string& path) { return reply(client->Get(path)); }
  Reply del(const std::string& path) { return reply(client->Delete(path)); }
  Reply post(const std::string& path, const json& body) {
    return reply(client->Post(path, body.dump(), "application/json"));
  }
  Reply post_raw(const std::string& path, const std::string& body) {
    return reply(client->Post(path, body, "application/json"));
  }
  Reply put(const std::string& path, const json& body) {
    return reply(client->Put(path, body.dump(), "application/json"));
  }
  Reply patch(const std::string& path, const json& body) {
    return reply(client->Patch(path, body.dump(), "application/json"));
  }

  void wait_idle() {
    for (int i = 0; i < 6000; ++i) {
      const auto st = get("/train/status").body;
      if (st["state"] != "running") return;
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
    FAIL("training did not finish");
  }
};

void check_error_shape(const Live::Reply& r, int status, const std::string& code) {
  CHECK(r.status == status);
  CHECK(r.body["status"] == status);
  CHECK(r.body["code"] == code);
  CHECK(r.body["message"].is_string());
}

}  // namespace

TEST_CASE("read endpoints and epoch echo") {
  Live live;
  const auto summary = live.get("/model/summary");
  CHECK(summary.status == 200);
  CHECK(summary.body["class_names"].size() == 4);
  CHECK(summary.epoch == std::to_string(live.session->epoch()));
  CHECK(summary.body["session_epoch"] == live.session->epoch());

  const auto q = live.post("/query", {{"formula", "equid(img_qua) & stripe(img_qua)"}});
  CHECK(q.status == 200);
  CHECK(q.body["sat"].get<double>() >= 0.85);
  CHECK(q.body["trace"]["op"] == "and");
  CHECK(q.body["trace"]["children"].size() == 2);
  CHECK(q.body["trace"]["span"] == json::array({0, 32}));

  const auto rule = live.post("/query", {{"formula", scenario::kZebraRule}});
  CHECK(rule.body["sat"].get<double>() >= 0.9);
  CHECK(rule.body["trace"]["worst_examples"].size() == 16);

  const auto local = live.post("/query", {{"formula", "stripe(e) -> zebra(e)"}, {"example", "img_qua"}});
  CHECK(local.status == 200);
  CHECK(local.body["formula"] == "stripe(img_qua) -> zebra(img_qua)");

  CHECK(live.get("/semantics").body["implication"] == "reichenbach");
  CHECK(live.get("/kb").body["rules"].empty());
  CHECK(live.get("/kb/sat").body["empty"] == true);
  CHECK(live.get("/checkpoints").body["checkpoints"].size() == 1);
  CHECK(live.get("/train/status").body["state"] == "idle");
  check_error_shape(live.get("/no/such/thing"), 404, "not_found");
}

TEST_CASE("formula errors carry byte spans") {
  Live live;
  const auto e0 = live.session->epoch();
  const auto bad = live.post("/kb/rules", {{"formula", "forall x in val: equid(x) -> "}});
  check_error_shape(bad, 400, "parse_error");
  REQUIRE(bad.body["span"].is_array());
  CHECK(bad.body["span"][0].get<int>() < bad.body["span"][1].get<int>());
  CHECK(bad.body["span"][1].get<std::size_t>() <= std::string("forall x in val: equid(x) -> ").size());

  const auto unknown = live.post("/kb/rules", {{"formula", "forall x in val: unicorn(x)"}});
  check_error_shape(unknown, 400, "invalid_formula");
  CHECK(unknown.body["span"] == json::array({17, 27}));
  CHECK(unknown.body["diagnostics"].size() == 1);

  check_error_shape(live.post("/query", {{"formula", "stripe(y)"}}), 400, "invalid_formula");
  check_error_shape(live.post("/query", {{"text", "stripe(img_qua)"}}), 400, "bad_request");
  check_error_shape(live.post_raw("/query", "{oops"), 400, "bad_request");
  CHECK(live.session->epoch() == e0);
}

TEST_CASE("kb rule lifecycle") {
  Live live;
  const auto added = live.post("/kb/rules", {{"formula", "forall x in val: equid(x) ∧ stripe(x) ∧ ¬bw(x) → ¬zebra(x)"}});
  CHECK(added.status == 201);
  CHECK(added.body["id"] == "r1");
  CHECK(added.body["formula"] == scenario::kCorrectionRule);

  const auto sat = live.get("/kb/sat").body;
  REQUIRE(sat["rules"].size() == 1);
  CHECK(sat["rules"][0]["sat"].get<double>() < 0.3);
  CHECK(sat["aggregate"] == sat["rules"][0]["sat"]);

  CHECK(live.patch("/kb/rules/r1", {{"enabled", false}}).status == 200);
  CHECK(live.get("/kb/sat").body["empty"] == true);
  check_error_shape(live.patch("/kb/rules/r1", {{"enabled", "no"}}), 400, "bad_request");
  CHECK(live.del("/kb/rules/r1").status == 200);
  check_error_shape(live.del("/kb/rules/r1"), 404, "not_found");
  CHECK(live.get("/kb").body["rules"].empty());
}

TEST_CASE("training job: exclusive, polled, checkpointed, revertible") {
  Live live;
  live.post("/kb/rules", {{"formula", scenario::kCorrectionRule}});
  const auto before = live.get("/kb/sat").body;

  const auto first = live.post("/train", {{"max_steps", 1000000}, {"tau", 1.0}});
  CHECK(first.status == 202);
  CHECK(first.body["job"] == "job-1");
  // The job cannot finish on its own, so these all hit a running job.
  check_error_shape(live.post("/train", {{"max_steps", 60}}), 409, "training_in_progress");
  check_error_shape(live.get("/kb/sat"), 409, "training_in_progress");
  check_error_shape(live.post("/kb/rules", {{"formula", scenario::kZebraRule}}), 409, "training_in_progress");
  check_error_shape(live.post("/checkpoints/0/revert", json::object()), 409, "training_in_progress");
  CHECK(live.get("/train/status").body["state"] == "running");
  for (int i = 0; i < 500 && live.get("/train/status").body["step"].get<int>() < 40; ++i)
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  CHECK(live.post("/train/cancel", json::object()).status == 200);
  live.wait_idle();

  const auto st = live.get("/train/status").body;
  CHECK(st["state"] == "cancelled");
  CHECK(st["cycle"] == 1);
  CHECK(st["steps"].get<int>() >= 40);
  CHECK(!st["history"].empty());

  const auto after = live.get("/kb/sat").body;
  CHECK(after["aggregate"].get<double>() > before["aggregate"].get<double>());
  CHECK(live.get("/checkpoints").body["checkpoints"].size() == 2);

  const auto rev = live.post("/checkpoints/0/revert", json::object());
  CHECK(rev.status == 200);
  CHECK(std::abs(rev.body["report"]["aggregate"].get<double>() - before["aggregate"].get<double>()) <= 1e-12);
  check_error_shape(live.post("/checkpoints/5/revert", json::object()), 404, "not_found");
  check_error_shape(live.post("/checkpoints/x/revert", json::object()), 400, "bad_request");
  check_error_shape(live.post("/train", {{"lambda", 3}}), 400, "domain_error");

  CHECK(live.post("/train", {{"max_steps", 20}}).body["job"] == "job-2");
  live.wait_idle();
  const auto done = live.get("/train/status").body;
  CHECK(done["state"] == "done");
  CHECK(done["cycle"] == 2);
}

TEST_CASE("semantics, concepts, datasets and reports") {
  Live live;
  auto sem = live.get("/semantics").body;
  sem.erase("session_epoch");
  sem["implication"] = "goedel";
  const auto put = live.put("/semantics", sem);
  CHECK(put.status == 200);
  CHECK(put.body["implication"] == "goedel");
  sem["p_forall"] = 0.5;
  check_error_shape(live.put("/semantics", sem), 400, "domain_error");

  const Dataset pool = load_dataset(live.tmp.path / "session" / "datasets" / "concepts");
  json pos = json::array(), neg = json::array();
  for (const auto& e : pool.examples) {
    if (e.attributes.texture == Texture::plain && pos.size() < 40) pos.push_back(e.id);
    else if (e.attributes.texture != Texture::plain && neg.size() < 40) neg.push_back(e.id);
  }
  const json manifest{{"concept", "plain"}, {"layer", "flat"}, {"positives", pos}, {"negatives", neg}};
  const auto c = live.post("/concepts", {{"manifest", manifest}});
  CHECK(c.status == 200);
  CHECK(c.body["held_out_accuracy"].get<double>() >= 0.75);
  check_error_shape(live.post("/concepts", manifest), 409, "duplicate_predicate");
  check_error_shape(live.post("/concepts", {{"concept", "q"}, {"layer", "nope"}, {"positives", pos}, {"negatives", neg}}),
                    404, "not_found");
  const json group{{"members", {{{"concept", "flat1"}, {"positives", pos}}, {{"concept", "busy"}, {"positives", neg}}}}};
  const auto g = live.post("/concepts/group", group);
  CHECK(g.status == 200);
  CHECK(g.body["reports"].size() == 2);

  Dataset extra;
  extra.name = "extra";
  ExampleImage e;
  e.id = "extra_0";
  e.pixels.assign(kImageSize, 0.25f);
  extra.examples.push_back(e);
  save_dataset(extra, live.tmp.path / "extra");
  CHECK(live.post("/datasets/load", {{"path", (live.tmp.path / "extra").string()}}).status == 200);
  check_error_shape(live.post("/datasets/load", {{"path", (live.tmp.path / "nothing").string()}}), 404, "not_found");

  const auto report = live.get("/report").body;
  CHECK(report["predicates"].size() == 13);
  const auto path = (live.tmp.path / "out" / "report.json").string();
  CHECK(live.post("/report/export", {{"path", path}}).status == 200);
  CHECK(std::filesystem::exists(path));
}
