#include <unistd.h>

#include <cstdio>
#include <fstream>
#include <filesystem>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "nesy/error.hpp"
#include "nesy/repl.hpp"
#include "nesy/scenario.hpp"
#include "nesy/server.hpp"
#include "nesy/session.hpp"

namespace fs = std::filesystem;
using namespace nesy;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kCorrupt = 2;

struct Common {
  std::string session_dir = "nesy-session";
  std::uint64_t seed = 0;
  std::string semantics;
  std::vector<std::string> datasets;
};

SemanticsConfig read_semantics(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw NotFound("cannot read " + path);
  try {
    return semantics_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path + ": " + e.what(), e.byte);
  }
}

// Opens the session in the directory, creating the demo scenario if there is none.
std::unique_ptr<Session> open_or_init(const Common& c) {
  if (!Session::exists(c.session_dir)) {
    SessionOptions opt;
    opt.seed = c.seed;
    if (!c.semantics.empty()) opt.semantics = read_semantics(c.semantics);
    for (const auto& d : c.datasets) opt.datasets.emplace_back(d);
    opt.log = &std::cerr;
    std::cerr << "initializing session in " << c.session_dir << "\n";
    return Session::init(c.session_dir, opt);
  }
  auto s = Session::open(c.session_dir);
  if (!c.semantics.empty()) s->set_semantics(read_semantics(c.semantics));
  for (const auto& d : c.datasets) {
    const std::string name = fs::path(d).filename().string();
    bool loaded = false;
    const auto summary = s->summary();
    for (const auto& entry : summary["datasets"]) loaded = loaded || entry["name"] == name;
    if (!loaded) s->load_dataset(d);
  }
  return s;
}

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--session-dir", c.session_dir, "Session directory")->capture_default_str();
  cmd->add_option("--seed", c.seed, "Scenario seed used when a session is created")->capture_default_str();
  cmd->add_option("--semantics", c.semantics, "Semantics config JSON file");
  cmd->add_option("--dataset", c.datasets, "Extra dataset directory to load (repeatable)");
}

int demo(const Common& c, bool keep) {
  const fs::path dir = c.session_dir;
  if (Session::exists(dir) && !keep) {
    std::cerr << "error: " << dir << " already holds a session; pick another --session-dir\n";
    return kUsage;
  }
  auto s = open_or_init(c);
  auto show = [&](const std::string& text) {
    const auto q = s->query(text);
    std::printf("  %-62s %.3f\n", q.formula.c_str(), q.result.truth);
  };
  std::printf("queries on the pretrained model\n");
  show(scenario::kZebraRule);
  show("zebra(img_qua)");
  show("equid(img_qua) & stripe(img_qua)");
  show("bw(img_qua)");
  show(scenario::kCorrectionRule);

  std::printf("\nadding the correction rule and retraining\n");
  const std::string id = s->add_rule(scenario::kCorrectionRule);
  s->start_training();
  s->wait_for_training();
  const auto st = s->training_status();
  if (st["state"] == "failed") {
    std::printf("training failed: %s\n", st["error"]["message"].get<std::string>().c_str());
    return kUsage;
  }
  for (const auto& r : st["history"])
    if (r["full"].get<bool>())
      std::printf("  step %3d  sat %.3f  task accuracy %.3f\n", r["step"].get<int>(), r["aggregate"].get<double>(),
                  r["task_accuracy"].get<double>());

  std::printf("\nqueries after cycle %llu\n", static_cast<unsigned long long>(s->cycle()));
  show(scenario::kCorrectionRule);
  show(scenario::kCorrectionRuleCol);
  show("zebra(img_qua)");
  show("equid(img_qua) & stripe(img_qua)");
  show(scenario::kZebraRule);
  std::printf("\nsession kept in %s (rule %s)\n", dir.string().c_str(), id.c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neuro-symbolic workbench: query, constrain and retrain a small CNN with fuzzy logic"};
  app.require_subcommand(1);
  Common common;

  auto* init = app.add_subcommand("init", "Create a session with the zebra/quagga scenario");
  add_common(init, common);

  auto* serve = app.add_subcommand("serve", "Serve the JSON API");
  add_common(serve, common);
  int port = 8080;
  std::string host = "127.0.0.1";
  serve->add_option("--port", port, "TCP port")->capture_default_str();
  serve->add_option("--host", host, "Bind address")->capture_default_str();

  auto* repl = app.add_subcommand("repl", "Interactive command loop on stdin");
  add_common(repl, common);

  auto* demo_cmd = app.add_subcommand("demo", "Run the quagga correction cycle end to end");
  add_common(demo_cmd, common);
  bool keep = false;
  demo_cmd->add_flag("--reuse", keep, "Allow an existing session directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*init) {
      if (Session::exists(common.session_dir)) {
        std::cerr << "error: " << common.session_dir << " already holds a session\n";
        return kUsage;
      }
      auto s = open_or_init(common);
      std::cout << "session ready in " << common.session_dir << " (cycle " << s->cycle() << ")\n";
    } else if (*serve) {
      auto s = open_or_init(common);
      ApiServer server(*s);
      const int bound = server.bind(host, port);
      if (bound < 0) {
        std::cerr << "error: cannot bind " << host << ":" << port << "\n";
        return kUsage;
      }
      std::cerr << "serving " << common.session_dir << " on http://" << host << ":" << bound << "\n";
      server.run();
    } else if (*repl) {
      auto s = open_or_init(common);
      Repl r(*s, std::cout);
      r.run(std::cin, isatty(STDIN_FILENO) != 0);
    } else if (*demo_cmd) {
      return demo(common, keep);
    }
  } catch (const CorruptSession& e) {
    std::cerr << "error: session corrupt: " << e.what() << "\n";
    return kCorrupt;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kOk;
}
