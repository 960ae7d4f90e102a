#include "nesy/repl.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "nesy/api_error.hpp"
#include "nesy/error.hpp"

namespace nesy {

namespace {

using json = nlohmann::json;

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw NotFound("cannot read " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(path + ": " + e.what(), e.byte);
  }
}

void print_trace(std::ostream& out, const TruthTrace& t, int depth) {
  out << "  " << fixed(t.truth) << "  " << std::string(static_cast<std::size_t>(depth) * 2, ' ') << t.op;
  if (t.op == "predicate" || depth == 0) out << "  " << t.text;
  if (t.open) out << "  (mean over bound examples)";
  out << "\n";
  if (!t.worst_examples.empty()) {
    out << "  " << std::string(static_cast<std::size_t>(depth) * 2 + 8, ' ') << "lowest:";
    for (std::size_t i = 0; i < t.worst_examples.size() && i < 5; ++i)
      out << " " << t.worst_examples[i].id << "=" << fixed(t.worst_examples[i].truth, 3);
    out << "\n";
  }
  for (const auto& c : t.children) print_trace(out, c, depth + 1);
}

void print_report(std::ostream& out, const SatReport& r) {
  if (r.empty) {
    out << "KB empty, aggregate 1.0\n";
    return;
  }
  out << "  id     sat     formula\n";
  for (const auto& s : r.rules) {
    std::string id = s.id;
    id.resize(std::max<std::size_t>(id.size(), 6), ' ');
    out << "  " << id << " " << fixed(s.sat) << "  " << s.text << "\n";
  }
  out << "aggregate " << fixed(r.aggregate) << " (cycle " << r.cycle << ")\n";
}

void print_probe(std::ostream& out, const std::string& name, const ProbeReport& r) {
  out << "  " << name << ": held-out " << fixed(r.held_out_accuracy, 3) << ", train " << fixed(r.train_accuracy, 3)
      << " (" << r.positives << " positives, " << r.negatives << " negatives)\n";
}

}  // namespace

void Repl::print_error(const std::exception& e, const std::string& formula) {
  const json j = api_error(e);
  out_ << "error [" << j["code"].get<std::string>() << "]: " << e.what() << "\n";
  if (j.contains("span") && !formula.empty()) {
    const auto b = std::min(j["span"][0].get<std::size_t>(), formula.size());
    const auto e2 = std::max<std::size_t>(std::min(j["span"][1].get<std::size_t>(), formula.size()), b + 1);
    out_ << "  " << formula << "\n  " << std::string(b, ' ') << std::string(e2 - b, '^') << "\n";
  }
}

bool Repl::execute(const std::string& raw) {
  const std::string line = trim(raw);
  if (line.empty() || line[0] == '#') return true;
  const auto space = line.find_first_of(" \t");
  const std::string cmd = line.substr(0, space);
  const std::string arg = space == std::string::npos ? "" : trim(line.substr(space));
  std::string formula;

  try {
    if (cmd == "quit" || cmd == "exit") {
      return false;
    } else if (cmd == "help") {
      out_ << "commands: query <formula> | explain <formula> <example-id> | sat | kb | summary\n"
              "          add <formula> | rm <id> | enable <id> | disable <id>\n"
              "          train [steps=N] [lambda=L] [lr=X] [tau=T] [batch=B] [seed=S]\n"
              "          checkpoints | revert <cycle> | concept <manifest-path> | load <dataset-dir>\n"
              "          semantics [json-path] | export <path> | save | quit\n";
    } else if (cmd == "query") {
      formula = arg;
      const QueryResult q = session_.query(arg);
      out_ << "sat " << fixed(q.result.truth) << "  " << q.formula << "\n";
      print_trace(out_, q.result.trace, 0);
    } else if (cmd == "explain") {
      const auto cut = arg.find_last_of(" \t");
      if (cut == std::string::npos) throw DomainError("usage: explain <formula> <example-id>");
      formula = trim(arg.substr(0, cut));
      const QueryResult q = session_.explain(formula, trim(arg.substr(cut)));
      out_ << "truth " << fixed(q.result.truth) << "  " << q.formula << "\n";
      print_trace(out_, q.result.trace, 0);
    } else if (cmd == "sat") {
      print_report(out_, session_.sat());
    } else if (cmd == "kb") {
      const json kb = session_.kb_json();
      if (kb["rules"].empty()) out_ << "KB empty\n";
      for (const auto& r : kb["rules"])
        out_ << "  " << r["id"].get<std::string>() << (r["enabled"].get<bool>() ? "       " : " (off) ")
             << r["formula"].get<std::string>() << "\n";
    } else if (cmd == "summary") {
      out_ << session_.summary().dump(2) << "\n";
    } else if (cmd == "add") {
      formula = arg;
      const std::string id = session_.add_rule(arg);
      const json kb = session_.kb_json();
      for (const auto& r : kb["rules"])
        if (r["id"] == id) out_ << "added " << id << ": " << r["formula"].get<std::string>() << "\n";
    } else if (cmd == "rm") {
      session_.remove_rule(arg);
      out_ << "removed " << arg << "\n";
    } else if (cmd == "enable" || cmd == "disable") {
      session_.set_rule_enabled(arg, cmd == "enable");
      out_ << cmd << "d " << arg << "\n";
    } else if (cmd == "train") {
      json overrides = json::object();
      std::istringstream fields(arg);
      std::string field;
      while (fields >> field) {
        const auto eq = field.find('=');
        if (eq == std::string::npos) throw DomainError("expected key=value, got '" + field + "'");
        const std::string key = field.substr(0, eq), value = field.substr(eq + 1);
        try {
          if (key == "steps") overrides["max_steps"] = std::stoull(value);
          else if (key == "lambda") overrides["lambda"] = std::stod(value);
          else if (key == "lr") overrides["learning_rate"] = std::stod(value);
          else if (key == "tau") overrides["tau"] = std::stod(value);
          else if (key == "batch") overrides["batch_size"] = std::stoull(value);
          else if (key == "seed") overrides["seed"] = std::stoull(value);
          else throw DomainError("unknown train option '" + key + "'");
        } catch (const std::logic_error&) {
          throw DomainError("bad value for " + key + ": '" + value + "'");
        }
      }
      const std::string job = session_.start_training(overrides);
      out_ << job << " started\n";
      session_.wait_for_training();
      const json st = session_.training_status();
      for (const auto& r : st["history"])
        if (r["full"].get<bool>())
          out_ << "  step " << r["step"] << "  aggregate " << fixed(r["aggregate"]) << "  task accuracy "
               << fixed(r["task_accuracy"], 3) << "\n";
      if (st["state"] == "failed") {
        out_ << "training failed [" << st["error"]["code"].get<std::string>()
             << "]: " << st["error"]["message"].get<std::string>() << "; parameters restored\n";
      } else {
        out_ << job << " " << st["state"].get<std::string>() << " after " << st["steps"] << " steps"
             << (st["reached_tau"].get<bool>() ? " (reached tau)" : "") << ", now cycle " << st["cycle"] << "\n";
        out_ << "aggregate " << fixed(st["before"]["aggregate"]) << " -> " << fixed(st["after"]["aggregate"]) << "\n";
      }
    } else if (cmd == "checkpoints") {
      out_ << "  cycle  aggregate  before   created\n";
      for (const auto& c : session_.checkpoints()) {
        std::string cycle = std::to_string(c["cycle"].get<std::uint64_t>()) + (c["current"].get<bool>() ? "*" : "");
        cycle.resize(std::max<std::size_t>(cycle.size(), 5), ' ');
        out_ << "  " << cycle << "  " << fixed(c["report"]["aggregate"]) << "     "
             << (c.contains("before") ? fixed(c["before"]["aggregate"]) : std::string("  -   ")) << "   "
             << c["created"].get<std::string>() << "\n";
      }
    } else if (cmd == "revert") {
      std::uint64_t cycle = 0;
      try {
        std::size_t used = 0;
        cycle = std::stoull(arg, &used);
        if (used != arg.size()) throw std::invalid_argument(arg);
      } catch (const std::logic_error&) {
        throw DomainError("usage: revert <cycle>");
      }
      const SatReport r = session_.revert(cycle);
      out_ << "reverted to cycle " << cycle << "\n";
      print_report(out_, r);
    } else if (cmd == "concept") {
      const json m = read_json_file(arg);
      if (m.contains("members")) {
        for (const auto& [name, r] : session_.add_group(m)) print_probe(out_, name, r);
      } else {
        print_probe(out_, m.value("concept", "?"), session_.add_concept(m));
      }
    } else if (cmd == "load") {
      const json d = session_.load_dataset(arg);
      out_ << "loaded " << d["name"].get<std::string>() << " (" << d["size"] << " examples)\n";
    } else if (cmd == "semantics") {
      if (!arg.empty()) session_.set_semantics(semantics_from_json(read_json_file(arg)));
      out_ << to_json(session_.semantics()).dump() << "\n";
    } else if (cmd == "export") {
      if (arg.empty()) throw DomainError("usage: export <path>");
      session_.export_report(arg);
      out_ << "report written to " << arg << "\n";
    } else if (cmd == "save") {
      const auto path = session_.dir() / "report.json";
      session_.export_report(path);
      out_ << "session saved in " << session_.dir().string() << "\n";
    } else {
      out_ << "unknown command '" << cmd << "' (try help)\n";
    }
  } catch (const std::exception& e) {
    print_error(e, formula);
  }
  return true;
}

void Repl::run(std::istream& in, bool prompt) {
  std::string line;
  for (;;) {
    if (prompt) out_ << "nesy> " << std::flush;
    if (!std::getline(in, line)) break;
    if (!execute(line)) break;
  }
}

}  // namespace nesy
