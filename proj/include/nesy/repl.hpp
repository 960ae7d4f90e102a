#pragma once

#include <istream>
#include <ostream>
#include <string>

#include "nesy/session.hpp"

namespace nesy {

// Line-oriented front end over a session. Commands:
//   query <formula>            explain <formula> <example-id>
//   sat | kb | summary         add <formula> | rm <id> | enable <id> | disable <id>
//   train [steps=N] [lambda=L] [lr=X] [tau=T] [batch=B] [seed=S]
//   checkpoints | revert <cycle>
//   concept <manifest-path>    load <dataset-dir>
//   semantics [json-path]      export <path> | save
//   help | quit
class Repl {
 public:
  Repl(Session& session, std::ostream& out) : session_(session), out_(out) {}

  // Returns false once the user quits.
  bool execute(const std::string& line);
  void run(std::istream& in, bool prompt);

 private:
  void print_error(const std::exception& e, const std::string& formula);

  Session& session_;
  std::ostream& out_;
};

}  // namespace nesy
