#pragma once

#include <exception>
#include <memory>
#include <string>

#include <json.hpp>

#include "nesy/api_error.hpp"
#include "nesy/session.hpp"

namespace httplib {
class Server;
}

namespace nesy {

// JSON API over one session.
class ApiServer {
 public:
  explicit ApiServer(Session& session);
  ~ApiServer();

  // Binds to `port` (0 picks a free one) and returns the bound port, or -1.
  int bind(const std::string& host, int port);
  // Serves until stop(); call after bind().
  bool run();
  void stop();

 private:
  void routes();

  Session& session_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace nesy
