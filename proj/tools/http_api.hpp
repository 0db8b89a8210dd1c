#pragma once

#include <memory>
#include <string>

#include "strider/online.hpp"

namespace strider::tools {

// GET /flows?src=&dst=&sport=&dport=&proto=, GET /flows/all?offset=&limit=,
// GET /stats. Runs on its own thread until stop() or destruction.
class QueryServer {
 public:
  QueryServer(const ResultStore& store, const std::string& host, int port);
  ~QueryServer();
  QueryServer(const QueryServer&) = delete;
  QueryServer& operator=(const QueryServer&) = delete;

  int port() const noexcept { return port_; }
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int port_ = 0;
};

/// GET `path` (with query string) from a running server; returns the body.
/// NotFound / other errors are rethrown as strider::Error.
std::string http_get(const std::string& base_url, const std::string& path);

}  // namespace strider::tools
