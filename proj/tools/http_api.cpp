#include "http_api.hpp"

#include <thread>

#include <httplib.h>

#include "strider/error.hpp"

namespace strider::tools {

namespace {

nlohmann::json error_body(const std::string& code, const std::string& message) {
  return {{"error", code}, {"message", message}};
}

std::size_t size_param(const httplib::Request& req, const char* name, std::size_t fallback) {
  if (!req.has_param(name)) return fallback;
  const auto text = req.get_param_value(name);
  std::size_t used = 0;
  const auto v = std::stoull(text, &used);
  if (used != text.size()) throw std::invalid_argument(name);
  return static_cast<std::size_t>(v);
}

FiveTuple key_from(const httplib::Request& req) {
  for (const char* k : {"src", "dst", "sport", "dport", "proto"}) {
    if (!req.has_param(k)) throw std::invalid_argument(std::string("missing parameter ") + k);
  }
  FiveTuple key;
  key.src_ip = parse_ip(req.get_param_value("src"));
  key.dst_ip = parse_ip(req.get_param_value("dst"));
  auto port = [&](const char* k) {
    auto v = std::stoul(req.get_param_value(k));
    if (v > 65535) throw std::invalid_argument(k);
    return static_cast<std::uint16_t>(v);
  };
  key.src_port = port("sport");
  key.dst_port = port("dport");
  auto proto = std::stoul(req.get_param_value("proto"));
  if (proto > 255) throw std::invalid_argument("proto");
  key.protocol = static_cast<std::uint8_t>(proto);
  return key;
}

void reply(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

}  // namespace

struct QueryServer::Impl {
  httplib::Server server;
  std::thread thread;
};

QueryServer::QueryServer(const ResultStore& store, const std::string& host, int port)
    : impl_(std::make_unique<Impl>()) {
  auto& srv = impl_->server;
  srv.Get("/flows", [&store](const httplib::Request& req, httplib::Response& res) {
    try {
      reply(res, 200, to_json(store.latest(key_from(req))));
    } catch (const Error& e) {
      if (e.code() == Errc::not_found) reply(res, 404, error_body("NotFound", e.what()));
      else reply(res, 400, error_body(std::string(errc_name(e.code())), e.what()));
    } catch (const std::exception& e) {
      reply(res, 400, error_body("BadRequest", e.what()));
    }
  });
  srv.Get("/flows/all", [&store](const httplib::Request& req, httplib::Response& res) {
    try {
      const auto offset = size_param(req, "offset", 0);
      const auto limit = size_param(req, "limit", 100);
      nlohmann::json items = nlohmann::json::array();
      for (const auto& f : store.page(offset, limit)) items.push_back(to_json(f));
      reply(res, 200, {{"offset", offset}, {"limit", limit}, {"total", store.size()}, {"flows", items}});
    } catch (const std::exception& e) {
      reply(res, 400, error_body("BadRequest", e.what()));
    }
  });
  srv.Get("/stats", [&store](const httplib::Request&, httplib::Response& res) {
    reply(res, 200, store.stats_summary());
  });
  if (port == 0) {
    port_ = srv.bind_to_any_port(host);
  } else if (srv.bind_to_port(host, port)) {
    port_ = port;
  } else {
    port_ = -1;
  }
  if (port_ <= 0) throw Error(Errc::io_error, "cannot bind HTTP server on " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

QueryServer::~QueryServer() { stop(); }

void QueryServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

std::string http_get(const std::string& base_url, const std::string& path) {
  httplib::Client client(base_url);
  client.set_connection_timeout(5);
  auto res = client.Get(path);
  if (!res) throw Error(Errc::io_error, "HTTP request to " + base_url + path + " failed");
  if (res->status == 404) {
    std::string message = "not found";
    try {
      message = nlohmann::json::parse(res->body).value("message", message);
    } catch (...) {
    }
    throw Error(Errc::not_found, message);
  }
  if (res->status != 200) {
    throw Error(Errc::io_error, "HTTP " + std::to_string(res->status) + ": " + res->body);
  }
  return res->body;
}

}  // namespace strider::tools
