#include "dexforge/error.hpp"
#include "dexforge/session.hpp"

// After Eigen: the resolver header pulled in here defines a `_res` macro.
#include "httplib.h"

namespace dexforge {

struct HttpServer::Impl {
  httplib::Server server;
  SessionService service;
};

HttpServer::HttpServer() : impl_(std::make_unique<Impl>()) {
  auto forward = [this](const httplib::Request& req, httplib::Response& res) {
    const ServiceResponse r = impl_->service.handle(req.method, req.path, req.body, req.get_header_value(kClientHeader));
    res.status = r.status;
    res.set_content(r.body, "application/json");
  };
  const char* pattern = R"(/session(/.*)?)";
  impl_->server.Get(pattern, forward);
  impl_->server.Post(pattern, forward);
  impl_->server.Put(pattern, forward);
  impl_->server.Delete(pattern, forward);
}

HttpServer::~HttpServer() = default;

int HttpServer::bind(int port) {
  if (port == 0) {
    const int bound = impl_->server.bind_to_any_port("127.0.0.1");
    if (bound < 0) throw Error(ErrorCode::kIo, "cannot bind a local port");
    return bound;
  }
  if (!impl_->server.bind_to_port("127.0.0.1", port)) {
    throw Error(ErrorCode::kIo, "cannot bind 127.0.0.1:" + std::to_string(port));
  }
  return port;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() { impl_->server.stop(); }

SessionService& HttpServer::service() { return impl_->service; }

}  // namespace dexforge
