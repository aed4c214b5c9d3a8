#pragma once

#include <string>

#include "httplib.h"

#include "sparsectl/service/api.hpp"

namespace sparsectl::service {

// Routes every /api/* request to the service.
inline void bind_routes(httplib::Server& srv, const PredictionService& svc) {
  auto forward = [&svc](const httplib::Request& req, httplib::Response& res) {
    const auto out = svc.handle(req.method, req.path, req.body);
    res.status = out.status;
    res.set_content(out.body.dump(), "application/json");
  };
  const std::string pattern = R"(/api/.*)";
  srv.Get(pattern, forward);
  srv.Post(pattern, forward);
  srv.Put(pattern, forward);
  srv.Delete(pattern, forward);
  srv.Patch(pattern, forward);
  srv.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
    if (!res.body.empty()) return;
    const auto out = error_response(res.status, "", "no such endpoint: " + req.path);
    res.set_content(out.body.dump(), "application/json");
  });
  // Allow a browser UI served from another origin.
  srv.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
  srv.Options(pattern, [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
}

}  // namespace sparsectl::service
