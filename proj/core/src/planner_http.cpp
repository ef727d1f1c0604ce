// SPDX-License-Identifier: Apache-2.0

#if defined(STORYWEAVE_HTTPS)
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif

#include <cstdlib>

#include <httplib.h>
#include <json.hpp>

#include "storyweave/error.hpp"
#include "storyweave/planner.hpp"

namespace storyweave {

HttpBackend::HttpBackend(std::string endpoint, std::string api_key)
    : endpoint_(std::move(endpoint)), api_key_(std::move(api_key)) {
  if (endpoint_.empty()) throw Error(ErrorCode::BackendError, "planner endpoint is empty");
}

HttpBackend HttpBackend::from_env() {
  const char* endpoint = std::getenv("PLANNER_ENDPOINT");
  if (endpoint == nullptr || *endpoint == '\0') throw Error(ErrorCode::BackendError, "PLANNER_ENDPOINT is not set");
  const char* key = std::getenv("PLANNER_API_KEY");
  return HttpBackend(endpoint, key != nullptr ? key : "");
}

std::string HttpBackend::generate(std::string_view prompt) {
  // Split "scheme://host[:port]/path" into the client base and the request path.
  const std::size_t scheme_end = endpoint_.find("://");
  const std::size_t path_start = endpoint_.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
  const std::string base = endpoint_.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/" : endpoint_.substr(path_start);

  httplib::Client client(base);
  client.set_connection_timeout(10);
  client.set_read_timeout(300);
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
  const std::string body = nlohmann::json{{"prompt", prompt}}.dump();
  auto res = client.Post(path, headers, body, "application/json");
  if (!res) throw Error(ErrorCode::BackendError, "request to planner failed: " + httplib::to_string(res.error()));
  if (res->status < 200 || res->status >= 300) {
    throw Error(ErrorCode::BackendError, "planner returned HTTP " + std::to_string(res->status));
  }
  try {
    return nlohmann::json::parse(res->body).at("text").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::BackendError, std::string("planner response is not {\"text\": ...}: ") + e.what());
  }
}

}  // namespace storyweave
