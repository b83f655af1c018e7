#include "grnr/verifier.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>

#include "grnr/encoders.hpp"
#include "grnr/errors.hpp"

// Eigen must be seen before httplib, which defines macros that clash with it.
#include <httplib.h>
#include <json.hpp>

namespace grnr::dataset {

using nlohmann::json;

VerifierResponse KeywordStubVerifier::check(const VerifierRequest& req) {
  const auto present = lookup_(req.image_ref);
  for (const auto& tok : encoders::Vocabulary::tokenize(req.instruction)) {
    if (present.count(tok) != 0) return {true, "keyword '" + tok + "' is present in the image"};
  }
  return {false, "no instruction keyword is present in the image"};
}

VerifierResponse ScriptedVerifier::check(const VerifierRequest& req) {
  Step step;
  {
    std::lock_guard lock(mu_);
    if (script_.empty()) throw TransportError("scripted verifier has an empty script");
    step = script_[std::min(next_, script_.size() - 1)];
    ++next_;
  }
  switch (step) {
    case Step::Absent:
      return {false, "scripted absent"};
    case Step::Present:
      return {true, "scripted present"};
    case Step::TransportFailure:
      break;
  }
  throw TransportError("scripted transport failure for " + req.candidate_id);
}

std::size_t ScriptedVerifier::calls() const {
  std::lock_guard lock(mu_);
  return next_;
}

HttpVerifier::HttpVerifier(std::string url, std::string key, std::chrono::milliseconds timeout)
    : key_(std::move(key)), timeout_(timeout) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("verifier URL lacks a scheme: " + url);
  if (url.compare(0, scheme_end, "http") != 0) {
    throw ConfigError("verifier URL must use http: " + url);
  }
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) {
    scheme_host_port_ = url;
    path_ = "/";
  } else {
    scheme_host_port_ = url.substr(0, path_start);
    path_ = url.substr(path_start);
  }
}

std::unique_ptr<HttpVerifier> HttpVerifier::from_env() {
  const char* url = std::getenv("VERIFIER_URL");
  if (url == nullptr || *url == '\0') throw ConfigError("VERIFIER_URL is not set");
  const char* key = std::getenv("VERIFIER_KEY");
  return std::make_unique<HttpVerifier>(url, key != nullptr ? key : "");
}

VerifierResponse HttpVerifier::check(const VerifierRequest& req) {
  httplib::Client client(scheme_host_port_);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout_ - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  httplib::Headers headers;
  if (!key_.empty()) headers.emplace("Authorization", "Bearer " + key_);

  const json body = {{"candidate_id", req.candidate_id},
                     {"image_ref", req.image_ref},
                     {"instruction", req.instruction}};
  auto res = client.Post(path_, headers, body.dump(), "application/json");
  if (!res) {
    throw TransportError("verifier request failed: " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw TransportError("verifier answered HTTP " + std::to_string(res->status));
  }
  json doc;
  try {
    doc = json::parse(res->body);
  } catch (const json::exception& e) {
    throw TransportError(std::string("verifier response is not JSON: ") + e.what());
  }
  const auto verdict = doc.value("verdict", std::string());
  if (verdict != "present" && verdict != "absent") {
    throw TransportError("verifier response has no valid verdict: " + res->body);
  }
  return {verdict == "present", doc.value("rationale", std::string())};
}

VerifierResponse check_with_backoff(Verifier& verifier, const VerifierRequest& req,
                                    const BackoffPolicy& policy,
                                    const std::function<void(std::chrono::milliseconds)>& sleep) {
  std::string last;
  auto delay = policy.base;
  for (int attempt = 0; attempt < std::max(1, policy.attempts); ++attempt) {
    try {
      return verifier.check(req);
    } catch (const TransportError& e) {
      last = e.what();
    }
    if (attempt + 1 < policy.attempts) {
      if (sleep) {
        sleep(delay);
      } else {
        std::this_thread::sleep_for(delay);
      }
      delay = std::min(policy.cap, delay * 2);
    }
  }
  throw PipelineError("verifier unreachable for sample " + req.candidate_id + " after " +
                      std::to_string(policy.attempts) + " attempts: " + last);
}

}  // namespace grnr::dataset
