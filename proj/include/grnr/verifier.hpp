#pragma once

#include <chrono>
#include <functional>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <vector>

namespace grnr::dataset {

// Landmark-presence check for a swapped instruction against an image.
struct VerifierRequest {
  std::string candidate_id;
  std::string image_ref;
  std::string instruction;
};

struct VerifierResponse {
  bool present = false;
  std::string rationale;
};

// Implementations throw TransportError when the exchange itself fails; a
// verdict of either kind is a successful exchange.
class Verifier {
 public:
  virtual ~Verifier() = default;
  virtual VerifierResponse check(const VerifierRequest& req) = 0;
};

// Answers "present" iff some instruction token names an object the lookup
// reports for the image.
class KeywordStubVerifier final : public Verifier {
 public:
  using Lookup = std::function<std::set<std::string>(const std::string& image_ref)>;
  explicit KeywordStubVerifier(Lookup lookup) : lookup_(std::move(lookup)) {}
  VerifierResponse check(const VerifierRequest& req) override;

 private:
  Lookup lookup_;
};

// Replays a fixed script of outcomes, one per call, then repeats the last
// entry. Used by tests to drive retry and failure paths.
class ScriptedVerifier final : public Verifier {
 public:
  enum class Step { Absent, Present, TransportFailure };
  explicit ScriptedVerifier(std::vector<Step> script) : script_(std::move(script)) {}
  VerifierResponse check(const VerifierRequest& req) override;
  std::size_t calls() const;

 private:
  mutable std::mutex mu_;
  std::vector<Step> script_;
  std::size_t next_ = 0;
};

// POSTs {"candidate_id","image_ref","instruction"} as JSON to a URL and
// expects {"verdict": "present"|"absent", "rationale": "..."}. The key, when
// set, is sent as a bearer token.
class HttpVerifier final : public Verifier {
 public:
  HttpVerifier(std::string url, std::string key,
               std::chrono::milliseconds timeout = std::chrono::seconds(30));
  // Reads VERIFIER_URL and VERIFIER_KEY; throws ConfigError when the URL is unset.
  static std::unique_ptr<HttpVerifier> from_env();
  VerifierResponse check(const VerifierRequest& req) override;

 private:
  std::string scheme_host_port_;
  std::string path_;
  std::string key_;
  std::chrono::milliseconds timeout_;
};

struct BackoffPolicy {
  int attempts = 4;  // total transport attempts per request
  std::chrono::milliseconds base{50};
  std::chrono::milliseconds cap{2000};
};

// Calls the verifier, retrying transport failures with exponential backoff.
// Throws PipelineError naming the candidate once the budget is spent.
VerifierResponse check_with_backoff(Verifier& verifier, const VerifierRequest& req,
                                    const BackoffPolicy& policy,
                                    const std::function<void(std::chrono::milliseconds)>& sleep = {});

}  // namespace grnr::dataset
