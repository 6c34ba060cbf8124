#pragma once

// LLM access layer. One gateway fronts two interchangeable backends:
//
//   * MockLlm — a deterministic, knowledge-mapped fake. Given (spec, prompt,
//     config) it always produces the same trace, emits full per-token
//     distributions (tail_mass = 0) and honours a Context section in the
//     prompt, so retrieval genuinely flips configured unknowns to correct.
//   * HttpLlm — an OpenAI-style chat-completions client (logprobs=true,
//     top_logprobs=K, n=N) with bounded retries.
//
// The gateway adds a persistent on-disk cache keyed by
// hash(model ++ kind ++ decode config ++ prompt) and a logical call meter:
// complete, sample_n and force_score each count 1 on a cache miss, 0 on a hit.

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <semaphore>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ragate/core.hpp"

namespace ragate {

struct DecodeConfig {
  double temperature = 0.0;  // 0 means greedy
  int max_tokens = 64;
  int top_k_logprobs = 20;
  int n_samples = 1;

  void validate() const;          // throws Error(Config) on out-of-range fields
  std::string canonical() const;  // stable serialization used in cache keys
};

// ---------------------------------------------------------------------------
// Mock backend

struct MockKnowledge {
  bool known = true;
  std::vector<std::string> answers;  // acceptable answers; first is canonical
  std::string wrong_answer;          // emitted when unknown and unaided; "" -> spec fallback
};

struct MockLlmSpec {
  std::vector<std::string> vocabulary;
  std::map<std::string, MockKnowledge> knowledge;  // key matched as prompt substring
  std::map<std::string, double> ptrue;             // key -> forced P(True) on probes
  double sharpness = 8.0;          // peakedness on known answers; >= 700 is exact one-hot
  double unknown_sharpness = 0.5;  // near-flat distribution for unknowns
  std::uint64_t seed = 0;
  std::string fallback_answer = "unknown";

  void validate() const;  // every configured answer must tokenize within the vocabulary
};

void to_json(nlohmann::json& j, const MockLlmSpec& v);
void from_json(const nlohmann::json& j, MockLlmSpec& v);

// ---------------------------------------------------------------------------
// Backends

class LlmBackend {
 public:
  virtual ~LlmBackend() = default;
  virtual GenerationTrace complete(const std::string& prompt, const DecodeConfig& cfg) = 0;
  virtual SampleSet sample_n(const std::string& prompt, const DecodeConfig& cfg) = 0;
  /// Scores an externally fixed token sequence under the backend's model.
  virtual GenerationTrace force_score(const std::string& prompt,
                                      const std::vector<std::string>& tokens,
                                      const DecodeConfig& cfg) = 0;
  virtual std::string model_id() const = 0;
};

class MockLlm : public LlmBackend {
 public:
  explicit MockLlm(MockLlmSpec spec);
  GenerationTrace complete(const std::string& prompt, const DecodeConfig& cfg) override;
  SampleSet sample_n(const std::string& prompt, const DecodeConfig& cfg) override;
  GenerationTrace force_score(const std::string& prompt, const std::vector<std::string>& tokens,
                              const DecodeConfig& cfg) override;
  std::string model_id() const override { return "mock"; }
  const MockLlmSpec& spec() const { return spec_; }

 private:
  GenerationTrace generate(const std::string& prompt, const DecodeConfig& cfg, int sample_index,
                           const std::vector<std::string>* forced_tokens) const;
  MockLlmSpec spec_;
};

struct HttpLlmOptions {
  std::string base_url;   // e.g. http://host:port/v1 ; env LLM_API_BASE
  std::string api_key;    // env LLM_API_KEY
  std::string model;      // env LLM_MODEL
  int max_attempts = 3;
  int retry_delay_ms = 50;

  static HttpLlmOptions from_env();
};

class HttpLlm : public LlmBackend {
 public:
  explicit HttpLlm(HttpLlmOptions options);
  GenerationTrace complete(const std::string& prompt, const DecodeConfig& cfg) override;
  SampleSet sample_n(const std::string& prompt, const DecodeConfig& cfg) override;
  /// Chat endpoints cannot echo-score fixed continuations; always throws.
  GenerationTrace force_score(const std::string& prompt, const std::vector<std::string>& tokens,
                              const DecodeConfig& cfg) override;
  std::string model_id() const override { return options_.model; }

 private:
  nlohmann::json post_chat(const std::string& prompt, const DecodeConfig& cfg, int n);
  HttpLlmOptions options_;
};

// ---------------------------------------------------------------------------
// Cache

class GenerationCache {
 public:
  explicit GenerationCache(std::string dir);
  std::optional<nlohmann::json> load(const std::string& key) const;
  void store(const std::string& key, const nlohmann::json& value) const;
  std::string path_for(const std::string& key) const;  // <dir>/<2 hex>/<key>.json
  const std::string& dir() const { return dir_; }

 private:
  std::string dir_;
};

/// Cache/prompt key: sha256 over model id, call kind, decode config and prompt.
std::string generation_key(const std::string& model, const std::string& kind,
                           const DecodeConfig& cfg, const std::string& prompt,
                           const std::string& extra = "");

// ---------------------------------------------------------------------------
// Gateway

struct PTrueResult {
  double p_true = 0.0;
  bool low_fidelity = false;  // no affirmative token surfaced and tail mass > 0.5
};

class LlmGateway {
 public:
  /// cache_dir empty disables persistence. `max_in_flight` bounds concurrent
  /// backend calls.
  LlmGateway(std::shared_ptr<LlmBackend> backend, std::string cache_dir,
             int max_in_flight = 8);

  GenerationTrace complete(const std::string& prompt, const DecodeConfig& cfg);
  SampleSet sample_n(const std::string& prompt, const DecodeConfig& cfg);
  GenerationTrace force_score(const std::string& prompt, const std::vector<std::string>& tokens,
                              const DecodeConfig& cfg);
  PTrueResult ptrue_probe(const std::string& question, const std::string& answer,
                          int top_k_logprobs = 20);

  /// Logical LM calls: backend invocations only, cache hits are free.
  long lm_calls() const { return lm_calls_.load(); }
  std::string model_id() const { return backend_->model_id(); }
  bool has_cache() const { return cache_ != nullptr; }

  static std::string ptrue_prompt(const std::string& question, const std::string& answer);

 private:
  nlohmann::json cached_or_compute(const std::string& key,
                                   const std::function<nlohmann::json()>& compute);
  std::shared_ptr<LlmBackend> backend_;
  std::unique_ptr<GenerationCache> cache_;
  std::unique_ptr<std::counting_semaphore<>> slots_;
  std::atomic<long> lm_calls_{0};
};

}  // namespace ragate
