#include "ragate/llm.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <set>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "ragate/hash.hpp"
#include "ragate/numeric.hpp"
#include "ragate/text.hpp"

namespace ragate {

namespace {

constexpr const char* kContextMarker = "Context:";
constexpr const char* kQuestionMarker = "\nQuestion:";
constexpr const char* kProbeMarker = "Is the proposed answer true?";
constexpr double kOneHotSharpness = 700.0;  // beyond exp() range: treat as exact one-hot

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::istringstream in(text);
  std::string w;
  while (in >> w) words.push_back(w);
  return words;
}

std::string spaced(const std::string& word, std::size_t position) {
  return position == 0 ? word : " " + word;
}

}  // namespace

// ---------------------------------------------------------------------------
// DecodeConfig

void DecodeConfig::validate() const {
  if (temperature < 0.0) throw Error(ErrorKind::Config, "temperature must be >= 0");
  if (max_tokens <= 0) throw Error(ErrorKind::Config, "max_tokens must be > 0");
  if (top_k_logprobs < 1) throw Error(ErrorKind::Config, "top_k_logprobs must be >= 1");
  if (n_samples < 1) throw Error(ErrorKind::Config, "n_samples must be >= 1");
}

std::string DecodeConfig::canonical() const {
  return "t=" + format_double(temperature) + ";mt=" + std::to_string(max_tokens) +
         ";k=" + std::to_string(top_k_logprobs) + ";n=" + std::to_string(n_samples);
}

// ---------------------------------------------------------------------------
// Mock spec

void MockLlmSpec::validate() const {
  if (vocabulary.empty()) throw Error(ErrorKind::Config, "mock vocabulary is empty");
  std::set<std::string> vocab(vocabulary.begin(), vocabulary.end());
  if (vocab.size() != vocabulary.size()) {
    throw Error(ErrorKind::Config, "mock vocabulary has duplicate tokens");
  }
  auto check_answer = [&](const std::string& text, const std::string& where) {
    for (const auto& w : split_words(text)) {
      if (!vocab.count(w)) {
        throw Error(ErrorKind::Config,
                    where + ": token '" + w + "' not in the mock vocabulary");
      }
    }
  };
  check_answer(fallback_answer, "fallback_answer");
  for (const auto& [key, entry] : knowledge) {
    if (entry.answers.empty()) {
      throw Error(ErrorKind::Config, "knowledge entry '" + key + "' has no answers");
    }
    for (const auto& a : entry.answers) check_answer(a, "knowledge '" + key + "'");
    if (!entry.wrong_answer.empty()) check_answer(entry.wrong_answer, "knowledge '" + key + "'");
  }
  for (const auto& [key, p] : ptrue) {
    if (p < 0.0 || p > 1.0) {
      throw Error(ErrorKind::Config, "ptrue for '" + key + "' outside [0,1]");
    }
  }
  if (sharpness < 0.0 || unknown_sharpness < 0.0) {
    throw Error(ErrorKind::Config, "sharpness values must be >= 0");
  }
}

void to_json(nlohmann::json& j, const MockLlmSpec& v) {
  nlohmann::json knowledge = nlohmann::json::object();
  for (const auto& [key, entry] : v.knowledge) {
    knowledge[key] = {{"known", entry.known},
                      {"answers", entry.answers},
                      {"wrong_answer", entry.wrong_answer}};
  }
  j = {{"vocabulary", v.vocabulary},
       {"knowledge", std::move(knowledge)},
       {"ptrue", v.ptrue},
       {"sharpness", v.sharpness},
       {"unknown_sharpness", v.unknown_sharpness},
       {"seed", v.seed},
       {"fallback_answer", v.fallback_answer}};
}

void from_json(const nlohmann::json& j, MockLlmSpec& v) {
  j.at("vocabulary").get_to(v.vocabulary);
  v.knowledge.clear();
  if (j.contains("knowledge")) {
    for (const auto& [key, entry] : j.at("knowledge").items()) {
      MockKnowledge k;
      k.known = entry.value("known", true);
      entry.at("answers").get_to(k.answers);
      k.wrong_answer = entry.value("wrong_answer", "");
      v.knowledge.emplace(key, std::move(k));
    }
  }
  v.ptrue = j.value("ptrue", std::map<std::string, double>{});
  v.sharpness = j.value("sharpness", 8.0);
  v.unknown_sharpness = j.value("unknown_sharpness", 0.5);
  v.seed = j.value("seed", std::uint64_t{0});
  v.fallback_answer = j.value("fallback_answer", "unknown");
}

// ---------------------------------------------------------------------------
// Mock backend

MockLlm::MockLlm(MockLlmSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

namespace {

struct MockPlan {
  std::vector<std::vector<std::string>> candidates;  // tokenized continuations
  double sharpness = 0.0;
};

// Extracts the Context section the prompt template placed before the question.
std::string context_section(const std::string& prompt) {
  std::size_t start = prompt.find(kContextMarker);
  if (start == std::string::npos) return "";
  std::size_t end = prompt.find(kQuestionMarker, start);
  if (end == std::string::npos) end = prompt.size();
  return prompt.substr(start, end - start);
}

MockPlan plan_for_prompt(const MockLlmSpec& spec, const std::string& prompt) {
  // Longest knowledge key contained in the prompt wins; ties cannot happen
  // because map keys are unique.
  const MockKnowledge* entry = nullptr;
  std::size_t best_len = 0;
  for (const auto& [key, k] : spec.knowledge) {
    if (key.size() >= best_len && prompt.find(key) != std::string::npos) {
      entry = &k;
      best_len = key.size();
    }
  }
  MockPlan plan;
  if (entry == nullptr) {
    plan.candidates.push_back(split_words(spec.fallback_answer));
    plan.sharpness = spec.unknown_sharpness;
    return plan;
  }
  bool can_answer = entry->known;
  if (!can_answer) {
    std::string ctx = context_section(prompt);
    for (const auto& a : entry->answers) {
      if (!ctx.empty() && ctx.find(a) != std::string::npos) {
        can_answer = true;
        break;
      }
    }
  }
  if (can_answer) {
    for (const auto& a : entry->answers) plan.candidates.push_back(split_words(a));
    plan.sharpness = spec.sharpness;
  } else {
    const std::string& wrong =
        entry->wrong_answer.empty() ? spec.fallback_answer : entry->wrong_answer;
    plan.candidates.push_back(split_words(wrong));
    plan.sharpness = spec.unknown_sharpness;
  }
  return plan;
}

TokenStep probe_step(double p_true, const DecodeConfig& cfg) {
  TokenStep step;
  std::vector<TokenAlternative> alts;
  if (p_true > 0.0) alts.push_back({"True", std::log(std::max(p_true, kProbFloor))});
  if (p_true < 1.0) alts.push_back({"False", std::log(std::max(1.0 - p_true, kProbFloor))});
  std::sort(alts.begin(), alts.end(), [](const auto& a, const auto& b) {
    return a.logprob != b.logprob ? a.logprob > b.logprob : a.token < b.token;
  });
  (void)cfg;
  step.alternatives = alts;
  step.token = alts.front().token;
  step.logprob = alts.front().logprob;
  step.tail_mass = 0.0;
  return step;
}

}  // namespace

GenerationTrace MockLlm::generate(const std::string& prompt, const DecodeConfig& cfg,
                                  int sample_index,
                                  const std::vector<std::string>* forced_tokens) const {
  cfg.validate();
  GenerationTrace trace;

  // P(True)-style judgment probes get a dedicated two-outcome distribution.
  if (prompt.find(kProbeMarker) != std::string::npos) {
    for (const auto& [key, p] : spec_.ptrue) {
      if (prompt.find(key) != std::string::npos) {
        TokenStep step = probe_step(p, cfg);
        trace.steps.push_back(step);
        trace.text = step.token;
        trace.total_logprob = step.logprob;
        return trace;
      }
    }
  }

  MockPlan plan = plan_for_prompt(spec_, prompt);
  const std::size_t vocab_size = spec_.vocabulary.size();
  RngStream rng(splitmix64(spec_.seed) ^ splitmix64(fnv1a64(prompt) + 0x9e37ULL * sample_index));

  std::vector<std::string> emitted;
  const bool greedy = cfg.temperature == 0.0 && forced_tokens == nullptr;
  const std::size_t limit =
      forced_tokens ? forced_tokens->size() : static_cast<std::size_t>(cfg.max_tokens);

  for (std::size_t t = 0; t < limit; ++t) {
    // Candidates still consistent with what was emitted and not yet finished.
    std::vector<const std::vector<std::string>*> alive;
    for (const auto& cand : plan.candidates) {
      if (cand.size() <= t) continue;
      bool match = true;
      for (std::size_t k = 0; k < t && match; ++k) match = cand[k] == emitted[k];
      if (match) alive.push_back(&cand);
    }
    if (alive.empty() && forced_tokens == nullptr) break;

    // Continuation mass per vocabulary token.
    std::vector<double> mass(vocab_size, 0.0);
    if (!alive.empty()) {
      double share = 1.0 / static_cast<double>(alive.size());
      for (const auto* cand : alive) {
        auto it = std::find(spec_.vocabulary.begin(), spec_.vocabulary.end(), (*cand)[t]);
        if (it != spec_.vocabulary.end()) {
          mass[static_cast<std::size_t>(it - spec_.vocabulary.begin())] += share;
        }
      }
    }

    std::vector<double> probs(vocab_size, 0.0);
    if (plan.sharpness >= kOneHotSharpness) {
      double total = 0.0;
      for (double m : mass) total += m;
      if (total > 0.0) {
        for (std::size_t v = 0; v < vocab_size; ++v) probs[v] = mass[v] / total;
      } else {
        probs.assign(vocab_size, 1.0 / static_cast<double>(vocab_size));
      }
    } else {
      double total = 0.0;
      for (std::size_t v = 0; v < vocab_size; ++v) {
        probs[v] = std::exp(plan.sharpness * mass[v]);
        total += probs[v];
      }
      for (std::size_t v = 0; v < vocab_size; ++v) probs[v] /= total;
    }

    // Pick a token: forced, greedy argmax (lowest index on ties), or sampled
    // with temperature.
    std::size_t chosen = 0;
    if (forced_tokens != nullptr) {
      std::string word = (*forced_tokens)[t];
      if (!word.empty() && word.front() == ' ') word.erase(word.begin());
      auto it = std::find(spec_.vocabulary.begin(), spec_.vocabulary.end(), word);
      chosen = it == spec_.vocabulary.end() ? vocab_size
                                            : static_cast<std::size_t>(it - spec_.vocabulary.begin());
      TokenStep step;
      step.token = spaced(word, t);
      double p = chosen == vocab_size ? 0.0 : probs[chosen];
      step.logprob = p >= 1.0 ? 0.0 : std::log(std::max(p, kProbFloor));
      for (std::size_t v = 0; v < vocab_size; ++v) {
        double lp = probs[v] >= 1.0 ? 0.0 : std::log(std::max(probs[v], kProbFloor));
        step.alternatives.push_back({spaced(spec_.vocabulary[v], t), lp});
      }
      if (chosen == vocab_size) {
        step.alternatives.push_back({step.token, step.logprob});
      }
      std::sort(step.alternatives.begin(), step.alternatives.end(),
                [](const auto& a, const auto& b) {
                  return a.logprob != b.logprob ? a.logprob > b.logprob : a.token < b.token;
                });
      step.tail_mass = 0.0;
      trace.steps.push_back(std::move(step));
      emitted.push_back(word);
      continue;
    }

    if (greedy) {
      for (std::size_t v = 1; v < vocab_size; ++v) {
        if (probs[v] > probs[chosen]) chosen = v;
      }
    } else {
      std::vector<double> adjusted(vocab_size);
      double total = 0.0;
      double inv_t = 1.0 / cfg.temperature;
      for (std::size_t v = 0; v < vocab_size; ++v) {
        adjusted[v] = probs[v] > 0.0 ? std::pow(probs[v], inv_t) : 0.0;
        total += adjusted[v];
      }
      double u = rng.next_unit() * total;
      double acc = 0.0;
      chosen = vocab_size - 1;
      for (std::size_t v = 0; v < vocab_size; ++v) {
        acc += adjusted[v];
        if (u < acc) {
          chosen = v;
          break;
        }
      }
    }

    TokenStep step;
    step.token = spaced(spec_.vocabulary[chosen], t);
    step.logprob = probs[chosen] >= 1.0 ? 0.0 : std::log(std::max(probs[chosen], kProbFloor));
    // Zero-probability tokens stay listed at the floor so sharp and flat
    // distributions share a support size; the mass error is < vocab * 1e-12.
    for (std::size_t v = 0; v < vocab_size; ++v) {
      double lp = probs[v] >= 1.0 ? 0.0 : std::log(std::max(probs[v], kProbFloor));
      step.alternatives.push_back({spaced(spec_.vocabulary[v], t), lp});
    }
    std::sort(step.alternatives.begin(), step.alternatives.end(),
              [](const auto& a, const auto& b) {
                return a.logprob != b.logprob ? a.logprob > b.logprob : a.token < b.token;
              });
    step.tail_mass = 0.0;
    trace.steps.push_back(std::move(step));
    emitted.push_back(spec_.vocabulary[chosen]);
  }

  std::string text;
  double total = 0.0;
  for (const auto& s : trace.steps) {
    text += s.token;
    total += s.logprob;
  }
  trace.text = std::move(text);
  trace.total_logprob = total;
  return trace;
}

GenerationTrace MockLlm::complete(const std::string& prompt, const DecodeConfig& cfg) {
  return generate(prompt, cfg, 0, nullptr);
}

SampleSet MockLlm::sample_n(const std::string& prompt, const DecodeConfig& cfg) {
  cfg.validate();
  SampleSet set;
  set.sampling_temperature = cfg.temperature;
  for (int i = 0; i < cfg.n_samples; ++i) {
    set.samples.push_back(generate(prompt, cfg, i + 1, nullptr));
  }
  return set;
}

GenerationTrace MockLlm::force_score(const std::string& prompt,
                                     const std::vector<std::string>& tokens,
                                     const DecodeConfig& cfg) {
  return generate(prompt, cfg, 0, &tokens);
}

// ---------------------------------------------------------------------------
// HTTP backend

HttpLlmOptions HttpLlmOptions::from_env() {
  HttpLlmOptions o;
  if (const char* v = std::getenv("LLM_API_BASE")) o.base_url = v;
  if (const char* v = std::getenv("LLM_API_KEY")) o.api_key = v;
  if (const char* v = std::getenv("LLM_MODEL")) o.model = v;
  return o;
}

HttpLlm::HttpLlm(HttpLlmOptions options) : options_(std::move(options)) {
  if (options_.base_url.empty()) {
    throw Error(ErrorKind::Config, "LLM_API_BASE is not set and no base url was given");
  }
  if (options_.model.empty()) {
    throw Error(ErrorKind::Config, "LLM_MODEL is not set and no model id was given");
  }
}

namespace {

// Splits "http://host:port/path" into client root and path prefix.
std::pair<std::string, std::string> split_base(const std::string& base) {
  std::size_t scheme = base.find("://");
  std::size_t host_start = scheme == std::string::npos ? 0 : scheme + 3;
  std::size_t slash = base.find('/', host_start);
  if (slash == std::string::npos) return {base, ""};
  std::string prefix = base.substr(slash);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {base.substr(0, slash), prefix};
}

GenerationTrace trace_from_choice(const nlohmann::json& choice) {
  if (!choice.contains("logprobs") || choice.at("logprobs").is_null() ||
      !choice.at("logprobs").contains("content")) {
    throw Error(ErrorKind::Config,
                "endpoint response carries no logprobs; request them with "
                "logprobs=true/top_logprobs");
  }
  GenerationTrace trace;
  for (const auto& entry : choice.at("logprobs").at("content")) {
    TokenStep step;
    step.token = entry.at("token").get<std::string>();
    step.logprob = std::min(0.0, entry.at("logprob").get<double>());
    if (entry.contains("top_logprobs")) {
      for (const auto& alt : entry.at("top_logprobs")) {
        step.alternatives.push_back(
            {alt.at("token").get<std::string>(), std::min(0.0, alt.at("logprob").get<double>())});
      }
    }
    bool listed = false;
    for (const auto& alt : step.alternatives) {
      if (alt.token == step.token && std::abs(alt.logprob - step.logprob) <= kLogprobTolerance) {
        listed = true;
        break;
      }
    }
    if (!listed) step.alternatives.push_back({step.token, step.logprob});
    std::sort(step.alternatives.begin(), step.alternatives.end(),
              [](const auto& a, const auto& b) {
                return a.logprob != b.logprob ? a.logprob > b.logprob : a.token < b.token;
              });
    double mass = 0.0;
    for (const auto& alt : step.alternatives) mass += std::exp(alt.logprob);
    step.tail_mass = std::clamp(1.0 - mass, 0.0, 1.0);
    trace.total_logprob += step.logprob;
    trace.text += step.token;
    trace.steps.push_back(std::move(step));
  }
  return trace;
}

}  // namespace

nlohmann::json HttpLlm::post_chat(const std::string& prompt, const DecodeConfig& cfg, int n) {
  auto [root, prefix] = split_base(options_.base_url);
  nlohmann::json body = {{"model", options_.model},
                         {"messages", {{{"role", "user"}, {"content", prompt}}}},
                         {"temperature", cfg.temperature},
                         {"max_tokens", cfg.max_tokens},
                         {"logprobs", true},
                         {"top_logprobs", cfg.top_k_logprobs},
                         {"n", n}};
  const std::string payload = body.dump();
  std::string last_error;
  for (int attempt = 1; attempt <= options_.max_attempts; ++attempt) {
    httplib::Client client(root);
    client.set_read_timeout(120, 0);
    httplib::Headers headers;
    if (!options_.api_key.empty()) {
      headers.emplace("Authorization", "Bearer " + options_.api_key);
    }
    auto res = client.Post(prefix + "/chat/completions", headers, payload, "application/json");
    if (res && res->status == 200) {
      try {
        return nlohmann::json::parse(res->body);
      } catch (const std::exception& e) {
        last_error = std::string("bad JSON from endpoint: ") + e.what();
      }
    } else if (res && res->status != 429 && res->status < 500) {
      throw Error(ErrorKind::Config, "endpoint rejected the request with status " +
                                         std::to_string(res->status) + ": " + res->body);
    } else {
      last_error = res ? "status " + std::to_string(res->status)
                       : "transport error " + httplib::to_string(res.error());
    }
    if (attempt < options_.max_attempts && options_.retry_delay_ms > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(options_.retry_delay_ms * attempt));
    }
  }
  throw Error(ErrorKind::Transport, "chat completion failed after " +
                                        std::to_string(options_.max_attempts) +
                                        " attempts: " + last_error);
}

GenerationTrace HttpLlm::complete(const std::string& prompt, const DecodeConfig& cfg) {
  cfg.validate();
  nlohmann::json response = post_chat(prompt, cfg, 1);
  const auto& choices = response.at("choices");
  if (choices.empty()) throw Error(ErrorKind::Transport, "endpoint returned no choices");
  return trace_from_choice(choices.at(0));
}

SampleSet HttpLlm::sample_n(const std::string& prompt, const DecodeConfig& cfg) {
  cfg.validate();
  SampleSet set;
  set.sampling_temperature = cfg.temperature;
  nlohmann::json response = post_chat(prompt, cfg, cfg.n_samples);
  for (const auto& choice : response.at("choices")) {
    set.samples.push_back(trace_from_choice(choice));
  }
  // Some servers silently clamp n; fetch the remainder one at a time.
  while (static_cast<int>(set.samples.size()) < cfg.n_samples) {
    set.sequential_fallback = true;
    nlohmann::json single = post_chat(prompt, cfg, 1);
    const auto& choices = single.at("choices");
    if (choices.empty()) throw Error(ErrorKind::Transport, "endpoint returned no choices");
    set.samples.push_back(trace_from_choice(choices.at(0)));
  }
  return set;
}

GenerationTrace HttpLlm::force_score(const std::string&, const std::vector<std::string>&,
                                     const DecodeConfig&) {
  throw Error(ErrorKind::Config,
              "force scoring needs an echo-capable completions endpoint; the "
              "chat-completions API cannot score fixed continuations");
}

// ---------------------------------------------------------------------------
// Cache

GenerationCache::GenerationCache(std::string dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
}

std::string GenerationCache::path_for(const std::string& key) const {
  return dir_ + "/" + key.substr(0, 2) + "/" + key + ".json";
}

std::optional<nlohmann::json> GenerationCache::load(const std::string& key) const {
  std::string path = path_for(key);
  if (!std::filesystem::exists(path)) return std::nullopt;
  return nlohmann::json::parse(read_text_file(path));
}

void GenerationCache::store(const std::string& key, const nlohmann::json& value) const {
  write_text_file_atomic(path_for(key), value.dump());
}

std::string generation_key(const std::string& model, const std::string& kind,
                           const DecodeConfig& cfg, const std::string& prompt,
                           const std::string& extra) {
  std::string material = model;
  material.push_back('\x1f');
  material += kind;
  material.push_back('\x1f');
  material += cfg.canonical();
  material.push_back('\x1f');
  material += prompt;
  if (!extra.empty()) {
    material.push_back('\x1f');
    material += extra;
  }
  return sha256_hex(material);
}

// ---------------------------------------------------------------------------
// Gateway

LlmGateway::LlmGateway(std::shared_ptr<LlmBackend> backend, std::string cache_dir,
                       int max_in_flight)
    : backend_(std::move(backend)) {
  if (!cache_dir.empty()) cache_ = std::make_unique<GenerationCache>(cache_dir);
  slots_ = std::make_unique<std::counting_semaphore<>>(std::max(1, max_in_flight));
}

nlohmann::json LlmGateway::cached_or_compute(const std::string& key,
                                             const std::function<nlohmann::json()>& compute) {
  if (cache_) {
    if (auto hit = cache_->load(key)) return *hit;
  }
  slots_->acquire();
  nlohmann::json value;
  try {
    value = compute();
  } catch (...) {
    slots_->release();
    throw;
  }
  slots_->release();
  lm_calls_.fetch_add(1);
  if (cache_) cache_->store(key, value);
  return value;
}

GenerationTrace LlmGateway::complete(const std::string& prompt, const DecodeConfig& cfg) {
  cfg.validate();
  std::string key = generation_key(backend_->model_id(), "complete", cfg, prompt);
  nlohmann::json value =
      cached_or_compute(key, [&] { return nlohmann::json(backend_->complete(prompt, cfg)); });
  GenerationTrace trace = value.get<GenerationTrace>();
  trace.prompt_key = key;
  return trace;
}

SampleSet LlmGateway::sample_n(const std::string& prompt, const DecodeConfig& cfg) {
  cfg.validate();
  std::string key = generation_key(backend_->model_id(), "sample", cfg, prompt);
  nlohmann::json value =
      cached_or_compute(key, [&] { return nlohmann::json(backend_->sample_n(prompt, cfg)); });
  SampleSet set = value.get<SampleSet>();
  set.prompt_key = key;
  for (auto& s : set.samples) s.prompt_key = key;
  return set;
}

GenerationTrace LlmGateway::force_score(const std::string& prompt,
                                        const std::vector<std::string>& tokens,
                                        const DecodeConfig& cfg) {
  cfg.validate();
  std::string joined;
  for (const auto& t : tokens) {
    joined += t;
    joined.push_back('\x1e');
  }
  std::string key = generation_key(backend_->model_id(), "force", cfg, prompt, joined);
  nlohmann::json value = cached_or_compute(
      key, [&] { return nlohmann::json(backend_->force_score(prompt, tokens, cfg)); });
  GenerationTrace trace = value.get<GenerationTrace>();
  trace.prompt_key = key;
  return trace;
}

std::string LlmGateway::ptrue_prompt(const std::string& question, const std::string& answer) {
  return "Question: " + question + "\nProposed answer: " + answer +
         "\nIs the proposed answer true? Answer True or False.\nAnswer:";
}

PTrueResult LlmGateway::ptrue_probe(const std::string& question, const std::string& answer,
                                    int top_k_logprobs) {
  DecodeConfig cfg;
  cfg.temperature = 0.0;
  cfg.max_tokens = 1;
  cfg.top_k_logprobs = top_k_logprobs;
  GenerationTrace trace = complete(ptrue_prompt(question, answer), cfg);
  PTrueResult result;
  if (trace.steps.empty()) return result;
  const TokenStep& step = trace.steps.front();
  bool matched = false;
  for (const auto& alt : step.alternatives) {
    std::string token = alt.token;
    std::erase_if(token, [](unsigned char c) { return std::isspace(c); });
    std::transform(token.begin(), token.end(), token.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (token == "true") {
      result.p_true += std::exp(alt.logprob);
      matched = true;
    }
  }
  // An unmatched affirmative contributes zero mass; flag when most of the
  // distribution is unaccounted for, as the probe is then uninformative.
  result.low_fidelity = !matched && step.tail_mass > 0.5;
  return result;
}

}  // namespace ragate
