#include "ragate/core.hpp"

#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace ragate {

namespace {

std::string step_label(std::size_t i) { return "step " + std::to_string(i); }

}  // namespace

std::vector<std::string> validate_trace(const GenerationTrace& trace) {
  std::vector<std::string> violations;
  std::string rebuilt;
  double total = 0.0;
  for (std::size_t i = 0; i < trace.steps.size(); ++i) {
    const TokenStep& step = trace.steps[i];
    if (!(step.logprob <= 0.0)) {
      violations.push_back(step_label(i) + ": chosen logprob <= 0 violated (" +
                           std::to_string(step.logprob) + ")");
    }
    if (step.alternatives.empty()) {
      violations.push_back(step_label(i) + ": empty alternative list");
    }
    double mass = 0.0;
    bool chosen_listed = false;
    for (std::size_t a = 0; a < step.alternatives.size(); ++a) {
      const TokenAlternative& alt = step.alternatives[a];
      if (!(alt.logprob <= 0.0)) {
        violations.push_back(step_label(i) + ": alternative logprob <= 0 violated (" +
                             alt.token + ")");
      }
      if (a > 0 && step.alternatives[a - 1].logprob < alt.logprob) {
        violations.push_back(step_label(i) + ": alternatives not sorted descending");
      }
      mass += std::exp(alt.logprob);
      if (alt.token == step.token && std::abs(alt.logprob - step.logprob) <= kLogprobTolerance) {
        chosen_listed = true;
      }
    }
    if (!chosen_listed) {
      violations.push_back(step_label(i) + ": chosen token missing from alternatives");
    }
    if (step.tail_mass < 0.0 || step.tail_mass > 1.0) {
      violations.push_back(step_label(i) + ": tail_mass outside [0,1]");
    }
    mass += step.tail_mass;
    if (std::abs(mass - 1.0) > kMassTolerance) {
      violations.push_back(step_label(i) + ": probability mass " + std::to_string(mass) +
                           " outside 1 +/- 1e-6");
    }
    total += step.logprob;
    rebuilt += step.token;
  }
  if (std::abs(total - trace.total_logprob) > kLogprobTolerance) {
    violations.push_back("total_logprob does not equal the sum of step logprobs");
  }
  if (rebuilt != trace.text) {
    violations.push_back("text does not equal the concatenation of step tokens");
  }
  return violations;
}

std::vector<double> trace_token_nll(const GenerationTrace& trace) {
  if (trace.steps.empty()) throw Error(ErrorKind::Data, "empty generation");
  std::vector<double> nll;
  nll.reserve(trace.steps.size());
  for (const TokenStep& step : trace.steps) nll.push_back(-step.logprob);
  return nll;
}

std::string strategy_name(Strategy s) {
  switch (s) {
    case Strategy::Never: return "never";
    case Strategy::Always: return "always";
    case Strategy::Adaptive: return "adaptive";
    case Strategy::Ideal: return "ideal";
  }
  throw Error(ErrorKind::Internal, "unreachable strategy");
}

Strategy strategy_from_name(const std::string& name) {
  if (name == "never") return Strategy::Never;
  if (name == "always") return Strategy::Always;
  if (name == "adaptive") return Strategy::Adaptive;
  if (name == "ideal") return Strategy::Ideal;
  throw Error(ErrorKind::Config, "unknown strategy: " + name);
}

std::vector<std::string> validate_run_record(const RunRecord& rec, bool pmi_active) {
  std::vector<std::string> violations;
  if (rec.decision != 0 && rec.decision != 1) {
    violations.push_back("decision outside {0,1}");
  }
  if (rec.retrieval_calls != 0 && rec.retrieval_calls != 1) {
    violations.push_back("retrieval_calls outside {0,1}");
  }
  switch (rec.strategy) {
    case Strategy::Never:
      if (rec.retrieval_calls != 0) violations.push_back("never strategy retrieved");
      if (rec.decision != 0) violations.push_back("never strategy decided to retrieve");
      break;
    case Strategy::Always:
      if (rec.retrieval_calls != 1) violations.push_back("always strategy skipped retrieval");
      if (rec.decision != 1) violations.push_back("always strategy decided not to retrieve");
      break;
    case Strategy::Adaptive:
    case Strategy::Ideal: {
      if (rec.retrieval_calls != rec.decision) {
        violations.push_back("retrieval_calls does not match the decision");
      }
      int expected = 1 + rec.decision + (pmi_active ? 1 : 0);
      if (rec.lm_calls != expected) {
        violations.push_back("lm_calls " + std::to_string(rec.lm_calls) + " != expected " +
                             std::to_string(expected));
      }
      break;
    }
  }
  if (rec.strategy == Strategy::Never || rec.strategy == Strategy::Always) {
    if (rec.lm_calls != 1) violations.push_back("fixed strategy lm_calls != 1");
  }
  return violations;
}

// ---------------------------------------------------------------------------
// JSON bindings

void to_json(nlohmann::json& j, const QAExample& v) {
  j = {{"id", v.id},
       {"question", v.question},
       {"golds", v.golds},
       {"dataset", v.dataset},
       {"hop_class", v.hop_class}};
}

void from_json(const nlohmann::json& j, QAExample& v) {
  j.at("id").get_to(v.id);
  j.at("question").get_to(v.question);
  j.at("golds").get_to(v.golds);
  v.dataset = j.value("dataset", "");
  v.hop_class = j.value("hop_class", "single");
  if (v.golds.empty()) throw Error(ErrorKind::Data, "example " + v.id + " has no golds");
}

void to_json(nlohmann::json& j, const Document& v) {
  j = {{"doc_id", v.doc_id}, {"title", v.title}, {"body", v.body}};
}

void from_json(const nlohmann::json& j, Document& v) {
  j.at("doc_id").get_to(v.doc_id);
  v.title = j.value("title", "");
  j.at("body").get_to(v.body);
}

void to_json(nlohmann::json& j, const HiddenFeature& v) {
  j = {{"example_id", v.example_id}, {"vector", v.values}};
}

void from_json(const nlohmann::json& j, HiddenFeature& v) {
  j.at("example_id").get_to(v.example_id);
  j.at("vector").get_to(v.values);
}

void to_json(nlohmann::json& j, const TokenStep& v) {
  nlohmann::json alts = nlohmann::json::array();
  for (const auto& a : v.alternatives) alts.push_back({a.token, a.logprob});
  j = {{"token", v.token},
       {"logprob", v.logprob},
       {"alternatives", std::move(alts)},
       {"tail_mass", v.tail_mass}};
}

void from_json(const nlohmann::json& j, TokenStep& v) {
  j.at("token").get_to(v.token);
  j.at("logprob").get_to(v.logprob);
  v.alternatives.clear();
  for (const auto& a : j.at("alternatives")) {
    v.alternatives.push_back({a.at(0).get<std::string>(), a.at(1).get<double>()});
  }
  v.tail_mass = j.value("tail_mass", 0.0);
}

void to_json(nlohmann::json& j, const GenerationTrace& v) {
  j = {{"prompt_key", v.prompt_key},
       {"steps", v.steps},
       {"text", v.text},
       {"total_logprob", v.total_logprob},
       {"used_context", v.used_context}};
}

void from_json(const nlohmann::json& j, GenerationTrace& v) {
  j.at("prompt_key").get_to(v.prompt_key);
  j.at("steps").get_to(v.steps);
  j.at("text").get_to(v.text);
  j.at("total_logprob").get_to(v.total_logprob);
  v.used_context = j.value("used_context", false);
}

void to_json(nlohmann::json& j, const SampleSet& v) {
  j = {{"prompt_key", v.prompt_key},
       {"samples", v.samples},
       {"sampling_temperature", v.sampling_temperature},
       {"sequential_fallback", v.sequential_fallback}};
}

void from_json(const nlohmann::json& j, SampleSet& v) {
  j.at("prompt_key").get_to(v.prompt_key);
  j.at("samples").get_to(v.samples);
  v.sampling_temperature = j.value("sampling_temperature", 1.0);
  v.sequential_fallback = j.value("sequential_fallback", false);
}

void to_json(nlohmann::json& j, const UncertaintyScore& v) {
  j = {{"example_id", v.example_id}, {"method", v.method}, {"value", v.value}};
}

void from_json(const nlohmann::json& j, UncertaintyScore& v) {
  j.at("example_id").get_to(v.example_id);
  j.at("method").get_to(v.method);
  j.at("value").get_to(v.value);
  v.orientation = ScoreOrientation::HigherMoreUncertain;
}

void to_json(nlohmann::json& j, const RunRecord& v) {
  j = {{"example_id", v.example_id},
       {"strategy", strategy_name(v.strategy)},
       {"decision", v.decision},
       {"answer", v.answer},
       {"correct_in_acc", v.correct_in_acc},
       {"correct_em", v.correct_em},
       {"f1", v.f1},
       {"lm_calls", v.lm_calls},
       {"retrieval_calls", v.retrieval_calls},
       {"scores", v.scores}};
  if (!v.error.empty()) j["error"] = v.error;
}

void from_json(const nlohmann::json& j, RunRecord& v) {
  j.at("example_id").get_to(v.example_id);
  v.strategy = strategy_from_name(j.at("strategy").get<std::string>());
  j.at("decision").get_to(v.decision);
  j.at("answer").get_to(v.answer);
  j.at("correct_in_acc").get_to(v.correct_in_acc);
  j.at("correct_em").get_to(v.correct_em);
  j.at("f1").get_to(v.f1);
  j.at("lm_calls").get_to(v.lm_calls);
  j.at("retrieval_calls").get_to(v.retrieval_calls);
  v.scores = j.value("scores", std::map<std::string, double>{});
  v.error = j.value("error", "");
}

// ---------------------------------------------------------------------------
// File plumbing

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::MissingArtifact, "cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text_file_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  fs::path tmp = target;
  tmp += ".tmp." + std::to_string(static_cast<unsigned long>(::getpid()));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Internal, "cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error(ErrorKind::Internal, "short write to " + tmp.string());
  }
  fs::rename(tmp, target);
}

}  // namespace ragate
