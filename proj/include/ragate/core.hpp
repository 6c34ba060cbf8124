#pragma once

// Domain types shared across the pipeline: QA examples, documents, generation
// traces with per-token alternative distributions, run records, and the JSONL
// readers/writers the file-staged CLI exchanges them through.
//
// Conventions pinned here and relied on everywhere else:
//   * all log-probabilities are natural-log values and are <= 0;
//   * alternative lists are sorted by logprob descending and carry an explicit
//     tail_mass for the untracked remainder of the distribution;
//   * probabilities are floored at 1e-12 before any log is taken.

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace ragate {

inline constexpr double kProbFloor = 1e-12;
inline constexpr double kMassTolerance = 1e-6;
inline constexpr double kLogprobTolerance = 1e-9;

enum class ErrorKind { Config, Data, MissingArtifact, Transport, Internal };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

// ---------------------------------------------------------------------------
// QA data

struct QAExample {
  std::string id;
  std::string question;
  std::vector<std::string> golds;  // non-empty; any member counts as correct
  std::string dataset;
  std::string hop_class;  // "single" or "multi"
};

struct Document {
  std::string doc_id;
  std::string title;
  std::string body;
};

struct HiddenFeature {
  std::string example_id;
  std::vector<double> values;
};

// ---------------------------------------------------------------------------
// Generations

struct TokenAlternative {
  std::string token;
  double logprob = 0.0;
};

struct TokenStep {
  std::string token;    // emitted token text, concatenation rebuilds the answer
  double logprob = 0.0; // logprob of the emitted token
  std::vector<TokenAlternative> alternatives;  // sorted by logprob descending
  double tail_mass = 0.0;  // probability outside the alternative list, in [0,1]
};

struct GenerationTrace {
  std::string prompt_key;  // opaque hash tying the trace to (prompt, config, model)
  std::vector<TokenStep> steps;
  std::string text;
  double total_logprob = 0.0;  // sum of emitted-token logprobs
  bool used_context = false;
};

struct SampleSet {
  std::string prompt_key;
  std::vector<GenerationTrace> samples;
  double sampling_temperature = 1.0;
  bool sequential_fallback = false;  // set when batched sampling fell back to loops
};

/// Violation strings for every broken trace invariant; empty means conformant.
std::vector<std::string> validate_trace(const GenerationTrace& trace);

/// Per-token negative log-likelihoods. Throws on an empty generation.
std::vector<double> trace_token_nll(const GenerationTrace& trace);

// ---------------------------------------------------------------------------
// Scores and decisions

enum class ScoreOrientation { HigherMoreUncertain };

struct UncertaintyScore {
  std::string example_id;
  std::string method;
  double value = 0.0;
  ScoreOrientation orientation = ScoreOrientation::HigherMoreUncertain;
};

enum class Strategy { Never, Always, Adaptive, Ideal };

std::string strategy_name(Strategy s);
Strategy strategy_from_name(const std::string& name);

struct RunRecord {
  std::string example_id;
  Strategy strategy = Strategy::Never;
  int decision = 0;  // 1 = retrieved
  std::string answer;
  int correct_in_acc = 0;
  int correct_em = 0;
  double f1 = 0.0;
  int lm_calls = 0;
  int retrieval_calls = 0;
  std::map<std::string, double> scores;
  std::string error;  // non-empty when the row degraded to a recorded failure
};

/// Checks the per-strategy call algebra. `pmi_active` allows the one extra
/// force-scoring call an adaptive run performs for PMI-family estimators.
std::vector<std::string> validate_run_record(const RunRecord& rec, bool pmi_active = false);

// ---------------------------------------------------------------------------
// JSON bindings

void to_json(nlohmann::json& j, const QAExample& v);
void from_json(const nlohmann::json& j, QAExample& v);
void to_json(nlohmann::json& j, const Document& v);
void from_json(const nlohmann::json& j, Document& v);
void to_json(nlohmann::json& j, const HiddenFeature& v);
void from_json(const nlohmann::json& j, HiddenFeature& v);
void to_json(nlohmann::json& j, const TokenStep& v);
void from_json(const nlohmann::json& j, TokenStep& v);
void to_json(nlohmann::json& j, const GenerationTrace& v);
void from_json(const nlohmann::json& j, GenerationTrace& v);
void to_json(nlohmann::json& j, const SampleSet& v);
void from_json(const nlohmann::json& j, SampleSet& v);
void to_json(nlohmann::json& j, const UncertaintyScore& v);
void from_json(const nlohmann::json& j, UncertaintyScore& v);
void to_json(nlohmann::json& j, const RunRecord& v);
void from_json(const nlohmann::json& j, RunRecord& v);

// ---------------------------------------------------------------------------
// File plumbing

std::string read_text_file(const std::string& path);

/// Writes via a temp file + rename so readers never observe partial content.
void write_text_file_atomic(const std::string& path, const std::string& content);

template <typename T>
std::vector<T> read_jsonl(const std::string& path) {
  std::string content = read_text_file(path);
  std::vector<T> out;
  std::size_t line_no = 0, pos = 0;
  while (pos < content.size()) {
    std::size_t end = content.find('\n', pos);
    if (end == std::string::npos) end = content.size();
    ++line_no;
    std::string_view line(content.data() + pos, end - pos);
    pos = end + 1;
    if (line.empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line).get<T>());
    } catch (const std::exception& e) {
      throw Error(ErrorKind::Data,
                  path + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

template <typename T>
void write_jsonl(const std::string& path, const std::vector<T>& rows) {
  std::string out;
  for (const auto& row : rows) {
    out += nlohmann::json(row).dump();
    out += '\n';
  }
  write_text_file_atomic(path, out);
}

}  // namespace ragate
