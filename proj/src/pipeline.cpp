#include "ragate/pipeline.hpp"

#include <algorithm>
#include <cmath>

#include "ragate/evalkit.hpp"
#include "ragate/hash.hpp"

namespace ragate {
namespace {

std::string trimmed(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\n\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\n\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> trace_tokens(const GenerationTrace& trace) {
  std::vector<std::string> tokens;
  tokens.reserve(trace.steps.size());
  for (const auto& step : trace.steps) tokens.push_back(step.token);
  return tokens;
}

void apply_correctness(RunRecord& rec, const QAExample& ex) {
  rec.correct_in_acc = in_accuracy(rec.answer, ex.golds);
  rec.correct_em = exact_match(rec.answer, ex.golds);
  rec.f1 = f1(rec.answer, ex.golds);
}

struct RagOutcome {
  GenerationTrace trace;
  std::string answer;
  bool no_context = false;
};

RagOutcome answer_with_rag(PipelineEnv& env, const QAExample& ex) {
  if (env.retriever == nullptr) throw Error(ErrorKind::Config, "no retriever configured");
  auto hits = env.retriever->search(ex.question, env.context_k);
  RagOutcome out;
  out.no_context = hits.empty();
  std::string context = render_context(env, hits);
  out.trace = env.gateway->complete(make_prompt(env.few_shot, ex.question, context), env.decode);
  out.trace.used_context = true;
  out.answer = trimmed(out.trace.text);
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Prompts

std::string make_prompt(const std::string& few_shot, const std::string& question,
                        const std::string& context) {
  std::string prompt;
  if (!few_shot.empty()) {
    prompt += few_shot;
    if (prompt.back() != '\n') prompt += '\n';
    prompt += '\n';
  }
  if (!context.empty()) {
    prompt += "Context:\n" + context;
    if (prompt.back() != '\n') prompt += '\n';
  }
  prompt += "Question: " + question + "\nAnswer:";
  return prompt;
}

std::string uncond_prompt(const std::string& few_shot) {
  std::string prompt;
  if (!few_shot.empty()) {
    prompt += few_shot;
    if (prompt.back() != '\n') prompt += '\n';
    prompt += '\n';
  }
  prompt += "Answer:";
  return prompt;
}

std::string render_context(PipelineEnv& env, const std::vector<SearchHit>& hits) {
  std::string context;
  for (const auto& hit : hits) {
    const Document* doc = env.retriever->find(hit.doc_id);
    if (doc == nullptr) continue;
    if (!doc->title.empty()) context += doc->title + ": ";
    context += doc->body;
    context += '\n';
  }
  return context;
}

// ---------------------------------------------------------------------------
// Estimator dispatch

double compute_estimator(const std::string& method, const ExampleInputs& inputs,
                         const ScoreContext& ctx) {
  const EstimatorParams& p = ctx.params;
  auto need_samples = [&]() -> const SampleSet& {
    if (!inputs.samples.has_value()) {
      throw Error(ErrorKind::Data, method + " needs a sample set");
    }
    return *inputs.samples;
  };
  auto need_uncond = [&]() -> const GenerationTrace& {
    if (!inputs.uncond.has_value()) {
      throw Error(ErrorKind::Data, method + " needs an unconditional scoring pass");
    }
    return *inputs.uncond;
  };
  auto need_features = [&]() -> const Eigen::VectorXd& {
    if (!inputs.features.has_value()) {
      throw Error(ErrorKind::Data, method + " needs hidden features");
    }
    return *inputs.features;
  };
  auto sample_matrix = [&]() {
    const SampleSet& set = need_samples();
    std::vector<std::string> texts;
    texts.reserve(set.samples.size());
    for (const auto& s : set.samples) texts.push_back(s.text);
    return similarity_matrix(texts, ctx.sim);
  };

  if (method == "max_entropy") return entropy_aggregate(inputs.main_trace, Aggregate::Max);
  if (method == "mean_entropy") return entropy_aggregate(inputs.main_trace, Aggregate::Mean);
  if (method == "min_entropy") return entropy_aggregate(inputs.main_trace, Aggregate::Min);
  if (method == "median_entropy") return entropy_aggregate(inputs.main_trace, Aggregate::Median);
  if (method == "perplexity") return perplexity(inputs.main_trace);
  if (method == "max_seq_prob") return sequence_prob_aggregate(need_samples(), Aggregate::Max);
  if (method == "mean_seq_prob") return sequence_prob_aggregate(need_samples(), Aggregate::Mean);
  if (method == "min_seq_prob") return sequence_prob_aggregate(need_samples(), Aggregate::Min);
  if (method == "median_seq_prob") {
    return sequence_prob_aggregate(need_samples(), Aggregate::Median);
  }
  if (method == "mean_pmi") return pmi_mean(inputs.main_trace, need_uncond());
  if (method == "mean_cpmi") return cpmi_mean(inputs.main_trace, need_uncond(), p.tau, p.beta);
  if (method == "renyi_neg") return renyi_negentropy(inputs.main_trace, p.alpha);
  if (method == "fisher_rao") return fisher_rao_score(inputs.main_trace);
  if (method == "sar") return sar_score(inputs.main_trace, ctx.sim);
  if (method == "sentence_sar") return sentence_sar_score(need_samples(), ctx.sim, p.t_temp);
  if (method == "ptrue") {
    if (!inputs.p_true.has_value()) throw Error(ErrorKind::Data, "ptrue needs a probe result");
    return ptrue_score(*inputs.p_true);
  }
  if (method == "lex_similarity") return lexical_similarity_score(sample_matrix());
  if (method == "num_sem_sets") {
    return static_cast<double>(num_sem_sets(sample_matrix(), p.cluster_theta));
  }
  if (method == "deg_mat") return deg_mat_score(sample_matrix());
  if (method == "eig_val_laplacian") {
    return eig_val_laplacian_score(laplacian_spectrum(sample_matrix()));
  }
  if (method == "eccentricity") return eccentricity_score(laplacian_eigen(sample_matrix()));
  if (method == "semantic_entropy") {
    return semantic_entropy(need_samples(), sample_matrix(), p.cluster_theta);
  }
  if (method == "md") {
    if (!ctx.task_density.has_value()) {
      throw Error(ErrorKind::Config, "md needs a fitted task density");
    }
    return mahalanobis(*ctx.task_density, need_features());
  }
  if (method == "rmd") {
    if (!ctx.task_density.has_value() || !ctx.background_density.has_value()) {
      throw Error(ErrorKind::Config, "rmd needs task and background densities");
    }
    return relative_mahalanobis(*ctx.task_density, *ctx.background_density, need_features());
  }
  if (method == "rde") {
    if (!ctx.rde_model.has_value()) throw Error(ErrorKind::Config, "rde needs a fitted pca model");
    return rde_score(*ctx.rde_model, need_features());
  }
  if (method == "hybrid") {
    throw Error(ErrorKind::Config, "hybrid is assembled from other scores, not computed directly");
  }
  throw Error(ErrorKind::Config, "unknown estimator: " + method);
}

// ---------------------------------------------------------------------------
// Strategies

RunRecord run_never(PipelineEnv& env, const QAExample& ex) {
  RunRecord rec;
  rec.example_id = ex.id;
  rec.strategy = Strategy::Never;
  try {
    GenerationTrace trace = env.gateway->complete(make_prompt(env.few_shot, ex.question, ""),
                                                  env.decode);
    rec.answer = trimmed(trace.text);
    rec.lm_calls = 1;
    apply_correctness(rec, ex);
  } catch (const Error& e) {
    throw Error(e.kind(), ex.id + ": " + e.what());
  }
  return rec;
}

RunRecord run_always(PipelineEnv& env, const QAExample& ex) {
  RunRecord rec;
  rec.example_id = ex.id;
  rec.strategy = Strategy::Always;
  rec.decision = 1;
  try {
    RagOutcome out = answer_with_rag(env, ex);
    rec.answer = out.answer;
    rec.lm_calls = 1;
    rec.retrieval_calls = 1;
    if (out.no_context) rec.error = "no-context-retrieved";
    apply_correctness(rec, ex);
  } catch (const Error& e) {
    throw Error(e.kind(), ex.id + ": " + e.what());
  }
  return rec;
}

RunRecord run_ideal(PipelineEnv& env, const QAExample& ex) {
  RunRecord rec;
  rec.example_id = ex.id;
  rec.strategy = Strategy::Ideal;
  try {
    GenerationTrace no_rag = env.gateway->complete(make_prompt(env.few_shot, ex.question, ""),
                                                   env.decode);
    std::string no_rag_answer = trimmed(no_rag.text);
    int correct_norag = in_accuracy(no_rag_answer, ex.golds);
    rec.decision = 1 - correct_norag;
    if (rec.decision == 1) {
      RagOutcome out = answer_with_rag(env, ex);
      rec.answer = out.answer;
      if (out.no_context) rec.error = "no-context-retrieved";
    } else {
      rec.answer = no_rag_answer;
    }
    rec.lm_calls = 1 + rec.decision;
    rec.retrieval_calls = rec.decision;
    apply_correctness(rec, ex);
  } catch (const Error& e) {
    throw Error(e.kind(), ex.id + ": " + e.what());
  }
  return rec;
}

namespace {

/// Gathers the union of inputs a set of methods needs. One batched sample
/// call, one force-scoring pass and one probe at most, whatever the mix.
ExampleInputs gather_inputs(PipelineEnv& env, const QAExample& ex,
                            const std::vector<std::string>& methods,
                            const std::optional<Eigen::VectorXd>& features, bool& pmi_ran) {
  bool samples = false, uncond = false, probe = false;
  for (const auto& m : methods) {
    const EstimatorInfo& info = estimator_info(m);
    samples = samples || info.needs_samples;
    uncond = uncond || info.needs_uncond;
    probe = probe || info.needs_probe;
  }

  ExampleInputs inputs;
  std::string prompt = make_prompt(env.few_shot, ex.question, "");
  inputs.main_trace = env.gateway->complete(prompt, env.decode);
  if (samples) inputs.samples = env.gateway->sample_n(prompt, env.sample_decode);
  if (uncond) {
    inputs.uncond = env.gateway->force_score(uncond_prompt(env.few_shot),
                                             trace_tokens(inputs.main_trace), env.decode);
    pmi_ran = true;
  }
  if (probe) {
    inputs.p_true = env.gateway
                        ->ptrue_probe(ex.question, trimmed(inputs.main_trace.text),
                                      env.decode.top_k_logprobs)
                        .p_true;
  }
  inputs.features = features;
  return inputs;
}

std::string expected_manifest_hash(const std::string& method, const ScoreContext& ctx) {
  if (method == "hybrid") {
    if (!ctx.hybrid_stats.has_value()) {
      throw Error(ErrorKind::Config, "hybrid needs fitted feature stats");
    }
    std::string joined;
    for (std::size_t i = 0; i < ctx.hybrid_stats->manifest.size(); ++i) {
      if (i > 0) joined += '\x1f';
      joined += ctx.hybrid_stats->manifest[i];
    }
    return sha256_hex(joined);
  }
  return sha256_hex(method);
}

}  // namespace

RunRecord run_adaptive(PipelineEnv& env, const QAExample& ex, const std::string& method,
                       const DeciderModel& model, const ScoreContext& ctx,
                       const std::optional<Eigen::VectorXd>& features) {
  if (model.manifest_hash != expected_manifest_hash(method, ctx)) {
    throw Error(ErrorKind::Config,
                "decider manifest does not match estimator " + method + " for " + ex.id);
  }

  RunRecord rec;
  rec.example_id = ex.id;
  rec.strategy = Strategy::Adaptive;
  try {
    bool pmi_ran = false;
    std::vector<std::string> methods =
        method == "hybrid" ? ctx.hybrid_stats->manifest : std::vector<std::string>{method};
    ExampleInputs inputs = gather_inputs(env, ex, methods, features, pmi_ran);

    Eigen::VectorXd x;
    if (method == "hybrid") {
      for (const auto& m : methods) rec.scores[m] = compute_estimator(m, inputs, ctx);
      x = assemble_hybrid(ex.id, rec.scores, *ctx.hybrid_stats).values;
    } else {
      double value = compute_estimator(method, inputs, ctx);
      rec.scores[method] = value;
      x = Eigen::VectorXd::Constant(1, value);
    }

    rec.decision = model.predict(x);
    if (rec.decision == 1) {
      RagOutcome out = answer_with_rag(env, ex);
      rec.answer = out.answer;
      if (out.no_context) rec.error = "no-context-retrieved";
    } else {
      rec.answer = trimmed(inputs.main_trace.text);
    }
    rec.lm_calls = 1 + rec.decision + (pmi_ran ? 1 : 0);
    rec.retrieval_calls = rec.decision;
    apply_correctness(rec, ex);
  } catch (const Error& e) {
    throw Error(e.kind(), ex.id + ": " + e.what());
  }
  return rec;
}

// ---------------------------------------------------------------------------
// Score rows

void to_json(nlohmann::json& j, const ScoreRow& v) {
  j = nlohmann::json{{"example_id", v.example_id},
                     {"no_rag_answer", v.no_rag_answer},
                     {"rag_answer", v.rag_answer},
                     {"correct_norag", v.correct_norag},
                     {"correct_rag", v.correct_rag},
                     {"y", v.y},
                     {"scores", v.scores}};
  if (!v.error.empty()) j["error"] = v.error;
}

void from_json(const nlohmann::json& j, ScoreRow& v) {
  v.example_id = j.at("example_id").get<std::string>();
  v.no_rag_answer = j.at("no_rag_answer").get<std::string>();
  v.rag_answer = j.at("rag_answer").get<std::string>();
  v.correct_norag = j.at("correct_norag").get<int>();
  v.correct_rag = j.at("correct_rag").get<int>();
  v.y = j.at("y").get<int>();
  v.scores = j.at("scores").get<std::map<std::string, double>>();
  v.error = j.value("error", "");
}

std::vector<ScoreRow> build_score_rows(PipelineEnv& env, const std::vector<QAExample>& dataset,
                                       const std::vector<std::string>& methods,
                                       const ScoreContext& ctx,
                                       const std::map<std::string, Eigen::VectorXd>& features) {
  std::vector<ScoreRow> rows;
  rows.reserve(dataset.size());
  for (const auto& ex : dataset) {
    ScoreRow row;
    row.example_id = ex.id;
    try {
      std::optional<Eigen::VectorXd> feat;
      auto fit = features.find(ex.id);
      if (fit != features.end()) feat = fit->second;

      bool pmi_ran = false;
      ExampleInputs inputs = gather_inputs(env, ex, methods, feat, pmi_ran);
      row.no_rag_answer = trimmed(inputs.main_trace.text);
      row.correct_norag = in_accuracy(row.no_rag_answer, ex.golds);
      row.y = 1 - row.correct_norag;

      RagOutcome out = answer_with_rag(env, ex);
      row.rag_answer = out.answer;
      row.correct_rag = in_accuracy(row.rag_answer, ex.golds);

      for (const auto& m : methods) row.scores[m] = compute_estimator(m, inputs, ctx);
    } catch (const Error& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

DecisionTable table_from_scores(const std::vector<ScoreRow>& rows, const std::string& method) {
  DecisionTable table;
  table.feature_names = {method};
  for (const auto& row : rows) {
    if (!row.error.empty()) continue;
    auto it = row.scores.find(method);
    if (it == row.scores.end()) continue;
    DecisionRow r;
    r.example_id = row.example_id;
    r.features = Eigen::VectorXd::Constant(1, it->second);
    r.y = row.y;
    r.correct_norag = row.correct_norag;
    r.correct_rag = row.correct_rag;
    table.rows.push_back(std::move(r));
  }
  return table;
}

DecisionTable table_from_hybrid(const std::vector<ScoreRow>& rows, const FeatureStats& stats) {
  DecisionTable table;
  table.feature_names = stats.manifest;
  for (const auto& row : rows) {
    if (!row.error.empty()) continue;
    DecisionRow r;
    r.example_id = row.example_id;
    r.features = assemble_hybrid(row.example_id, row.scores, stats).values;
    r.y = row.y;
    r.correct_norag = row.correct_norag;
    r.correct_rag = row.correct_rag;
    table.rows.push_back(std::move(r));
  }
  return table;
}

}  // namespace ragate
