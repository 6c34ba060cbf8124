#include "ragate/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <set>
#include <utility>

#include "ragate/analysis.hpp"
#include "ragate/evalkit.hpp"
#include "ragate/hash.hpp"
#include "ragate/numeric.hpp"

namespace ragate {

namespace fs = std::filesystem;

namespace {

// The built-in few-shot block. Its questions must not collide with any mock
// knowledge key, which match as prompt substrings.
constexpr const char* kDefaultFewShot =
    "Answer each question with a short phrase.\n"
    "\n"
    "Question: What color is a clear daytime sky?\n"
    "Answer: blue\n"
    "\n"
    "Question: How many sides does a triangle have?\n"
    "Answer: three";

const std::vector<std::string> kMetricOrder = {"InAcc", "EM",  "F1",       "LMC",  "RC",
                                               "Acc",   "AUC", "Spearman", "Over", "Under"};

std::string fmt_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

bool valid_name(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s) {
    bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
              c == '_' || c == '-';
    if (!ok) return false;
  }
  return true;
}

void require_file(const std::string& path, const std::string& what) {
  if (!fs::exists(path)) {
    throw Error(ErrorKind::Config, what + " not found: " + path);
  }
}

/// A "no-context-retrieved" note means the record is still a valid answer.
bool record_ok(const RunRecord& rec) {
  return rec.error.empty() || rec.error == "no-context-retrieved";
}

std::vector<RunRecord> ok_records(const std::vector<RunRecord>& records) {
  std::vector<RunRecord> out;
  for (const auto& r : records) {
    if (record_ok(r)) out.push_back(r);
  }
  return out;
}

Eigen::VectorXd json_to_vector(const nlohmann::json& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = j[static_cast<std::size_t>(i)].get<double>();
  return v;
}

nlohmann::json vector_to_json(const Eigen::VectorXd& v) {
  nlohmann::json j = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) j.push_back(v(i));
  return j;
}

nlohmann::json metrics_to_json(const MetricsReport& rep) {
  nlohmann::json j;
  j["datasets"] = rep.datasets;
  j["methods"] = rep.methods;
  j["metrics"] = rep.metrics;
  j["ue_methods"] = rep.ue_methods;
  nlohmann::json values = nlohmann::json::array();
  for (const auto& per_ds : rep.values) {
    nlohmann::json dsj = nlohmann::json::object();
    for (const auto& [method, cells] : per_ds) {
      nlohmann::json mj = nlohmann::json::object();
      for (const auto& [metric, value] : cells) {
        if (value.has_value()) {
          mj[metric] = *value;
        } else {
          mj[metric] = nullptr;
        }
      }
      dsj[method] = std::move(mj);
    }
    values.push_back(std::move(dsj));
  }
  j["values"] = std::move(values);
  return j;
}

MetricsReport metrics_from_json(const nlohmann::json& j) {
  MetricsReport rep;
  j.at("datasets").get_to(rep.datasets);
  j.at("methods").get_to(rep.methods);
  j.at("metrics").get_to(rep.metrics);
  j.at("ue_methods").get_to(rep.ue_methods);
  for (const auto& dsj : j.at("values")) {
    std::map<std::string, std::map<std::string, std::optional<double>>> per_ds;
    for (const auto& [method, mj] : dsj.items()) {
      for (const auto& [metric, value] : mj.items()) {
        per_ds[method][metric] =
            value.is_null() ? std::nullopt : std::optional<double>(value.get<double>());
      }
    }
    rep.values.push_back(std::move(per_ds));
  }
  return rep;
}

RademacherClass rademacher_class_from_name(const std::string& name) {
  if (name == "constant") return RademacherClass::Constant;
  if (name == "threshold") return RademacherClass::Threshold;
  if (name == "logreg") return RademacherClass::Logreg;
  if (name == "tree") return RademacherClass::Tree;
  if (name == "knn") return RademacherClass::Knn;
  if (name == "mlp") return RademacherClass::Mlp;
  throw Error(ErrorKind::Config, "unknown rademacher class: " + name);
}

void params_from_json(const nlohmann::json& j, EstimatorParams& p) {
  static const std::set<std::string> known = {"tau",    "beta",      "alpha", "cluster_theta",
                                              "t_temp", "shrinkage", "rde_q"};
  for (const auto& [key, _] : j.items()) {
    if (known.find(key) == known.end()) {
      throw Error(ErrorKind::Config, "unknown estimator_params key: " + key);
    }
  }
  p.tau = j.value("tau", p.tau);
  p.beta = j.value("beta", p.beta);
  p.alpha = j.value("alpha", p.alpha);
  p.cluster_theta = j.value("cluster_theta", p.cluster_theta);
  p.t_temp = j.value("t_temp", p.t_temp);
  p.shrinkage = j.value("shrinkage", p.shrinkage);
  p.rde_q = j.value("rde_q", p.rde_q);
}

nlohmann::json params_to_json(const EstimatorParams& p) {
  return {{"tau", p.tau},
          {"beta", p.beta},
          {"alpha", p.alpha},
          {"cluster_theta", p.cluster_theta},
          {"t_temp", p.t_temp},
          {"shrinkage", p.shrinkage},
          {"rde_q", p.rde_q}};
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

std::string ExperimentConfig::resolve(const std::string& path) const {
  if (path.empty()) return path;
  fs::path p(path);
  if (p.is_absolute()) return path;
  return (fs::path(base_dir) / p).lexically_normal().string();
}

std::string ExperimentConfig::out_path(const std::string& name) const {
  return (fs::path(resolve(output_dir)) / name).string();
}

std::vector<std::string> ExperimentConfig::scored_methods() const {
  std::vector<std::string> out;
  auto add = [&out](const std::string& m) {
    if (m != "hybrid" && std::find(out.begin(), out.end(), m) == out.end()) out.push_back(m);
  };
  for (const auto& m : estimators) add(m);
  for (const auto& m : hybrid_manifest) add(m);
  return out;
}

bool ExperimentConfig::runs_hybrid() const {
  return std::find(estimators.begin(), estimators.end(), "hybrid") != estimators.end();
}

void ExperimentConfig::validate() const {
  if (datasets.empty()) throw Error(ErrorKind::Config, "config lists no datasets");
  std::set<std::string> names;
  for (const auto& ds : datasets) {
    if (!valid_name(ds.name)) {
      throw Error(ErrorKind::Config, "dataset name must be [A-Za-z0-9_-]+: '" + ds.name + "'");
    }
    if (!names.insert(ds.name).second) {
      throw Error(ErrorKind::Config, "duplicate dataset name: " + ds.name);
    }
    require_file(resolve(ds.train), "train file for " + ds.name);
    require_file(resolve(ds.test), "test file for " + ds.name);
  }
  if (corpus.empty()) throw Error(ErrorKind::Config, "config needs a corpus file");
  require_file(resolve(corpus), "corpus");
  if (!mock_llm.empty()) require_file(resolve(mock_llm), "mock spec");
  if (!few_shot_file.empty()) require_file(resolve(few_shot_file), "few-shot file");

  std::set<std::string> seen_estimators;
  for (const auto& m : estimators) {
    if (!is_known_estimator(m)) throw Error(ErrorKind::Config, "unknown estimator: " + m);
    if (!seen_estimators.insert(m).second) {
      throw Error(ErrorKind::Config, "duplicate estimator: " + m);
    }
  }
  if (runs_hybrid() && hybrid_manifest.empty()) {
    throw Error(ErrorKind::Config, "the hybrid estimator needs a non-empty hybrid_manifest");
  }
  for (const auto& m : hybrid_manifest) {
    if (m == "hybrid" || !is_known_estimator(m)) {
      throw Error(ErrorKind::Config, "invalid hybrid_manifest entry: " + m);
    }
  }

  if (deciders.empty()) throw Error(ErrorKind::Config, "config lists no deciders");
  for (const auto& d : deciders) decider_kind_from_name(d);  // throws on unknown
  selection_mode_from_name(selection_mode);
  if (threshold_mode != "log_grid_200" && threshold_mode != "midpoints") {
    throw Error(ErrorKind::Config, "threshold_mode must be log_grid_200 or midpoints");
  }

  if (n_samples < 1) throw Error(ErrorKind::Config, "n_samples must be >= 1");
  if (sample_temperature <= 0.0) throw Error(ErrorKind::Config, "sample_temperature must be > 0");
  if (context_k < 1) throw Error(ErrorKind::Config, "context_k must be >= 1");
  if (top_k_logprobs < 1) throw Error(ErrorKind::Config, "top_k_logprobs must be >= 1");
  if (max_tokens < 1) throw Error(ErrorKind::Config, "max_tokens must be >= 1");
  if (rademacher_draws < 1) throw Error(ErrorKind::Config, "rademacher_draws must be >= 1");
  for (const auto& c : rademacher_classes) rademacher_class_from_name(c);

  if (similarity_kind != "lexical" && similarity_kind != "external") {
    throw Error(ErrorKind::Config, "similarity kind must be lexical or external");
  }
  if (similarity_kind == "external" && similarity_endpoint.empty()) {
    throw Error(ErrorKind::Config, "external similarity needs an endpoint");
  }

  bool needs_features = false;
  bool needs_background = false;
  for (const auto& m : scored_methods()) {
    const EstimatorInfo& info = estimator_info(m);
    needs_features = needs_features || info.needs_features;
    needs_background = needs_background || m == "rmd";
  }
  if (needs_features) {
    for (const auto& ds : datasets) {
      if (ds.train_features.empty() || ds.test_features.empty()) {
        throw Error(ErrorKind::Config,
                    "density estimators need train and test feature files for " + ds.name);
      }
      require_file(resolve(ds.train_features), "train features for " + ds.name);
      require_file(resolve(ds.test_features), "test features for " + ds.name);
    }
  }
  if (needs_background) {
    if (background_features.empty()) {
      throw Error(ErrorKind::Config, "the rmd estimator needs a background_features file");
    }
    require_file(resolve(background_features), "background features");
  }
}

void to_json(nlohmann::json& j, const ExperimentConfig& v) {
  nlohmann::json dsets = nlohmann::json::array();
  for (const auto& ds : v.datasets) {
    dsets.push_back({{"name", ds.name},
                     {"train", ds.train},
                     {"test", ds.test},
                     {"train_features", ds.train_features},
                     {"test_features", ds.test_features}});
  }
  j = nlohmann::json{
      {"datasets", std::move(dsets)},
      {"corpus", v.corpus},
      {"retriever_endpoint", v.retriever_endpoint},
      {"mock_llm", v.mock_llm},
      {"estimators", v.estimators},
      {"hybrid_manifest", v.hybrid_manifest},
      {"deciders", v.deciders},
      {"selection_mode", v.selection_mode},
      {"threshold_mode", v.threshold_mode},
      {"n_samples", v.n_samples},
      {"sample_temperature", v.sample_temperature},
      {"context_k", v.context_k},
      {"top_k_logprobs", v.top_k_logprobs},
      {"max_tokens", v.max_tokens},
      {"seed", v.seed},
      {"output_dir", v.output_dir},
      {"cache_dir", v.cache_dir},
      {"few_shot_file", v.few_shot_file},
      {"similarity", {{"kind", v.similarity_kind}, {"endpoint", v.similarity_endpoint}}},
      {"estimator_params", params_to_json(v.estimator_params)},
      {"background_features", v.background_features},
      {"rademacher_draws", v.rademacher_draws},
      {"rademacher_classes", v.rademacher_classes},
  };
}

void from_json(const nlohmann::json& j, ExperimentConfig& v) {
  static const std::set<std::string> known = {
      "datasets",        "corpus",          "retriever_endpoint", "mock_llm",
      "estimators",      "hybrid_manifest", "deciders",           "selection_mode",
      "threshold_mode",  "n_samples",       "sample_temperature", "context_k",
      "top_k_logprobs",  "max_tokens",      "seed",               "output_dir",
      "cache_dir",       "few_shot_file",   "similarity",         "estimator_params",
      "background_features", "rademacher_draws", "rademacher_classes"};
  for (const auto& [key, _] : j.items()) {
    if (known.find(key) == known.end()) {
      throw Error(ErrorKind::Config, "unknown config key: " + key);
    }
  }
  v = ExperimentConfig{};
  if (j.contains("datasets")) {
    for (const auto& dj : j.at("datasets")) {
      static const std::set<std::string> ds_known = {"name", "train", "test", "train_features",
                                                     "test_features"};
      for (const auto& [key, _] : dj.items()) {
        if (ds_known.find(key) == ds_known.end()) {
          throw Error(ErrorKind::Config, "unknown dataset key: " + key);
        }
      }
      DatasetSpec ds;
      ds.name = dj.value("name", "");
      ds.train = dj.value("train", "");
      ds.test = dj.value("test", "");
      ds.train_features = dj.value("train_features", "");
      ds.test_features = dj.value("test_features", "");
      v.datasets.push_back(std::move(ds));
    }
  }
  v.corpus = j.value("corpus", v.corpus);
  v.retriever_endpoint = j.value("retriever_endpoint", v.retriever_endpoint);
  v.mock_llm = j.value("mock_llm", v.mock_llm);
  v.estimators = j.value("estimators", v.estimators);
  v.hybrid_manifest = j.value("hybrid_manifest", v.hybrid_manifest);
  v.deciders = j.value("deciders", v.deciders);
  v.selection_mode = j.value("selection_mode", v.selection_mode);
  v.threshold_mode = j.value("threshold_mode", v.threshold_mode);
  v.n_samples = j.value("n_samples", v.n_samples);
  v.sample_temperature = j.value("sample_temperature", v.sample_temperature);
  v.context_k = j.value("context_k", v.context_k);
  v.top_k_logprobs = j.value("top_k_logprobs", v.top_k_logprobs);
  v.max_tokens = j.value("max_tokens", v.max_tokens);
  v.seed = j.value("seed", v.seed);
  v.output_dir = j.value("output_dir", v.output_dir);
  v.cache_dir = j.value("cache_dir", v.cache_dir);
  v.few_shot_file = j.value("few_shot_file", v.few_shot_file);
  if (j.contains("similarity")) {
    const auto& sj = j.at("similarity");
    for (const auto& [key, _] : sj.items()) {
      if (key != "kind" && key != "endpoint") {
        throw Error(ErrorKind::Config, "unknown similarity key: " + key);
      }
    }
    v.similarity_kind = sj.value("kind", v.similarity_kind);
    v.similarity_endpoint = sj.value("endpoint", v.similarity_endpoint);
  }
  if (j.contains("estimator_params")) params_from_json(j.at("estimator_params"), v.estimator_params);
  v.background_features = j.value("background_features", v.background_features);
  v.rademacher_draws = j.value("rademacher_draws", v.rademacher_draws);
  v.rademacher_classes = j.value("rademacher_classes", v.rademacher_classes);
}

void apply_override(nlohmann::json& j, const std::string& assignment) {
  std::size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw Error(ErrorKind::Config, "override must be key=value: " + assignment);
  }
  std::string key = assignment.substr(0, eq);
  std::string raw = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::exception&) {
    value = raw;  // bare strings stay strings
  }

  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    std::size_t dot = key.find('.', start);
    parts.push_back(key.substr(start, dot == std::string::npos ? dot : dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }

  nlohmann::json* cur = &j;
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    const std::string& part = parts[i];
    if (cur->is_array()) {
      std::size_t idx = 0;
      try {
        idx = std::stoul(part);
      } catch (const std::exception&) {
        throw Error(ErrorKind::Config, "array override needs a numeric index: " + key);
      }
      if (idx >= cur->size()) throw Error(ErrorKind::Config, "override index out of range: " + key);
      cur = &(*cur)[idx];
    } else {
      cur = &(*cur)[part];
    }
  }
  const std::string& last = parts.back();
  if (cur->is_array()) {
    std::size_t idx = 0;
    try {
      idx = std::stoul(last);
    } catch (const std::exception&) {
      throw Error(ErrorKind::Config, "array override needs a numeric index: " + key);
    }
    if (idx >= cur->size()) throw Error(ErrorKind::Config, "override index out of range: " + key);
    (*cur)[idx] = value;
  } else {
    (*cur)[last] = value;
  }
}

ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  require_file(path, "config file");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Config, std::string("config parse error: ") + e.what());
  }
  for (const auto& o : overrides) apply_override(j, o);
  ExperimentConfig cfg;
  try {
    cfg = j.get<ExperimentConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Config, std::string("config field error: ") + e.what());
  }
  std::string dir = fs::path(path).parent_path().string();
  cfg.base_dir = dir.empty() ? "." : dir;
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------
// Experiment plumbing

Experiment::Experiment(ExperimentConfig config) : config_(std::move(config)) {
  fs::create_directories(config_.resolve(config_.output_dir));
}

Experiment::~Experiment() = default;

LlmGateway& Experiment::gateway() {
  if (!gateway_) {
    std::shared_ptr<LlmBackend> backend;
    if (!config_.mock_llm.empty()) {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(read_text_file(config_.resolve(config_.mock_llm)));
      } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::Config, std::string("mock spec parse error: ") + e.what());
      }
      MockLlmSpec spec = j.get<MockLlmSpec>();
      spec.validate();
      backend = std::make_shared<MockLlm>(std::move(spec));
    } else {
      HttpLlmOptions options = HttpLlmOptions::from_env();
      if (options.base_url.empty()) {
        throw Error(ErrorKind::Config, "no mock spec configured and LLM_API_BASE is unset");
      }
      backend = std::make_shared<HttpLlm>(std::move(options));
    }
    std::string cache = config_.cache_dir;
    if (cache.empty()) {
      const char* env = std::getenv("RAGATE_CACHE_DIR");
      cache = env != nullptr && *env != '\0' ? std::string(env)
                                             : config_.out_path("cache");
    } else {
      cache = config_.resolve(cache);
    }
    gateway_ = std::make_unique<LlmGateway>(std::move(backend), cache);
  }
  return *gateway_;
}

Retriever& Experiment::retriever() {
  if (!retriever_) {
    auto corpus = read_jsonl<Document>(config_.resolve(config_.corpus));
    if (config_.retriever_endpoint.empty()) {
      retriever_ = std::make_unique<EmbeddedRetriever>(Bm25Index::build(std::move(corpus)));
    } else {
      retriever_ =
          std::make_unique<RemoteRetriever>(config_.retriever_endpoint, std::move(corpus));
    }
  }
  return *retriever_;
}

PipelineEnv Experiment::env() {
  if (!few_shot_loaded_) {
    few_shot_ = config_.few_shot_file.empty()
                    ? kDefaultFewShot
                    : read_text_file(config_.resolve(config_.few_shot_file));
    few_shot_loaded_ = true;
  }
  PipelineEnv e;
  e.gateway = &gateway();
  e.retriever = &retriever();
  e.decode.temperature = 0.0;
  e.decode.max_tokens = config_.max_tokens;
  e.decode.top_k_logprobs = config_.top_k_logprobs;
  e.decode.n_samples = 1;
  e.sample_decode.temperature = config_.sample_temperature;
  e.sample_decode.max_tokens = config_.max_tokens;
  e.sample_decode.top_k_logprobs = config_.top_k_logprobs;
  e.sample_decode.n_samples = config_.n_samples;
  e.few_shot = few_shot_;
  e.context_k = config_.context_k;
  return e;
}

void Experiment::require_artifact(const std::string& path,
                                  const std::string& producer_stage) const {
  if (!fs::exists(path)) {
    throw Error(ErrorKind::MissingArtifact,
                "missing artifact " + path + "; run the " + producer_stage + " stage first");
  }
}

std::map<std::string, Eigen::VectorXd> Experiment::load_features(const std::string& path) const {
  std::map<std::string, Eigen::VectorXd> out;
  if (path.empty()) return out;
  auto rows = read_jsonl<HiddenFeature>(path);
  Eigen::Index dim = -1;
  for (const auto& row : rows) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(row.values.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = row.values[static_cast<std::size_t>(i)];
    if (dim < 0) dim = v.size();
    if (v.size() != dim) {
      throw Error(ErrorKind::Data, "inconsistent feature dimension in " + path);
    }
    if (!out.emplace(row.example_id, std::move(v)).second) {
      throw Error(ErrorKind::Data, "duplicate feature example_id " + row.example_id + " in " + path);
    }
  }
  return out;
}

std::vector<ScoreRow> Experiment::load_scores(const std::string& dataset,
                                              const std::string& split) const {
  std::string path = config_.out_path("scores_" + dataset + "_" + split + ".jsonl");
  require_artifact(path, "score");
  return read_jsonl<ScoreRow>(path);
}

ScoreContext Experiment::score_context(const DatasetSpec& dataset, bool with_hybrid_stats) {
  ScoreContext ctx;
  ctx.sim.kind = config_.similarity_kind == "external" ? SimilarityFn::Kind::ExternalScorer
                                                       : SimilarityFn::Kind::LexicalTokenF1;
  ctx.sim.endpoint = config_.similarity_endpoint;
  ctx.params = config_.estimator_params;

  auto methods = config_.scored_methods();
  auto has = [&methods](const char* id) {
    return std::find(methods.begin(), methods.end(), id) != methods.end();
  };
  bool needs_density = false;
  for (const auto& m : methods) needs_density = needs_density || estimator_info(m).needs_features;

  if (needs_density) {
    auto train = read_jsonl<QAExample>(config_.resolve(dataset.train));
    auto fmap = load_features(config_.resolve(dataset.train_features));
    std::size_t half = train.size() / 2;
    if (half < 1) {
      throw Error(ErrorKind::Data, "density fits need at least 2 training examples for " +
                                       dataset.name);
    }
    Eigen::Index dim = 0;
    for (const auto& [_, v] : fmap) {
      dim = v.size();
      break;
    }
    Eigen::MatrixXd x(static_cast<Eigen::Index>(half), dim);
    for (std::size_t i = 0; i < half; ++i) {
      auto it = fmap.find(train[i].id);
      if (it == fmap.end()) {
        throw Error(ErrorKind::Data, "train features missing example " + train[i].id);
      }
      x.row(static_cast<Eigen::Index>(i)) = it->second.transpose();
    }
    ctx.task_density = fit_density(x, ctx.params.shrinkage);
    if (has("rde")) ctx.rde_model = fit_rde(x, ctx.params.rde_q, ctx.params.shrinkage);
    if (has("rmd")) {
      auto bg = load_features(config_.resolve(config_.background_features));
      if (bg.empty()) throw Error(ErrorKind::Data, "background feature file is empty");
      Eigen::MatrixXd b(static_cast<Eigen::Index>(bg.size()), dim);
      Eigen::Index r = 0;
      for (const auto& [_, v] : bg) b.row(r++) = v.transpose();
      ctx.background_density = fit_density(b, ctx.params.shrinkage);
    }
  }

  if (with_hybrid_stats && config_.runs_hybrid()) {
    ctx.hybrid_stats = load_hybrid_stats(dataset.name);
  }
  return ctx;
}

DecisionTable Experiment::build_table(const std::string& method,
                                      const std::vector<ScoreRow>& rows,
                                      const std::optional<FeatureStats>& stats) const {
  if (method == "hybrid") {
    if (!stats.has_value()) {
      throw Error(ErrorKind::Internal, "hybrid table requested without feature stats");
    }
    return table_from_hybrid(rows, *stats);
  }
  return table_from_scores(rows, method);
}

DecisionTable Experiment::classifier_slice(const std::string& method,
                                           const std::vector<ScoreRow>& train_rows,
                                           const std::optional<FeatureStats>& stats) const {
  bool trainable =
      method == "hybrid" || estimator_info(method).family == EstimatorFamily::Density;
  if (!trainable) return build_table(method, train_rows, stats);
  // Trainable methods learn their own parameters on the first half of train;
  // only the second half is clean for classifier fitting.
  std::size_t half = train_rows.size() / 2;
  std::vector<ScoreRow> rest(train_rows.begin() + static_cast<std::ptrdiff_t>(half),
                             train_rows.end());
  return build_table(method, rest, stats);
}

std::pair<DecisionTable, DecisionTable> Experiment::holdout_split(const DecisionTable& table,
                                                                  std::uint64_t seed) const {
  const std::size_t n = table.rows.size();
  if (n < 2) {
    throw Error(ErrorKind::Data, "holdout selection needs at least 2 classifier rows");
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  RngStream rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) {
    std::size_t j = static_cast<std::size_t>(rng.next_int(static_cast<int>(i) + 1));
    std::swap(order[i], order[j]);
  }
  std::size_t eval_count = std::max<std::size_t>(1, n / 5);
  std::vector<std::size_t> eval_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(eval_count));
  std::vector<std::size_t> fit_idx(order.begin() + static_cast<std::ptrdiff_t>(eval_count), order.end());
  std::sort(eval_idx.begin(), eval_idx.end());
  std::sort(fit_idx.begin(), fit_idx.end());

  DecisionTable fit_part, eval_part;
  fit_part.feature_names = table.feature_names;
  eval_part.feature_names = table.feature_names;
  for (std::size_t i : fit_idx) fit_part.rows.push_back(table.rows[i]);
  for (std::size_t i : eval_idx) eval_part.rows.push_back(table.rows[i]);
  return {std::move(fit_part), std::move(eval_part)};
}

FeatureStats Experiment::load_hybrid_stats(const std::string& dataset) const {
  std::string path = config_.out_path("models/" + dataset + "/hybrid_stats.json");
  require_artifact(path, "fit");
  nlohmann::json j = nlohmann::json::parse(read_text_file(path));
  FeatureStats stats;
  j.at("manifest").get_to(stats.manifest);
  stats.mean = json_to_vector(j.at("mean"));
  stats.stddev = json_to_vector(j.at("stddev"));
  return stats;
}

DeciderModel Experiment::load_selected_model(const std::string& dataset,
                                             const std::string& method) const {
  std::string dir = config_.out_path("models/" + dataset + "/" + method);
  std::string sel_path = dir + "/selection.json";
  require_artifact(sel_path, "fit");
  nlohmann::json sel = nlohmann::json::parse(read_text_file(sel_path));
  std::string kind = sel.at("chosen_kind").get<std::string>();
  std::string model_path = dir + "/" + kind + ".json";
  require_artifact(model_path, "fit");
  return DeciderModel::load(model_path);
}

std::uint64_t Experiment::derived_seed(const std::string& tag) const {
  std::string hex = sha256_hex(tag).substr(0, 16);
  std::uint64_t v = std::strtoull(hex.c_str(), nullptr, 16);
  return v ^ config_.seed;
}

ThresholdMode Experiment::threshold_mode_enum() const {
  return config_.threshold_mode == "midpoints" ? ThresholdMode::Midpoints
                                               : ThresholdMode::LogGrid200;
}

SelectionMode Experiment::selection_mode_enum() const {
  return selection_mode_from_name(config_.selection_mode);
}

void Experiment::run_stage(const std::string& stage) {
  if (stage == "generate") return cmd_generate();
  if (stage == "score") return cmd_score();
  if (stage == "fit") return cmd_fit();
  if (stage == "run") return cmd_run();
  if (stage == "eval") return cmd_eval();
  if (stage == "ood") return cmd_ood();
  if (stage == "complexity") return cmd_complexity();
  if (stage == "report") return cmd_report();
  throw Error(ErrorKind::Config, "unknown stage: " + stage);
}

// ---------------------------------------------------------------------------
// generate

void Experiment::cmd_generate() {
  PipelineEnv e = env();
  std::vector<std::string> keys;
  std::size_t total = 0;
  std::size_t failed = 0;
  std::optional<Error> first_error;

  for (const auto& ds : config_.datasets) {
    for (const auto& [split, path] :
         {std::pair<std::string, std::string>{"train", ds.train}, {"test", ds.test}}) {
      auto examples = read_jsonl<QAExample>(config_.resolve(path));
      for (const auto& ex : examples) {
        ++total;
        std::string base = ds.name + "/" + split + "/" + ex.id;
        try {
          std::string no_ctx_prompt = make_prompt(e.few_shot, ex.question, "");
          e.gateway->complete(no_ctx_prompt, e.decode);
          auto hits = e.retriever->search(ex.question, e.context_k);
          std::string context = render_context(e, hits);
          e.gateway->complete(make_prompt(e.few_shot, ex.question, context), e.decode);
          e.gateway->sample_n(no_ctx_prompt, e.sample_decode);
        } catch (const Error& err) {
          ++failed;
          if (!first_error.has_value()) first_error = err;
          continue;
        }
        keys.push_back(base + "/no-context");
        keys.push_back(base + "/with-context");
        keys.push_back(base + "/samples");
      }
    }
  }

  std::sort(keys.begin(), keys.end());
  nlohmann::json manifest = {{"count", keys.size()}, {"keys", keys}};
  write_text_file_atomic(config_.out_path("generate_manifest.json"), manifest.dump(2) + "\n");

  if (failed > 0) {
    throw Error(first_error->kind(),
                "generate completed " + std::to_string(total - failed) + " of " +
                    std::to_string(total) + " questions; rerun to resume (" +
                    first_error->what() + ")");
  }
}

// ---------------------------------------------------------------------------
// score

void Experiment::cmd_score() {
  require_artifact(config_.out_path("generate_manifest.json"), "generate");
  PipelineEnv e = env();
  auto methods = config_.scored_methods();
  for (const auto& ds : config_.datasets) {
    ScoreContext ctx = score_context(ds, false);
    for (const auto& [split, path, feature_path] :
         {std::tuple<std::string, std::string, std::string>{"train", ds.train, ds.train_features},
          {"test", ds.test, ds.test_features}}) {
      auto examples = read_jsonl<QAExample>(config_.resolve(path));
      auto features = load_features(config_.resolve(feature_path));
      auto rows = build_score_rows(e, examples, methods, ctx, features);
      write_jsonl(config_.out_path("scores_" + ds.name + "_" + split + ".jsonl"), rows);
    }
  }
}

// ---------------------------------------------------------------------------
// fit

void Experiment::cmd_fit() {
  const SelectionMode mode = selection_mode_enum();
  const ThresholdMode thr_mode = threshold_mode_enum();

  for (const auto& ds : config_.datasets) {
    auto train_rows = load_scores(ds.name, "train");
    auto test_rows = load_scores(ds.name, "test");
    fs::create_directories(config_.out_path("models/" + ds.name));

    std::optional<FeatureStats> stats;
    if (config_.runs_hybrid()) {
      std::size_t half = train_rows.size() / 2;
      std::vector<std::map<std::string, double>> aux;
      for (std::size_t i = 0; i < half; ++i) {
        if (train_rows[i].error.empty()) aux.push_back(train_rows[i].scores);
      }
      stats = fit_feature_stats(config_.hybrid_manifest, aux);
      nlohmann::json sj = {{"manifest", stats->manifest},
                           {"mean", vector_to_json(stats->mean)},
                           {"stddev", vector_to_json(stats->stddev)}};
      write_text_file_atomic(config_.out_path("models/" + ds.name + "/hybrid_stats.json"),
                             sj.dump(2) + "\n");
    }

    for (const auto& method : config_.estimators) {
      DecisionTable full = classifier_slice(method, train_rows, stats);
      DecisionTable fit_part, eval_part;
      if (mode == SelectionMode::PaperFaithfulTest) {
        fit_part = full;
        eval_part = build_table(method, test_rows, stats);
      } else {
        std::tie(fit_part, eval_part) =
            holdout_split(full, derived_seed("holdout:" + ds.name + ":" + method));
      }

      std::string dir = config_.out_path("models/" + ds.name + "/" + method);
      fs::create_directories(dir);
      std::vector<DeciderModel> models;
      for (const auto& kind_name : config_.deciders) {
        DeciderKind kind = decider_kind_from_name(kind_name);
        // The threshold grid is scalar-only; it cannot gate a feature vector.
        if (kind == DeciderKind::Threshold && fit_part.feature_names.size() > 1) continue;
        DeciderModel model = fit_decider(
            kind, fit_part, derived_seed("fit:" + ds.name + ":" + method + ":" + kind_name),
            thr_mode);
        model.save(dir + "/" + kind_name + ".json");
        models.push_back(std::move(model));
      }
      if (models.empty()) {
        throw Error(ErrorKind::Config,
                    "no configured decider can fit " + method + " (threshold is scalar-only)");
      }
      auto [chosen, report] = select_best(models, eval_part, mode);
      nlohmann::json sel = {{"chosen_kind", decider_kind_name(chosen.kind)},
                            {"report", report}};
      write_text_file_atomic(dir + "/selection.json", sel.dump(2) + "\n");
    }
  }
}

// ---------------------------------------------------------------------------
// run

void Experiment::cmd_run() {
  PipelineEnv e = env();
  for (const auto& ds : config_.datasets) {
    auto examples = read_jsonl<QAExample>(config_.resolve(ds.test));

    struct StrategyCase {
      const char* name;
      Strategy strategy;
      RunRecord (*fn)(PipelineEnv&, const QAExample&);
    };
    const StrategyCase cases[] = {{"never", Strategy::Never, &run_never},
                                  {"always", Strategy::Always, &run_always},
                                  {"ideal", Strategy::Ideal, &run_ideal}};
    for (const auto& c : cases) {
      std::vector<RunRecord> records;
      records.reserve(examples.size());
      for (const auto& ex : examples) {
        try {
          records.push_back(c.fn(e, ex));
        } catch (const Error& err) {
          RunRecord rec;
          rec.example_id = ex.id;
          rec.strategy = c.strategy;
          rec.error = err.what();
          records.push_back(std::move(rec));
        }
      }
      write_jsonl(config_.out_path("runs_" + ds.name + "_" + std::string(c.name) + ".jsonl"),
                  records);
    }

    if (config_.estimators.empty()) continue;
    ScoreContext ctx = score_context(ds, config_.runs_hybrid());
    auto features = load_features(config_.resolve(ds.test_features));
    for (const auto& method : config_.estimators) {
      DeciderModel model = load_selected_model(ds.name, method);
      std::vector<RunRecord> records;
      records.reserve(examples.size());
      for (const auto& ex : examples) {
        std::optional<Eigen::VectorXd> f;
        auto it = features.find(ex.id);
        if (it != features.end()) f = it->second;
        try {
          records.push_back(run_adaptive(e, ex, method, model, ctx, f));
        } catch (const Error& err) {
          // A config-kind failure (manifest mismatch, missing stats) is
          // systemic; per-example degradation would just repeat it N times.
          if (err.kind() == ErrorKind::Config) throw;
          RunRecord rec;
          rec.example_id = ex.id;
          rec.strategy = Strategy::Adaptive;
          rec.error = err.what();
          records.push_back(std::move(rec));
        }
      }
      write_jsonl(config_.out_path("runs_" + ds.name + "_adaptive_" + method + ".jsonl"),
                  records);
    }
  }
}

// ---------------------------------------------------------------------------
// eval

void Experiment::cmd_eval() {
  MetricsReport rep;
  for (const auto& ds : config_.datasets) rep.datasets.push_back(ds.name);
  rep.methods = {"Never RAG", "Always RAG", "Ideal"};
  for (const auto& m : config_.estimators) rep.methods.push_back(m);
  rep.metrics = kMetricOrder;
  rep.ue_methods = config_.estimators;

  for (const auto& ds : config_.datasets) {
    auto test_rows = load_scores(ds.name, "test");
    std::map<std::string, const ScoreRow*> by_id;
    for (const auto& row : test_rows) by_id[row.example_id] = &row;

    std::map<std::string, std::map<std::string, std::optional<double>>> ds_values;

    auto qa_block = [&](const std::vector<RunRecord>& records,
                        std::map<std::string, std::optional<double>>& cells) {
      auto ok = ok_records(records);
      for (const auto& metric : kMetricOrder) cells[metric] = std::nullopt;
      if (ok.empty()) return ok;
      double in_acc = 0.0, em = 0.0, f1_sum = 0.0;
      for (const auto& r : ok) {
        in_acc += r.correct_in_acc;
        em += r.correct_em;
        f1_sum += r.f1;
      }
      const double n = static_cast<double>(ok.size());
      cells["InAcc"] = in_acc / n;
      cells["EM"] = em / n;
      cells["F1"] = f1_sum / n;
      Efficiency eff = efficiency(ok);
      cells["LMC"] = eff.lmc;
      cells["RC"] = eff.rc;
      return ok;
    };

    const std::pair<std::string, std::string> strategies[] = {
        {"never", "Never RAG"}, {"always", "Always RAG"}, {"ideal", "Ideal"}};
    for (const auto& [file_tag, display] : strategies) {
      std::string path = config_.out_path("runs_" + ds.name + "_" + file_tag + ".jsonl");
      require_artifact(path, "run");
      auto records = read_jsonl<RunRecord>(path);
      qa_block(records, ds_values[display]);
    }

    std::optional<FeatureStats> stats;
    std::optional<DeciderModel> hybrid_model;
    if (config_.runs_hybrid()) {
      stats = load_hybrid_stats(ds.name);
      hybrid_model = load_selected_model(ds.name, "hybrid");
    }

    for (const auto& method : config_.estimators) {
      std::string path = config_.out_path("runs_" + ds.name + "_adaptive_" + method + ".jsonl");
      require_artifact(path, "run");
      auto records = read_jsonl<RunRecord>(path);
      auto& cells = ds_values[method];
      auto ok = qa_block(records, cells);

      std::vector<int> y_hat, y_true;
      for (const auto& rec : ok) {
        auto it = by_id.find(rec.example_id);
        if (it == by_id.end() || !it->second->error.empty()) continue;
        y_hat.push_back(rec.decision);
        y_true.push_back(it->second->y);
      }
      if (!y_hat.empty()) {
        double agree = 0.0;
        for (std::size_t i = 0; i < y_hat.size(); ++i) agree += y_hat[i] == y_true[i] ? 1.0 : 0.0;
        cells["Acc"] = agree / static_cast<double>(y_hat.size());
        OverUnder ou = over_under_confidence(y_hat, y_true);
        cells["Over"] = ou.over_defined ? std::optional<double>(ou.over) : std::nullopt;
        cells["Under"] = ou.under_defined ? std::optional<double>(ou.under) : std::nullopt;
      }

      std::vector<double> scores;
      std::vector<int> labels;
      for (const auto& row : test_rows) {
        if (!row.error.empty()) continue;
        double v = 0.0;
        if (method == "hybrid") {
          Eigen::VectorXd x = assemble_hybrid(row.example_id, row.scores, *stats).values;
          v = hybrid_model->decision_value(x);
        } else {
          auto it = row.scores.find(method);
          if (it == row.scores.end()) continue;
          v = it->second;
        }
        scores.push_back(v);
        labels.push_back(row.y);
      }
      if (scores.size() >= 2) {
        cells["AUC"] = roc_auc(scores, labels);
        std::vector<double> y_double(labels.begin(), labels.end());
        cells["Spearman"] = spearman(scores, y_double);
      }
    }
    rep.values.push_back(std::move(ds_values));
  }

  write_text_file_atomic(config_.out_path("metrics.json"), metrics_to_json(rep).dump(2) + "\n");
  write_text_file_atomic(config_.out_path("metrics.csv"), report_csv(rep));
  write_text_file_atomic(config_.out_path("metrics.md"), report_markdown(rep));

  if (rep.ue_methods.size() >= 2) {
    for (const auto& metric : rep.metrics) {
      std::vector<std::map<std::string, std::optional<double>>> per_dataset;
      for (const auto& ds_values : rep.values) {
        std::map<std::string, std::optional<double>> row;
        for (const auto& m : rep.ue_methods) {
          auto it = ds_values.find(m);
          row[m] = it == ds_values.end() ? std::nullopt : it->second.at(metric);
        }
        per_dataset.push_back(std::move(row));
      }
      RankTable table = rank_table(per_dataset, rep.ue_methods, metric_higher_better(metric));
      std::string csv = "dataset,method,rank\n";
      for (std::size_t d = 0; d < rep.datasets.size(); ++d) {
        for (std::size_t m = 0; m < table.methods.size(); ++m) {
          csv += rep.datasets[d] + "," + table.methods[m] + ",";
          if (table.ranks[d][m].has_value()) csv += fmt_g17(*table.ranks[d][m]);
          csv += "\n";
        }
      }
      for (std::size_t m = 0; m < table.methods.size(); ++m) {
        csv += "average," + table.methods[m] + ",";
        if (table.average[m].has_value()) csv += fmt_g17(*table.average[m]);
        csv += "\n";
      }
      write_text_file_atomic(config_.out_path("ranks_" + lower(metric) + ".csv"), csv);
    }
  }

  std::vector<std::vector<std::vector<std::optional<double>>>> corr_values;
  for (const auto& ds_values : rep.values) {
    std::vector<std::vector<std::optional<double>>> rows;
    for (const auto& m : rep.ue_methods) {
      std::vector<std::optional<double>> row;
      auto it = ds_values.find(m);
      for (const auto& metric : rep.metrics) {
        row.push_back(it == ds_values.end() ? std::nullopt : it->second.at(metric));
      }
      rows.push_back(std::move(row));
    }
    corr_values.push_back(std::move(rows));
  }
  MetricCorrelation corr = metric_correlation(rep.metrics, corr_values);
  std::string csv = "metric";
  for (const auto& m : corr.metrics) csv += "," + m;
  csv += "\n";
  for (std::size_t i = 0; i < corr.metrics.size(); ++i) {
    csv += corr.metrics[i];
    for (std::size_t k = 0; k < corr.metrics.size(); ++k) {
      csv += ",";
      if (corr.rho[i][k].has_value()) csv += fmt_g17(*corr.rho[i][k]);
    }
    csv += "\n";
  }
  write_text_file_atomic(config_.out_path("metric_correlation.csv"), csv);
}

// ---------------------------------------------------------------------------
// ood

void Experiment::cmd_ood() {
  if (config_.datasets.size() < 2) {
    throw Error(ErrorKind::Config, "the ood stage needs at least two datasets");
  }
  if (config_.estimators.empty()) {
    throw Error(ErrorKind::Config, "the ood stage needs at least one estimator");
  }
  const std::size_t d = config_.datasets.size();
  std::vector<std::string> names;
  std::vector<std::vector<ScoreRow>> test_rows;
  for (const auto& ds : config_.datasets) {
    names.push_back(ds.name);
    test_rows.push_back(load_scores(ds.name, "test"));
  }

  // Off-diagonal transferred values per method feed the rank statistics.
  const std::size_t blocks = d * (d - 1);
  Eigen::MatrixXd stat_matrix(static_cast<Eigen::Index>(blocks),
                              static_cast<Eigen::Index>(config_.estimators.size()));

  for (std::size_t mi = 0; mi < config_.estimators.size(); ++mi) {
    const std::string& method = config_.estimators[mi];
    Eigen::MatrixXd values(d, d);
    for (std::size_t i = 0; i < d; ++i) {
      DeciderModel model = load_selected_model(names[i], method);
      std::optional<FeatureStats> stats;
      if (method == "hybrid") stats = load_hybrid_stats(names[i]);
      for (std::size_t j = 0; j < d; ++j) {
        DecisionTable table = build_table(method, test_rows[j], stats);
        values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
            simulated_in_accuracy(model, table);
      }
    }
    auto cells = ood_matrix(names, values);
    std::string csv = "train,test,in_domain,transferred,change_pct\n";
    for (const auto& cell : cells) {
      csv += cell.train_dataset + "," + cell.test_dataset + "," + fmt_g17(cell.in_domain) + "," +
             fmt_g17(cell.transferred) + ",";
      if (cell.change_pct.has_value()) csv += fmt_g17(*cell.change_pct);
      csv += "\n";
    }
    write_text_file_atomic(config_.out_path("ood_" + method + ".csv"), csv);

    Eigen::Index block = 0;
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        if (i == j) continue;
        // Negated so rank 1 is the best method (higher In-Accuracy).
        stat_matrix(block++, static_cast<Eigen::Index>(mi)) =
            -values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      }
    }
  }

  nlohmann::json stats_json;
  stats_json["blocks"] = "ordered train/test dataset pairs, diagonal excluded";
  stats_json["ranking"] = "smaller rank is better (ranked on negated In-Accuracy)";
  if (config_.estimators.size() >= 2) {
    FriedmanResult fr = friedman(stat_matrix);
    stats_json["friedman"] = {{"statistic", fr.statistic}, {"p_value", fr.p_value},
                              {"n", fr.n},                 {"k", fr.k},
                              {"all_tied", fr.all_tied},   {"methods", config_.estimators},
                              {"rank_means", fr.rank_means}};
    if (config_.estimators.size() <= 10) {
      NemenyiResult nem = nemenyi(fr.rank_means, fr.n);
      nlohmann::json q = nlohmann::json::array();
      for (Eigen::Index i = 0; i < nem.q.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index k = 0; k < nem.q.cols(); ++k) row.push_back(nem.q(i, k));
        q.push_back(std::move(row));
      }
      stats_json["nemenyi"] = {{"q", std::move(q)}, {"p_brackets", nem.p_bracket}};
    } else {
      stats_json["nemenyi"] = "skipped: critical tables cover at most 10 methods";
    }
  } else {
    stats_json["note"] = "rank statistics need at least two estimators";
  }
  write_text_file_atomic(config_.out_path("ood_stats.json"), stats_json.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// complexity

void Experiment::cmd_complexity() {
  const SelectionMode mode = selection_mode_enum();
  nlohmann::json summary;
  std::vector<std::string> notes;

  bool has_logreg = std::find(config_.deciders.begin(), config_.deciders.end(), "logreg") !=
                    config_.deciders.end();
  bool has_tree =
      std::find(config_.deciders.begin(), config_.deciders.end(), "tree") != config_.deciders.end();

  std::string rad_csv = "dataset,method,class,n,draws,estimate,stderr,baseline,normalized,low_draws\n";
  nlohmann::json rad_rows = nlohmann::json::array();
  std::string sharp_csv = "dataset,method,n,lambda_max,log10_lambda_max\n";
  nlohmann::json sharp_rows = nlohmann::json::array();

  for (const auto& ds : config_.datasets) {
    auto train_rows = load_scores(ds.name, "train");
    std::optional<FeatureStats> stats;
    if (config_.runs_hybrid()) stats = load_hybrid_stats(ds.name);

    for (const auto& method : config_.estimators) {
      DecisionTable full = classifier_slice(method, train_rows, stats);
      DecisionTable fit_part = full;
      if (mode == SelectionMode::Holdout) {
        fit_part = holdout_split(full, derived_seed("holdout:" + ds.name + ":" + method)).first;
      }

      Eigen::MatrixXd x = full.feature_matrix();
      for (const auto& cls_name : config_.rademacher_classes) {
        if (cls_name == "threshold" && x.cols() > 1) {
          notes.push_back("rademacher threshold class skipped for " + ds.name + "/" + method +
                          ": scalar-only");
          continue;
        }
        RademacherResult res = rademacher_estimate(
            x, rademacher_class_from_name(cls_name), config_.rademacher_draws,
            derived_seed("rademacher:" + ds.name + ":" + method + ":" + cls_name));
        rad_csv += ds.name + "," + method + "," + cls_name + "," + std::to_string(res.n) + "," +
                   std::to_string(res.draws) + "," + fmt_g17(res.estimate) + "," +
                   fmt_g17(res.stderr_) + "," + fmt_g17(res.baseline) + "," +
                   fmt_g17(res.normalized) + "," + (res.low_draws ? "1" : "0") + "\n";
        rad_rows.push_back({{"dataset", ds.name},
                            {"method", method},
                            {"class", cls_name},
                            {"n", res.n},
                            {"draws", res.draws},
                            {"estimate", res.estimate},
                            {"stderr", res.stderr_},
                            {"baseline", res.baseline},
                            {"normalized", res.normalized},
                            {"low_draws", res.low_draws}});
      }

      if (has_logreg) {
        try {
          DeciderModel model =
              DeciderModel::load(config_.out_path("models/" + ds.name + "/" + method +
                                                  "/logreg.json"));
          SharpnessResult res = sharpness(model, fit_part);
          sharp_csv += ds.name + "," + method + "," + std::to_string(res.n) + "," +
                       fmt_g17(res.lambda_max) + "," + fmt_g17(res.log10_lambda_max) + "\n";
          sharp_rows.push_back({{"dataset", ds.name},
                                {"method", method},
                                {"n", res.n},
                                {"lambda_max", res.lambda_max},
                                {"log10_lambda_max", res.log10_lambda_max}});
        } catch (const Error& err) {
          notes.push_back("sharpness skipped for " + ds.name + "/" + method + ": " + err.what());
        }
      }
    }

    if (config_.runs_hybrid() && (has_logreg || has_tree)) {
      std::string kind = has_logreg ? "logreg" : "tree";
      DeciderModel model = DeciderModel::load(
          config_.out_path("models/" + ds.name + "/hybrid/" + kind + ".json"));
      DecisionTable full = classifier_slice("hybrid", train_rows, stats);
      DecisionTable fit_part = full;
      if (mode == SelectionMode::Holdout) {
        fit_part = holdout_split(full, derived_seed("holdout:" + ds.name + ":hybrid")).first;
      }
      FeatureImportance imp = hybrid_feature_importance(model, fit_part);
      nlohmann::json ranked = nlohmann::json::array();
      for (const auto& [name, weight] : imp.ranked) {
        ranked.push_back({{"feature", name}, {"weight", weight}});
      }
      nlohmann::json collinear = nlohmann::json::array();
      for (const auto& [a, b] : imp.collinear) collinear.push_back({a, b});
      nlohmann::json ij = {{"model", kind},
                           {"ranked", std::move(ranked)},
                           {"degenerate", imp.degenerate},
                           {"collinear", std::move(collinear)}};
      write_text_file_atomic(config_.out_path("feature_importance_" + ds.name + ".json"),
                             ij.dump(2) + "\n");
    }
  }
  if (!has_logreg) notes.push_back("sharpness skipped: logreg not among the deciders");
  if (config_.runs_hybrid() && !has_logreg && !has_tree) {
    notes.push_back("feature importance skipped: needs the logreg or tree decider");
  }

  write_text_file_atomic(config_.out_path("complexity_rademacher.csv"), rad_csv);
  if (has_logreg) {
    write_text_file_atomic(config_.out_path("complexity_sharpness.csv"), sharp_csv);
  }

  nlohmann::json sens_rows = nlohmann::json::array();
  std::vector<std::string> sens_methods;
  std::vector<std::vector<std::vector<double>>> sens_values;
  if (config_.deciders.size() >= 2) {
    for (const auto& method : config_.estimators) {
      std::vector<std::vector<double>> per_ds;
      bool enough = true;
      for (const auto& ds : config_.datasets) {
        std::string sel_path =
            config_.out_path("models/" + ds.name + "/" + method + "/selection.json");
        require_artifact(sel_path, "fit");
        nlohmann::json sel = nlohmann::json::parse(read_text_file(sel_path));
        SelectionReport report = sel.at("report").get<SelectionReport>();
        std::vector<double> per_classifier;
        for (const auto& entry : report.entries) per_classifier.push_back(entry.in_accuracy);
        enough = enough && per_classifier.size() >= 2;
        per_ds.push_back(std::move(per_classifier));
      }
      if (!enough) {
        notes.push_back("classifier sensitivity skipped for " + method +
                        ": fewer than 2 fitted deciders");
        continue;
      }
      sens_methods.push_back(method);
      sens_values.push_back(std::move(per_ds));
    }
  }
  if (!sens_methods.empty()) {
    auto rows = classifier_sensitivity(sens_methods, sens_values);
    std::string csv = "method,drop,mean_rank,max_rank,rank_difference\n";
    for (const auto& row : rows) {
      csv += row.method + "," + fmt_g17(row.drop) + "," + fmt_g17(row.mean_rank) + "," +
             fmt_g17(row.max_rank) + "," + fmt_g17(row.rank_difference) + "\n";
      sens_rows.push_back({{"method", row.method},
                           {"drop", row.drop},
                           {"mean_rank", row.mean_rank},
                           {"max_rank", row.max_rank},
                           {"rank_difference", row.rank_difference}});
    }
    write_text_file_atomic(config_.out_path("classifier_sensitivity.csv"), csv);
  } else if (config_.deciders.size() < 2) {
    notes.push_back("classifier sensitivity skipped: needs at least 2 deciders");
  }

  std::sort(notes.begin(), notes.end());
  summary["rademacher"] = std::move(rad_rows);
  summary["sharpness"] = std::move(sharp_rows);
  summary["classifier_sensitivity"] = std::move(sens_rows);
  summary["notes"] = notes;
  write_text_file_atomic(config_.out_path("complexity.json"), summary.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// report

void Experiment::cmd_report() {
  std::string metrics_path = config_.out_path("metrics.json");
  require_artifact(metrics_path, "eval");
  MetricsReport rep = metrics_from_json(nlohmann::json::parse(read_text_file(metrics_path)));

  MetricsReport table1 = rep;
  table1.metrics = {"InAcc", "EM", "F1", "LMC", "RC"};
  MetricsReport table2 = rep;
  table2.metrics = {"Acc", "AUC", "Spearman", "Over", "Under"};
  if (!rep.ue_methods.empty()) table2.methods = rep.ue_methods;

  std::string md = "# Experiment report\n\n";
  md += "Decider selection mode: " + config_.selection_mode + ".";
  if (selection_mode_enum() == SelectionMode::PaperFaithfulTest) {
    md += " Selection scored on the test split; test labels leak into the model choice.";
  }
  md += "\n\n## Answer quality and efficiency\n\n";
  md += report_markdown(table1);
  md += "\n## Self-knowledge\n\n";
  md += report_markdown(table2);

  md += "\n## Artifacts\n\n";
  std::vector<std::string> artifacts;
  for (const auto& entry : fs::directory_iterator(config_.resolve(config_.output_dir))) {
    if (!entry.is_regular_file()) continue;
    std::string name = entry.path().filename().string();
    if (name == "report.md") continue;
    std::string ext = entry.path().extension().string();
    if (ext == ".csv" || ext == ".json" || ext == ".md") artifacts.push_back(name);
  }
  std::sort(artifacts.begin(), artifacts.end());
  for (const auto& a : artifacts) md += "- " + a + "\n";

  write_text_file_atomic(config_.out_path("report.md"), md);
}

}  // namespace ragate
