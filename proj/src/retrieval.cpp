#include "ragate/retrieval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <thread>

#include <httplib.h>

#include "ragate/text.hpp"

namespace ragate {

void to_json(nlohmann::json& j, const SearchHit& v) {
  j = {{"doc_id", v.doc_id}, {"score", v.score}, {"rank", v.rank}};
}

void from_json(const nlohmann::json& j, SearchHit& v) {
  j.at("doc_id").get_to(v.doc_id);
  j.at("score").get_to(v.score);
  v.rank = j.value("rank", 0);
}

Bm25Index Bm25Index::build(std::vector<Document> corpus) {
  if (corpus.empty()) throw Error(ErrorKind::Data, "cannot index an empty corpus");
  Bm25Index index;
  index.docs_ = std::move(corpus);
  double total_len = 0.0;
  for (std::size_t d = 0; d < index.docs_.size(); ++d) {
    const Document& doc = index.docs_[d];
    auto [it, inserted] = index.by_id_.emplace(doc.doc_id, d);
    if (!inserted) throw Error(ErrorKind::Data, "duplicate doc_id: " + doc.doc_id);
    std::vector<std::string> tokens = analyze(doc.body);
    index.doc_len_.push_back(static_cast<double>(tokens.size()));
    total_len += static_cast<double>(tokens.size());
    std::unordered_map<std::string, double> tf;
    for (const auto& t : tokens) tf[t] += 1.0;
    for (const auto& [term, f] : tf) {
      index.postings_[term].push_back({static_cast<std::uint32_t>(d), f});
    }
  }
  index.avgdl_ = total_len / static_cast<double>(index.docs_.size());
  for (auto& [term, list] : index.postings_) {
    std::sort(list.begin(), list.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
  }
  return index;
}

std::vector<SearchHit> Bm25Index::search(const std::string& query, int k) const {
  std::vector<SearchHit> hits;
  if (k <= 0) return hits;
  std::vector<std::string> terms = analyze(query);
  if (terms.empty()) return hits;

  const double n_docs = static_cast<double>(docs_.size());
  std::unordered_map<std::uint32_t, double> acc;
  for (const auto& term : terms) {
    auto it = postings_.find(term);
    if (it == postings_.end()) continue;
    const double n_t = static_cast<double>(it->second.size());
    const double idf = std::log(1.0 + (n_docs - n_t + 0.5) / (n_t + 0.5));
    for (const auto& [d, f] : it->second) {
      const double norm = kK1 * (1.0 - kB + kB * doc_len_[d] / avgdl_);
      acc[d] += idf * f * (kK1 + 1.0) / (f + norm);
    }
  }

  hits.reserve(acc.size());
  for (const auto& [d, score] : acc) {
    hits.push_back({docs_[d].doc_id, score, 0});
  }
  std::sort(hits.begin(), hits.end(), [](const SearchHit& a, const SearchHit& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.doc_id < b.doc_id;
  });
  if (static_cast<int>(hits.size()) > k) hits.resize(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < hits.size(); ++i) hits[i].rank = static_cast<int>(i) + 1;
  return hits;
}

const Document* Bm25Index::find(const std::string& doc_id) const {
  auto it = by_id_.find(doc_id);
  return it == by_id_.end() ? nullptr : &docs_[it->second];
}

std::size_t Bm25Index::doc_frequency(const std::string& term) const {
  auto it = postings_.find(term);
  return it == postings_.end() ? 0 : it->second.size();
}

void Bm25Index::save(const std::string& path) const {
  // The index is a pure function of the corpus, so persisting the documents
  // is enough; load() rebuilds postings deterministically.
  nlohmann::json j = {{"format", "ragate-bm25-v1"}, {"documents", docs_}};
  write_text_file_atomic(path, j.dump());
}

Bm25Index Bm25Index::load(const std::string& path) {
  nlohmann::json j = nlohmann::json::parse(read_text_file(path));
  if (j.value("format", "") != "ragate-bm25-v1") {
    throw Error(ErrorKind::Data, path + " is not a ragate index file");
  }
  return build(j.at("documents").get<std::vector<Document>>());
}

std::vector<SearchHit> EmbeddedRetriever::search(const std::string& query, int k) {
  calls_.fetch_add(1);
  return index_.search(query, k);
}

// ---------------------------------------------------------------------------
// Remote backend

namespace {

std::string url_encode(const std::string& value) {
  static const char* hex = "0123456789ABCDEF";
  std::string out;
  for (unsigned char c : value) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
      out.push_back(static_cast<char>(c));
    } else {
      out.push_back('%');
      out.push_back(hex[c >> 4]);
      out.push_back(hex[c & 0xf]);
    }
  }
  return out;
}

std::pair<std::string, std::string> split_endpoint(const std::string& base) {
  std::size_t scheme = base.find("://");
  std::size_t host_start = scheme == std::string::npos ? 0 : scheme + 3;
  std::size_t slash = base.find('/', host_start);
  if (slash == std::string::npos) return {base, ""};
  std::string prefix = base.substr(slash);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {base.substr(0, slash), prefix};
}

}  // namespace

RemoteRetriever::RemoteRetriever(std::string endpoint, std::vector<Document> docstore,
                                 int max_attempts, int retry_delay_ms)
    : endpoint_(std::move(endpoint)), max_attempts_(max_attempts),
      retry_delay_ms_(retry_delay_ms) {
  for (auto& doc : docstore) {
    std::string id = doc.doc_id;
    docs_.emplace(std::move(id), std::move(doc));
  }
}

std::vector<SearchHit> RemoteRetriever::search(const std::string& query, int k) {
  calls_.fetch_add(1);
  if (k <= 0) return {};
  auto [root, prefix] = split_endpoint(endpoint_);
  const std::string path =
      prefix + "/search?q=" + url_encode(query) + "&k=" + std::to_string(k);
  std::string last_error;
  for (int attempt = 1; attempt <= max_attempts_; ++attempt) {
    httplib::Client client(root);
    auto res = client.Get(path);
    if (res && res->status == 200) {
      try {
        nlohmann::json j = nlohmann::json::parse(res->body);
        auto hits = j.at("hits").get<std::vector<SearchHit>>();
        for (std::size_t i = 0; i < hits.size(); ++i) hits[i].rank = static_cast<int>(i) + 1;
        return hits;
      } catch (const std::exception& e) {
        last_error = std::string("bad JSON from search service: ") + e.what();
      }
    } else {
      last_error = res ? "status " + std::to_string(res->status)
                       : "transport error " + httplib::to_string(res.error());
    }
    if (attempt < max_attempts_ && retry_delay_ms_ > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(retry_delay_ms_ * attempt));
    }
  }
  throw Error(ErrorKind::Transport, "remote search failed after " +
                                        std::to_string(max_attempts_) + " attempts: " + last_error);
}

const Document* RemoteRetriever::find(const std::string& doc_id) const {
  auto it = docs_.find(doc_id);
  return it == docs_.end() ? nullptr : &it->second;
}

}  // namespace ragate
