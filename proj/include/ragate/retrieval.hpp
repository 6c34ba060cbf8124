#pragma once

// Sparse retrieval. The embedded index is a plain Okapi BM25 over the shared
// analyzer (k1 = 1.2, b = 0.75, IDF(t) = ln(1 + (N - n_t + 0.5)/(n_t + 0.5))).
// Scores sum over query-token occurrences; ties rank by ascending doc_id.
// A remote backend with the same GET /search?q=..&k=.. contract can stand in
// for the embedded index; documents still come from the local corpus file.

#include <atomic>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "ragate/core.hpp"

namespace ragate {

struct SearchHit {
  std::string doc_id;
  double score = 0.0;
  int rank = 0;  // 1-based
};

void to_json(nlohmann::json& j, const SearchHit& v);
void from_json(const nlohmann::json& j, SearchHit& v);

class Bm25Index {
 public:
  static constexpr double kK1 = 1.2;
  static constexpr double kB = 0.75;

  /// Builds from a corpus; throws on an empty corpus or a duplicate doc_id.
  static Bm25Index build(std::vector<Document> corpus);

  std::vector<SearchHit> search(const std::string& query, int k) const;

  std::size_t size() const { return docs_.size(); }
  double avgdl() const { return avgdl_; }
  const std::vector<Document>& documents() const { return docs_; }
  const Document* find(const std::string& doc_id) const;
  /// Number of postings (documents containing the term).
  std::size_t doc_frequency(const std::string& term) const;

  void save(const std::string& path) const;
  static Bm25Index load(const std::string& path);

 private:
  std::vector<Document> docs_;
  std::vector<double> doc_len_;
  double avgdl_ = 0.0;
  std::unordered_map<std::string, std::vector<std::pair<std::uint32_t, double>>> postings_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

/// Search backends the pipeline can swap: embedded index or remote service.
class Retriever {
 public:
  virtual ~Retriever() = default;
  virtual std::vector<SearchHit> search(const std::string& query, int k) = 0;
  virtual const Document* find(const std::string& doc_id) const = 0;
  long retrieval_calls() const { return calls_.load(); }

 protected:
  std::atomic<long> calls_{0};
};

class EmbeddedRetriever : public Retriever {
 public:
  explicit EmbeddedRetriever(Bm25Index index) : index_(std::move(index)) {}
  std::vector<SearchHit> search(const std::string& query, int k) override;
  const Document* find(const std::string& doc_id) const override { return index_.find(doc_id); }
  const Bm25Index& index() const { return index_; }

 private:
  Bm25Index index_;
};

class RemoteRetriever : public Retriever {
 public:
  /// `docstore` supplies passage text for hits; the remote service returns ids.
  RemoteRetriever(std::string endpoint, std::vector<Document> docstore, int max_attempts = 3,
                  int retry_delay_ms = 50);
  std::vector<SearchHit> search(const std::string& query, int k) override;
  const Document* find(const std::string& doc_id) const override;

 private:
  std::string endpoint_;
  std::unordered_map<std::string, Document> docs_;
  int max_attempts_;
  int retry_delay_ms_;
};

}  // namespace ragate
