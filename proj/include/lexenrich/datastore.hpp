#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lexenrich/types.hpp"

namespace lexenrich {

/// A named dense float32 array. `data` is row-major.
struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<float> data;

  /// Product of the shape entries; 0 for an empty shape.
  std::int64_t declared_elements() const;
};

/// Named float32 tensors plus free-form metadata.
///
/// On disk a bundle is a pair of files sharing a base path:
///   <base>.manifest  JSON: byte order, tensor names, shapes, offsets, metadata
///   <base>.bin       concatenated little-endian float32 payloads
/// Tensors keep insertion order, which is also their payload order.
struct TensorBundle {
  std::vector<std::pair<std::string, Tensor>> tensors;
  nlohmann::json metadata = nlohmann::json::object();

  void add(std::string name, std::vector<std::int64_t> shape, std::vector<float> data);
  bool contains(std::string_view name) const;
  const Tensor& at(std::string_view name) const;
  const Tensor* find(std::string_view name) const;

  /// Throws ValidationError naming the first offending tensor.
  void validate() const;
};

/// Strips a trailing ".manifest" or ".bin" so either file of a pair can be
/// used to name the bundle.
std::filesystem::path bundle_base(const std::filesystem::path& path);
std::filesystem::path manifest_path(const std::filesystem::path& path);
std::filesystem::path payload_path(const std::filesystem::path& path);

void write_bundle(const TensorBundle& bundle, const std::filesystem::path& path);

struct ReadOptions {
  bool require_finite = false;
};
TensorBundle read_bundle(const std::filesystem::path& path, ReadOptions options = {});

struct CorpusRecord {
  std::string id;
  std::string title;
  std::string text;
};

struct QueryRecord {
  std::string id;
  std::string text;
  std::vector<std::string> answers;
  std::vector<std::string> gold_pids;
};

/// Title and text joined with a space; the text seen by every tokenizer-based stage.
std::string passage_text(const CorpusRecord& record);

std::vector<CorpusRecord> load_corpus(const std::filesystem::path& path);
std::vector<QueryRecord> load_queries(const std::filesystem::path& path);
void write_corpus(const std::vector<CorpusRecord>& records, const std::filesystem::path& path);
void write_queries(const std::vector<QueryRecord>& records, const std::filesystem::path& path);

enum class Similarity { dot, cosine };

std::string_view to_string(Similarity similarity);
Similarity parse_similarity(std::string_view tag);

/// Id-addressed dense vectors. Rows follow `ids`.
struct EmbeddingStore {
  std::vector<std::string> ids;
  RowMatrixF vectors;
  Similarity similarity = Similarity::dot;

  std::size_t size() const { return ids.size(); }
  Eigen::Index dim() const { return vectors.cols(); }

  /// Row index of `id`, or nullopt. Linear scan; callers on hot paths should
  /// build an IdIndex instead.
  std::optional<std::size_t> find(std::string_view id) const;

  /// Throws ValidationError on id/row mismatch, empty or duplicate ids and
  /// non-finite rows (message lists the offending row indices).
  void validate() const;
};

/// Hash map from id to row position.
class IdIndex {
 public:
  IdIndex() = default;
  explicit IdIndex(const std::vector<std::string>& ids);
  std::optional<std::size_t> find(std::string_view id) const;

 private:
  std::unordered_map<std::string, std::size_t> positions_;
};

/// Embeddings bundle: tensor "vectors" [n, d], metadata "similarity", and a
/// sidecar "<base>.ids" text file with one id per line in row order.
EmbeddingStore load_embeddings(const std::filesystem::path& path);
void write_embeddings(const EmbeddingStore& store, const std::filesystem::path& path);

}  // namespace lexenrich
