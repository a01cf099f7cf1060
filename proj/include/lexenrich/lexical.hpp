#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "lexenrich/datastore.hpp"
#include "lexenrich/types.hpp"

namespace lexenrich {

/// Bijection between token ids [0, size) and surface strings. Continuation
/// pieces carry a "##" prefix.
class Vocabulary {
 public:
  /// Special tokens are the bracketed markers ([PAD], [UNK], [CLS], [SEP],
  /// [MASK], [unusedN]) and their angle-bracket counterparts (<s>, </s>,
  /// <pad>, <unk>, <mask>). The vocabulary must contain [UNK] or <unk>.
  explicit Vocabulary(std::vector<std::string> tokens);

  /// One token per line; the 0-based line number is the id.
  static Vocabulary from_file(const std::filesystem::path& path);

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(TokenId id) const;
  std::optional<TokenId> find(std::string_view token) const;
  TokenId unknown_id() const { return unknown_id_; }
  bool is_special(TokenId id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
  std::vector<bool> special_;
  TokenId unknown_id_ = -1;
};

/// Unicode general categories P* and S*, for the ranges this tokenizer knows.
bool is_punctuation(char32_t cp);

/// True when every code point of `text` (ignoring a leading "##") is punctuation.
bool is_punctuation_only(std::string_view text);

/// Lowercases and splits on whitespace and punctuation; every punctuation
/// character and every CJK ideograph becomes its own word.
std::vector<std::string> split_words(std::string_view text);

/// Greedy longest-prefix wordpiece segmentation of split_words(text). Words
/// that cannot be segmented, or that exceed 100 code points, map to the
/// unknown id.
std::vector<TokenId> tokenize(const Vocabulary& vocab, std::string_view text);

class StopList {
 public:
  StopList() = default;
  explicit StopList(std::vector<std::string> words);
  static StopList from_file(const std::filesystem::path& path);

  bool contains(std::string_view word) const { return words_.count(std::string(word)) > 0; }
  std::size_t size() const { return words_.size(); }

 private:
  std::unordered_set<std::string> words_;
};

/// Per-id mask of tokens that count as content: not special, not in the stop
/// list, not punctuation-only.
class ContentFilter {
 public:
  ContentFilter(const Vocabulary& vocab, const StopList& stoplist);

  bool is_content(TokenId id) const { return content_[static_cast<std::size_t>(id)]; }
  const Vocabulary& vocab() const { return *vocab_; }

 private:
  const Vocabulary* vocab_;
  std::vector<bool> content_;
};

enum class TokenOrigin { query, passage };

/// Deduplicated content token ids, sorted ascending.
struct TokenSet {
  std::vector<TokenId> ids;
  TokenOrigin origin = TokenOrigin::query;

  bool contains(TokenId id) const;
  bool empty() const { return ids.empty(); }
  std::size_t size() const { return ids.size(); }
};

TokenSet content_token_set(const ContentFilter& filter, std::string_view text, TokenOrigin origin);
TokenSet content_token_set(const Vocabulary& vocab, const StopList& stoplist, std::string_view text,
                           TokenOrigin origin = TokenOrigin::query);

TokenSet intersect(const TokenSet& a, const TokenSet& b);
TokenSet difference(const TokenSet& a, const TokenSet& b);

/// Smoothed inverse document frequency, ln(1 + (N - df + 0.5) / (df + 0.5)).
/// Always positive; strictly decreasing in df.
struct IdfTable {
  std::int64_t documents = 0;
  std::vector<std::int64_t> df;
  std::vector<double> idf;

  double weight(TokenId id) const { return idf[static_cast<std::size_t>(id)]; }

  static double formula(std::int64_t documents, std::int64_t df);

  /// Tensors `idf` [V], `N` [1], `df` [V].
  TensorBundle to_bundle() const;
  static IdfTable from_bundle(const TensorBundle& bundle);
};

/// Document frequencies counted over `documents` (each a token stream);
/// tokens never seen get df = 0. Throws ValidationError on an empty corpus.
IdfTable compute_idf(std::span<const std::vector<TokenId>> documents, std::size_t vocab_size);

}  // namespace lexenrich
