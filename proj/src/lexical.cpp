#include "lexenrich/lexical.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <regex>

#include "lexenrich/error.hpp"

namespace lexenrich {

namespace {

constexpr std::size_t kMaxWordChars = 100;

struct Range {
  char32_t lo, hi;
};

// P* and S* code points outside ASCII. Sorted, non-overlapping.
constexpr Range kPunctRanges[] = {
    {0x00A1, 0x00A9}, {0x00AB, 0x00AC}, {0x00AE, 0x00B1}, {0x00B4, 0x00B4},
    {0x00B6, 0x00B8}, {0x00BB, 0x00BB}, {0x00BF, 0x00BF}, {0x00D7, 0x00D7},
    {0x00F7, 0x00F7}, {0x02C2, 0x02C5}, {0x02D2, 0x02DF}, {0x037E, 0x037E},
    {0x0387, 0x0387}, {0x055A, 0x055F}, {0x0589, 0x058A}, {0x05BE, 0x05BE},
    {0x05C0, 0x05C0}, {0x05C3, 0x05C3}, {0x05C6, 0x05C6}, {0x05F3, 0x05F4},
    {0x060C, 0x060D}, {0x061B, 0x061B}, {0x061F, 0x061F}, {0x066A, 0x066D},
    {0x06D4, 0x06D4}, {0x0964, 0x0965}, {0x0970, 0x0970}, {0x0E4F, 0x0E4F},
    {0x0E5A, 0x0E5B}, {0x2010, 0x2027}, {0x2030, 0x205E}, {0x207A, 0x207E},
    {0x208A, 0x208E}, {0x20A0, 0x20CF}, {0x2100, 0x2101}, {0x2103, 0x2106},
    {0x2108, 0x2109}, {0x2114, 0x2114}, {0x2116, 0x2118}, {0x211E, 0x2123},
    {0x2125, 0x2125}, {0x2127, 0x2127}, {0x2129, 0x2129}, {0x212E, 0x212E},
    {0x2190, 0x2426}, {0x2440, 0x244A}, {0x249C, 0x24E9}, {0x2500, 0x2775},
    {0x2794, 0x2BFF}, {0x2E00, 0x2E7F}, {0x3001, 0x3004}, {0x3008, 0x3020},
    {0x3030, 0x3030}, {0x303D, 0x303F}, {0xFE10, 0xFE19}, {0xFE30, 0xFE6B},
    {0xFF01, 0xFF0F}, {0xFF1A, 0xFF20}, {0xFF3B, 0xFF40}, {0xFF5B, 0xFF65},
    {0xFFE0, 0xFFEE}, {0x1F000, 0x1FAFF},
};

bool is_whitespace(char32_t cp) {
  return cp == ' ' || cp == '\t' || cp == '\n' || cp == '\r' || cp == 0x0B || cp == 0x0C ||
         cp == 0x00A0 || cp == 0x1680 || (cp >= 0x2000 && cp <= 0x200A) || cp == 0x2028 ||
         cp == 0x2029 || cp == 0x202F || cp == 0x205F || cp == 0x3000;
}

bool is_control(char32_t cp) {
  return (cp < 0x20 && !is_whitespace(cp)) || cp == 0x7F || (cp >= 0x80 && cp < 0xA0) ||
         cp == 0xFFFD || cp == 0x200B || cp == 0xFEFF;
}

bool is_cjk(char32_t cp) {
  return (cp >= 0x4E00 && cp <= 0x9FFF) || (cp >= 0x3400 && cp <= 0x4DBF) ||
         (cp >= 0x20000 && cp <= 0x2A6DF) || (cp >= 0x2A700 && cp <= 0x2CEAF) ||
         (cp >= 0xF900 && cp <= 0xFAFF) || (cp >= 0x2F800 && cp <= 0x2FA1F);
}

char32_t to_lower(char32_t cp) {
  if (cp >= 'A' && cp <= 'Z') return cp + 32;
  if (cp < 0x80) return cp;
  if (cp >= 0xC0 && cp <= 0xDE && cp != 0xD7) return cp + 32;
  if (cp >= 0x0391 && cp <= 0x03A9 && cp != 0x03A2) return cp + 32;
  if (cp >= 0x0410 && cp <= 0x042F) return cp + 32;
  if (cp >= 0x0400 && cp <= 0x040F) return cp + 80;
  return cp;
}

// Decodes one UTF-8 sequence starting at text[i]; malformed input yields U+FFFD.
char32_t decode_utf8(std::string_view text, std::size_t& i) {
  const auto byte = [&](std::size_t k) { return static_cast<unsigned char>(text[k]); };
  const unsigned char lead = byte(i);
  int extra = 0;
  char32_t cp = 0;
  if (lead < 0x80) {
    ++i;
    return lead;
  } else if ((lead & 0xE0) == 0xC0) {
    extra = 1;
    cp = lead & 0x1F;
  } else if ((lead & 0xF0) == 0xE0) {
    extra = 2;
    cp = lead & 0x0F;
  } else if ((lead & 0xF8) == 0xF0) {
    extra = 3;
    cp = lead & 0x07;
  } else {
    ++i;
    return 0xFFFD;
  }
  if (i + static_cast<std::size_t>(extra) >= text.size()) {
    ++i;
    return 0xFFFD;
  }
  for (int k = 1; k <= extra; ++k) {
    const unsigned char c = byte(i + static_cast<std::size_t>(k));
    if ((c & 0xC0) != 0x80) {
      ++i;
      return 0xFFFD;
    }
    cp = (cp << 6) | (c & 0x3F);
  }
  i += static_cast<std::size_t>(extra) + 1;
  return cp;
}

void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xF0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
}

std::vector<char32_t> decode_all(std::string_view text) {
  std::vector<char32_t> cps;
  cps.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) cps.push_back(decode_utf8(text, i));
  return cps;
}

bool is_special_token(const std::string& token) {
  static const std::regex bracketed(R"(\[(PAD|UNK|CLS|SEP|MASK|unused[0-9]+)\])");
  static const std::unordered_set<std::string> angled = {"<s>", "</s>", "<pad>", "<unk>", "<mask>"};
  return angled.count(token) > 0 || std::regex_match(token, bracketed);
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  special_.assign(tokens_.size(), false);
  ids_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    const auto id = static_cast<TokenId>(i);
    if (!ids_.emplace(tokens_[i], id).second) {
      throw ValidationError("vocabulary repeats token \"" + tokens_[i] + "\" at id " +
                            std::to_string(i));
    }
    special_[i] = is_special_token(tokens_[i]);
  }
  if (auto unk = find("[UNK]")) {
    unknown_id_ = *unk;
  } else if (auto alt = find("<unk>")) {
    unknown_id_ = *alt;
  } else {
    throw ValidationError("vocabulary has no unknown token ([UNK] or <unk>)");
  }
}

Vocabulary Vocabulary::from_file(const std::filesystem::path& path) {
  return Vocabulary(read_lines(path));
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw ValidationError("token id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

bool Vocabulary::is_special(TokenId id) const {
  return id >= 0 && static_cast<std::size_t>(id) < special_.size() &&
         special_[static_cast<std::size_t>(id)];
}

bool is_punctuation(char32_t cp) {
  if (cp < 0x80) {
    return (cp >= 33 && cp <= 47) || (cp >= 58 && cp <= 64) || (cp >= 91 && cp <= 96) ||
           (cp >= 123 && cp <= 126);
  }
  const auto it = std::upper_bound(std::begin(kPunctRanges), std::end(kPunctRanges), cp,
                                   [](char32_t c, const Range& r) { return c < r.lo; });
  if (it == std::begin(kPunctRanges)) return false;
  return cp <= std::prev(it)->hi;
}

bool is_punctuation_only(std::string_view text) {
  if (text.starts_with("##")) text.remove_prefix(2);
  if (text.empty()) return false;
  for (char32_t cp : decode_all(text)) {
    if (!is_punctuation(cp)) return false;
  }
  return true;
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  const auto flush = [&] {
    if (!current.empty()) words.push_back(std::move(current));
    current.clear();
  };
  std::size_t i = 0;
  while (i < text.size()) {
    const char32_t cp = decode_utf8(text, i);
    if (is_whitespace(cp)) {
      flush();
    } else if (is_control(cp)) {
      continue;
    } else if (is_punctuation(cp) || is_cjk(cp)) {
      flush();
      append_utf8(current, to_lower(cp));
      flush();
    } else {
      append_utf8(current, to_lower(cp));
    }
  }
  flush();
  return words;
}

std::vector<TokenId> tokenize(const Vocabulary& vocab, std::string_view text) {
  std::vector<TokenId> out;
  std::vector<TokenId> pieces;
  std::string candidate;
  for (const auto& word : split_words(text)) {
    const auto cps = decode_all(word);
    if (cps.size() > kMaxWordChars) {
      out.push_back(vocab.unknown_id());
      continue;
    }
    // Byte offset of every code point boundary.
    std::vector<std::size_t> offsets(cps.size() + 1, 0);
    {
      std::size_t i = 0, k = 0;
      while (i < word.size()) {
        decode_utf8(word, i);
        offsets[++k] = i;
      }
    }
    pieces.clear();
    bool bad = false;
    std::size_t start = 0;
    while (start < cps.size()) {
      std::size_t end = cps.size();
      std::optional<TokenId> match;
      while (start < end) {
        candidate = start > 0 ? "##" : "";
        candidate.append(word, offsets[start], offsets[end] - offsets[start]);
        if ((match = vocab.find(candidate))) break;
        --end;
      }
      if (!match) {
        bad = true;
        break;
      }
      pieces.push_back(*match);
      start = end;
    }
    if (bad) {
      out.push_back(vocab.unknown_id());
    } else {
      out.insert(out.end(), pieces.begin(), pieces.end());
    }
  }
  return out;
}

StopList::StopList(std::vector<std::string> words) {
  for (auto& w : words) {
    const auto first = w.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    const auto last = w.find_last_not_of(" \t");
    std::string trimmed = w.substr(first, last - first + 1);
    std::transform(trimmed.begin(), trimmed.end(), trimmed.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    words_.insert(std::move(trimmed));
  }
}

StopList StopList::from_file(const std::filesystem::path& path) { return StopList(read_lines(path)); }

ContentFilter::ContentFilter(const Vocabulary& vocab, const StopList& stoplist)
    : vocab_(&vocab), content_(vocab.size(), true) {
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    const auto id = static_cast<TokenId>(i);
    const auto& tok = vocab.token(id);
    if (vocab.is_special(id) || stoplist.contains(tok) || is_punctuation_only(tok)) {
      content_[i] = false;
    }
  }
}

bool TokenSet::contains(TokenId id) const { return std::binary_search(ids.begin(), ids.end(), id); }

TokenSet content_token_set(const ContentFilter& filter, std::string_view text, TokenOrigin origin) {
  TokenSet set;
  set.origin = origin;
  for (TokenId id : tokenize(filter.vocab(), text)) {
    if (filter.is_content(id)) set.ids.push_back(id);
  }
  std::sort(set.ids.begin(), set.ids.end());
  set.ids.erase(std::unique(set.ids.begin(), set.ids.end()), set.ids.end());
  return set;
}

TokenSet content_token_set(const Vocabulary& vocab, const StopList& stoplist, std::string_view text,
                           TokenOrigin origin) {
  return content_token_set(ContentFilter(vocab, stoplist), text, origin);
}

TokenSet intersect(const TokenSet& a, const TokenSet& b) {
  TokenSet out;
  out.origin = a.origin;
  std::set_intersection(a.ids.begin(), a.ids.end(), b.ids.begin(), b.ids.end(),
                        std::back_inserter(out.ids));
  return out;
}

TokenSet difference(const TokenSet& a, const TokenSet& b) {
  TokenSet out;
  out.origin = a.origin;
  std::set_difference(a.ids.begin(), a.ids.end(), b.ids.begin(), b.ids.end(),
                      std::back_inserter(out.ids));
  return out;
}

double IdfTable::formula(std::int64_t documents, std::int64_t df) {
  const double n = static_cast<double>(documents);
  const double f = static_cast<double>(df);
  return std::log(1.0 + (n - f + 0.5) / (f + 0.5));
}

TensorBundle IdfTable::to_bundle() const {
  TensorBundle b;
  const auto v = static_cast<std::int64_t>(idf.size());
  b.add("idf", {v}, std::vector<float>(idf.begin(), idf.end()));
  b.add("N", {1}, {static_cast<float>(documents)});
  b.add("df", {v}, std::vector<float>(df.begin(), df.end()));
  b.metadata["kind"] = "idf";
  b.metadata["documents"] = documents;
  return b;
}

IdfTable IdfTable::from_bundle(const TensorBundle& bundle) {
  const auto& idf = bundle.at("idf");
  const auto& df = bundle.at("df");
  if (idf.shape.size() != 1 || df.shape != idf.shape) {
    throw ValidationError("idf bundle: \"idf\" and \"df\" must be vectors of equal length");
  }
  IdfTable t;
  t.documents = bundle.metadata.contains("documents")
                    ? bundle.metadata["documents"].get<std::int64_t>()
                    : static_cast<std::int64_t>(bundle.at("N").data.at(0));
  t.idf.assign(idf.data.begin(), idf.data.end());
  t.df.reserve(df.data.size());
  for (float f : df.data) t.df.push_back(static_cast<std::int64_t>(f));
  for (std::size_t i = 0; i < t.idf.size(); ++i) {
    if (!std::isfinite(t.idf[i]) || t.idf[i] < 0.0) {
      throw ValidationError("idf weight for token " + std::to_string(i) + " is negative or non-finite");
    }
    if (t.df[i] > t.documents) {
      throw ValidationError("df for token " + std::to_string(i) + " exceeds document count");
    }
  }
  return t;
}

IdfTable compute_idf(std::span<const std::vector<TokenId>> documents, std::size_t vocab_size) {
  if (documents.empty()) throw ValidationError("cannot compute IDF over an empty corpus");
  IdfTable t;
  t.documents = static_cast<std::int64_t>(documents.size());
  t.df.assign(vocab_size, 0);
  std::vector<std::size_t> last_seen(vocab_size, static_cast<std::size_t>(-1));
  for (std::size_t d = 0; d < documents.size(); ++d) {
    for (TokenId id : documents[d]) {
      if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) {
        throw ValidationError("token id " + std::to_string(id) + " out of vocabulary range");
      }
      auto& seen = last_seen[static_cast<std::size_t>(id)];
      if (seen != d) {
        seen = d;
        ++t.df[static_cast<std::size_t>(id)];
      }
    }
  }
  t.idf.resize(vocab_size);
  for (std::size_t i = 0; i < vocab_size; ++i) t.idf[i] = IdfTable::formula(t.documents, t.df[i]);
  return t;
}

}  // namespace lexenrich
