#include "lexenrich/datastore.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "lexenrich/error.hpp"

namespace lexenrich {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::string_view kBundleFormat = "lexenrich.bundle.v1";
constexpr std::string_view kByteOrder = "little";
constexpr std::string_view kDtype = "float32";

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
  }
}

void write_floats(std::ostream& out, const std::vector<float>& values) {
  std::vector<char> buffer(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint32_t bits = to_little(std::bit_cast<std::uint32_t>(values[i]));
    std::memcpy(buffer.data() + i * 4, &bits, 4);
  }
  out.write(buffer.data(), static_cast<std::streamsize>(buffer.size()));
}

std::vector<float> decode_floats(const char* bytes, std::size_t count) {
  std::vector<float> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t bits = 0;
    std::memcpy(&bits, bytes + i * 4, 4);
    values[i] = std::bit_cast<float>(to_little(bits));
  }
  return values;
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

template <typename Record, typename Parse>
std::vector<Record> load_jsonl(const fs::path& path, Parse&& parse) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<Record> records;
  std::unordered_map<std::string, std::size_t> first_line;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Record record;
    try {
      record = parse(json::parse(line));
    } catch (const json::exception& e) {
      throw ValidationError(path.string() + ": malformed record on line " +
                            std::to_string(line_no) + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError(path.string() + ": line " + std::to_string(line_no) + ": " +
                            e.what());
    }
    auto [it, inserted] = first_line.emplace(record.id, line_no);
    if (!inserted) {
      throw ValidationError(path.string() + ": duplicate id \"" + record.id + "\" on lines " +
                            std::to_string(it->second) + " and " + std::to_string(line_no));
    }
    records.push_back(std::move(record));
  }
  return records;
}

std::string required_string(const json& object, const char* key) {
  if (!object.is_object()) throw ValidationError("record is not an object");
  auto it = object.find(key);
  if (it == object.end() || !it->is_string()) {
    throw ValidationError(std::string("missing string field \"") + key + "\"");
  }
  return it->get<std::string>();
}

std::vector<std::string> optional_strings(const json& object, const char* key) {
  auto it = object.find(key);
  if (it == object.end() || it->is_null()) return {};
  if (!it->is_array()) throw ValidationError(std::string("field \"") + key + "\" is not a list");
  std::vector<std::string> values;
  for (const auto& v : *it) {
    if (!v.is_string()) throw ValidationError(std::string("field \"") + key + "\" holds a non-string");
    values.push_back(v.get<std::string>());
  }
  return values;
}

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& line : lines) out << line << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

fs::path ids_path(const fs::path& path) {
  fs::path p = bundle_base(path);
  p += ".ids";
  return p;
}

}  // namespace

std::int64_t Tensor::declared_elements() const {
  if (shape.empty()) return 0;
  std::int64_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

void TensorBundle::add(std::string name, std::vector<std::int64_t> shape,
                       std::vector<float> data) {
  tensors.emplace_back(std::move(name), Tensor{std::move(shape), std::move(data)});
}

const Tensor* TensorBundle::find(std::string_view name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

bool TensorBundle::contains(std::string_view name) const { return find(name) != nullptr; }

const Tensor& TensorBundle::at(std::string_view name) const {
  const Tensor* t = find(name);
  if (!t) throw ValidationError("bundle has no tensor \"" + std::string(name) + "\"");
  return *t;
}

void TensorBundle::validate() const {
  std::vector<std::string_view> seen;
  for (const auto& [name, tensor] : tensors) {
    if (name.empty()) throw ValidationError("tensor with empty name");
    if (std::find(seen.begin(), seen.end(), name) != seen.end()) {
      throw ValidationError("duplicate tensor name \"" + name + "\"");
    }
    seen.push_back(name);
    if (tensor.shape.empty()) throw ValidationError("tensor \"" + name + "\" has an empty shape");
    for (auto s : tensor.shape) {
      if (s <= 0) throw ValidationError("tensor \"" + name + "\" has a non-positive dimension");
    }
    const auto expected = tensor.declared_elements();
    if (static_cast<std::int64_t>(tensor.data.size()) != expected) {
      throw ValidationError("tensor \"" + name + "\" declares " + std::to_string(expected * 4) +
                            " payload bytes but holds " +
                            std::to_string(tensor.data.size() * 4));
    }
  }
  if (!metadata.is_object()) throw ValidationError("bundle metadata must be an object");
}

fs::path bundle_base(const fs::path& path) {
  const auto ext = path.extension();
  if (ext == ".manifest" || ext == ".bin") {
    fs::path base = path;
    base.replace_extension();
    return base;
  }
  return path;
}

fs::path manifest_path(const fs::path& path) {
  fs::path p = bundle_base(path);
  p += ".manifest";
  return p;
}

fs::path payload_path(const fs::path& path) {
  fs::path p = bundle_base(path);
  p += ".bin";
  return p;
}

void write_bundle(const TensorBundle& bundle, const fs::path& path) {
  bundle.validate();
  const fs::path bin = payload_path(path);

  json entries = json::array();
  std::int64_t offset = 0;
  for (const auto& [name, tensor] : bundle.tensors) {
    const std::int64_t bytes = static_cast<std::int64_t>(tensor.data.size()) * 4;
    entries.push_back({{"name", name},
                       {"dtype", kDtype},
                       {"shape", tensor.shape},
                       {"offset", offset},
                       {"bytes", bytes}});
    offset += bytes;
  }
  json manifest = {{"format", kBundleFormat},
                   {"byte_order", kByteOrder},
                   {"payload", bin.filename().string()},
                   {"payload_bytes", offset},
                   {"tensors", std::move(entries)},
                   {"metadata", bundle.metadata}};

  {
    std::ofstream out(bin, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + bin.string());
    for (const auto& [name, tensor] : bundle.tensors) write_floats(out, tensor.data);
    if (!out) throw IoError("write failed for " + bin.string());
  }
  const fs::path man = manifest_path(path);
  std::ofstream out(man, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + man.string());
  out << manifest.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + man.string());
}

TensorBundle read_bundle(const fs::path& path, ReadOptions options) {
  const fs::path man = manifest_path(path);
  if (!fs::exists(man)) throw IoError("missing bundle manifest " + man.string());
  json manifest;
  try {
    manifest = json::parse(read_text_file(man));
  } catch (const json::exception& e) {
    throw ValidationError(man.string() + ": malformed manifest: " + e.what());
  }

  TensorBundle bundle;
  fs::path bin;
  try {
    if (manifest.at("format").get<std::string>() != kBundleFormat) {
      throw ValidationError(man.string() + ": unsupported bundle format");
    }
    if (manifest.at("byte_order").get<std::string>() != kByteOrder) {
      throw ValidationError(man.string() + ": payload byte order must be little-endian");
    }
    bin = man.parent_path() / manifest.at("payload").get<std::string>();
    if (!fs::exists(bin)) throw IoError("missing bundle payload " + bin.string());
    const std::string payload = read_text_file(bin);
    const auto declared_total = manifest.at("payload_bytes").get<std::int64_t>();
    if (static_cast<std::int64_t>(payload.size()) != declared_total) {
      throw ValidationError(bin.string() + ": payload is " + std::to_string(payload.size()) +
                            " bytes but the manifest declares " +
                            std::to_string(declared_total));
    }
    for (const auto& entry : manifest.at("tensors")) {
      const auto name = entry.at("name").get<std::string>();
      if (entry.at("dtype").get<std::string>() != kDtype) {
        throw ValidationError("tensor \"" + name + "\" has unsupported dtype");
      }
      auto shape = entry.at("shape").get<std::vector<std::int64_t>>();
      const auto offset = entry.at("offset").get<std::int64_t>();
      const auto bytes = entry.at("bytes").get<std::int64_t>();
      Tensor probe{shape, {}};
      if (shape.empty() || std::any_of(shape.begin(), shape.end(), [](auto s) { return s <= 0; })) {
        throw ValidationError("tensor \"" + name + "\" has an invalid shape");
      }
      if (probe.declared_elements() * 4 != bytes) {
        throw ValidationError("tensor \"" + name + "\" shape does not match its byte length");
      }
      if (offset < 0 || offset + bytes > static_cast<std::int64_t>(payload.size())) {
        throw ValidationError("tensor \"" + name + "\" is absent from the payload (truncated)");
      }
      auto data = decode_floats(payload.data() + offset, static_cast<std::size_t>(bytes / 4));
      if (options.require_finite) {
        for (std::size_t i = 0; i < data.size(); ++i) {
          if (!std::isfinite(data[i])) {
            throw ValidationError("tensor \"" + name + "\" has a non-finite value at element " +
                                  std::to_string(i));
          }
        }
      }
      bundle.add(name, std::move(shape), std::move(data));
    }
    if (manifest.contains("metadata")) bundle.metadata = manifest.at("metadata");
  } catch (const json::exception& e) {
    throw ValidationError(man.string() + ": invalid manifest: " + e.what());
  }
  bundle.validate();
  return bundle;
}

std::string passage_text(const CorpusRecord& record) {
  if (record.title.empty()) return record.text;
  return record.title + " " + record.text;
}

std::vector<CorpusRecord> load_corpus(const fs::path& path) {
  return load_jsonl<CorpusRecord>(path, [](const json& j) {
    CorpusRecord r;
    r.id = required_string(j, "id");
    if (r.id.empty()) throw ValidationError("empty id");
    if (auto it = j.find("title"); it != j.end() && !it->is_null()) r.title = it->get<std::string>();
    r.text = required_string(j, "text");
    return r;
  });
}

std::vector<QueryRecord> load_queries(const fs::path& path) {
  return load_jsonl<QueryRecord>(path, [](const json& j) {
    QueryRecord r;
    r.id = required_string(j, "id");
    if (r.id.empty()) throw ValidationError("empty id");
    r.text = required_string(j, "text");
    r.answers = optional_strings(j, "answers");
    r.gold_pids = optional_strings(j, "gold_pids");
    return r;
  });
}

void write_corpus(const std::vector<CorpusRecord>& records, const fs::path& path) {
  std::vector<std::string> lines;
  lines.reserve(records.size());
  for (const auto& r : records) {
    lines.push_back(json{{"id", r.id}, {"title", r.title}, {"text", r.text}}.dump());
  }
  write_lines(path, lines);
}

void write_queries(const std::vector<QueryRecord>& records, const fs::path& path) {
  std::vector<std::string> lines;
  lines.reserve(records.size());
  for (const auto& r : records) {
    lines.push_back(
        json{{"id", r.id}, {"text", r.text}, {"answers", r.answers}, {"gold_pids", r.gold_pids}}
            .dump());
  }
  write_lines(path, lines);
}

std::string_view to_string(Similarity similarity) {
  return similarity == Similarity::dot ? "dot" : "cosine";
}

Similarity parse_similarity(std::string_view tag) {
  if (tag == "dot") return Similarity::dot;
  if (tag == "cosine") return Similarity::cosine;
  throw ValidationError("similarity tag must be \"dot\" or \"cosine\", got \"" +
                        std::string(tag) + "\"");
}

std::optional<std::size_t> EmbeddingStore::find(std::string_view id) const {
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] == id) return i;
  }
  return std::nullopt;
}

void EmbeddingStore::validate() const {
  if (static_cast<Eigen::Index>(ids.size()) != vectors.rows()) {
    throw ValidationError("embedding store has " + std::to_string(ids.size()) + " ids but " +
                          std::to_string(vectors.rows()) + " rows");
  }
  std::unordered_map<std::string_view, std::size_t> seen;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i].empty()) throw ValidationError("embedding id at row " + std::to_string(i) + " is empty");
    if (ids[i].find_first_of("\r\n") != std::string::npos) {
      throw ValidationError("embedding id at row " + std::to_string(i) + " contains a newline");
    }
    if (!seen.emplace(ids[i], i).second) {
      throw ValidationError("duplicate embedding id \"" + ids[i] + "\"");
    }
  }
  std::vector<std::size_t> bad;
  for (Eigen::Index r = 0; r < vectors.rows(); ++r) {
    if (!vectors.row(r).allFinite()) bad.push_back(static_cast<std::size_t>(r));
  }
  if (!bad.empty()) {
    std::string msg = "non-finite row";
    msg += bad.size() > 1 ? "s " : " ";
    for (std::size_t i = 0; i < bad.size(); ++i) {
      if (i) msg += ", ";
      msg += std::to_string(bad[i]);
    }
    throw ValidationError(msg);
  }
}

IdIndex::IdIndex(const std::vector<std::string>& ids) {
  positions_.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) positions_.emplace(ids[i], i);
}

std::optional<std::size_t> IdIndex::find(std::string_view id) const {
  auto it = positions_.find(std::string(id));
  if (it == positions_.end()) return std::nullopt;
  return it->second;
}

EmbeddingStore load_embeddings(const fs::path& path) {
  const TensorBundle bundle = read_bundle(path);
  const Tensor& vectors = bundle.at("vectors");
  if (vectors.shape.size() != 2) throw ValidationError("tensor \"vectors\" must be rank 2");

  EmbeddingStore store;
  if (!bundle.metadata.contains("similarity") || !bundle.metadata["similarity"].is_string()) {
    throw ValidationError(manifest_path(path).string() + ": missing similarity tag");
  }
  store.similarity = parse_similarity(bundle.metadata["similarity"].get<std::string>());

  const fs::path ids_file = ids_path(path);
  std::ifstream in(ids_file);
  if (!in) throw IoError("missing id sidecar " + ids_file.string());
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    store.ids.push_back(line);
  }

  const auto rows = vectors.shape[0];
  const auto cols = vectors.shape[1];
  if (static_cast<std::int64_t>(store.ids.size()) != rows) {
    throw ValidationError("embedding bundle has " + std::to_string(store.ids.size()) +
                          " ids but " + std::to_string(rows) + " rows");
  }
  store.vectors = Eigen::Map<const RowMatrixF>(vectors.data.data(), rows, cols);
  store.validate();
  return store;
}

void write_embeddings(const EmbeddingStore& store, const fs::path& path) {
  store.validate();
  if (store.size() == 0) throw ValidationError("cannot write an empty embedding store");
  TensorBundle bundle;
  std::vector<float> data(store.vectors.data(), store.vectors.data() + store.vectors.size());
  bundle.add("vectors", {static_cast<std::int64_t>(store.vectors.rows()), store.dim()},
             std::move(data));
  bundle.metadata["similarity"] = std::string(to_string(store.similarity));
  bundle.metadata["kind"] = "embeddings";
  write_bundle(bundle, path);
  write_lines(ids_path(path), store.ids);
}

}  // namespace lexenrich
