#include "kgsp/dataio.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "kgsp/error.hpp"
#include "kgsp/rng.hpp"

namespace kgsp {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

namespace {

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> comma_list(const std::string& s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  for (auto& part : split_on(s, ',')) out.push_back(trim(part));
  return out;
}

std::vector<std::string> whitespace_fields(std::string_view line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t b = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > b) out.emplace_back(line.substr(b, i - b));
  }
  return out;
}

bool parse_double(const std::string& s, double& out) {
  const char* b = s.data();
  const char* e = b + s.size();
  auto [p, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && p == e;
}

bool parse_size(const std::string& s, std::size_t& out) {
  const char* b = s.data();
  const char* e = b + s.size();
  auto [p, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && p == e && !s.empty();
}

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const std::string& buf, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[off + i])) << (8 * i);
  return v;
}

}  // namespace

std::string to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw DomainError("unknown split '" + s + "'");
}

Vocabulary::Vocabulary(std::vector<std::string> states, std::vector<std::string> objects)
    : states_(std::move(states)), objects_(std::move(objects)) {
  auto prepare = [](std::vector<std::string>& names, const char* what,
                    std::unordered_map<std::string, int>& idx) {
    std::sort(names.begin(), names.end());
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (names[i].empty()) throw DomainError(std::string("empty ") + what + " name");
      if (i > 0 && names[i] == names[i - 1])
        throw DomainError(std::string("duplicate ") + what + " '" + names[i] + "'");
      idx.emplace(names[i], static_cast<int>(i));
    }
  };
  prepare(states_, "state", state_idx_);
  prepare(objects_, "object", object_idx_);
}

std::optional<int> Vocabulary::state_index(const std::string& name) const {
  auto it = state_idx_.find(name);
  if (it == state_idx_.end()) return std::nullopt;
  return it->second;
}

std::optional<int> Vocabulary::object_index(const std::string& name) const {
  auto it = object_idx_.find(name);
  if (it == object_idx_.end()) return std::nullopt;
  return it->second;
}

void CompositionSet::insert(Composition c) {
  auto& f = flags_[static_cast<std::size_t>(c.state) * n_objects_ +
                   static_cast<std::size_t>(c.object)];
  if (!f) {
    f = 1;
    ++count_;
  }
}

std::vector<Composition> CompositionSet::members() const {
  std::vector<Composition> out;
  out.reserve(count_);
  for (std::size_t s = 0; s < n_states_; ++s)
    for (std::size_t o = 0; o < n_objects_; ++o)
      if (flags_[s * n_objects_ + o]) out.push_back({static_cast<int>(s), static_cast<int>(o)});
  return out;
}

std::vector<const ExampleRecord*> DatasetManifest::split(Split s) const {
  std::vector<const ExampleRecord*> out;
  for (const auto& r : records)
    if (r.split == s) out.push_back(&r);
  return out;
}

DatasetManifest parse_manifest(const std::string& text, const std::string& source) {
  std::optional<std::vector<std::string>> states, objects;
  std::vector<std::string> seen_pairs;
  struct RawRecord {
    std::size_t line;
    std::vector<std::string> fields;
  };
  std::vector<RawRecord> raw;

  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    if (line.rfind("#states:", 0) == 0) {
      states = comma_list(line.substr(8));
    } else if (line.rfind("#objects:", 0) == 0) {
      objects = comma_list(line.substr(9));
    } else if (line.rfind("#seen:", 0) == 0) {
      seen_pairs = comma_list(line.substr(6));
    } else if (line[0] == '#') {
      continue;
    } else {
      auto fields = split_on(line, '\t');
      if (fields.size() != 5)
        throw DomainError(source + ":" + std::to_string(lineno) + ": expected 5 tab-separated " +
                          "fields, got " + std::to_string(fields.size()));
      raw.push_back({lineno, std::move(fields)});
    }
  }
  if (raw.empty()) throw DomainError(source + ": no records");
  if (!states || !objects)
    throw DomainError(source + ": missing #states: or #objects: header");

  DatasetManifest m;
  m.vocab = Vocabulary(*states, *objects);
  m.seen = CompositionSet(m.vocab.n_states(), m.vocab.n_objects());
  std::set<std::string> ids;
  for (auto& rr : raw) {
    const auto where = source + ":" + std::to_string(rr.line) + ": ";
    ExampleRecord r;
    r.example_id = rr.fields[0];
    if (r.example_id.empty()) throw DomainError(where + "empty example_id");
    if (!ids.insert(r.example_id).second)
      throw DomainError(where + "duplicate example_id '" + r.example_id + "'");
    if (!parse_size(rr.fields[1], r.feature_row))
      throw DomainError(where + "malformed feature_row '" + rr.fields[1] + "'");
    if (rr.fields[2] != "?") {
      r.state = m.vocab.state_index(rr.fields[2]);
      if (!r.state) throw DomainError(where + "state '" + rr.fields[2] + "' not in vocabulary");
    }
    if (rr.fields[3] != "?") {
      r.object = m.vocab.object_index(rr.fields[3]);
      if (!r.object)
        throw DomainError(where + "object '" + rr.fields[3] + "' not in vocabulary");
    }
    try {
      r.split = parse_split(rr.fields[4]);
    } catch (const DomainError& e) {
      throw DomainError(where + e.what());
    }
    if (r.split != Split::kTrain && !r.fully_labeled())
      throw DomainError(where + "evaluation records need both labels");
    if (!r.state && !r.object) throw DomainError(where + "record has no label at all");
    if (r.split == Split::kTrain && r.fully_labeled()) m.seen.insert({*r.state, *r.object});
    m.records.push_back(std::move(r));
  }
  for (const auto& pair : seen_pairs) {
    const auto bar = pair.find('|');
    if (bar == std::string::npos) throw DomainError(source + ": malformed #seen entry '" + pair + "'");
    auto s = m.vocab.state_index(pair.substr(0, bar));
    auto o = m.vocab.object_index(pair.substr(bar + 1));
    if (!s || !o) throw DomainError(source + ": #seen entry '" + pair + "' not in vocabulary");
    m.seen.insert({*s, *o});
  }
  return m;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  return parse_manifest(read_file(path), path.string());
}

std::string format_manifest(const DatasetManifest& m) {
  std::ostringstream os;
  auto join = [&](const std::vector<std::string>& names) {
    for (std::size_t i = 0; i < names.size(); ++i) os << (i ? "," : "") << names[i];
  };
  os << "#states: ";
  join(m.vocab.states());
  os << "\n#objects: ";
  join(m.vocab.objects());
  os << '\n';
  // The seen set is written only when it cannot be recovered from the records.
  CompositionSet derived(m.vocab.n_states(), m.vocab.n_objects());
  for (const auto& r : m.records)
    if (r.split == Split::kTrain && r.fully_labeled()) derived.insert({*r.state, *r.object});
  if (derived.size() != m.seen.size()) {
    os << "#seen: ";
    bool first = true;
    for (auto c : m.seen.members()) {
      os << (first ? "" : ",") << m.vocab.states()[c.state] << '|' << m.vocab.objects()[c.object];
      first = false;
    }
    os << '\n';
  }
  for (const auto& r : m.records) {
    os << r.example_id << '\t' << r.feature_row << '\t'
       << (r.state ? m.vocab.states()[*r.state] : "?") << '\t'
       << (r.object ? m.vocab.objects()[*r.object] : "?") << '\t' << to_string(r.split) << '\n';
  }
  return os.str();
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  write_file(path, format_manifest(manifest));
}

void check_feature_rows(const DatasetManifest& manifest, std::size_t n_rows) {
  for (const auto& r : manifest.records) {
    if (r.feature_row >= n_rows)
      throw DomainError("record '" + r.example_id + "' points at feature row " +
                        std::to_string(r.feature_row) + " but the store has " +
                        std::to_string(n_rows) + " rows");
  }
}

FeatureStore load_features(const std::filesystem::path& path) {
  const std::string buf = read_file(path);
  const auto name = path.string();
  if (buf.size() < 16 || buf.compare(0, 4, "KGSP") != 0)
    throw DomainError(name + ": not a feature file (bad magic)");
  const std::uint32_t version = get_u32(buf, 4);
  if (version != kFeatureVersion)
    throw DomainError(name + ": unsupported feature file version " + std::to_string(version));
  FeatureStore fs;
  fs.n_rows = get_u32(buf, 8);
  fs.dim = get_u32(buf, 12);
  const std::size_t expected = fs.n_rows * fs.dim * 4;
  const std::size_t payload = buf.size() - 16;
  if (payload != expected) {
    throw DomainError(name + ": header declares " + std::to_string(fs.n_rows) + " rows x " +
                      std::to_string(fs.dim) + " dims (" + std::to_string(expected) +
                      " bytes) but payload has " + std::to_string(payload) + " bytes");
  }
  fs.values.resize(fs.n_rows * fs.dim);
  for (std::size_t i = 0; i < fs.values.size(); ++i) {
    const float v = std::bit_cast<float>(get_u32(buf, 16 + 4 * i));
    if (!std::isfinite(v))
      throw NumericError(name + ": non-finite feature value in row " +
                         std::to_string(i / fs.dim));
    fs.values[i] = v;
  }
  return fs;
}

void save_features(const FeatureStore& store, const std::filesystem::path& path) {
  if (store.values.size() != store.n_rows * store.dim)
    throw ShapeError("feature store size does not match n_rows x dim");
  std::string buf = "KGSP";
  buf.reserve(16 + 4 * store.values.size());
  put_u32(buf, kFeatureVersion);
  put_u32(buf, static_cast<std::uint32_t>(store.n_rows));
  put_u32(buf, static_cast<std::uint32_t>(store.dim));
  for (float v : store.values) put_u32(buf, std::bit_cast<std::uint32_t>(v));
  write_file(path, buf);
}

const std::vector<double>& EmbeddingTable::at(const std::string& name) const {
  auto it = vectors_.find(name);
  if (it == vectors_.end()) throw DomainError("no embedding for '" + name + "'");
  return it->second;
}

EmbeddingTable parse_embeddings(const std::string& text, const Vocabulary& vocab) {
  auto underscored = [](std::string s) {
    std::replace(s.begin(), s.end(), ' ', '_');
    return s;
  };
  auto sub_tokens = [](const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
      if (c == ' ' || c == '_') {
        if (!cur.empty()) out.push_back(cur);
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
  };

  std::vector<std::string> names = vocab.states();
  names.insert(names.end(), vocab.objects().begin(), vocab.objects().end());
  std::set<std::string> wanted;
  for (const auto& n : names) {
    wanted.insert(n);
    wanted.insert(underscored(n));
    for (auto& t : sub_tokens(n)) wanted.insert(t);
  }

  std::map<std::string, std::vector<double>> found;
  std::size_t dim = 0;
  EmbeddingReport report;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++lineno;
    auto fields = whitespace_fields(line);
    if (fields.empty()) continue;
    if (first) {
      first = false;
      // word2vec-style "<count> <dim>" header line.
      std::size_t a = 0, b = 0;
      if (fields.size() == 2 && parse_size(fields[0], a) && parse_size(fields[1], b) && b > 1) {
        std::string next;
        const std::streampos rewind_to = in.tellg();
        while (std::getline(in, next) && whitespace_fields(next).empty()) {
        }
        const auto next_fields = whitespace_fields(next);
        in.clear();
        in.seekg(rewind_to);
        if (next_fields.size() == b + 1) {
          dim = b;
          continue;
        }
      }
      dim = fields.size() - 1;
      if (dim == 0) throw DomainError("embedding line " + std::to_string(lineno) + " has no vector");
    }
    if (fields.size() - 1 != dim)
      throw DomainError("embedding line " + std::to_string(lineno) + " has " +
                        std::to_string(fields.size() - 1) + " components, expected " +
                        std::to_string(dim));
    ++report.lines;
    if (!wanted.count(fields[0]) || found.count(fields[0])) continue;
    std::vector<double> v(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      if (!parse_double(fields[i + 1], v[i]) || !std::isfinite(v[i]))
        throw DomainError("embedding line " + std::to_string(lineno) + ": bad value '" +
                          fields[i + 1] + "'");
    }
    found.emplace(fields[0], std::move(v));
  }
  if (dim == 0) throw DomainError("embedding file is empty");

  std::map<std::string, std::vector<double>> resolved;
  std::vector<std::string> missing;
  for (const auto& n : names) {
    if (resolved.count(n)) continue;
    if (auto it = found.find(n); it != found.end()) {
      resolved.emplace(n, it->second);
      ++report.direct;
    } else if (auto it2 = found.find(underscored(n)); it2 != found.end()) {
      resolved.emplace(n, it2->second);
      ++report.underscore;
    } else {
      std::vector<double> mean(dim, 0.0);
      std::size_t hits = 0;
      for (const auto& t : sub_tokens(n)) {
        if (auto it3 = found.find(t); it3 != found.end()) {
          for (std::size_t i = 0; i < dim; ++i) mean[i] += it3->second[i];
          ++hits;
        }
      }
      if (hits == 0) {
        missing.push_back(n);
        continue;
      }
      for (auto& x : mean) x /= static_cast<double>(hits);
      resolved.emplace(n, std::move(mean));
      ++report.averaged;
    }
  }
  if (!missing.empty()) {
    std::string msg = "no embedding for vocabulary names:";
    for (const auto& n : missing) msg += " '" + n + "'";
    throw DomainError(msg);
  }
  return EmbeddingTable(dim, std::move(resolved), report);
}

EmbeddingTable load_embeddings(const std::filesystem::path& path, const Vocabulary& vocab) {
  return parse_embeddings(read_file(path), vocab);
}

DatasetManifest make_pczsl_split(const DatasetManifest& manifest, std::uint64_t seed) {
  const auto& vocab = manifest.vocab;
  std::vector<std::size_t> train;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& r = manifest.records[i];
    if (r.split != Split::kTrain) continue;
    if (!r.fully_labeled())
      throw DomainError("record '" + r.example_id + "' is not fully labeled; split needs a " +
                        "fully labeled training set");
    train.push_back(i);
  }
  if (train.empty()) throw DomainError("no training records to split");

  std::vector<std::size_t> state_total(vocab.n_states(), 0), object_total(vocab.n_objects(), 0);
  for (auto i : train) {
    ++state_total[*manifest.records[i].state];
    ++object_total[*manifest.records[i].object];
  }
  std::string uncovered;
  for (std::size_t s = 0; s < state_total.size(); ++s)
    if (!state_total[s]) uncovered += " state '" + vocab.states()[s] + "'";
  for (std::size_t o = 0; o < object_total.size(); ++o)
    if (!object_total[o]) uncovered += " object '" + vocab.objects()[o] + "'";
  if (!uncovered.empty())
    throw DomainError("coverage impossible, no training samples for:" + uncovered);

  // Seeded Fisher-Yates shuffle, then alternate halves.
  Rng rng = Rng::stream(seed, "split");
  for (std::size_t i = train.size(); i > 1; --i) std::swap(train[i - 1], train[rng.below(i)]);
  // keeps_state[k] refers to train[k]: true = state-labeled half.
  std::vector<bool> keeps_state(train.size());
  for (std::size_t k = 0; k < train.size(); ++k) keeps_state[k] = (k % 2 == 1);

  auto st = [&](std::size_t k) { return *manifest.records[train[k]].state; };
  auto ob = [&](std::size_t k) { return *manifest.records[train[k]].object; };
  std::vector<std::size_t> state_cnt(vocab.n_states(), 0), object_cnt(vocab.n_objects(), 0);
  for (std::size_t k = 0; k < train.size(); ++k) {
    if (keeps_state[k]) ++state_cnt[st(k)];
    else ++object_cnt[ob(k)];
  }

  // Moves record `in` into the half it is missing from and `out` the other
  // way, keeping both halves the same size.
  auto swap_halves = [&](std::size_t to_state, std::size_t to_object) {
    keeps_state[to_state] = true;
    keeps_state[to_object] = false;
    ++state_cnt[st(to_state)];
    --object_cnt[ob(to_state)];
    --state_cnt[st(to_object)];
    ++object_cnt[ob(to_object)];
  };

  const std::size_t max_rounds = vocab.n_states() + vocab.n_objects() + 1;
  for (std::size_t round = 0; round < max_rounds; ++round) {
    bool changed = false;
    for (std::size_t s = 0; s < vocab.n_states(); ++s) {
      if (state_cnt[s]) continue;
      bool fixed = false;
      for (std::size_t a = 0; a < train.size() && !fixed; ++a) {
        if (keeps_state[a] || st(a) != static_cast<int>(s)) continue;
        for (std::size_t b = 0; b < train.size(); ++b) {
          if (!keeps_state[b] || state_cnt[st(b)] < 2) continue;
          if (object_cnt[ob(a)] < 2 && ob(a) != ob(b)) continue;
          swap_halves(a, b);
          fixed = changed = true;
          break;
        }
      }
      if (!fixed)
        throw DomainError("coverage repair failed for state '" + vocab.states()[s] + "'");
    }
    for (std::size_t o = 0; o < vocab.n_objects(); ++o) {
      if (object_cnt[o]) continue;
      bool fixed = false;
      for (std::size_t a = 0; a < train.size() && !fixed; ++a) {
        if (!keeps_state[a] || ob(a) != static_cast<int>(o)) continue;
        for (std::size_t b = 0; b < train.size(); ++b) {
          if (keeps_state[b] || object_cnt[ob(b)] < 2) continue;
          if (state_cnt[st(a)] < 2 && st(a) != st(b)) continue;
          swap_halves(b, a);
          fixed = changed = true;
          break;
        }
      }
      if (!fixed)
        throw DomainError("coverage repair failed for object '" + vocab.objects()[o] + "'");
    }
    if (!changed) break;
  }

  DatasetManifest out = manifest;
  for (std::size_t k = 0; k < train.size(); ++k) {
    auto& r = out.records[train[k]];
    if (keeps_state[k]) r.object.reset();
    else r.state.reset();
  }
  return out;
}

}  // namespace kgsp
