#pragma once

// Dataset manifests, precomputed feature matrices, word-embedding tables and
// the partial-label (one primitive per image) training split.

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace kgsp {

// Whole-file helpers; IoError names the path on failure.
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

enum class Split { kTrain, kVal, kTest };

std::string to_string(Split s);
Split parse_split(const std::string& s);

struct Composition {
  int state = 0;
  int object = 0;
  auto operator<=>(const Composition&) const = default;
};

// State and object names in alphabetical order; the order is the index map
// used by every matrix in the project.
class Vocabulary {
 public:
  Vocabulary() = default;
  // Sorts both lists; throws DomainError on duplicates or empty names.
  Vocabulary(std::vector<std::string> states, std::vector<std::string> objects);

  const std::vector<std::string>& states() const { return states_; }
  const std::vector<std::string>& objects() const { return objects_; }
  std::size_t n_states() const { return states_.size(); }
  std::size_t n_objects() const { return objects_.size(); }
  std::size_t n_compositions() const { return states_.size() * objects_.size(); }

  std::optional<int> state_index(const std::string& name) const;
  std::optional<int> object_index(const std::string& name) const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.states_ == b.states_ && a.objects_ == b.objects_;
  }

 private:
  std::vector<std::string> states_;
  std::vector<std::string> objects_;
  std::unordered_map<std::string, int> state_idx_;
  std::unordered_map<std::string, int> object_idx_;
};

// Dense |S| x |O| membership set.
class CompositionSet {
 public:
  CompositionSet() = default;
  CompositionSet(std::size_t n_states, std::size_t n_objects)
      : n_states_(n_states), n_objects_(n_objects), flags_(n_states * n_objects, 0) {}

  void insert(Composition c);
  bool contains(Composition c) const {
    return flags_[static_cast<std::size_t>(c.state) * n_objects_ +
                  static_cast<std::size_t>(c.object)] != 0;
  }
  std::size_t size() const { return count_; }
  bool empty() const { return count_ == 0; }
  std::size_t n_states() const { return n_states_; }
  std::size_t n_objects() const { return n_objects_; }
  std::span<const std::uint8_t> flags() const { return flags_; }
  // Members in (state, object) lexicographic order.
  std::vector<Composition> members() const;

 private:
  std::size_t n_states_ = 0;
  std::size_t n_objects_ = 0;
  std::vector<std::uint8_t> flags_;
  std::size_t count_ = 0;
};

struct ExampleRecord {
  std::string example_id;
  std::size_t feature_row = 0;
  std::optional<int> state;   // nullopt = unknown label
  std::optional<int> object;  // nullopt = unknown label
  Split split = Split::kTrain;

  bool fully_labeled() const { return state.has_value() && object.has_value(); }
};

struct DatasetManifest {
  Vocabulary vocab;
  std::vector<ExampleRecord> records;
  // Compositions observed with both labels in training, plus any carried in
  // by a "#seen:" header (partial-label manifests keep the original set so
  // evaluation can still separate seen from unseen).
  CompositionSet seen;

  std::vector<const ExampleRecord*> split(Split s) const;
};

DatasetManifest load_manifest(const std::filesystem::path& path);
DatasetManifest parse_manifest(const std::string& text, const std::string& source = "<memory>");
std::string format_manifest(const DatasetManifest& manifest);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

// Throws DomainError if any record points past the feature store.
void check_feature_rows(const DatasetManifest& manifest, std::size_t n_rows);

// Immutable float32 feature matrix.
struct FeatureStore {
  std::size_t n_rows = 0;
  std::size_t dim = 0;
  std::vector<float> values;

  std::span<const float> row(std::size_t r) const {
    return std::span<const float>(values).subspan(r * dim, dim);
  }
};

inline constexpr std::uint32_t kFeatureVersion = 1;

FeatureStore load_features(const std::filesystem::path& path);
void save_features(const FeatureStore& store, const std::filesystem::path& path);

struct EmbeddingReport {
  std::size_t direct = 0;
  std::size_t underscore = 0;  // resolved through the underscore-joined form
  std::size_t averaged = 0;    // resolved as the mean of sub-token vectors
  std::size_t lines = 0;
};

class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(std::size_t dim, std::map<std::string, std::vector<double>> vectors,
                 EmbeddingReport report = {})
      : dim_(dim), vectors_(std::move(vectors)), report_(report) {}

  std::size_t dim() const { return dim_; }
  const std::vector<double>& at(const std::string& name) const;
  bool contains(const std::string& name) const { return vectors_.count(name) != 0; }
  std::size_t size() const { return vectors_.size(); }
  const EmbeddingReport& report() const { return report_; }

 private:
  std::size_t dim_ = 0;
  std::map<std::string, std::vector<double>> vectors_;
  EmbeddingReport report_;
};

// Resolves every vocabulary name. A name missing from the file is looked up
// as its underscore-joined form, then as the mean of whichever sub-tokens
// are present.
EmbeddingTable load_embeddings(const std::filesystem::path& path, const Vocabulary& vocab);
EmbeddingTable parse_embeddings(const std::string& text, const Vocabulary& vocab);

// Partial-label split: half the training records keep only their object
// label, the other half only their state label, such that every state and
// every object still appears in its half. Deterministic in `seed`.
DatasetManifest make_pczsl_split(const DatasetManifest& manifest, std::uint64_t seed);

}  // namespace kgsp
