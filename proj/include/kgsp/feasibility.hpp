#pragma once

// Composition feasibility scores c(s, o) and what is derived from them: the
// inference mask and the per-primitive pseudo-label weights.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kgsp/dataio.hpp"

namespace kgsp {

enum class Provenance { kKnowledge, kCompCos, kOracle };

std::string to_string(Provenance p);

// |S| x |O| raw cosine scores in [-1, 1], rows in alphabetical state order.
class FeasibilityMatrix {
 public:
  FeasibilityMatrix() = default;
  FeasibilityMatrix(std::size_t n_states, std::size_t n_objects, std::vector<double> scores,
                    Provenance provenance);

  std::size_t n_states() const { return n_states_; }
  std::size_t n_objects() const { return n_objects_; }
  Provenance provenance() const { return provenance_; }
  double at(std::size_t s, std::size_t o) const { return scores_[s * n_objects_ + o]; }
  std::span<const double> scores() const { return scores_; }

  // c^o: scores of every state for object o.
  std::vector<double> object_column(std::size_t o) const;
  // c_s: scores of every object for state s.
  std::span<const double> state_row(std::size_t s) const {
    return std::span<const double>(scores_).subspan(s * n_objects_, n_objects_);
  }

 private:
  std::size_t n_states_ = 0;
  std::size_t n_objects_ = 0;
  std::vector<double> scores_;
  Provenance provenance_ = Provenance::kOracle;
};

// Throws DomainError when either vector is all zeros or dims differ.
double cosine(std::span<const double> u, std::span<const double> v);

// c(s, o) = cos(e_s, e_o).
FeasibilityMatrix knowledge_feasibility(const EmbeddingTable& emb, const Vocabulary& vocab);

// Seen-composition estimator: for (s, o) the best cosine between o and any
// object seen with s, averaged with the best cosine between s and any state
// seen with o. A missing neighbour set contributes -1. Seen pairs score 1.
FeasibilityMatrix compcos_feasibility(const EmbeddingTable& emb, const Vocabulary& vocab,
                                      const CompositionSet& seen);

// Boolean |S| x |O| matrix, true where the score is strictly above threshold.
class FeasibilityMask {
 public:
  FeasibilityMask() = default;
  FeasibilityMask(std::size_t n_states, std::size_t n_objects, std::vector<std::uint8_t> cells);
  static FeasibilityMask all(std::size_t n_states, std::size_t n_objects);

  std::size_t n_states() const { return n_states_; }
  std::size_t n_objects() const { return n_objects_; }
  bool allowed(std::size_t s, std::size_t o) const { return cells_[s * n_objects_ + o] != 0; }
  std::span<const std::uint8_t> cells() const { return cells_; }
  std::size_t count() const;

 private:
  std::size_t n_states_ = 0;
  std::size_t n_objects_ = 0;
  std::vector<std::uint8_t> cells_;
};

// Throws DomainError if no composition passes.
FeasibilityMask feasibility_mask(const FeasibilityMatrix& f, double threshold = 0.0);

// Pseudo-label weights for the missing primitive: the state scores for a
// known object, or the object scores for a known state, with every entry
// <= 0 clamped to 0. Exactly one of the two must be given.
std::vector<double> pseudo_weight_slice(const FeasibilityMatrix& f,
                                        std::optional<int> known_state,
                                        std::optional<int> known_object);

std::string format_feasibility(const FeasibilityMatrix& f);
FeasibilityMatrix parse_feasibility(const std::string& text,
                                    Provenance provenance = Provenance::kOracle);
void save_feasibility(const FeasibilityMatrix& f, const std::filesystem::path& path);
FeasibilityMatrix load_feasibility(const std::filesystem::path& path,
                                   Provenance provenance = Provenance::kOracle);

struct RankedComposition {
  Composition comp;
  double score = 0.0;
};

// k highest (or lowest) scoring compositions; ties by (state, object).
std::vector<RankedComposition> top_compositions(const FeasibilityMatrix& f, std::size_t k,
                                                bool highest);

}  // namespace kgsp
