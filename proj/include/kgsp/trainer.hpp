#pragma once

// Training loops: fully supervised (both labels per image), partially
// supervised with indicator loss, and the partial setting with
// pseudo-labels for the missing primitive (thresholded top-1, or
// feasibility-weighted Gumbel-max sampling) or entropy minimisation.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kgsp/dataio.hpp"
#include "kgsp/feasibility.hpp"
#include "kgsp/model.hpp"
#include "kgsp/rng.hpp"

namespace kgsp {

enum class TrainMode { kOwCzsl, kPCzsl };
enum class PseudoMode { kOff, kVanilla, kKgGumbel };

std::string to_string(TrainMode m);
std::string to_string(PseudoMode m);
TrainMode parse_train_mode(const std::string& s);
PseudoMode parse_pseudo_mode(const std::string& s);

struct TrainConfig {
  TrainMode mode = TrainMode::kOwCzsl;
  int epochs = 100;
  std::size_t batch_size = 64;
  double lr = 5e-5;
  double weight_decay = 5e-5;
  std::uint64_t seed = 0;
  PseudoMode pseudo = PseudoMode::kOff;
  double vanilla_threshold = 0.5;
  // Pseudo-label and entropy terms are off for the first warmup_epochs.
  int warmup_epochs = 5;
  double entropy_weight = 0.0;
};

// Throws DomainError on an inconsistent configuration.
void validate(const TrainConfig& config);

struct PseudoLabel {
  enum class Origin { kVanilla, kGumbelKg };
  int index = 0;
  Origin origin = Origin::kVanilla;
  std::vector<double> weights;
};

// argmax_k log w_k + g_k over the entries with w_k > 0, g_k standard
// Gumbel. Draws one Gumbel variate per positive weight, in index order.
// Throws DomainError("no feasible pseudo-label") if every weight is zero.
std::size_t gumbel_sample(std::span<const double> weights, Rng& rng);

// Samples from probs (.) slice. nullopt when the product is all zero.
std::optional<PseudoLabel> kg_pseudo_label(std::span<const double> probs,
                                           std::span<const double> slice, Rng& rng);

// Top-1 class (lowest index on ties) if its probability exceeds threshold.
std::optional<PseudoLabel> vanilla_pseudo_label(std::span<const double> probs,
                                                double threshold);

// Mean Shannon entropy of the selected rows of a row-stochastic matrix; 0
// when no row is selected.
double entropy_min_term(const Tensor& probs, std::span<const std::uint8_t> rows);

struct EpochLog {
  int epoch = 0;
  double loss_state = 0.0;
  double loss_obj = 0.0;
  double loss_pseudo_state = 0.0;
  double loss_pseudo_obj = 0.0;
  double entropy_term = 0.0;
  std::size_t skipped_pseudo_count = 0;
};

struct TrainResult {
  std::vector<EpochLog> log;
};

// Trains `model` in place on the manifest's training split.
//
// Random streams derived from config.seed: "shuffle" (batch order, one
// Fisher-Yates pass per epoch), "dropout" (state head then object head per
// step), "gumbel" (per step, records in batch order, state pseudo-label
// before object pseudo-label). The model initialisation stream is owned by
// the caller.
TrainResult train(KgSpModel& model, const DatasetManifest& manifest,
                  const FeatureStore& features, const TrainConfig& config,
                  const FeasibilityMatrix* feasibility = nullptr);

std::string format_epoch_log(std::span<const EpochLog> log);

}  // namespace kgsp
