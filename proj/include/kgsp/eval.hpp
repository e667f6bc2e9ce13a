#pragma once

// Prediction over the state x object space and the generalised evaluation
// protocol: seen/unseen accuracy traced over a calibration bias added to
// unseen compositions, best harmonic mean and area under the curve.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kgsp/dataio.hpp"
#include "kgsp/feasibility.hpp"
#include "kgsp/kernels.hpp"
#include "kgsp/model.hpp"

namespace kgsp {

// Per-image primitive probabilities plus ground truth. The joint score of
// (s, o) for image i is state_probs(i, s) * object_probs(i, o).
struct ScoredSet {
  std::size_t n_states = 0;
  std::size_t n_objects = 0;
  Tensor state_probs;   // n x |S|
  Tensor object_probs;  // n x |O|
  std::vector<Composition> truth;

  std::size_t size() const { return truth.size(); }
};

// Eval-mode forward over the records, in chunks of `chunk` rows.
ScoredSet score_records(const KgSpModel& model, const FeatureStore& features,
                        std::span<const ExampleRecord* const> records, std::size_t chunk = 512);

struct Prediction {
  Composition comp;
  double score = 0.0;
};

// Best composition by product score, restricted to the mask when given.
// Ties go to the smallest (state, object).
Prediction predict(std::span<const double> state_probs, std::span<const double> object_probs,
                   const FeasibilityMask* mask = nullptr);

struct Marginals {
  std::vector<double> states;
  std::vector<double> objects;
};

// Row sums (per state) and column sums (per object) of a |S| x |O| matrix.
Marginals marginalize(std::span<const double> comp_scores, std::size_t n_states,
                      std::size_t n_objects);

struct CurvePoint {
  double bias = 0.0;
  double seen_acc = 0.0;
  double unseen_acc = 0.0;
  double hm = 0.0;
};

enum class MetricsMode { kBiased, kUnbiased };

struct MetricsReport {
  MetricsMode mode = MetricsMode::kBiased;
  std::vector<CurvePoint> curve;  // biased: ascending bias
  double best_seen = 0.0;
  double best_unseen = 0.0;
  double best_hm = 0.0;
  double auc = 0.0;  // percent of the unit square
  // Single operating point (unbiased mode).
  double seen_acc = 0.0;
  double unseen_acc = 0.0;
  double hm = 0.0;
};

double harmonic_mean(double a, double b);

// Seen/unseen accuracy as a function of the bias added to every unseen
// composition's score. Built once per scored set; queries are cheap.
class BiasSweep {
 public:
  BiasSweep(const ScoredSet& scored, const CompositionSet& seen, const FeasibilityMask* mask);

  // Accuracy pair at an exact bias, ties between the best seen and best
  // unseen cell resolved to the smaller (state, object).
  std::pair<double, double> accuracy_at(double bias) const;

  // Sorted distinct finite biases at which some image's decision flips:
  // best seen score minus best unseen score, over all images that have both.
  const std::vector<double>& flip_points() const { return flips_; }

  // One point per interval between consecutive flip points (its midpoint),
  // plus -inf and +inf.
  std::vector<CurvePoint> curve() const;

  std::size_t n_seen_images() const { return n_seen_images_; }
  std::size_t n_unseen_images() const { return n_unseen_images_; }

 private:
  struct Image {
    kernels::GroupTops tops;
    std::int64_t truth = 0;
    bool truth_seen = false;
  };
  std::vector<Image> images_;
  std::vector<double> flips_;
  std::size_t n_seen_images_ = 0;
  std::size_t n_unseen_images_ = 0;
};

// Trapezoidal area under the (seen, unseen) curve, x100.
double curve_auc(std::span<const CurvePoint> curve);

MetricsReport evaluate_biased(const ScoredSet& scored, const CompositionSet& seen,
                              const FeasibilityMask* mask = nullptr);
MetricsReport evaluate_unbiased(const ScoredSet& scored, const CompositionSet& seen,
                                const FeasibilityMask* mask = nullptr);

MetricsReport evaluate_biased(const KgSpModel& model, const DatasetManifest& manifest,
                              const FeatureStore& features, const CompositionSet& seen,
                              const FeasibilityMask* mask = nullptr, Split split = Split::kTest);
MetricsReport evaluate_unbiased(const KgSpModel& model, const DatasetManifest& manifest,
                                const FeatureStore& features, const CompositionSet& seen,
                                const FeasibilityMask* mask = nullptr,
                                Split split = Split::kTest);

struct PrimitiveAccuracy {
  double state = 0.0;
  double object = 0.0;
};

// Top-1 accuracy of each head on its own, over records with that label.
PrimitiveAccuracy primitive_accuracy(const KgSpModel& model, const FeatureStore& features,
                                     std::span<const ExampleRecord* const> records);

// CSV: "bias,seen_acc,unseen_acc,hm" rows, then a "# summary" line.
std::string format_metrics_csv(const MetricsReport& report);
std::string format_metrics_table(const MetricsReport& report);
MetricsReport parse_metrics_csv(const std::string& text);

}  // namespace kgsp
