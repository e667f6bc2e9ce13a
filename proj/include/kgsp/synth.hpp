#pragma once

// Synthetic compositional data with a known answer: every image feature is
// a state prototype block followed by an object prototype block, each plus
// isotropic Gaussian noise.

#include <cstdint>

#include "kgsp/dataio.hpp"
#include "kgsp/feasibility.hpp"

namespace kgsp {

struct SynthSpec {
  int n_states = 8;
  int n_objects = 10;
  // Extra object names with no images; every composition using them is
  // infeasible in the oracle matrix.
  int pad_objects = 0;
  std::size_t state_dim = 16;
  std::size_t object_dim = 16;
  double noise = 0.25;
  // Standard deviation of the prototype entries.
  double signal = 1.0;
  int n_seen = 40;
  int train_per_seen = 40;
  int val_per_comp = 0;
  int test_per_comp = 10;
  std::uint64_t seed = 0;
};

struct SynthData {
  DatasetManifest manifest;
  FeatureStore features;
  FeasibilityMatrix oracle;  // 1 for generator compositions, -1 otherwise
};

// Deterministic in spec. Padding only appends vocabulary entries: records
// and features do not depend on pad_objects.
SynthData make_synthetic(const SynthSpec& spec);

}  // namespace kgsp
