#include "kgsp/synth.hpp"

#include <algorithm>
#include <cstdio>

#include "kgsp/error.hpp"
#include "kgsp/rng.hpp"

namespace kgsp {

namespace {

std::string numbered(const char* prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%02d", prefix, i);
  return buf;
}

template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

}  // namespace

SynthData make_synthetic(const SynthSpec& spec) {
  const int ns = spec.n_states, no = spec.n_objects;
  if (ns < 2 || no < 2) throw DomainError("synth: need at least 2 states and 2 objects");
  if (spec.pad_objects < 0) throw DomainError("synth: pad_objects must be non-negative");
  if (spec.n_seen < std::max(ns, no))
    throw DomainError("synth: n_seen must be at least max(states, objects) so every primitive "
                      "is seen in training");
  if (spec.n_seen >= ns * no)
    throw DomainError("synth: n_seen must leave at least one unseen composition");
  if (spec.train_per_seen < 1 || spec.test_per_comp < 1 || spec.val_per_comp < 0)
    throw DomainError("synth: image counts must be positive");
  if (spec.noise < 0.0 || spec.signal <= 0.0) throw DomainError("synth: bad noise/signal");
  if (spec.state_dim == 0 || spec.object_dim == 0) throw DomainError("synth: empty signal block");

  std::vector<std::string> states, objects;
  for (int s = 0; s < ns; ++s) states.push_back(numbered("state", s));
  for (int o = 0; o < no + spec.pad_objects; ++o) objects.push_back(numbered("object", o));

  SynthData out;
  auto& m = out.manifest;
  m.vocab = Vocabulary(states, objects);
  const std::size_t n_obj_total = m.vocab.n_objects();
  m.seen = CompositionSet(m.vocab.n_states(), n_obj_total);

  Rng proto_rng = Rng::stream(spec.seed, "synth.prototypes");
  std::vector<std::vector<double>> sp(ns), op(no);
  for (auto& p : sp) {
    p.resize(spec.state_dim);
    for (auto& x : p) x = spec.signal * proto_rng.normal();
  }
  for (auto& p : op) {
    p.resize(spec.object_dim);
    for (auto& x : p) x = spec.signal * proto_rng.normal();
  }

  // Seen set: a covering diagonal over shuffled primitives, then random fill.
  Rng seen_rng = Rng::stream(spec.seed, "synth.seen");
  std::vector<int> ps(ns), po(no);
  for (int i = 0; i < ns; ++i) ps[i] = i;
  for (int i = 0; i < no; ++i) po[i] = i;
  shuffle(ps, seen_rng);
  shuffle(po, seen_rng);
  CompositionSet seen(ns, no);
  for (int i = 0; i < std::max(ns, no); ++i) seen.insert({ps[i % ns], po[i % no]});
  std::vector<Composition> rest;
  for (int s = 0; s < ns; ++s)
    for (int o = 0; o < no; ++o)
      if (!seen.contains({s, o})) rest.push_back({s, o});
  shuffle(rest, seen_rng);
  for (std::size_t i = 0; seen.size() < static_cast<std::size_t>(spec.n_seen); ++i)
    seen.insert(rest[i]);

  const std::size_t dim = spec.state_dim + spec.object_dim;
  Rng noise_rng = Rng::stream(spec.seed, "synth.noise");
  auto add_images = [&](Composition c, int count, Split split) {
    for (int k = 0; k < count; ++k) {
      ExampleRecord r;
      r.feature_row = m.records.size();
      r.example_id = to_string(split) + "_" + std::to_string(r.feature_row);
      r.state = c.state;
      r.object = c.object;
      r.split = split;
      for (double x : sp[c.state])
        out.features.values.push_back(static_cast<float>(x + spec.noise * noise_rng.normal()));
      for (double x : op[c.object])
        out.features.values.push_back(static_cast<float>(x + spec.noise * noise_rng.normal()));
      m.records.push_back(std::move(r));
    }
  };
  for (auto c : seen.members()) {
    add_images(c, spec.train_per_seen, Split::kTrain);
    m.seen.insert(c);
  }
  for (int s = 0; s < ns; ++s)
    for (int o = 0; o < no; ++o) add_images({s, o}, spec.val_per_comp, Split::kVal);
  for (int s = 0; s < ns; ++s)
    for (int o = 0; o < no; ++o) add_images({s, o}, spec.test_per_comp, Split::kTest);
  out.features.n_rows = m.records.size();
  out.features.dim = dim;

  std::vector<double> oracle(m.vocab.n_states() * n_obj_total, -1.0);
  for (int s = 0; s < ns; ++s)
    for (int o = 0; o < no; ++o) oracle[s * n_obj_total + o] = 1.0;
  out.oracle = FeasibilityMatrix(m.vocab.n_states(), n_obj_total, std::move(oracle),
                                 Provenance::kOracle);
  return out;
}

}  // namespace kgsp
