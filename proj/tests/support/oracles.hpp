#pragma once

// Independent reference computations used by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "kgsp/dataio.hpp"
#include "kgsp/eval.hpp"
#include "kgsp/rng.hpp"
#include "kgsp/tape.hpp"

namespace kgsp::testing {

// Records a scalar loss on the tape from the given parameters.
using LossBuilder = std::function<Var(Tape&)>;

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

inline double eval_loss(const LossBuilder& build) {
  Tape tape;
  return tape.value(build(tape))[0];
}

// Central differences against the analytic gradient. `per_param` = 0 checks
// every entry, otherwise that many entries drawn from `pick`.
inline GradCheck check_gradients(const LossBuilder& build, std::span<Parameter* const> params,
                                 double h = 1e-5, std::size_t per_param = 0,
                                 Rng* pick = nullptr) {
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    tape.backward(build(tape));
  }
  GradCheck out;
  for (Parameter* p : params) {
    const std::size_t n = p->value.size();
    std::vector<std::size_t> idx;
    if (per_param == 0 || per_param >= n) {
      for (std::size_t i = 0; i < n; ++i) idx.push_back(i);
    } else {
      for (std::size_t i = 0; i < per_param; ++i) idx.push_back(pick->below(n));
    }
    for (std::size_t i : idx) {
      const double orig = p->value[i];
      p->value[i] = orig + h;
      const double up = eval_loss(build);
      p->value[i] = orig - h;
      const double down = eval_loss(build);
      p->value[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      out.max_rel_error = std::max(out.max_rel_error, relative_error(p->grad[i], numeric));
      ++out.checked;
    }
  }
  return out;
}

// Exhaustive masked argmax over the outer product; ties to smallest (s, o).
inline std::int64_t brute_argmax(std::span<const double> p, std::span<const double> q,
                                 std::span<const std::uint8_t> allowed) {
  std::int64_t best = -1;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s < p.size(); ++s) {
    for (std::size_t o = 0; o < q.size(); ++o) {
      const std::size_t flat = s * q.size() + o;
      if (!allowed.empty() && !allowed[flat]) continue;
      const double score = p[s] * q[o];
      if (best < 0 || score > best_score) {
        best = static_cast<std::int64_t>(flat);
        best_score = score;
      }
    }
  }
  return best;
}

inline std::vector<double> random_distribution(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  double sum = 0.0;
  for (auto& x : v) sum += x = rng.uniform();
  for (auto& x : v) x /= sum;
  return v;
}

// Fully labeled toy manifest: `per_comp` training images for each listed
// composition (state, object), plus one test image per composition.
inline DatasetManifest toy_manifest(std::size_t n_states, std::size_t n_objects,
                                    const std::vector<Composition>& train_comps,
                                    const std::vector<int>& per_comp) {
  std::vector<std::string> states, objects;
  auto name = [](char prefix, std::size_t i) {
    return std::string(1, prefix) + (i < 10 ? "0" : "") + std::to_string(i);
  };
  for (std::size_t s = 0; s < n_states; ++s) states.push_back(name('s', s));
  for (std::size_t o = 0; o < n_objects; ++o) objects.push_back(name('o', o));
  DatasetManifest m;
  m.vocab = Vocabulary(states, objects);
  m.seen = CompositionSet(n_states, n_objects);
  for (std::size_t i = 0; i < train_comps.size(); ++i) {
    for (int k = 0; k < per_comp[i]; ++k) {
      ExampleRecord r;
      r.feature_row = m.records.size();
      r.example_id = "tr" + std::to_string(r.feature_row);
      r.state = train_comps[i].state;
      r.object = train_comps[i].object;
      m.records.push_back(r);
      m.seen.insert(train_comps[i]);
    }
  }
  return m;
}

// 2 states x 3 objects; seen = {(0,0), (0,1), (1,2)}, the other three are
// unseen. Twelve images, two per composition, with fixed probabilities.
struct ToyEvalSet {
  ScoredSet scored;
  CompositionSet seen;
};

inline ToyEvalSet toy_eval_set() {
  ToyEvalSet t;
  t.seen = CompositionSet(2, 3);
  for (Composition c : {Composition{0, 0}, Composition{0, 1}, Composition{1, 2}}) t.seen.insert(c);
  struct Row {
    double p0;
    double q0, q1;
    Composition truth;
  };
  // p = (p0, 1 - p0), q = (q0, q1, 1 - q0 - q1).
  const Row rows[] = {
      {0.90, 0.70, 0.20, {0, 0}}, {0.55, 0.30, 0.25, {0, 0}},
      {0.80, 0.10, 0.60, {0, 1}}, {0.35, 0.15, 0.45, {0, 1}},
      {0.20, 0.05, 0.10, {1, 2}}, {0.45, 0.40, 0.20, {1, 2}},
      {0.60, 0.20, 0.15, {0, 2}}, {0.75, 0.35, 0.05, {0, 2}},
      {0.30, 0.50, 0.30, {1, 0}}, {0.65, 0.62, 0.08, {1, 0}},
      {0.10, 0.25, 0.55, {1, 1}}, {0.52, 0.33, 0.36, {1, 1}},
  };
  const std::size_t n = std::size(rows);
  t.scored.n_states = 2;
  t.scored.n_objects = 3;
  t.scored.state_probs = Tensor({n, 2});
  t.scored.object_probs = Tensor({n, 3});
  for (std::size_t i = 0; i < n; ++i) {
    t.scored.state_probs.at(i, 0) = rows[i].p0;
    t.scored.state_probs.at(i, 1) = 1.0 - rows[i].p0;
    t.scored.object_probs.at(i, 0) = rows[i].q0;
    t.scored.object_probs.at(i, 1) = rows[i].q1;
    t.scored.object_probs.at(i, 2) = 1.0 - rows[i].q0 - rows[i].q1;
    t.scored.truth.push_back(rows[i].truth);
  }
  return t;
}

// Accuracy pair at bias b by enumerating every cell of every image.
inline std::pair<double, double> brute_accuracy(const ScoredSet& sc, const CompositionSet& seen,
                                                double bias,
                                                std::span<const std::uint8_t> allowed = {}) {
  std::size_t ns = 0, nu = 0, ok_s = 0, ok_u = 0;
  for (std::size_t i = 0; i < sc.size(); ++i) {
    std::int64_t best = -1;
    double best_score = 0.0;
    for (std::size_t s = 0; s < sc.n_states; ++s)
      for (std::size_t o = 0; o < sc.n_objects; ++o) {
        const std::size_t flat = s * sc.n_objects + o;
        if (!allowed.empty() && !allowed[flat]) continue;
        double score = sc.state_probs.at(i, s) * sc.object_probs.at(i, o);
        if (!seen.contains({static_cast<int>(s), static_cast<int>(o)})) score += bias;
        if (best < 0 || score > best_score) {
          best = static_cast<std::int64_t>(flat);
          best_score = score;
        }
      }
    const Composition t = sc.truth[i];
    const bool ok = best == static_cast<std::int64_t>(t.state * sc.n_objects + t.object);
    if (seen.contains(t)) {
      ++ns;
      ok_s += ok;
    } else {
      ++nu;
      ok_u += ok;
    }
  }
  return {ns ? static_cast<double>(ok_s) / static_cast<double>(ns) : 0.0,
          nu ? static_cast<double>(ok_u) / static_cast<double>(nu) : 0.0};
}

// Trapezoidal AUC (x100) over a uniform grid of biases spanning [lo, hi].
inline double dense_grid_auc(const ScoredSet& sc, const CompositionSet& seen, double lo,
                             double hi, std::size_t n) {
  double area = 0.0;
  auto prev = brute_accuracy(sc, seen, lo);
  for (std::size_t k = 1; k < n; ++k) {
    const double b = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(n - 1);
    const auto cur = brute_accuracy(sc, seen, b);
    area += (prev.first - cur.first) * (prev.second + cur.second) / 2.0;
    prev = cur;
  }
  return 100.0 * std::abs(area);
}

}  // namespace kgsp::testing
