#include "kgsp/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>

#include "kgsp/error.hpp"

namespace kgsp {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::int64_t flat(Composition c, std::size_t n_objects) {
  return static_cast<std::int64_t>(c.state) * static_cast<std::int64_t>(n_objects) + c.object;
}

void check_mask(const FeasibilityMask* mask, std::size_t ns, std::size_t no) {
  if (!mask) return;
  if (mask->n_states() != ns || mask->n_objects() != no)
    throw ShapeError("mask is " + std::to_string(mask->n_states()) + "x" +
                     std::to_string(mask->n_objects()) + ", expected " + std::to_string(ns) +
                     "x" + std::to_string(no));
  if (mask->count() == 0) throw DomainError("mask has no feasible composition");
}

void check_scored(const ScoredSet& s) {
  if (s.state_probs.rows() != s.size() || s.object_probs.rows() != s.size() ||
      s.state_probs.cols() != s.n_states || s.object_probs.cols() != s.n_objects)
    throw ShapeError("scored set: probability matrices do not match the image count");
}

}  // namespace

ScoredSet score_records(const KgSpModel& model, const FeatureStore& features,
                        std::span<const ExampleRecord* const> records, std::size_t chunk) {
  ScoredSet out;
  out.n_states = model.config().n_states;
  out.n_objects = model.config().n_objects;
  out.state_probs = Tensor({records.size(), out.n_states});
  out.object_probs = Tensor({records.size(), out.n_objects});
  for (std::size_t start = 0; start < records.size(); start += chunk) {
    const std::size_t end = std::min(records.size(), start + chunk);
    const auto part = records.subspan(start, end - start);
    const auto probs = model.predict(gather_features(features, part));
    std::copy(probs.state.values().begin(), probs.state.values().end(),
              out.state_probs.values().begin() + static_cast<std::ptrdiff_t>(start * out.n_states));
    std::copy(probs.object.values().begin(), probs.object.values().end(),
              out.object_probs.values().begin() +
                  static_cast<std::ptrdiff_t>(start * out.n_objects));
  }
  for (const auto* r : records) {
    if (!r->fully_labeled())
      throw DomainError("evaluation record '" + r->example_id + "' lacks a label");
    out.truth.push_back({*r->state, *r->object});
  }
  return out;
}

Prediction predict(std::span<const double> state_probs, std::span<const double> object_probs,
                   const FeasibilityMask* mask) {
  check_mask(mask, state_probs.size(), object_probs.size());
  const auto idx = kernels::argmax_outer(state_probs, object_probs,
                                         mask ? mask->cells() : std::span<const std::uint8_t>{});
  if (idx < 0) throw DomainError("predict: empty output space");
  const auto no = static_cast<std::int64_t>(object_probs.size());
  Prediction p;
  p.comp = {static_cast<int>(idx / no), static_cast<int>(idx % no)};
  p.score = state_probs[p.comp.state] * object_probs[p.comp.object];
  return p;
}

Marginals marginalize(std::span<const double> comp_scores, std::size_t n_states,
                      std::size_t n_objects) {
  if (comp_scores.size() != n_states * n_objects)
    throw ShapeError("marginalize: score matrix size mismatch");
  Marginals m{std::vector<double>(n_states, 0.0), std::vector<double>(n_objects, 0.0)};
  for (std::size_t s = 0; s < n_states; ++s) {
    for (std::size_t o = 0; o < n_objects; ++o) {
      const double v = comp_scores[s * n_objects + o];
      m.states[s] += v;
      m.objects[o] += v;
    }
  }
  return m;
}

double harmonic_mean(double a, double b) { return a + b > 0.0 ? 2.0 * a * b / (a + b) : 0.0; }

BiasSweep::BiasSweep(const ScoredSet& scored, const CompositionSet& seen,
                     const FeasibilityMask* mask) {
  check_scored(scored);
  const std::size_t ns = scored.n_states, no = scored.n_objects;
  check_mask(mask, ns, no);
  if (seen.n_states() != ns || seen.n_objects() != no)
    throw ShapeError("seen set does not match the score dimensions");
  if (seen.empty()) throw DomainError("biased evaluation needs a non-empty seen set");

  std::vector<std::uint8_t> groups(ns * no);
  for (std::size_t i = 0; i < groups.size(); ++i) {
    if (mask && !mask->cells()[i]) groups[i] = kernels::kExcluded;
    else groups[i] = seen.flags()[i] ? kernels::kSeen : kernels::kUnseen;
  }
  std::vector<kernels::GroupTops> tops(scored.size());
  kernels::group_tops(scored.state_probs.data(), scored.object_probs.data(), scored.size(), ns,
                      no, groups, tops);

  images_.resize(scored.size());
  for (std::size_t i = 0; i < scored.size(); ++i) {
    auto& im = images_[i];
    im.tops = tops[i];
    im.truth = flat(scored.truth[i], no);
    im.truth_seen = seen.contains(scored.truth[i]);
    (im.truth_seen ? n_seen_images_ : n_unseen_images_) += 1;
    if (im.tops.seen >= 0 && im.tops.unseen >= 0)
      flips_.push_back(im.tops.seen_score - im.tops.unseen_score);
  }
  if (n_seen_images_ == 0) throw DomainError("no test images of seen compositions");
  if (n_unseen_images_ == 0)
    throw DomainError("no test images of unseen compositions; AUC is undefined");
  std::sort(flips_.begin(), flips_.end());
  flips_.erase(std::unique(flips_.begin(), flips_.end()), flips_.end());
}

std::pair<double, double> BiasSweep::accuracy_at(double bias) const {
  std::size_t ok_seen = 0, ok_unseen = 0;
  for (const auto& im : images_) {
    std::int64_t pred;
    if (im.tops.unseen < 0) {
      pred = im.tops.seen;
    } else if (im.tops.seen < 0) {
      pred = im.tops.unseen;
    } else {
      const double u = im.tops.unseen_score + bias;
      const double s = im.tops.seen_score;
      pred = (u > s || (u == s && im.tops.unseen < im.tops.seen)) ? im.tops.unseen
                                                                  : im.tops.seen;
    }
    if (pred == im.truth) (im.truth_seen ? ok_seen : ok_unseen) += 1;
  }
  return {static_cast<double>(ok_seen) / static_cast<double>(n_seen_images_),
          static_cast<double>(ok_unseen) / static_cast<double>(n_unseen_images_)};
}

std::vector<CurvePoint> BiasSweep::curve() const {
  // Start with every image on its seen-side decision, then switch images
  // over in order of their flip point.
  long ok_seen = 0, ok_unseen = 0;
  struct Switch {
    double at;
    int d_seen;
    int d_unseen;
  };
  std::vector<Switch> switches;
  for (const auto& im : images_) {
    const std::int64_t before = im.tops.seen >= 0 ? im.tops.seen : im.tops.unseen;
    const int ok_before = before == im.truth;
    (im.truth_seen ? ok_seen : ok_unseen) += ok_before;
    if (im.tops.seen >= 0 && im.tops.unseen >= 0) {
      const int delta = static_cast<int>(im.tops.unseen == im.truth) - ok_before;
      switches.push_back({im.tops.seen_score - im.tops.unseen_score,
                          im.truth_seen ? delta : 0, im.truth_seen ? 0 : delta});
    }
  }
  std::sort(switches.begin(), switches.end(),
            [](const Switch& a, const Switch& b) { return a.at < b.at; });

  const double ns = static_cast<double>(n_seen_images_);
  const double nu = static_cast<double>(n_unseen_images_);
  auto point = [&](double bias) {
    CurvePoint p{bias, static_cast<double>(ok_seen) / ns, static_cast<double>(ok_unseen) / nu, 0};
    p.hm = harmonic_mean(p.seen_acc, p.unseen_acc);
    return p;
  };
  std::vector<CurvePoint> out{point(-kInf)};
  std::size_t k = 0;
  for (std::size_t j = 0; j < flips_.size(); ++j) {
    while (k < switches.size() && switches[k].at == flips_[j]) {
      ok_seen += switches[k].d_seen;
      ok_unseen += switches[k].d_unseen;
      ++k;
    }
    const double bias =
        j + 1 < flips_.size() ? flips_[j] + 0.5 * (flips_[j + 1] - flips_[j]) : kInf;
    out.push_back(point(bias));
  }
  if (flips_.empty()) out.push_back(point(kInf));
  return out;
}

double curve_auc(std::span<const CurvePoint> curve) {
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    area += (curve[i - 1].seen_acc - curve[i].seen_acc) *
            (curve[i - 1].unseen_acc + curve[i].unseen_acc) / 2.0;
  }
  return 100.0 * std::abs(area);
}

MetricsReport evaluate_biased(const ScoredSet& scored, const CompositionSet& seen,
                              const FeasibilityMask* mask) {
  BiasSweep sweep(scored, seen, mask);
  MetricsReport r;
  r.mode = MetricsMode::kBiased;
  r.curve = sweep.curve();
  for (const auto& p : r.curve) {
    r.best_seen = std::max(r.best_seen, p.seen_acc);
    r.best_unseen = std::max(r.best_unseen, p.unseen_acc);
    r.best_hm = std::max(r.best_hm, p.hm);
  }
  r.auc = curve_auc(r.curve);
  const auto [s0, u0] = sweep.accuracy_at(0.0);
  r.seen_acc = s0;
  r.unseen_acc = u0;
  r.hm = harmonic_mean(s0, u0);
  return r;
}

MetricsReport evaluate_unbiased(const ScoredSet& scored, const CompositionSet& seen,
                                const FeasibilityMask* mask) {
  check_scored(scored);
  check_mask(mask, scored.n_states, scored.n_objects);
  std::vector<std::int64_t> pred(scored.size());
  kernels::argmax_outer_batch(scored.state_probs.data(), scored.object_probs.data(),
                              scored.size(), scored.n_states, scored.n_objects,
                              mask ? mask->cells() : std::span<const std::uint8_t>{}, pred);
  std::size_t n_seen = 0, n_unseen = 0, ok_seen = 0, ok_unseen = 0;
  for (std::size_t i = 0; i < scored.size(); ++i) {
    const bool is_seen = seen.contains(scored.truth[i]);
    const bool ok = pred[i] == flat(scored.truth[i], scored.n_objects);
    if (is_seen) {
      ++n_seen;
      ok_seen += ok;
    } else {
      ++n_unseen;
      ok_unseen += ok;
    }
  }
  MetricsReport r;
  r.mode = MetricsMode::kUnbiased;
  r.seen_acc = n_seen ? static_cast<double>(ok_seen) / static_cast<double>(n_seen) : 0.0;
  r.unseen_acc = n_unseen ? static_cast<double>(ok_unseen) / static_cast<double>(n_unseen) : 0.0;
  r.hm = harmonic_mean(r.seen_acc, r.unseen_acc);
  r.best_seen = r.seen_acc;
  r.best_unseen = r.unseen_acc;
  r.best_hm = r.hm;
  r.curve = {{0.0, r.seen_acc, r.unseen_acc, r.hm}};
  return r;
}

MetricsReport evaluate_biased(const KgSpModel& model, const DatasetManifest& manifest,
                              const FeatureStore& features, const CompositionSet& seen,
                              const FeasibilityMask* mask, Split split) {
  const auto recs = manifest.split(split);
  return evaluate_biased(score_records(model, features, recs), seen, mask);
}

MetricsReport evaluate_unbiased(const KgSpModel& model, const DatasetManifest& manifest,
                                const FeatureStore& features, const CompositionSet& seen,
                                const FeasibilityMask* mask, Split split) {
  const auto recs = manifest.split(split);
  return evaluate_unbiased(score_records(model, features, recs), seen, mask);
}

PrimitiveAccuracy primitive_accuracy(const KgSpModel& model, const FeatureStore& features,
                                     std::span<const ExampleRecord* const> records) {
  std::size_t ns = 0, no = 0, ok_s = 0, ok_o = 0;
  for (std::size_t start = 0; start < records.size(); start += 512) {
    const auto part = records.subspan(start, std::min<std::size_t>(512, records.size() - start));
    const auto probs = model.predict(gather_features(features, part));
    for (std::size_t i = 0; i < part.size(); ++i) {
      auto argmax = [](std::span<const double> v) {
        return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
      };
      if (part[i]->state) {
        ++ns;
        ok_s += argmax(probs.state.row(i)) == *part[i]->state;
      }
      if (part[i]->object) {
        ++no;
        ok_o += argmax(probs.object.row(i)) == *part[i]->object;
      }
    }
  }
  return {ns ? static_cast<double>(ok_s) / static_cast<double>(ns) : 0.0,
          no ? static_cast<double>(ok_o) / static_cast<double>(no) : 0.0};
}

std::string format_metrics_csv(const MetricsReport& r) {
  std::string out = "bias,seen_acc,unseen_acc,hm\n";
  char buf[256];
  for (const auto& p : r.curve) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g\n", p.bias, p.seen_acc,
                  p.unseen_acc, p.hm);
    out += buf;
  }
  std::snprintf(buf, sizeof buf,
                "# summary,mode=%s,best_seen=%.17g,best_unseen=%.17g,best_hm=%.17g,auc=%.17g,"
                "seen_acc=%.17g,unseen_acc=%.17g,hm=%.17g\n",
                r.mode == MetricsMode::kBiased ? "biased" : "unbiased", r.best_seen,
                r.best_unseen, r.best_hm, r.auc, r.seen_acc, r.unseen_acc, r.hm);
  out += buf;
  return out;
}

std::string format_metrics_table(const MetricsReport& r) {
  char buf[512];
  if (r.mode == MetricsMode::kUnbiased) {
    std::snprintf(buf, sizeof buf,
                  "mode      unbiased\n"
                  "seen      %6.2f\n"
                  "unseen    %6.2f\n"
                  "hm        %6.2f\n",
                  100.0 * r.seen_acc, 100.0 * r.unseen_acc, 100.0 * r.hm);
    return buf;
  }
  std::snprintf(buf, sizeof buf,
                "mode         biased (%zu curve points)\n"
                "best seen    %6.2f\n"
                "best unseen  %6.2f\n"
                "best hm      %6.2f\n"
                "auc          %6.2f\n"
                "at bias 0    seen %.2f  unseen %.2f  hm %.2f\n",
                r.curve.size(), 100.0 * r.best_seen, 100.0 * r.best_unseen, 100.0 * r.best_hm,
                r.auc, 100.0 * r.seen_acc, 100.0 * r.unseen_acc, 100.0 * r.hm);
  return buf;
}

MetricsReport parse_metrics_csv(const std::string& text) {
  MetricsReport r;
  std::istringstream in(text);
  std::string line;
  bool header = false, summary = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (!header) {
      if (line != "bias,seen_acc,unseen_acc,hm") throw DomainError("metrics file: bad header");
      header = true;
      continue;
    }
    if (line.rfind("# summary", 0) == 0) {
      std::map<std::string, std::string> kv;
      std::istringstream fields(line);
      std::string f;
      while (std::getline(fields, f, ',')) {
        const auto eq = f.find('=');
        if (eq != std::string::npos) kv[f.substr(0, eq)] = f.substr(eq + 1);
      }
      try {
        r.mode = kv.at("mode") == "biased" ? MetricsMode::kBiased : MetricsMode::kUnbiased;
        r.best_seen = std::stod(kv.at("best_seen"));
        r.best_unseen = std::stod(kv.at("best_unseen"));
        r.best_hm = std::stod(kv.at("best_hm"));
        r.auc = std::stod(kv.at("auc"));
        r.seen_acc = std::stod(kv.at("seen_acc"));
        r.unseen_acc = std::stod(kv.at("unseen_acc"));
        r.hm = std::stod(kv.at("hm"));
      } catch (const std::exception&) {
        throw DomainError("metrics file: malformed summary line");
      }
      summary = true;
      continue;
    }
    CurvePoint p;
    std::istringstream fields(line);
    std::string f[4];
    for (auto& x : f) std::getline(fields, x, ',');
    try {
      p = {std::stod(f[0]), std::stod(f[1]), std::stod(f[2]), std::stod(f[3])};
    } catch (const std::exception&) {
      throw DomainError("metrics file: malformed row '" + line + "'");
    }
    r.curve.push_back(p);
  }
  if (!summary) throw DomainError("metrics file: missing summary line");
  return r;
}

}  // namespace kgsp
