#include "kgsp/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "kgsp/adam.hpp"
#include "kgsp/error.hpp"
#include "kgsp/kernels.hpp"

namespace kgsp {

std::string to_string(TrainMode m) { return m == TrainMode::kOwCzsl ? "owczsl" : "pczsl"; }

std::string to_string(PseudoMode m) {
  switch (m) {
    case PseudoMode::kOff: return "off";
    case PseudoMode::kVanilla: return "vanilla";
    case PseudoMode::kKgGumbel: return "kg";
  }
  return "?";
}

TrainMode parse_train_mode(const std::string& s) {
  if (s == "owczsl") return TrainMode::kOwCzsl;
  if (s == "pczsl") return TrainMode::kPCzsl;
  throw DomainError("unknown training mode '" + s + "' (owczsl|pczsl)");
}

PseudoMode parse_pseudo_mode(const std::string& s) {
  if (s == "off") return PseudoMode::kOff;
  if (s == "vanilla") return PseudoMode::kVanilla;
  if (s == "kg") return PseudoMode::kKgGumbel;
  throw DomainError("unknown pseudo-label mode '" + s + "' (off|vanilla|kg)");
}

void validate(const TrainConfig& c) {
  if (c.epochs < 1) throw DomainError("epochs must be positive");
  if (c.batch_size < 1) throw DomainError("batch size must be positive");
  if (!(c.lr > 0.0)) throw DomainError("learning rate must be positive");
  if (c.weight_decay < 0.0) throw DomainError("weight decay must be non-negative");
  if (c.entropy_weight < 0.0) throw DomainError("entropy weight must be non-negative");
  if (c.warmup_epochs < 0) throw DomainError("warmup epochs must be non-negative");
  const bool unsupervised = c.pseudo != PseudoMode::kOff || c.entropy_weight > 0.0;
  if (unsupervised && c.warmup_epochs >= c.epochs)
    throw DomainError("warmup_epochs must be smaller than epochs");
  if (c.pseudo == PseudoMode::kVanilla &&
      !(c.vanilla_threshold > 0.0 && c.vanilla_threshold < 1.0))
    throw DomainError("vanilla pseudo-label threshold must be in (0, 1)");
  if (c.mode == TrainMode::kOwCzsl && unsupervised)
    throw DomainError("pseudo-labels and entropy minimisation need --mode pczsl");
}

std::size_t gumbel_sample(std::span<const double> weights, Rng& rng) {
  std::size_t best = 0;
  double best_key = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    if (!(weights[k] > 0.0)) continue;
    const double key = std::log(weights[k]) + rng.gumbel();
    if (!any || key > best_key) {
      best = k;
      best_key = key;
      any = true;
    }
  }
  if (!any) throw DomainError("no feasible pseudo-label");
  return best;
}

std::optional<PseudoLabel> kg_pseudo_label(std::span<const double> probs,
                                           std::span<const double> slice, Rng& rng) {
  if (probs.size() != slice.size())
    throw ShapeError("kg_pseudo_label: " + std::to_string(probs.size()) + " probabilities vs " +
                     std::to_string(slice.size()) + " feasibility weights");
  PseudoLabel pl;
  pl.origin = PseudoLabel::Origin::kGumbelKg;
  pl.weights.resize(probs.size());
  bool any = false;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    const double w = slice[k] > 0.0 ? probs[k] * slice[k] : 0.0;
    pl.weights[k] = w;
    any = any || w > 0.0;
  }
  if (!any) return std::nullopt;
  pl.index = static_cast<int>(gumbel_sample(pl.weights, rng));
  return pl;
}

std::optional<PseudoLabel> vanilla_pseudo_label(std::span<const double> probs,
                                                double threshold) {
  if (probs.empty()) return std::nullopt;
  std::size_t best = 0;
  for (std::size_t k = 1; k < probs.size(); ++k)
    if (probs[k] > probs[best]) best = k;
  if (!(probs[best] > threshold)) return std::nullopt;
  PseudoLabel pl;
  pl.index = static_cast<int>(best);
  pl.origin = PseudoLabel::Origin::kVanilla;
  pl.weights.assign(probs.begin(), probs.end());
  return pl;
}

double entropy_min_term(const Tensor& probs, std::span<const std::uint8_t> rows) {
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    if (!rows[r]) continue;
    double h = 0.0;
    for (double p : probs.row(r))
      if (p > 0.0) h -= p * std::log(p);
    total += h;
    ++n;
  }
  return n ? total / static_cast<double>(n) : 0.0;
}

namespace {

void check_manifest_mode(const DatasetManifest& m, const TrainConfig& c,
                         const FeasibilityMatrix* feas) {
  std::size_t n_train = 0;
  for (const auto& r : m.records) {
    if (r.split != Split::kTrain) continue;
    ++n_train;
    const int labels = (r.state ? 1 : 0) + (r.object ? 1 : 0);
    if (c.mode == TrainMode::kOwCzsl && labels != 2)
      throw DomainError("mode owczsl needs fully labeled training records; '" + r.example_id +
                        "' has a missing label (use --mode pczsl)");
    if (c.mode == TrainMode::kPCzsl && labels != 1)
      throw DomainError("mode pczsl needs exactly one label per training record; '" +
                        r.example_id + "' has " + std::to_string(labels));
  }
  if (n_train == 0) throw DomainError("manifest has no training records");
  if (c.pseudo == PseudoMode::kKgGumbel) {
    if (!feas) throw DomainError("kg pseudo-labels need a feasibility matrix");
    if (feas->n_states() != m.vocab.n_states() || feas->n_objects() != m.vocab.n_objects())
      throw DomainError("feasibility matrix is " + std::to_string(feas->n_states()) + "x" +
                        std::to_string(feas->n_objects()) + " but the vocabulary is " +
                        std::to_string(m.vocab.n_states()) + "x" +
                        std::to_string(m.vocab.n_objects()));
  }
}

struct PseudoTargets {
  std::vector<int> state;
  std::vector<int> object;
  std::size_t n_state = 0;
  std::size_t n_object = 0;
  std::size_t skipped = 0;
};

PseudoTargets make_pseudo_targets(std::span<const ExampleRecord* const> batch,
                                  const Tensor& state_probs, const Tensor& object_probs,
                                  const TrainConfig& config, const FeasibilityMatrix* feas,
                                  Rng& gumbel_rng) {
  PseudoTargets t;
  t.state.assign(batch.size(), -1);
  t.object.assign(batch.size(), -1);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& r = *batch[i];
    if (!r.state) {
      std::optional<PseudoLabel> pl;
      if (config.pseudo == PseudoMode::kKgGumbel) {
        pl = kg_pseudo_label(state_probs.row(i), feas->object_column(*r.object), gumbel_rng);
      } else {
        pl = vanilla_pseudo_label(state_probs.row(i), config.vanilla_threshold);
      }
      if (pl) {
        t.state[i] = pl->index;
        ++t.n_state;
      } else {
        ++t.skipped;
      }
    }
    if (!r.object) {
      std::optional<PseudoLabel> pl;
      if (config.pseudo == PseudoMode::kKgGumbel) {
        auto row = feas->state_row(*r.state);
        pl = kg_pseudo_label(object_probs.row(i), row, gumbel_rng);
      } else {
        pl = vanilla_pseudo_label(object_probs.row(i), config.vanilla_threshold);
      }
      if (pl) {
        t.object[i] = pl->index;
        ++t.n_object;
      } else {
        ++t.skipped;
      }
    }
  }
  return t;
}

Tensor softmax_of(const Tensor& logits) {
  Tensor p(logits.shape());
  kernels::softmax_rows(logits.data(), logits.rows(), logits.cols(), p.data());
  return p;
}

}  // namespace

TrainResult train(KgSpModel& model, const DatasetManifest& manifest,
                  const FeatureStore& features, const TrainConfig& config,
                  const FeasibilityMatrix* feasibility) {
  validate(config);
  check_manifest_mode(manifest, config, feasibility);
  check_feature_rows(manifest, features.n_rows);
  if (features.dim != model.config().input_dim)
    throw DomainError("features are " + std::to_string(features.dim) +
                      "-dim but the model expects " + std::to_string(model.config().input_dim));
  if (model.config().n_states != manifest.vocab.n_states() ||
      model.config().n_objects != manifest.vocab.n_objects())
    throw DomainError("model class counts do not match the manifest vocabulary");

  const auto train_records = manifest.split(Split::kTrain);
  Rng shuffle_rng = Rng::stream(config.seed, "shuffle");
  Rng dropout_rng = Rng::stream(config.seed, "dropout");
  Rng gumbel_rng = Rng::stream(config.seed, "gumbel");
  Adam adam(AdamConfig{config.lr, 0.9, 0.999, 1e-8, config.weight_decay});
  const auto params = model.parameters();

  TrainResult result;
  std::vector<std::size_t> order(train_records.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<const ExampleRecord*> batch;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    const bool unsupervised_on = epoch >= config.warmup_epochs;
    EpochLog log;
    log.epoch = epoch;
    struct Acc {
      double sum = 0.0;
      std::size_t n = 0;
      void add(double v) { sum += v; ++n; }
      double mean() const { return n ? sum / static_cast<double>(n) : 0.0; }
    } a_state, a_obj, a_pstate, a_pobj, a_ent;

    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      batch.clear();
      for (std::size_t k = start; k < end; ++k) batch.push_back(train_records[order[k]]);

      model.zero_grad();
      Tape tape;
      Var x = tape.constant(gather_features(features, batch));
      Var sl = model.state_head().forward(tape, x, Mode::kTrain, &dropout_rng);
      Var ol = model.object_head().forward(tape, x, Mode::kTrain, &dropout_rng);
      VisprodLoss sup = visprod_loss(tape, sl, ol, batch);
      Var total = sup.total;
      if (sup.n_state) a_state.add(sup.state_loss);
      if (sup.n_object) a_obj.add(sup.object_loss);

      if (unsupervised_on && config.mode == TrainMode::kPCzsl) {
        if (config.pseudo != PseudoMode::kOff) {
          const Tensor sp = softmax_of(tape.value(sl));
          const Tensor op = softmax_of(tape.value(ol));
          auto pt = make_pseudo_targets(batch, sp, op, config, feasibility, gumbel_rng);
          log.skipped_pseudo_count += pt.skipped;
          if (pt.n_state) {
            Var l = tape.cross_entropy(sl, pt.state, static_cast<double>(pt.n_state));
            a_pstate.add(tape.value(l)[0]);
            total = tape.add(total, l);
          }
          if (pt.n_object) {
            Var l = tape.cross_entropy(ol, pt.object, static_cast<double>(pt.n_object));
            a_pobj.add(tape.value(l)[0]);
            total = tape.add(total, l);
          }
        }
        if (config.entropy_weight > 0.0) {
          std::vector<std::uint8_t> no_state(batch.size()), no_obj(batch.size());
          std::size_t ns = 0, no = 0;
          for (std::size_t i = 0; i < batch.size(); ++i) {
            no_state[i] = !batch[i]->state;
            no_obj[i] = !batch[i]->object;
            ns += no_state[i];
            no += no_obj[i];
          }
          double ent = 0.0;
          if (ns) {
            Var e = tape.softmax_entropy(sl, no_state, static_cast<double>(ns));
            ent += tape.value(e)[0];
            total = tape.add(total, tape.scale(e, config.entropy_weight));
          }
          if (no) {
            Var e = tape.softmax_entropy(ol, no_obj, static_cast<double>(no));
            ent += tape.value(e)[0];
            total = tape.add(total, tape.scale(e, config.entropy_weight));
          }
          if (ns || no) a_ent.add(ent);
        }
      }

      tape.backward(total);
      adam.step(params);
    }
    log.loss_state = a_state.mean();
    log.loss_obj = a_obj.mean();
    log.loss_pseudo_state = a_pstate.mean();
    log.loss_pseudo_obj = a_pobj.mean();
    log.entropy_term = a_ent.mean();
    result.log.push_back(log);
  }
  return result;
}

std::string format_epoch_log(std::span<const EpochLog> log) {
  std::string out =
      "epoch,loss_state,loss_obj,loss_pseudo_state,loss_pseudo_obj,entropy_term,"
      "skipped_pseudo_count\n";
  char buf[256];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%zu\n", e.epoch,
                  e.loss_state, e.loss_obj, e.loss_pseudo_state, e.loss_pseudo_obj,
                  e.entropy_term, e.skipped_pseudo_count);
    out += buf;
  }
  return out;
}

}  // namespace kgsp
