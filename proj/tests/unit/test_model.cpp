#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "../support/oracles.hpp"
#include "kgsp/error.hpp"
#include "kgsp/model.hpp"

using namespace kgsp;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.input_dim = 5;
  c.n_states = 3;
  c.n_objects = 4;
  c.hidden = {6, 7};
  return c;
}

Tensor random_features(std::size_t rows, std::size_t dim, Rng& rng) {
  Tensor t({rows, dim});
  for (auto& v : t.values()) v = 4.0 * rng.uniform() - 2.0;
  return t;
}

std::vector<ExampleRecord> records(const std::vector<std::pair<int, int>>& labels) {
  std::vector<ExampleRecord> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ExampleRecord r;
    r.feature_row = i;
    if (labels[i].first >= 0) r.state = labels[i].first;
    if (labels[i].second >= 0) r.object = labels[i].second;
    out.push_back(r);
  }
  return out;
}

std::vector<const ExampleRecord*> ptrs(const std::vector<ExampleRecord>& rs) {
  std::vector<const ExampleRecord*> out;
  for (const auto& r : rs) out.push_back(&r);
  return out;
}

}  // namespace

TEST_CASE("depth maps to hidden widths") {
  CHECK(hidden_widths_for_depth(1).empty());
  CHECK(hidden_widths_for_depth(3) == std::vector<std::size_t>{768, 1024});
  CHECK(hidden_widths_for_depth(5) == std::vector<std::size_t>{768, 1024, 1024, 1024});
  CHECK_THROWS_AS(hidden_widths_for_depth(0), DomainError);
  CHECK_THROWS_AS(hidden_widths_for_depth(6), DomainError);
}

TEST_CASE("default head: 768 -> 1024 -> classes with LayerNorm on hidden layers") {
  ModelConfig c;
  c.input_dim = 32;
  c.n_states = 8;
  c.n_objects = 12;
  Rng init(1);
  KgSpModel m(c, init);
  const auto& layers = m.state_head().layers();
  REQUIRE(layers.size() == 3);
  CHECK(layers[0].weight.value.shape() == Shape{32, 768});
  CHECK(layers[1].weight.value.shape() == Shape{768, 1024});
  CHECK(layers[2].weight.value.shape() == Shape{1024, 8});
  CHECK(layers[0].normalized);
  CHECK(layers[1].normalized);
  CHECK(!layers[2].normalized);
  CHECK(m.object_head().layers()[2].weight.value.shape() == Shape{1024, 12});
}

TEST_CASE("forward: rows are distributions, eval is deterministic, dim mismatch") {
  Rng init(2), rng(3);
  KgSpModel m(small_config(), init);
  const Tensor x = random_features(6, 5, rng);
  const auto a = m.predict(x);
  const auto b = m.forward(x, Mode::kEval);
  CHECK(a.state == b.state);
  CHECK(a.object == b.object);
  for (std::size_t r = 0; r < 6; ++r) {
    double s = 0;
    for (double v : a.state.row(r)) s += v;
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
  Rng d(4);
  const auto t = m.forward(x, Mode::kTrain, &d);
  CHECK(t.state.shape() == Shape{6, 3});
  CHECK_THROWS_AS(m.predict(random_features(2, 4, rng)), ShapeError);
}

TEST_CASE("zero final layer gives uniform output") {
  Rng init(5), rng(6);
  KgSpModel m(small_config(), init);
  auto& last = m.state_head().layers().back();
  last.weight.value.fill(0.0);
  last.bias.value.fill(0.0);
  const auto p = m.predict(random_features(3, 5, rng));
  for (double v : p.state.values()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("heads are parameter-disjoint") {
  Rng init(7), rng(8);
  KgSpModel m(small_config(), init);
  const Tensor x = random_features(4, 5, rng);
  const auto before = m.predict(x);
  for (Parameter* p : m.state_head().parameters()) p->value[0] += 0.5;
  const auto after = m.predict(x);
  CHECK(after.object == before.object);
  CHECK(!(after.state == before.state));
}

TEST_CASE("visprod loss: uniform heads, object-only batch, decomposition") {
  Rng init(9), rng(10);
  KgSpModel m(small_config(), init);
  for (auto* head : {&m.state_head(), &m.object_head()}) {
    head->layers().back().weight.value.fill(0.0);
    head->layers().back().bias.value.fill(0.0);
  }
  const Tensor x = random_features(4, 5, rng);
  const auto full = records({{0, 1}, {2, 3}, {1, 0}, {0, 0}});
  {
    Tape t;
    Var in = t.constant(x);
    const auto l = visprod_loss(t, m.state_head().forward(t, in, Mode::kEval, nullptr),
                                m.object_head().forward(t, in, Mode::kEval, nullptr),
                                ptrs(full));
    CHECK(t.value(l.total)[0] == doctest::Approx(std::log(3.0) + std::log(4.0)).epsilon(1e-12));
  }

  Rng init2(11);
  KgSpModel m2(small_config(), init2);
  const auto obj_only = records({{-1, 1}, {-1, 3}});
  m2.zero_grad();
  {
    Tape t;
    Var in = t.constant(random_features(2, 5, rng));
    const auto l = visprod_loss(t, m2.state_head().forward(t, in, Mode::kEval, nullptr),
                                m2.object_head().forward(t, in, Mode::kEval, nullptr),
                                ptrs(obj_only));
    CHECK(l.n_state == 0);
    t.backward(l.total);
  }
  for (const Parameter* p : m2.state_head().parameters())
    for (double g : p->grad.values()) CHECK(g == 0.0);

  // Mixed batch equals the mean state term plus the mean object term,
  // computed directly from the eval-mode probabilities.
  const auto mixed = records({{0, -1}, {-1, 2}, {1, 3}});
  const Tensor x3 = random_features(3, 5, rng);
  const auto probs = m2.predict(x3);
  const double state_term = -(std::log(probs.state.at(0, 0)) + std::log(probs.state.at(2, 1))) / 2;
  const double object_term =
      -(std::log(probs.object.at(1, 2)) + std::log(probs.object.at(2, 3))) / 2;
  Tape t;
  Var in = t.constant(x3);
  const auto sl = m2.state_head().forward(t, in, Mode::kEval, nullptr);
  const auto ol = m2.object_head().forward(t, in, Mode::kEval, nullptr);
  const auto l = visprod_loss(t, sl, ol, ptrs(mixed));
  CHECK(std::abs(t.value(l.total)[0] - (state_term + object_term)) < 1e-12);
  CHECK(std::abs(l.state_loss - state_term) < 1e-12);
  CHECK(std::abs(l.object_loss - object_term) < 1e-12);
}

TEST_CASE("visprod loss rejects an unlabeled record") {
  Rng init(12);
  KgSpModel m(small_config(), init);
  const auto none = records({{-1, -1}});
  Tape t;
  Var in = t.constant(Tensor({1, 5}, 0.1));
  CHECK_THROWS_AS(visprod_loss(t, m.state_head().forward(t, in, Mode::kEval, nullptr),
                               m.object_head().forward(t, in, Mode::kEval, nullptr), ptrs(none)),
                  DomainError);
}

TEST_CASE("visprod gradient passes finite differences on every parameter") {
  Rng init(13), rng(14);
  KgSpModel m(small_config(), init);
  const Tensor x = random_features(5, 5, rng);
  const auto rs = records({{0, 1}, {-1, 2}, {2, -1}, {1, 3}, {0, 0}});
  const auto batch = ptrs(rs);
  auto build = [&](Tape& t) {
    Var in = t.constant(x);
    Rng d(99);
    const Var sl = m.state_head().forward(t, in, Mode::kTrain, &d);
    const Var ol = m.object_head().forward(t, in, Mode::kTrain, &d);
    return visprod_loss(t, sl, ol, batch).total;
  };
  const auto ps = m.parameters();
  const auto res = testing::check_gradients(build, ps);
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  Rng init(15);
  KgSpModel m(small_config(), init);
  const Vocabulary vocab({"a", "b", "c"}, {"w", "x", "y", "z"});
  const auto path = std::filesystem::temp_directory_path() / "kgsp_unit_ck.kgsm";
  save_checkpoint(m, vocab, path);
  const Checkpoint ck = load_checkpoint(path);
  CHECK(ck.vocab == vocab);
  const auto a = m.parameters();
  const auto b = ck.model.parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i]->value == b[i]->value);
  CHECK(ck.model.config().dropout == m.config().dropout);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 8);
  CHECK_THROWS(load_checkpoint(path));
}
