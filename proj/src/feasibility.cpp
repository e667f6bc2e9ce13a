#include "kgsp/feasibility.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "kgsp/error.hpp"
#include "kgsp/kernels.hpp"

namespace kgsp {

namespace {

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// Stacks the named vectors row-major, rejecting zero vectors.
std::vector<double> stack(const EmbeddingTable& emb, const std::vector<std::string>& names) {
  std::vector<double> out;
  out.reserve(names.size() * emb.dim());
  for (const auto& n : names) {
    const auto& v = emb.at(n);
    if (norm(v) == 0.0) throw DomainError("embedding of '" + n + "' is the zero vector");
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

double clamp_unit(double x) { return std::clamp(x, -1.0, 1.0); }

}  // namespace

std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::kKnowledge: return "knowledge";
    case Provenance::kCompCos: return "compcos";
    case Provenance::kOracle: return "oracle";
  }
  return "?";
}

FeasibilityMatrix::FeasibilityMatrix(std::size_t n_states, std::size_t n_objects,
                                     std::vector<double> scores, Provenance provenance)
    : n_states_(n_states), n_objects_(n_objects), scores_(std::move(scores)),
      provenance_(provenance) {
  if (scores_.size() != n_states_ * n_objects_)
    throw ShapeError("feasibility matrix needs " + std::to_string(n_states_ * n_objects_) +
                     " scores, got " + std::to_string(scores_.size()));
  for (double x : scores_)
    if (!std::isfinite(x)) throw NumericError("non-finite feasibility score");
}

std::vector<double> FeasibilityMatrix::object_column(std::size_t o) const {
  std::vector<double> col(n_states_);
  for (std::size_t s = 0; s < n_states_; ++s) col[s] = at(s, o);
  return col;
}

double cosine(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size())
    throw ShapeError("cosine: dimension mismatch " + std::to_string(u.size()) + " vs " +
                     std::to_string(v.size()));
  const double nu = norm(u), nv = norm(v);
  if (nu == 0.0 || nv == 0.0) throw DomainError("cosine: zero vector");
  double d = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) d += u[i] * v[i];
  return clamp_unit(d / (nu * nv));
}

FeasibilityMatrix knowledge_feasibility(const EmbeddingTable& emb, const Vocabulary& vocab) {
  const auto s = stack(emb, vocab.states());
  const auto o = stack(emb, vocab.objects());
  std::vector<double> scores(vocab.n_compositions());
  kernels::cosine_matrix(s, vocab.n_states(), o, vocab.n_objects(), emb.dim(), scores);
  for (auto& x : scores) x = clamp_unit(x);
  return FeasibilityMatrix(vocab.n_states(), vocab.n_objects(), std::move(scores),
                           Provenance::kKnowledge);
}

FeasibilityMatrix compcos_feasibility(const EmbeddingTable& emb, const Vocabulary& vocab,
                                      const CompositionSet& seen) {
  if (seen.empty()) throw DomainError("compcos feasibility needs seen compositions");
  const std::size_t ns = vocab.n_states(), no = vocab.n_objects();
  if (seen.n_states() != ns || seen.n_objects() != no)
    throw ShapeError("seen set does not match the vocabulary");
  const auto s = stack(emb, vocab.states());
  const auto o = stack(emb, vocab.objects());
  std::vector<double> ss(ns * ns), oo(no * no);
  kernels::cosine_matrix(s, ns, s, ns, emb.dim(), ss);
  kernels::cosine_matrix(o, no, o, no, emb.dim(), oo);

  std::vector<double> scores(ns * no);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t si = 0; si < static_cast<std::ptrdiff_t>(ns); ++si) {
    for (std::size_t oi = 0; oi < no; ++oi) {
      const Composition c{static_cast<int>(si), static_cast<int>(oi)};
      if (seen.contains(c)) {
        scores[si * no + oi] = 1.0;
        continue;
      }
      double rho_obj = -1.0;
      for (std::size_t o2 = 0; o2 < no; ++o2)
        if (seen.contains({c.state, static_cast<int>(o2)}))
          rho_obj = std::max(rho_obj, clamp_unit(oo[oi * no + o2]));
      double rho_state = -1.0;
      for (std::size_t s2 = 0; s2 < ns; ++s2)
        if (seen.contains({static_cast<int>(s2), c.object}))
          rho_state = std::max(rho_state, clamp_unit(ss[si * ns + s2]));
      scores[si * no + oi] = 0.5 * (rho_obj + rho_state);
    }
  }
  return FeasibilityMatrix(ns, no, std::move(scores), Provenance::kCompCos);
}

FeasibilityMask::FeasibilityMask(std::size_t n_states, std::size_t n_objects,
                                 std::vector<std::uint8_t> cells)
    : n_states_(n_states), n_objects_(n_objects), cells_(std::move(cells)) {
  if (cells_.size() != n_states_ * n_objects_) throw ShapeError("mask size mismatch");
}

FeasibilityMask FeasibilityMask::all(std::size_t n_states, std::size_t n_objects) {
  return FeasibilityMask(n_states, n_objects,
                         std::vector<std::uint8_t>(n_states * n_objects, 1));
}

std::size_t FeasibilityMask::count() const {
  return static_cast<std::size_t>(std::count(cells_.begin(), cells_.end(), std::uint8_t{1}));
}

FeasibilityMask feasibility_mask(const FeasibilityMatrix& f, double threshold) {
  std::vector<std::uint8_t> cells(f.scores().size());
  std::size_t n = 0;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    cells[i] = f.scores()[i] > threshold ? 1 : 0;
    n += cells[i];
  }
  if (n == 0)
    throw DomainError("feasibility mask at threshold " + std::to_string(threshold) +
                      " rejects every composition");
  return FeasibilityMask(f.n_states(), f.n_objects(), std::move(cells));
}

std::vector<double> pseudo_weight_slice(const FeasibilityMatrix& f,
                                        std::optional<int> known_state,
                                        std::optional<int> known_object) {
  if (known_state.has_value() == known_object.has_value())
    throw DomainError("pseudo_weight_slice: exactly one of state/object must be known");
  std::vector<double> w;
  if (known_object) {
    w = f.object_column(static_cast<std::size_t>(*known_object));
  } else {
    auto row = f.state_row(static_cast<std::size_t>(*known_state));
    w.assign(row.begin(), row.end());
  }
  for (auto& x : w) x = x > 0.0 ? x : 0.0;
  return w;
}

std::string format_feasibility(const FeasibilityMatrix& f) {
  std::string out = "#feasibility " + std::to_string(f.n_states()) + " " +
                    std::to_string(f.n_objects()) + "\n";
  char buf[32];
  for (std::size_t s = 0; s < f.n_states(); ++s) {
    for (std::size_t o = 0; o < f.n_objects(); ++o) {
      std::snprintf(buf, sizeof buf, "%.17g", f.at(s, o));
      if (o) out.push_back(' ');
      out += buf;
    }
    out.push_back('\n');
  }
  return out;
}

FeasibilityMatrix parse_feasibility(const std::string& text, Provenance provenance) {
  std::istringstream in(text);
  std::string tag;
  std::size_t ns = 0, no = 0;
  if (!(in >> tag >> ns >> no) || tag != "#feasibility")
    throw DomainError("feasibility file: expected '#feasibility <states> <objects>' header");
  std::vector<double> scores;
  scores.reserve(ns * no);
  std::string tok;
  while (in >> tok) {
    double v = 0.0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || p != tok.data() + tok.size())
      throw DomainError("feasibility file: bad value '" + tok + "'");
    scores.push_back(v);
  }
  if (scores.size() != ns * no)
    throw DomainError("feasibility file: header declares " + std::to_string(ns) + "x" +
                      std::to_string(no) + " but holds " + std::to_string(scores.size()) +
                      " values");
  return FeasibilityMatrix(ns, no, std::move(scores), provenance);
}

void save_feasibility(const FeasibilityMatrix& f, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << format_feasibility(f);
}

FeasibilityMatrix load_feasibility(const std::filesystem::path& path, Provenance provenance) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_feasibility(ss.str(), provenance);
}

std::vector<RankedComposition> top_compositions(const FeasibilityMatrix& f, std::size_t k,
                                                bool highest) {
  std::vector<std::size_t> idx(f.scores().size());
  std::iota(idx.begin(), idx.end(), 0);
  auto cmp = [&](std::size_t a, std::size_t b) {
    const double sa = f.scores()[a], sb = f.scores()[b];
    if (sa != sb) return highest ? sa > sb : sa < sb;
    return a < b;
  };
  k = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), cmp);
  std::vector<RankedComposition> out;
  for (std::size_t i = 0; i < k; ++i) {
    out.push_back({{static_cast<int>(idx[i] / f.n_objects()),
                    static_cast<int>(idx[i] % f.n_objects())},
                   f.scores()[idx[i]]});
  }
  return out;
}

}  // namespace kgsp
