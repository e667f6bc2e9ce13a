#include "kgsp/kernels.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

namespace kgsp::kernels {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

using Index = std::ptrdiff_t;

template <class Groups>
GroupTops tops_for_image(const double* p, const double* q, std::size_t n_states,
                         std::size_t n_objects, const Groups& groups) {
  GroupTops t;
  for (std::size_t s = 0; s < n_states; ++s) {
    const double ps = p[s];
    const std::uint8_t* g = groups + s * n_objects;
    for (std::size_t o = 0; o < n_objects; ++o) {
      if (g[o] == kExcluded) continue;
      const double score = ps * q[o];
      const auto flat = static_cast<std::int64_t>(s * n_objects + o);
      if (g[o] == kSeen) {
        if (t.seen < 0 || score > t.seen_score) {
          t.seen = flat;
          t.seen_score = score;
        }
      } else if (t.unseen < 0 || score > t.unseen_score) {
        t.unseen = flat;
        t.unseen_score = score;
      }
    }
  }
  return t;
}

double dot(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
          std::size_t m, std::size_t k, std::size_t n, bool trans_a, bool trans_b,
          bool accumulate) {
  ConstMap am(a.data(), static_cast<Index>(trans_a ? k : m),
              static_cast<Index>(trans_a ? m : k));
  ConstMap bm(b.data(), static_cast<Index>(trans_b ? n : k),
              static_cast<Index>(trans_b ? k : n));
  MutMap cm(c.data(), static_cast<Index>(m), static_cast<Index>(n));
  if (!accumulate) cm.setZero();
  if (!trans_a && !trans_b) {
    cm.noalias() += am * bm;
  } else if (trans_a && !trans_b) {
    cm.noalias() += am.transpose() * bm;
  } else if (!trans_a && trans_b) {
    cm.noalias() += am * bm.transpose();
  } else {
    cm.noalias() += am.transpose() * bm.transpose();
  }
}

void softmax_rows(std::span<const double> logits, std::size_t rows, std::size_t cols,
                  std::span<double> out) {
#pragma omp parallel for schedule(static) if (rows * cols > 16384)
  for (Index r = 0; r < static_cast<Index>(rows); ++r) {
    const double* x = logits.data() + r * cols;
    double* y = out.data() + r * cols;
    const double mx = *std::max_element(x, x + cols);
    double sum = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      y[c] = std::exp(x[c] - mx);
      sum += y[c];
    }
    for (std::size_t c = 0; c < cols; ++c) y[c] /= sum;
  }
}

void layer_norm_rows(std::span<const double> x, std::size_t rows, std::size_t cols,
                     std::span<const double> gamma, std::span<const double> beta,
                     double eps, std::span<double> out, std::span<double> mean,
                     std::span<double> rstd) {
#pragma omp parallel for schedule(static) if (rows * cols > 16384)
  for (Index r = 0; r < static_cast<Index>(rows); ++r) {
    const double* xr = x.data() + r * cols;
    double* yr = out.data() + r * cols;
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += xr[c];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<double>(cols);
    const double rs = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c)
      yr[c] = (xr[c] - mu) * rs * gamma[c] + beta[c];
    mean[r] = mu;
    rstd[r] = rs;
  }
}

std::int64_t argmax_outer(std::span<const double> p, std::span<const double> q,
                          std::span<const std::uint8_t> allowed) {
  std::int64_t best = -1;
  double best_score = 0.0;
  const std::size_t no = q.size();
  for (std::size_t s = 0; s < p.size(); ++s) {
    for (std::size_t o = 0; o < no; ++o) {
      if (!allowed.empty() && !allowed[s * no + o]) continue;
      const double score = p[s] * q[o];
      if (best < 0 || score > best_score) {
        best = static_cast<std::int64_t>(s * no + o);
        best_score = score;
      }
    }
  }
  return best;
}

void group_tops(std::span<const double> state_probs, std::span<const double> object_probs,
                std::size_t n, std::size_t n_states, std::size_t n_objects,
                std::span<const std::uint8_t> groups, std::span<GroupTops> out) {
#pragma omp parallel for schedule(dynamic, 16)
  for (Index i = 0; i < static_cast<Index>(n); ++i) {
    out[i] = tops_for_image(state_probs.data() + i * n_states,
                            object_probs.data() + i * n_objects, n_states, n_objects,
                            groups.data());
  }
}

void argmax_outer_batch(std::span<const double> state_probs,
                        std::span<const double> object_probs, std::size_t n,
                        std::size_t n_states, std::size_t n_objects,
                        std::span<const std::uint8_t> allowed, std::span<std::int64_t> out) {
#pragma omp parallel for schedule(dynamic, 16)
  for (Index i = 0; i < static_cast<Index>(n); ++i) {
    out[i] = argmax_outer(state_probs.subspan(i * n_states, n_states),
                          object_probs.subspan(i * n_objects, n_objects), allowed);
  }
}

void cosine_matrix(std::span<const double> a, std::size_t na, std::span<const double> b,
                   std::size_t nb, std::size_t dim, std::span<double> out) {
  std::vector<double> nrm_b(nb);
  for (std::size_t j = 0; j < nb; ++j)
    nrm_b[j] = std::sqrt(dot(&b[j * dim], &b[j * dim], dim));
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < static_cast<Index>(na); ++i) {
    const double* ai = a.data() + i * dim;
    const double nrm_a = std::sqrt(dot(ai, ai, dim));
    for (std::size_t j = 0; j < nb; ++j)
      out[i * nb + j] = dot(ai, &b[j * dim], dim) / (nrm_a * nrm_b[j]);
  }
}

namespace serial {

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
          std::size_t m, std::size_t k, std::size_t n, bool trans_a, bool trans_b,
          bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = trans_a ? a[p * m + i] : a[i * k + p];
        const double bv = trans_b ? b[j * k + p] : b[p * n + j];
        acc += av * bv;
      }
      c[i * n + j] = accumulate ? c[i * n + j] + acc : acc;
    }
  }
}

void group_tops(std::span<const double> state_probs, std::span<const double> object_probs,
                std::size_t n, std::size_t n_states, std::size_t n_objects,
                std::span<const std::uint8_t> groups, std::span<GroupTops> out) {
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = tops_for_image(state_probs.data() + i * n_states,
                            object_probs.data() + i * n_objects, n_states, n_objects,
                            groups.data());
  }
}

void argmax_outer_batch(std::span<const double> state_probs,
                        std::span<const double> object_probs, std::size_t n,
                        std::size_t n_states, std::size_t n_objects,
                        std::span<const std::uint8_t> allowed, std::span<std::int64_t> out) {
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = argmax_outer(state_probs.subspan(i * n_states, n_states),
                          object_probs.subspan(i * n_objects, n_objects), allowed);
  }
}

void cosine_matrix(std::span<const double> a, std::size_t na, std::span<const double> b,
                   std::size_t nb, std::size_t dim, std::span<double> out) {
  for (std::size_t i = 0; i < na; ++i) {
    for (std::size_t j = 0; j < nb; ++j) {
      const double* ai = &a[i * dim];
      const double* bj = &b[j * dim];
      out[i * nb + j] =
          dot(ai, bj, dim) / (std::sqrt(dot(ai, ai, dim)) * std::sqrt(dot(bj, bj, dim)));
    }
  }
}

}  // namespace serial

}  // namespace kgsp::kernels
