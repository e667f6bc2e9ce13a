#pragma once

// Hot loops shared by the model and the evaluator. Each kernel that is
// parallelised with OpenMP has a plain single-threaded counterpart in
// kgsp::kernels::serial, used as the reference in tests and benchmarks.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace kgsp::kernels {

// C = op(A) * op(B) (+ C if accumulate). op(A) is m x k, op(B) is k x n.
// A is stored m x k (or k x m when trans_a), B is k x n (or n x k).
void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
          std::size_t m, std::size_t k, std::size_t n, bool trans_a = false,
          bool trans_b = false, bool accumulate = false);

// Row-wise softmax with max subtraction.
void softmax_rows(std::span<const double> logits, std::size_t rows, std::size_t cols,
                  std::span<double> out);

// Row-wise standardisation. mean/rstd receive one value per row.
void layer_norm_rows(std::span<const double> x, std::size_t rows, std::size_t cols,
                     std::span<const double> gamma, std::span<const double> beta,
                     double eps, std::span<double> out, std::span<double> mean,
                     std::span<double> rstd);

// Best (state, object) cell of the outer product p q^T restricted to
// allowed cells (allowed may be empty = everything allowed). Returns the
// flat index s * |O| + o or -1 if no cell is allowed. Ties resolve to the
// smallest flat index.
std::int64_t argmax_outer(std::span<const double> p, std::span<const double> q,
                          std::span<const std::uint8_t> allowed);

// Cell classes for group_tops.
inline constexpr std::uint8_t kExcluded = 0;
inline constexpr std::uint8_t kSeen = 1;
inline constexpr std::uint8_t kUnseen = 2;

struct GroupTops {
  std::int64_t seen = -1;    // flat index of the best seen cell
  double seen_score = 0.0;
  std::int64_t unseen = -1;  // flat index of the best unseen cell
  double unseen_score = 0.0;
};

// For each of n images: top seen and top unseen cell of p_i q_i^T. `groups`
// holds one class per cell.
void group_tops(std::span<const double> state_probs, std::span<const double> object_probs,
                std::size_t n, std::size_t n_states, std::size_t n_objects,
                std::span<const std::uint8_t> groups, std::span<GroupTops> out);

// Masked argmax for each of n images.
void argmax_outer_batch(std::span<const double> state_probs,
                        std::span<const double> object_probs, std::size_t n,
                        std::size_t n_states, std::size_t n_objects,
                        std::span<const std::uint8_t> allowed, std::span<std::int64_t> out);

// out[i * nb + j] = cos(a_i, b_j). Rows are dim-long. Zero rows give NaN;
// callers validate norms first.
void cosine_matrix(std::span<const double> a, std::size_t na, std::span<const double> b,
                   std::size_t nb, std::size_t dim, std::span<double> out);

namespace serial {

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
          std::size_t m, std::size_t k, std::size_t n, bool trans_a = false,
          bool trans_b = false, bool accumulate = false);

void group_tops(std::span<const double> state_probs, std::span<const double> object_probs,
                std::size_t n, std::size_t n_states, std::size_t n_objects,
                std::span<const std::uint8_t> groups, std::span<GroupTops> out);

void argmax_outer_batch(std::span<const double> state_probs,
                        std::span<const double> object_probs, std::size_t n,
                        std::size_t n_states, std::size_t n_objects,
                        std::span<const std::uint8_t> allowed, std::span<std::int64_t> out);

void cosine_matrix(std::span<const double> a, std::size_t na, std::span<const double> b,
                   std::size_t nb, std::size_t dim, std::span<double> out);

}  // namespace serial

}  // namespace kgsp::kernels
