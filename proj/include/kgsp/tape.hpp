#pragma once

// Reverse-mode differentiation over a recorded list of tensor ops. Only the
// ops the classifier heads need are provided.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "kgsp/rng.hpp"
#include "kgsp/tensor.hpp"

namespace kgsp {

// A trainable tensor with its accumulated gradient. `version` is bumped by
// every optimizer update so stale tapes can be detected.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name_, Tensor value_)
      : name(std::move(name_)), value(std::move(value_)), grad(value.shape()) {}

  std::string name;
  Tensor value;
  Tensor grad;
  std::uint64_t version = 0;

  void zero_grad() { grad.fill(0.0); }
};

enum class Mode { kTrain, kEval };

// Handle to a node on a Tape.
struct Var {
  std::size_t id = 0;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var parameter(Parameter& p);
  Var constant(Tensor t);

  Var matmul(Var a, Var b);
  // x[b x d] + bias[d], broadcast over rows.
  Var add_bias(Var x, Var bias);
  Var layer_norm(Var x, Var gamma, Var beta, double eps);
  Var relu(Var x);
  // Inverted dropout; the caller skips this op in eval mode.
  Var dropout(Var x, double p, Rng& rng);
  Var add(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double c);
  Var sum(Var a);

  // sum over rows with targets[r] >= 0 of -log softmax(logits_r)[targets[r]],
  // divided by `divisor`. Rows with a negative target contribute nothing.
  Var cross_entropy(Var logits, std::span<const int> targets, double divisor);
  // sum over selected rows of the Shannon entropy of softmax(logits_r),
  // divided by `divisor`.
  Var softmax_entropy(Var logits, std::span<const std::uint8_t> rows, double divisor);

  const Tensor& value(Var v) const;
  // Gradient of the last backward() target w.r.t. v. Empty for constants.
  // Parameter leaves return the parameter's accumulated grad.
  const Tensor& grad(Var v) const;

  // Accumulates d loss / d p into every recorded Parameter's grad.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    const Tensor* ref = nullptr;  // parameter leaves alias the parameter value
    Tensor grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    std::uint64_t param_version = 0;
    std::function<void(Tape&, Node&)> backward;
    std::string op;

    const Tensor& val() const { return ref ? *ref : value; }
  };

  Node& node(Var v);
  const Node& node(Var v) const;
  Var push(std::string op, Tensor value, bool requires_grad,
           std::function<void(Tape&, Node&)> backward);
  Tensor& grad_of(std::size_t id);
  void check_open() const;

  std::vector<Node> nodes_;
  bool sealed_ = false;
};

// Stand-alone inverted dropout on a tensor (identity in eval mode).
Tensor dropout(const Tensor& x, double p, Mode mode, Rng& rng);

}  // namespace kgsp
