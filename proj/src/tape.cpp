#include "kgsp/tape.hpp"

#include <algorithm>
#include <cmath>

#include "kgsp/error.hpp"
#include "kgsp/kernels.hpp"

namespace kgsp {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                     " vs " + shape_string(b.shape()));
  }
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got " +
                     shape_string(t.shape()));
  }
}

}  // namespace

Tape::Node& Tape::node(Var v) {
  if (v.id >= nodes_.size()) throw DomainError("tape: unknown variable");
  return nodes_[v.id];
}

const Tape::Node& Tape::node(Var v) const {
  if (v.id >= nodes_.size()) throw DomainError("tape: unknown variable");
  return nodes_[v.id];
}

void Tape::check_open() const {
  if (sealed_) throw DomainError("tape reused after backward; record a new tape");
}

Var Tape::push(std::string op, Tensor value, bool requires_grad,
               std::function<void(Tape&, Node&)> backward) {
  check_open();
  value.require_finite(op);
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.backward = std::move(backward);
  n.op = std::move(op);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Tensor& Tape::grad_of(std::size_t id) {
  Node& n = nodes_[id];
  if (n.param) {
    // Parameter leaves accumulate straight into the parameter.
    Tensor& pg = n.param->grad;
    if (pg.shape() != n.param->value.shape()) pg = Tensor(n.param->value.shape());
    return pg;
  }
  if (n.grad.size() != n.val().size()) n.grad = Tensor(n.val().shape());
  return n.grad;
}

const Tensor& Tape::value(Var v) const { return node(v).val(); }

const Tensor& Tape::grad(Var v) const {
  const Node& n = node(v);
  return n.param ? n.param->grad : n.grad;
}

Var Tape::parameter(Parameter& p) {
  check_open();
  p.value.require_finite("parameter " + p.name);
  Node n;
  n.ref = &p.value;
  n.requires_grad = true;
  n.param = &p;
  n.param_version = p.version;
  n.op = "parameter";
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::constant(Tensor t) { return push("constant", std::move(t), false, nullptr); }

Var Tape::matmul(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  require_matrix(av, "matmul");
  require_matrix(bv, "matmul");
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  if (bv.rows() != k) {
    throw ShapeError("matmul: inner dimensions disagree " + shape_string(av.shape()) +
                     " x " + shape_string(bv.shape()));
  }
  Tensor out({m, n});
  kernels::gemm(av.data(), bv.data(), out.data(), m, k, n);
  const bool rg = node(a).requires_grad || node(b).requires_grad;
  const std::size_t ia = a.id, ib = b.id;
  return push("matmul", std::move(out), rg, [ia, ib, m, k, n](Tape& t, Node& self) {
    const Tensor& g = self.grad;
    if (t.nodes_[ia].requires_grad) {
      // dA += dC * B^T
      kernels::gemm(g.data(), t.nodes_[ib].val().data(), t.grad_of(ia).data(), m, n, k,
                    false, true, true);
    }
    if (t.nodes_[ib].requires_grad) {
      // dB += A^T * dC
      kernels::gemm(t.nodes_[ia].val().data(), g.data(), t.grad_of(ib).data(), k, m, n,
                    true, false, true);
    }
  });
}

Var Tape::add_bias(Var x, Var bias) {
  const Tensor& xv = value(x);
  const Tensor& bv = value(bias);
  require_matrix(xv, "add_bias");
  const std::size_t rows = xv.rows(), cols = xv.cols();
  if (bv.size() != cols) {
    throw ShapeError("add_bias: bias " + shape_string(bv.shape()) + " vs input " +
                     shape_string(xv.shape()));
  }
  Tensor out = xv;
  const double* b = bv.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    double* o = out.data().data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) o[c] += b[c];
  }
  const bool rg = node(x).requires_grad || node(bias).requires_grad;
  const std::size_t ix = x.id, ib = bias.id;
  return push("add_bias", std::move(out), rg, [ix, ib, rows, cols](Tape& t, Node& self) {
    const Tensor& g = self.grad;
    if (t.nodes_[ix].requires_grad) {
      Tensor& gx = t.grad_of(ix);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (t.nodes_[ib].requires_grad) {
      double* gb = t.grad_of(ib).data().data();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* gr = g.data().data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) gb[c] += gr[c];
      }
    }
  });
}

Var Tape::layer_norm(Var x, Var gamma, Var beta, double eps) {
  if (!(eps > 0.0)) throw DomainError("layer_norm: eps must be positive");
  const Tensor& xv = value(x);
  require_matrix(xv, "layer_norm");
  const std::size_t rows = xv.rows(), cols = xv.cols();
  if (value(gamma).size() != cols || value(beta).size() != cols)
    throw ShapeError("layer_norm: gamma/beta must have " + std::to_string(cols) + " entries");
  Tensor out({rows, cols});
  std::vector<double> mean(rows), rstd(rows);
  kernels::layer_norm_rows(xv.data(), rows, cols, value(gamma).data(), value(beta).data(),
                           eps, out.data(), mean, rstd);
  const bool rg = node(x).requires_grad || node(gamma).requires_grad ||
                  node(beta).requires_grad;
  const std::size_t ix = x.id, ig = gamma.id, ib = beta.id;
  return push("layer_norm", std::move(out), rg,
              [ix, ig, ib, rows, cols, mean = std::move(mean), rstd = std::move(rstd)](
                  Tape& t, Node& self) {
                const Tensor& g = self.grad;
                const Tensor& xv = t.nodes_[ix].val();
                const Tensor& gv = t.nodes_[ig].val();
                const bool want_x = t.nodes_[ix].requires_grad;
                const bool want_g = t.nodes_[ig].requires_grad;
                const bool want_b = t.nodes_[ib].requires_grad;
                Tensor* gx = want_x ? &t.grad_of(ix) : nullptr;
                Tensor* gg = want_g ? &t.grad_of(ig) : nullptr;
                Tensor* gb = want_b ? &t.grad_of(ib) : nullptr;
                const double d = static_cast<double>(cols);
                const double* gam = gv.data().data();
                double* gbp = gb ? gb->data().data() : nullptr;
                double* ggp = gg ? gg->data().data() : nullptr;
                std::vector<double> xhat(cols), dxhat(cols);
                for (std::size_t r = 0; r < rows; ++r) {
                  const double* xr = xv.data().data() + r * cols;
                  const double* gr = g.data().data() + r * cols;
                  const double mu = mean[r], rs = rstd[r];
                  double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                  for (std::size_t c = 0; c < cols; ++c) {
                    xhat[c] = (xr[c] - mu) * rs;
                    dxhat[c] = gr[c] * gam[c];
                    sum_dxhat += dxhat[c];
                    sum_dxhat_xhat += dxhat[c] * xhat[c];
                  }
                  if (gbp)
                    for (std::size_t c = 0; c < cols; ++c) gbp[c] += gr[c];
                  if (ggp)
                    for (std::size_t c = 0; c < cols; ++c) ggp[c] += gr[c] * xhat[c];
                  if (gx) {
                    double* gxr = gx->data().data() + r * cols;
                    const double k = rs / d;
                    for (std::size_t c = 0; c < cols; ++c)
                      gxr[c] += k * (d * dxhat[c] - sum_dxhat - xhat[c] * sum_dxhat_xhat);
                  }
                }
              });
}

Var Tape::relu(Var x) {
  Tensor out = value(x);
  for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
  const std::size_t ix = x.id;
  return push("relu", std::move(out), node(x).requires_grad, [ix](Tape& t, Node& self) {
    Tensor& gx = t.grad_of(ix);
    const Tensor& y = self.value;
    for (std::size_t i = 0; i < y.size(); ++i)
      if (y[i] > 0.0) gx[i] += self.grad[i];
  });
}

Var Tape::dropout(Var x, double p, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw DomainError("dropout: p must be in [0, 1)");
  const Tensor& xv = value(x);
  Tensor mask(xv.shape());
  const double keep_scale = 1.0 / (1.0 - p);
  for (auto& m : mask.values()) m = (p > 0.0 && rng.uniform() < p) ? 0.0 : keep_scale;
  Tensor out = xv;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  const std::size_t ix = x.id;
  return push("dropout", std::move(out), node(x).requires_grad,
              [ix, mask = std::move(mask)](Tape& t, Node& self) {
                Tensor& gx = t.grad_of(ix);
                for (std::size_t i = 0; i < mask.size(); ++i) gx[i] += self.grad[i] * mask[i];
              });
}

Var Tape::add(Var a, Var b) {
  require_same_shape(value(a), value(b), "add");
  Tensor out = value(a);
  const Tensor& bv = value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const bool rg = node(a).requires_grad || node(b).requires_grad;
  const std::size_t ia = a.id, ib = b.id;
  return push("add", std::move(out), rg, [ia, ib](Tape& t, Node& self) {
    for (std::size_t id : {ia, ib}) {
      if (!t.nodes_[id].requires_grad) continue;
      Tensor& g = t.grad_of(id);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Var Tape::mul(Var a, Var b) {
  require_same_shape(value(a), value(b), "mul");
  Tensor out = value(a);
  const Tensor& bv = value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const bool rg = node(a).requires_grad || node(b).requires_grad;
  const std::size_t ia = a.id, ib = b.id;
  return push("mul", std::move(out), rg, [ia, ib](Tape& t, Node& self) {
    const Tensor& av = t.nodes_[ia].val();
    const Tensor& bv = t.nodes_[ib].val();
    if (t.nodes_[ia].requires_grad) {
      Tensor& g = t.grad_of(ia);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (t.nodes_[ib].requires_grad) {
      Tensor& g = t.grad_of(ib);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

Var Tape::scale(Var a, double c) {
  Tensor out = value(a);
  for (auto& v : out.values()) v *= c;
  const std::size_t ia = a.id;
  return push("scale", std::move(out), node(a).requires_grad, [ia, c](Tape& t, Node& self) {
    Tensor& g = t.grad_of(ia);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * c;
  });
}

Var Tape::sum(Var a) {
  double s = 0.0;
  for (double v : value(a).values()) s += v;
  const std::size_t ia = a.id;
  return push("sum", Tensor::scalar(s), node(a).requires_grad, [ia](Tape& t, Node& self) {
    Tensor& g = t.grad_of(ia);
    for (auto& v : g.values()) v += self.grad[0];
  });
}

Var Tape::cross_entropy(Var logits, std::span<const int> targets, double divisor) {
  const Tensor& lv = value(logits);
  require_matrix(lv, "cross_entropy");
  const std::size_t rows = lv.rows(), cols = lv.cols();
  if (targets.size() != rows)
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(rows) + " rows");
  if (!(divisor > 0.0)) throw DomainError("cross_entropy: divisor must be positive");
  for (int t : targets) {
    if (t >= static_cast<int>(cols))
      throw DomainError("cross_entropy: target " + std::to_string(t) + " out of range [0," +
                        std::to_string(cols) + ")");
  }
  Tensor probs({rows, cols});
  kernels::softmax_rows(lv.data(), rows, cols, probs.data());
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] < 0) continue;
    const auto row = lv.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    loss += (mx + std::log(z)) - row[targets[r]];
  }
  loss /= divisor;
  std::vector<int> tg(targets.begin(), targets.end());
  const std::size_t il = logits.id;
  return push("cross_entropy", Tensor::scalar(loss), node(logits).requires_grad,
              [il, rows, cols, divisor, tg = std::move(tg), probs = std::move(probs)](
                  Tape& t, Node& self) {
                Tensor& g = t.grad_of(il);
                const double s = self.grad[0] / divisor;
                for (std::size_t r = 0; r < rows; ++r) {
                  if (tg[r] < 0) continue;
                  double* gr = g.data().data() + r * cols;
                  const double* pr = probs.data().data() + r * cols;
                  for (std::size_t c = 0; c < cols; ++c) gr[c] += s * pr[c];
                  gr[tg[r]] -= s;
                }
              });
}

Var Tape::softmax_entropy(Var logits, std::span<const std::uint8_t> rows_sel,
                          double divisor) {
  const Tensor& lv = value(logits);
  require_matrix(lv, "softmax_entropy");
  const std::size_t rows = lv.rows(), cols = lv.cols();
  if (rows_sel.size() != rows) throw ShapeError("softmax_entropy: row selector size");
  if (!(divisor > 0.0)) throw DomainError("softmax_entropy: divisor must be positive");
  Tensor probs({rows, cols});
  kernels::softmax_rows(lv.data(), rows, cols, probs.data());
  std::vector<double> ent(rows, 0.0);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!rows_sel[r]) continue;
    double h = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double p = probs.at(r, c);
      if (p > 0.0) h -= p * std::log(p);
    }
    ent[r] = h;
    total += h;
  }
  std::vector<std::uint8_t> sel(rows_sel.begin(), rows_sel.end());
  const std::size_t il = logits.id;
  return push("softmax_entropy", Tensor::scalar(total / divisor), node(logits).requires_grad,
              [il, rows, cols, divisor, sel = std::move(sel), ent = std::move(ent),
               probs = std::move(probs)](Tape& t, Node& self) {
                Tensor& g = t.grad_of(il);
                const double s = self.grad[0] / divisor;
                for (std::size_t r = 0; r < rows; ++r) {
                  if (!sel[r]) continue;
                  for (std::size_t c = 0; c < cols; ++c) {
                    const double p = probs.at(r, c);
                    if (p > 0.0) g.at(r, c) -= s * p * (std::log(p) + ent[r]);
                  }
                }
              });
}

void Tape::backward(Var loss) {
  check_open();
  const Node& ln = node(loss);
  if (!ln.val().is_scalar())
    throw ShapeError("backward: loss must be scalar, got " + shape_string(ln.val().shape()));
  for (const Node& n : nodes_) {
    if (n.param && n.param->version != n.param_version)
      throw DomainError("backward: parameter " + n.param->name +
                        " was modified after the tape was recorded");
  }
  sealed_ = true;
  if (!ln.requires_grad) return;
  grad_of(loss.id)[0] += 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward || n.grad.size() == 0) continue;
    n.backward(*this, n);
  }
}

Tensor dropout(const Tensor& x, double p, Mode mode, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw DomainError("dropout: p must be in [0, 1)");
  if (mode == Mode::kEval || p == 0.0) return x;
  Tensor out = x;
  const double keep_scale = 1.0 / (1.0 - p);
  for (auto& v : out.values()) v = rng.uniform() < p ? 0.0 : v * keep_scale;
  return out;
}

}  // namespace kgsp
