#include "kgsp/model.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

#include "kgsp/error.hpp"
#include "kgsp/kernels.hpp"

namespace kgsp {

std::vector<std::size_t> hidden_widths_for_depth(int depth) {
  if (depth < 1 || depth > 5) throw DomainError("head depth must be in 1..5");
  std::vector<std::size_t> h;
  for (int i = 0; i + 1 < depth; ++i) h.push_back(i == 0 ? 768 : 1024);
  return h;
}

PrimitiveHead::PrimitiveHead(std::string name, HeadConfig config, Rng& init_rng)
    : config_(std::move(config)) {
  if (config_.input_dim == 0 || config_.n_classes == 0)
    throw DomainError("head needs positive input and class counts");
  if (!(config_.dropout >= 0.0 && config_.dropout < 1.0))
    throw DomainError("dropout must be in [0, 1)");
  std::vector<std::size_t> dims{config_.input_dim};
  dims.insert(dims.end(), config_.hidden.begin(), config_.hidden.end());
  dims.push_back(config_.n_classes);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const std::size_t fan_in = dims[l], fan_out = dims[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Layer layer;
    const auto prefix = name + ".layer" + std::to_string(l);
    Tensor w({fan_in, fan_out});
    for (auto& v : w.values()) v = (2.0 * init_rng.uniform() - 1.0) * bound;
    Tensor b({fan_out});
    for (auto& v : b.values()) v = (2.0 * init_rng.uniform() - 1.0) * bound;
    layer.weight = Parameter(prefix + ".weight", std::move(w));
    layer.bias = Parameter(prefix + ".bias", std::move(b));
    if (l + 2 < dims.size()) {
      layer.normalized = true;
      layer.gamma = Parameter(prefix + ".ln_gamma", Tensor({fan_out}, 1.0));
      layer.beta = Parameter(prefix + ".ln_beta", Tensor({fan_out}, 0.0));
    }
    layers_.push_back(std::move(layer));
  }
}

Var PrimitiveHead::forward(Tape& tape, Var input, Mode mode, Rng* dropout_rng) {
  if (tape.value(input).cols() != config_.input_dim)
    throw ShapeError("head expects " + std::to_string(config_.input_dim) +
                     "-dim features, got " + std::to_string(tape.value(input).cols()));
  Var h = input;
  for (auto& layer : layers_) {
    h = tape.add_bias(tape.matmul(h, tape.parameter(layer.weight)), tape.parameter(layer.bias));
    if (!layer.normalized) break;
    h = tape.layer_norm(h, tape.parameter(layer.gamma), tape.parameter(layer.beta),
                        config_.ln_eps);
    h = tape.relu(h);
    if (mode == Mode::kTrain && config_.dropout > 0.0) {
      if (!dropout_rng) throw DomainError("train-mode forward needs a dropout rng");
      h = tape.dropout(h, config_.dropout, *dropout_rng);
    }
  }
  return h;
}

Tensor PrimitiveHead::logits(const Tensor& input) const {
  if (input.rank() != 2 || input.cols() != config_.input_dim)
    throw ShapeError("head expects " + std::to_string(config_.input_dim) +
                     "-dim features, got " + shape_string(input.shape()));
  Tensor h = input;
  const std::size_t rows = input.rows();
  for (const auto& layer : layers_) {
    const std::size_t in = layer.weight.value.rows(), out = layer.weight.value.cols();
    Tensor z({rows, out});
    kernels::gemm(h.data(), layer.weight.value.data(), z.data(), rows, in, out);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < out; ++c) z.at(r, c) += layer.bias.value[c];
    if (layer.normalized) {
      Tensor y({rows, out});
      std::vector<double> mean(rows), rstd(rows);
      kernels::layer_norm_rows(z.data(), rows, out, layer.gamma.value.data(),
                               layer.beta.value.data(), config_.ln_eps, y.data(), mean, rstd);
      for (auto& v : y.values()) v = v > 0.0 ? v : 0.0;
      z = std::move(y);
    }
    h = std::move(z);
  }
  h.require_finite("head logits");
  return h;
}

std::vector<Parameter*> PrimitiveHead::parameters() {
  std::vector<Parameter*> out;
  for (auto& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
    if (l.normalized) {
      out.push_back(&l.gamma);
      out.push_back(&l.beta);
    }
  }
  return out;
}

std::vector<const Parameter*> PrimitiveHead::parameters() const {
  auto ps = const_cast<PrimitiveHead*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

void PrimitiveHead::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

KgSpModel::KgSpModel(const ModelConfig& config, Rng& init_rng) : config_(config) {
  HeadConfig hc{config.input_dim, config.hidden, config.n_states, config.dropout};
  state_head_ = PrimitiveHead("state", hc, init_rng);
  hc.n_classes = config.n_objects;
  object_head_ = PrimitiveHead("object", hc, init_rng);
}

PrimitiveProbs KgSpModel::forward(const Tensor& features, Mode mode, Rng* dropout_rng) {
  if (mode == Mode::kEval) return predict(features);
  Tape tape;
  Var x = tape.constant(features);
  const Var sv = state_head_.forward(tape, x, mode, dropout_rng);
  const Var ov = object_head_.forward(tape, x, mode, dropout_rng);
  const Tensor& sl = tape.value(sv);
  const Tensor& ol = tape.value(ov);
  PrimitiveProbs p{Tensor(sl.shape()), Tensor(ol.shape())};
  kernels::softmax_rows(sl.data(), sl.rows(), sl.cols(), p.state.data());
  kernels::softmax_rows(ol.data(), ol.rows(), ol.cols(), p.object.data());
  return p;
}

PrimitiveProbs KgSpModel::predict(const Tensor& features) const {
  const Tensor sl = state_head_.logits(features);
  const Tensor ol = object_head_.logits(features);
  PrimitiveProbs p{Tensor(sl.shape()), Tensor(ol.shape())};
  kernels::softmax_rows(sl.data(), sl.rows(), sl.cols(), p.state.data());
  kernels::softmax_rows(ol.data(), ol.rows(), ol.cols(), p.object.data());
  return p;
}

std::vector<Parameter*> KgSpModel::parameters() {
  auto out = state_head_.parameters();
  auto obj = object_head_.parameters();
  out.insert(out.end(), obj.begin(), obj.end());
  return out;
}

std::vector<const Parameter*> KgSpModel::parameters() const {
  auto ps = const_cast<KgSpModel*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

void KgSpModel::zero_grad() {
  state_head_.zero_grad();
  object_head_.zero_grad();
}

VisprodLoss visprod_loss(Tape& tape, Var state_logits, Var object_logits,
                         std::span<const ExampleRecord* const> batch) {
  if (batch.empty()) throw DomainError("visprod_loss: empty batch");
  std::vector<int> st(batch.size(), -1), ot(batch.size(), -1);
  VisprodLoss out;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& r = *batch[i];
    if (!r.state && !r.object)
      throw DomainError("visprod_loss: record '" + r.example_id + "' has no label");
    if (r.state) {
      st[i] = *r.state;
      ++out.n_state;
    }
    if (r.object) {
      ot[i] = *r.object;
      ++out.n_object;
    }
  }
  std::optional<Var> total;
  if (out.n_state) {
    Var l = tape.cross_entropy(state_logits, st, static_cast<double>(out.n_state));
    out.state_loss = tape.value(l)[0];
    total = l;
  }
  if (out.n_object) {
    Var l = tape.cross_entropy(object_logits, ot, static_cast<double>(out.n_object));
    out.object_loss = tape.value(l)[0];
    total = total ? tape.add(*total, l) : l;
  }
  out.total = *total;
  return out;
}

Tensor gather_features(const FeatureStore& store, std::span<const ExampleRecord* const> records) {
  Tensor x({records.size(), store.dim});
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto row = store.row(records[i]->feature_row);
    for (std::size_t c = 0; c < store.dim; ++c) x.at(i, c) = row[c];
  }
  return x;
}

namespace {

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
  void f64(double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_ += s;
  }
  void raw(const char* s, std::size_t n) { buf_.append(s, n); }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(std::string buf, std::string name) : buf_(std::move(buf)), name_(std::move(name)) {}
  void need(std::size_t n) {
    if (pos_ + n > buf_.size()) throw DomainError(name_ + ": truncated checkpoint");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }
  std::string str() {
    const auto n = u32();
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  std::string buf_;
  std::string name_;
  std::size_t pos_ = 0;
};

}  // namespace

// Layout (little-endian): "KGSM", u32 version, u32 |S|, u32 |O|, u32 input
// dim, u32 hidden count, u32 hidden widths..., f64 dropout, u32-length-
// prefixed state names then object names, then for the state head and then
// the object head, per linear layer: weight (fan_in x fan_out, row-major),
// bias, and for hidden layers LayerNorm gamma and beta, all f64.
void save_checkpoint(const KgSpModel& model, const Vocabulary& vocab,
                     const std::filesystem::path& path) {
  const auto& c = model.config();
  if (c.n_states != vocab.n_states() || c.n_objects != vocab.n_objects())
    throw DomainError("checkpoint: model and vocabulary sizes disagree");
  Writer w;
  w.raw("KGSM", 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(c.n_states));
  w.u32(static_cast<std::uint32_t>(c.n_objects));
  w.u32(static_cast<std::uint32_t>(c.input_dim));
  w.u32(static_cast<std::uint32_t>(c.hidden.size()));
  for (auto h : c.hidden) w.u32(static_cast<std::uint32_t>(h));
  w.f64(c.dropout);
  for (const auto& s : vocab.states()) w.str(s);
  for (const auto& o : vocab.objects()) w.str(o);
  for (const Parameter* p : model.parameters())
    for (double v : p->value.values()) w.f64(v);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  Reader r(ss.str(), path.string());
  if (r.raw(4) != "KGSM") throw DomainError(path.string() + ": not a checkpoint (bad magic)");
  if (const auto v = r.u32(); v != kCheckpointVersion)
    throw DomainError(path.string() + ": unsupported checkpoint version " + std::to_string(v));
  ModelConfig c;
  c.n_states = r.u32();
  c.n_objects = r.u32();
  c.input_dim = r.u32();
  c.hidden.resize(r.u32());
  for (auto& h : c.hidden) h = r.u32();
  c.dropout = r.f64();
  std::vector<std::string> states(c.n_states), objects(c.n_objects);
  for (auto& s : states) s = r.str();
  for (auto& o : objects) o = r.str();
  Checkpoint ck;
  ck.vocab = Vocabulary(states, objects);
  Rng dummy(0);
  ck.model = KgSpModel(c, dummy);
  for (Parameter* p : ck.model.parameters())
    for (auto& v : p->value.values()) v = r.f64();
  if (!r.done()) throw DomainError(path.string() + ": trailing bytes in checkpoint");
  for (const Parameter* p : ck.model.parameters()) p->value.require_finite(p->name);
  return ck;
}

}  // namespace kgsp
