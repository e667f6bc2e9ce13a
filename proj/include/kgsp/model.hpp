#pragma once

// Two independent MLP classifiers over the same image feature: one for
// states, one for objects. They share no parameters.

#include <filesystem>
#include <span>
#include <vector>

#include "kgsp/dataio.hpp"
#include "kgsp/rng.hpp"
#include "kgsp/tape.hpp"

namespace kgsp {

// Hidden widths for a head of the given depth (number of linear layers,
// 1..5): 768 first, 1024 afterwards.
std::vector<std::size_t> hidden_widths_for_depth(int depth);

struct HeadConfig {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden = {768, 1024};
  std::size_t n_classes = 0;
  double dropout = 0.5;
  double ln_eps = 1e-5;
};

// Linear -> LayerNorm -> ReLU -> Dropout for each hidden layer, then a final
// linear layer producing logits.
class PrimitiveHead {
 public:
  PrimitiveHead() = default;
  PrimitiveHead(std::string name, HeadConfig config, Rng& init_rng);

  const HeadConfig& config() const { return config_; }

  // Records the forward pass on `tape`. dropout_rng is only used in train mode.
  Var forward(Tape& tape, Var input, Mode mode, Rng* dropout_rng);
  // Eval-mode logits without recording anything. Safe to call concurrently.
  Tensor logits(const Tensor& input) const;

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  void zero_grad();

  struct Layer {
    Parameter weight;  // fan_in x fan_out
    Parameter bias;
    Parameter gamma;  // LayerNorm scale, hidden layers only
    Parameter beta;
    bool normalized = false;
  };
  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }

 private:
  HeadConfig config_;
  std::vector<Layer> layers_;
};

struct ModelConfig {
  std::size_t input_dim = 0;
  std::size_t n_states = 0;
  std::size_t n_objects = 0;
  std::vector<std::size_t> hidden = {768, 1024};
  double dropout = 0.5;
};

struct PrimitiveProbs {
  Tensor state;   // b x |S|
  Tensor object;  // b x |O|
};

class KgSpModel {
 public:
  KgSpModel() = default;
  // Initialises both heads from `init_rng`, state head first.
  KgSpModel(const ModelConfig& config, Rng& init_rng);

  const ModelConfig& config() const { return config_; }
  PrimitiveHead& state_head() { return state_head_; }
  PrimitiveHead& object_head() { return object_head_; }
  const PrimitiveHead& state_head() const { return state_head_; }
  const PrimitiveHead& object_head() const { return object_head_; }

  // Softmax outputs of both heads. Eval mode is deterministic and does not
  // touch the rng; train mode applies dropout and needs one.
  PrimitiveProbs forward(const Tensor& features, Mode mode, Rng* dropout_rng = nullptr);
  // Eval-mode forward; const and safe to call concurrently.
  PrimitiveProbs predict(const Tensor& features) const;

  // State head parameters followed by object head parameters.
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  void zero_grad();

 private:
  ModelConfig config_;
  PrimitiveHead state_head_;
  PrimitiveHead object_head_;
};

struct VisprodLoss {
  Var total;
  double state_loss = 0.0;   // mean over records with a state label
  double object_loss = 0.0;  // mean over records with an object label
  std::size_t n_state = 0;
  std::size_t n_object = 0;
};

// Cross-entropy on each present label, each term averaged over its own
// count of present labels; a missing label contributes nothing.
VisprodLoss visprod_loss(Tape& tape, Var state_logits, Var object_logits,
                         std::span<const ExampleRecord* const> batch);

// Copies the feature rows of `records` into a b x dim tensor.
Tensor gather_features(const FeatureStore& store, std::span<const ExampleRecord* const> records);

struct Checkpoint {
  KgSpModel model;
  Vocabulary vocab;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const KgSpModel& model, const Vocabulary& vocab,
                     const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace kgsp
