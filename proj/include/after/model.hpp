#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "after/data.hpp"
#include "after/graph.hpp"
#include "after/rng.hpp"
#include "after/tensor.hpp"

namespace after {

struct EncoderConfig {
  int vocab_size = 0;
  int d_model = 64;
  int n_heads = 4;
  int d_ff = 128;
  int max_len = 128;
  double dropout_p = 0.1;
  int n_task_classes = 2;
  std::uint64_t seed = 0;

  void validate() const;
  long long param_count() const;
};

struct NamedParam {
  std::string name;
  TensorPtr tensor;
  bool decay;  // weight matrices yes; biases and layer-norm parameters no
};

// Single pre-norm transformer block plus three linear heads. Parameters are
// leaf tensors shared with every graph built over the model.
class EncoderModel {
 public:
  explicit EncoderModel(const EncoderConfig& config);

  const EncoderConfig& config() const { return config_; }
  const std::vector<NamedParam>& params() const { return params_; }
  TensorPtr param(const std::string& name) const;
  void zero_grad();
  EncoderModel clone() const;

  TensorPtr token_embedding, position_embedding;
  TensorPtr wq, wk, wv, wo;
  TensorPtr ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
  TensorPtr w1, b1, w2, b2;
  TensorPtr task_w, task_b;
  TensorPtr domain_w, domain_b;
  TensorPtr mlm_w, mlm_b;

 private:
  void register_params();
  EncoderConfig config_;
  std::vector<NamedParam> params_;
};

// Weights ~ Normal(0, 0.02^2) from the config seed; layer-norm gains 1,
// biases and the [PAD] embedding row 0.
EncoderModel init_model(const EncoderConfig& config);

// Fresh task/domain/mlm heads (fine-tuning starts from re-drawn heads).
void reinit_heads(EncoderModel& model, Rng& rng);

struct SequenceRepr {
  TensorPtr cls;           // batch x d_model
  TensorPtr token_states;  // (batch*seq) x d_model
  int batch = 0;
  int seq = 0;
};

SequenceRepr encode(Graph& g, const EncoderModel& model, const Batch& batch,
                    bool train_mode, Rng& rng);

TensorPtr task_logits(Graph& g, const EncoderModel& model,
                      const SequenceRepr& repr);
TensorPtr domain_logits_plain(Graph& g, const EncoderModel& model,
                              const SequenceRepr& repr);
TensorPtr domain_logits_adversarial(Graph& g, const EncoderModel& model,
                                    const SequenceRepr& repr);
TensorPtr mlm_logits(Graph& g, const EncoderModel& model,
                     const SequenceRepr& repr);
// mlm head applied to selected rows only; what the pretraining loop uses
TensorPtr mlm_logits_rows(Graph& g, const EncoderModel& model,
                          const SequenceRepr& repr, const std::vector<int>& rows);

struct LossTriple {
  TensorPtr main;    // task cross-entropy over Main rows
  TensorPtr domain;  // domain cross-entropy over all rows
  TensorPtr total;   // the scalar that gets backpropagated
  double diagnostic; // L_Main - lambda * L_Domain
};

// L_total = L_Main + lambda*L_Domain with the domain path behind the GRL, so
// encoder gradients come out as grad(L_Main) - lambda*grad(L_Domain) while
// the domain head itself descends L_Domain. lambda must be positive; the
// allow_zero hook exists for the SFT-degeneracy tests only.
LossTriple after_losses(Graph& g, const EncoderModel& model, const Batch& batch,
                        double lambda, bool train_mode, Rng& rng,
                        bool allow_zero = false);

// Same losses without the GRL: encoder and head both descend L_Domain.
LossTriple multitask_losses(Graph& g, const EncoderModel& model,
                            const Batch& batch, double weight, bool train_mode,
                            Rng& rng, bool allow_zero = false);

// Task cross-entropy only; every row must carry a label.
TensorPtr sft_loss(Graph& g, const EncoderModel& model, const Batch& batch,
                   bool train_mode, Rng& rng);

// ------------------------------------------------------------- checkpoints

struct Checkpoint {
  EncoderConfig config;
  std::uint64_t vocab_fingerprint = 0;
  EncoderModel model;
};

// Format: ASCII magic "AFTRCKPT1\n", one JSON header line (config, vocab
// fingerprint, parameter manifest with byte offsets), then little-endian f32
// blobs in manifest order. f32 storage costs ~1e-7 relative error on load.
void save_checkpoint(const EncoderModel& model, std::uint64_t vocab_fingerprint,
                     const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace after
