#include "after/model.hpp"

#include <stdexcept>

namespace after {

void EncoderConfig::validate() const {
  if (vocab_size <= Vocab::kNumSpecials)
    throw std::invalid_argument("EncoderConfig: vocab_size must exceed " +
                                std::to_string(Vocab::kNumSpecials));
  if (d_model < 1 || d_ff < 1)
    throw std::invalid_argument("EncoderConfig: dims must be positive");
  if (n_heads < 1 || d_model % n_heads != 0)
    throw std::invalid_argument(
        "EncoderConfig: d_model must be divisible by n_heads");
  if (max_len < 2)
    throw std::invalid_argument("EncoderConfig: max_len must be >= 2");
  if (dropout_p < 0.0 || dropout_p >= 1.0)
    throw std::invalid_argument("EncoderConfig: dropout_p must be in [0,1)");
  if (n_task_classes < 2)
    throw std::invalid_argument("EncoderConfig: need at least 2 task classes");
}

long long EncoderConfig::param_count() const {
  const long long v = vocab_size, d = d_model, f = d_ff, L = max_len,
                  c = n_task_classes;
  long long total = v * d + L * d;       // embeddings
  total += 4 * d * d;                    // attention projections
  total += d * f + f + f * d + d;        // feed-forward
  total += 4 * d;                        // two layer-norm pairs
  total += d * c + c;                    // task head
  total += d * 2 + 2;                    // domain head
  total += d * v + v;                    // mlm head
  return total;
}

EncoderModel::EncoderModel(const EncoderConfig& config) : config_(config) {
  config_.validate();
  const int d = config_.d_model;
  token_embedding = make_tensor(config_.vocab_size, d, true);
  position_embedding = make_tensor(config_.max_len, d, true);
  wq = make_tensor(d, d, true);
  wk = make_tensor(d, d, true);
  wv = make_tensor(d, d, true);
  wo = make_tensor(d, d, true);
  ln1_gamma = make_tensor(1, d, true);
  ln1_beta = make_tensor(1, d, true);
  ln2_gamma = make_tensor(1, d, true);
  ln2_beta = make_tensor(1, d, true);
  w1 = make_tensor(d, config_.d_ff, true);
  b1 = make_tensor(1, config_.d_ff, true);
  w2 = make_tensor(config_.d_ff, d, true);
  b2 = make_tensor(1, d, true);
  task_w = make_tensor(d, config_.n_task_classes, true);
  task_b = make_tensor(1, config_.n_task_classes, true);
  domain_w = make_tensor(d, 2, true);
  domain_b = make_tensor(1, 2, true);
  mlm_w = make_tensor(d, config_.vocab_size, true);
  mlm_b = make_tensor(1, config_.vocab_size, true);
  register_params();
}

void EncoderModel::register_params() {
  params_ = {
      {"token_embedding", token_embedding, true},
      {"position_embedding", position_embedding, true},
      {"wq", wq, true},
      {"wk", wk, true},
      {"wv", wv, true},
      {"wo", wo, true},
      {"ln1_gamma", ln1_gamma, false},
      {"ln1_beta", ln1_beta, false},
      {"ln2_gamma", ln2_gamma, false},
      {"ln2_beta", ln2_beta, false},
      {"w1", w1, true},
      {"b1", b1, false},
      {"w2", w2, true},
      {"b2", b2, false},
      {"task_w", task_w, true},
      {"task_b", task_b, false},
      {"domain_w", domain_w, true},
      {"domain_b", domain_b, false},
      {"mlm_w", mlm_w, true},
      {"mlm_b", mlm_b, false},
  };
}

TensorPtr EncoderModel::param(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return p.tensor;
  throw std::invalid_argument("EncoderModel: no parameter named " + name);
}

void EncoderModel::zero_grad() {
  for (const auto& p : params_) p.tensor->zero_grad();
}

EncoderModel EncoderModel::clone() const {
  EncoderModel copy(config_);
  for (std::size_t i = 0; i < params_.size(); ++i)
    copy.params_[i].tensor->data = params_[i].tensor->data;
  return copy;
}

namespace {

void fill_normal(const TensorPtr& t, Rng& rng, double stddev) {
  for (auto& v : t->data) v = stddev * rng.normal();
}

}  // namespace

EncoderModel init_model(const EncoderConfig& config) {
  EncoderModel model(config);
  Rng rng = Rng(config.seed).split("init");
  for (const auto& p : model.params()) {
    if (p.name == "ln1_gamma" || p.name == "ln2_gamma") {
      std::fill(p.tensor->data.begin(), p.tensor->data.end(), 1.0);
    } else if (p.decay) {
      fill_normal(p.tensor, rng, 0.02);
    }  // biases and layer-norm betas stay zero
  }
  // the [PAD] embedding row stays exactly zero
  for (int j = 0; j < config.d_model; ++j)
    model.token_embedding->at(Vocab::kPad, j) = 0.0;
  return model;
}

void reinit_heads(EncoderModel& model, Rng& rng) {
  fill_normal(model.task_w, rng, 0.02);
  fill_normal(model.domain_w, rng, 0.02);
  fill_normal(model.mlm_w, rng, 0.02);
  for (auto* b : {&model.task_b, &model.domain_b, &model.mlm_b})
    std::fill((*b)->data.begin(), (*b)->data.end(), 0.0);
}

SequenceRepr encode(Graph& g, const EncoderModel& model, const Batch& batch,
                    bool train_mode, Rng& rng) {
  const EncoderConfig& cfg = model.config();
  const int b = batch.size, s = batch.seq;
  if (b < 1 || s < 1)
    throw std::invalid_argument("encode: empty batch");
  if (s > cfg.max_len)
    throw std::invalid_argument("encode: sequence length " + std::to_string(s) +
                                " exceeds max_len " +
                                std::to_string(cfg.max_len));
  if (static_cast<int>(batch.token_ids.size()) != b * s ||
      static_cast<int>(batch.attn_mask.size()) != b * s)
    throw std::invalid_argument("encode: batch buffers do not match size*seq");
  for (int i = 0; i < b; ++i)
    if (batch.token_ids[static_cast<std::size_t>(i) * s] != Vocab::kCls)
      throw std::invalid_argument("encode: sequence " + std::to_string(i) +
                                  " does not start with [CLS]");
  for (int id : batch.token_ids)
    if (id < 0 || id >= cfg.vocab_size)
      throw std::invalid_argument("encode: token id " + std::to_string(id) +
                                  " outside the vocabulary");

  std::vector<int> pos_ids(static_cast<std::size_t>(b) * s);
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < s; ++j)
      pos_ids[static_cast<std::size_t>(i) * s + j] = j;

  auto tok = g.gather_rows(model.token_embedding, batch.token_ids);
  auto pos = g.gather_rows(model.position_embedding, pos_ids);
  auto x = g.add(tok, pos);
  x = g.dropout(x, cfg.dropout_p, rng, train_mode);

  auto h = g.layer_norm(x, model.ln1_gamma, model.ln1_beta);
  auto q = g.matmul(h, model.wq);
  auto k = g.matmul(h, model.wk);
  auto v = g.matmul(h, model.wv);
  auto attn = g.attention(q, k, v, b, s, cfg.n_heads, batch.attn_mask);
  attn = g.matmul(attn, model.wo);
  attn = g.dropout(attn, cfg.dropout_p, rng, train_mode);
  auto x2 = g.add(x, attn);

  auto h2 = g.layer_norm(x2, model.ln2_gamma, model.ln2_beta);
  auto f = g.matmul(h2, model.w1);
  f = g.add_bias(f, model.b1);
  f = g.gelu(f);
  f = g.matmul(f, model.w2);
  f = g.add_bias(f, model.b2);
  f = g.dropout(f, cfg.dropout_p, rng, train_mode);
  auto out = g.add(x2, f);

  std::vector<int> cls_rows(static_cast<std::size_t>(b));
  for (int i = 0; i < b; ++i) cls_rows[static_cast<std::size_t>(i)] = i * s;

  SequenceRepr repr;
  repr.cls = g.gather_rows(out, cls_rows);
  repr.token_states = out;
  repr.batch = b;
  repr.seq = s;
  return repr;
}

TensorPtr task_logits(Graph& g, const EncoderModel& model,
                      const SequenceRepr& repr) {
  return g.add_bias(g.matmul(repr.cls, model.task_w), model.task_b);
}

TensorPtr domain_logits_plain(Graph& g, const EncoderModel& model,
                              const SequenceRepr& repr) {
  return g.add_bias(g.matmul(repr.cls, model.domain_w), model.domain_b);
}

TensorPtr domain_logits_adversarial(Graph& g, const EncoderModel& model,
                                    const SequenceRepr& repr) {
  return g.add_bias(g.matmul(g.grad_reverse(repr.cls), model.domain_w),
                    model.domain_b);
}

TensorPtr mlm_logits(Graph& g, const EncoderModel& model,
                     const SequenceRepr& repr) {
  return g.add_bias(g.matmul(repr.token_states, model.mlm_w), model.mlm_b);
}

TensorPtr mlm_logits_rows(Graph& g, const EncoderModel& model,
                          const SequenceRepr& repr,
                          const std::vector<int>& rows) {
  auto picked = g.gather_rows(repr.token_states, rows);
  return g.add_bias(g.matmul(picked, model.mlm_w), model.mlm_b);
}

namespace {

LossTriple mixed_losses(Graph& g, const EncoderModel& model, const Batch& batch,
                        double coeff, bool adversarial, bool train_mode,
                        Rng& rng, bool allow_zero, const char* what) {
  if (coeff < 0.0 || (coeff == 0.0 && !allow_zero))
    throw std::invalid_argument(std::string(what) +
                                ": coefficient must be > 0");
  bool any_main = false;
  for (auto f : batch.task_label_mask) any_main = any_main || f;
  if (!any_main)
    throw std::runtime_error(std::string(what) +
                             ": batch contains no Main rows");

  auto repr = encode(g, model, batch, train_mode, rng);
  auto t_logits = task_logits(g, model, repr);
  auto d_logits = adversarial ? domain_logits_adversarial(g, model, repr)
                              : domain_logits_plain(g, model, repr);

  LossTriple out;
  out.main =
      g.cross_entropy_logits(t_logits, batch.task_labels, batch.task_label_mask);
  const std::vector<std::uint8_t> all_rows(batch.domain_labels.size(), 1);
  out.domain = g.cross_entropy_logits(d_logits, batch.domain_labels, all_rows);
  out.total = g.add(out.main, g.scale(out.domain, coeff));
  out.diagnostic = out.main->data[0] - coeff * out.domain->data[0];
  return out;
}

}  // namespace

LossTriple after_losses(Graph& g, const EncoderModel& model, const Batch& batch,
                        double lambda, bool train_mode, Rng& rng,
                        bool allow_zero) {
  return mixed_losses(g, model, batch, lambda, true, train_mode, rng,
                      allow_zero, "after_losses");
}

LossTriple multitask_losses(Graph& g, const EncoderModel& model,
                            const Batch& batch, double weight, bool train_mode,
                            Rng& rng, bool allow_zero) {
  return mixed_losses(g, model, batch, weight, false, train_mode, rng,
                      allow_zero, "multitask_losses");
}

TensorPtr sft_loss(Graph& g, const EncoderModel& model, const Batch& batch,
                   bool train_mode, Rng& rng) {
  for (auto f : batch.task_label_mask)
    if (!f)
      throw std::invalid_argument("sft_loss: unlabeled row present");
  auto repr = encode(g, model, batch, train_mode, rng);
  auto logits = task_logits(g, model, repr);
  const std::vector<std::uint8_t> all_rows(batch.task_labels.size(), 1);
  return g.cross_entropy_logits(logits, batch.task_labels, all_rows);
}

}  // namespace after
