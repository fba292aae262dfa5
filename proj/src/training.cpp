#include "after/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <stdexcept>
#include <thread>

#include "after/graph.hpp"
#include "after/metrics.hpp"

namespace after {

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::kSft: return "sft";
    case TrainMode::kAfter: return "after";
    case TrainMode::kMultitask: return "multitask";
  }
  throw std::logic_error("to_string: bad TrainMode");
}

TrainMode train_mode_from_string(const std::string& s) {
  if (s == "sft") return TrainMode::kSft;
  if (s == "after") return TrainMode::kAfter;
  if (s == "multitask") return TrainMode::kMultitask;
  throw std::invalid_argument("unknown training mode '" + s +
                              "' (expected sft|after|multitask)");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("config: epochs must be >= 1");
  if (evals_per_epoch < 1) {
    throw std::invalid_argument("config: evals_per_epoch must be >= 1");
  }
  if (batch_size < 2 || batch_size % 2 != 0) {
    throw std::invalid_argument("config: batch_size must be even and >= 2");
  }
  if (!(lr_peak > 0.0)) {
    throw std::invalid_argument("config: lr_peak must be positive");
  }
  if (adam_beta1 < 0.0 || adam_beta1 >= 1.0 || adam_beta2 < 0.0 ||
      adam_beta2 >= 1.0) {
    throw std::invalid_argument("config: adam betas must be in [0,1)");
  }
  if (!(adam_eps > 0.0)) {
    throw std::invalid_argument("config: adam_eps must be positive");
  }
  if (weight_decay < 0.0) {
    throw std::invalid_argument("config: weight_decay must be >= 0");
  }
  if (warmup_proportion < 0.0 || warmup_proportion > 1.0) {
    throw std::invalid_argument("config: warmup_proportion must be in [0,1]");
  }
  if (mlm_mask_prob <= 0.0 || mlm_mask_prob >= 1.0) {
    throw std::invalid_argument("config: mlm_mask_prob must be in (0,1)");
  }
  if (pretrain_steps < 1) {
    throw std::invalid_argument("config: pretrain_steps must be >= 1");
  }
}

void adamw_apply(std::vector<double>& param, const std::vector<double>& grad,
                 std::vector<double>& m, std::vector<double>& v, long long t,
                 double lr_t, double beta1, double beta2, double eps,
                 double weight_decay, bool decay) {
  if (grad.size() != param.size() || m.size() != param.size() ||
      v.size() != param.size()) {
    throw std::invalid_argument("adamw_apply: state shape mismatch");
  }
  if (t < 1) throw std::invalid_argument("adamw_apply: step must be >= 1");
  if (lr_t < 0.0) throw std::invalid_argument("adamw_apply: negative lr");
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    m[i] = beta1 * m[i] + (1.0 - beta1) * g;
    v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    const double prev = param[i];
    param[i] -= lr_t * mhat / (std::sqrt(vhat) + eps);
    if (decay) param[i] -= lr_t * weight_decay * prev;
  }
}

AdamW::AdamW(const std::vector<NamedParam>& params, const TrainConfig& config)
    : beta1_(config.adam_beta1),
      beta2_(config.adam_beta2),
      eps_(config.adam_eps),
      wd_(config.weight_decay) {
  slots_.reserve(params.size());
  for (const auto& p : params) {
    Slot s;
    s.tensor = p.tensor;
    s.m.assign(p.tensor->size(), 0.0);
    s.v.assign(p.tensor->size(), 0.0);
    s.decay = p.decay;
    slots_.push_back(std::move(s));
  }
}

void AdamW::step(double lr_t) {
  ++t_;
  for (auto& s : slots_) {
    adamw_apply(s.tensor->data, s.tensor->grad, s.m, s.v, t_, lr_t, beta1_,
                beta2_, eps_, wd_, s.decay);
  }
}

double lr_at(long long step, long long total_steps, double warmup_proportion,
             double lr_peak) {
  if (total_steps < 1) throw std::invalid_argument("lr_at: total_steps < 1");
  if (step < 0 || step > total_steps) {
    throw std::out_of_range("lr_at: step outside [0, total_steps]");
  }
  const auto warmup = static_cast<long long>(
      std::ceil(warmup_proportion * static_cast<double>(total_steps)));
  if (warmup > 0 && step <= warmup) {
    return lr_peak * static_cast<double>(step) / static_cast<double>(warmup);
  }
  return lr_peak * static_cast<double>(total_steps - step) /
         static_cast<double>(total_steps - warmup);
}

namespace {

// Re-corrupts every row of a collated batch in place and returns the flat
// (row*seq + pos) indices plus original ids of the selected positions.
// Padding is [PAD], a special token, so it is never selected.
struct MaskedBatch {
  Batch batch;
  std::vector<int> rows;
  std::vector<int> targets;
};

MaskedBatch mask_batch(const Batch& in, const Vocab& vocab, Rng& rng,
                       double mask_prob) {
  MaskedBatch out;
  out.batch = in;
  for (int r = 0; r < in.size; ++r) {
    std::vector<int> ids(in.token_ids.begin() + r * in.seq,
                         in.token_ids.begin() + (r + 1) * in.seq);
    MlmMasked m = mlm_mask(ids, vocab, rng, mask_prob);
    for (int j = 0; j < in.seq; ++j) {
      out.batch.token_ids[r * in.seq + j] = m.corrupted[j];
      if (m.loss_mask[j]) {
        out.rows.push_back(r * in.seq + j);
        out.targets.push_back(m.targets[j]);
      }
    }
  }
  return out;
}

}  // namespace

std::vector<double> pretrain_mlm(EncoderModel& model, const Vocab& vocab,
                                 const Dataset& corpus,
                                 const TrainConfig& config, Rng rng) {
  config.validate();
  if (vocab.size() != model.config().vocab_size) {
    throw std::invalid_argument("pretrain_mlm: vocabulary mismatch");
  }
  if (corpus.examples.empty()) {
    throw std::invalid_argument("pretrain_mlm: empty corpus");
  }
  MainBatcher batcher(corpus, config.batch_size, rng.split("batches"));
  Rng mask_rng = rng.split("mask");
  Rng drop_rng = rng.split("dropout");
  AdamW opt(model.params(), config);

  const long long total = config.pretrain_steps;
  std::vector<double> losses;
  losses.reserve(total);
  std::vector<Batch> epoch;
  std::size_t cursor = 0;
  for (long long step = 1; step <= total; ++step) {
    if (cursor >= epoch.size()) {
      epoch = batcher.epoch();
      cursor = 0;
    }
    MaskedBatch mb = mask_batch(epoch[cursor++], vocab, mask_rng,
                                config.mlm_mask_prob);
    Graph g;
    SequenceRepr repr = encode(g, model, mb.batch, /*train_mode=*/true,
                               drop_rng);
    TensorPtr logits = mlm_logits_rows(g, model, repr, mb.rows);
    std::vector<std::uint8_t> all(mb.targets.size(), 1);
    TensorPtr loss = g.cross_entropy_logits(logits, mb.targets, all);
    const double value = loss->data[0];
    if (!std::isfinite(value)) {
      throw std::runtime_error("pretrain_mlm: non-finite loss at step " +
                               std::to_string(step));
    }
    model.zero_grad();
    g.backward(loss);
    opt.step(lr_at(step, total, config.warmup_proportion, config.lr_peak));
    losses.push_back(value);
  }
  return losses;
}

namespace {

struct EvalOutcome {
  double loss = 0.0;
  double accuracy = 0.0;
  double f1 = 0.0;
  double mcc = 0.0;
};

EvalOutcome evaluate_split(const EncoderModel& model, const Dataset& split,
                           int batch_size, Rng& scratch_rng) {
  const int n_classes = model.config().n_task_classes;
  double loss_sum = 0.0;
  long long n_rows = 0;
  std::vector<int> preds, golds;
  preds.reserve(split.examples.size());
  golds.reserve(split.examples.size());
  for (std::size_t start = 0; start < split.examples.size();
       start += batch_size) {
    const std::size_t stop =
        std::min(start + static_cast<std::size_t>(batch_size),
                 split.examples.size());
    std::vector<const Example*> rows;
    for (std::size_t i = start; i < stop; ++i) {
      rows.push_back(&split.examples[i]);
    }
    const Batch batch = collate(rows);
    Graph g;
    SequenceRepr repr = encode(g, model, batch, /*train_mode=*/false,
                               scratch_rng);
    TensorPtr logits = task_logits(g, model, repr);
    TensorPtr loss = g.cross_entropy_logits(logits, batch.task_labels,
                                            batch.task_label_mask);
    loss_sum += loss->data[0] * static_cast<double>(batch.size);
    n_rows += batch.size;
    for (int r = 0; r < batch.size; ++r) {
      int best = 0;
      for (int c = 1; c < n_classes; ++c) {
        if (logits->data[r * n_classes + c] >
            logits->data[r * n_classes + best]) {
          best = c;
        }
      }
      preds.push_back(best);
      golds.push_back(batch.task_labels[r]);
    }
  }
  EvalOutcome out;
  out.loss = loss_sum / static_cast<double>(n_rows);
  out.accuracy = accuracy(preds, golds);
  if (n_classes == 2) {
    out.f1 = f1_binary(preds, golds);
    out.mcc = matthews_corr(preds, golds);
  }
  return out;
}

std::vector<std::vector<double>> snapshot_params(const EncoderModel& model) {
  std::vector<std::vector<double>> snap;
  snap.reserve(model.params().size());
  for (const auto& p : model.params()) snap.push_back(p.tensor->data);
  return snap;
}

void restore_params(EncoderModel& model,
                    const std::vector<std::vector<double>>& snap) {
  for (std::size_t i = 0; i < snap.size(); ++i) {
    model.params()[i].tensor->data = snap[i];
  }
}

}  // namespace

RunResult finetune(const Checkpoint& checkpoint, const MainSplits& main,
                   const Dataset* aux, const TrainConfig& config,
                   std::uint64_t seed, const FinetuneHooks& hooks,
                   EncoderModel* trained_model) {
  config.validate();
  if (main.train == nullptr || main.val == nullptr || main.test == nullptr) {
    throw std::invalid_argument("finetune: missing main split");
  }
  if (main.train->examples.empty() || main.val->examples.empty() ||
      main.test->examples.empty()) {
    throw std::invalid_argument("finetune: empty main split");
  }
  const bool adversarial = config.mode == TrainMode::kAfter;
  const bool multitask = config.mode == TrainMode::kMultitask;
  if (adversarial || multitask) {
    if (aux == nullptr) {
      throw std::invalid_argument(
          "finetune: after/multitask modes require an auxiliary dataset");
    }
    if (config.lambda < 0.0 ||
        (config.lambda == 0.0 && !hooks.allow_lambda_zero)) {
      throw std::invalid_argument("finetune: lambda must be positive");
    }
  } else if (aux != nullptr && !hooks.balanced_batches_for_sft) {
    throw std::invalid_argument("finetune: sft forbids an auxiliary dataset");
  }

  EncoderModel model = checkpoint.model.clone();
  Rng root(seed);
  Rng heads_rng = root.split("heads");
  reinit_heads(model, heads_rng);
  Rng drop_rng = root.split("dropout");

  const bool balanced = adversarial || multitask ||
                        (hooks.balanced_batches_for_sft && aux != nullptr);
  std::optional<BalancedBatcher> bal;
  std::optional<MainBatcher> plain;
  int steps_per_epoch = 0;
  if (balanced) {
    bal.emplace(*main.train, *aux, config.batch_size, root.split("batches"));
    steps_per_epoch = bal->batches_per_epoch();
  } else {
    plain.emplace(*main.train, config.batch_size, root.split("batches"));
    steps_per_epoch = plain->batches_per_epoch();
  }
  AdamW opt(model.params(), config);
  const long long total =
      static_cast<long long>(config.epochs) * steps_per_epoch;

  std::vector<int> eval_targets(config.evals_per_epoch);
  for (int k = 1; k <= config.evals_per_epoch; ++k) {
    eval_targets[k - 1] = static_cast<int>(
        (static_cast<long long>(k) * steps_per_epoch + config.evals_per_epoch -
         1) /
        config.evals_per_epoch);
  }

  RunResult result;
  result.seed = seed;
  result.lambda = config.mode == TrainMode::kSft ? 0.0 : config.lambda;
  result.mode = config.mode;
  double best_loss = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> best_snap;

  double main_acc = 0.0, dom_acc = 0.0;
  int interval_n = 0;
  double last_main_mean = 0.0, last_dom_mean = 0.0;

  for (int e = 0; e < config.epochs; ++e) {
    const std::vector<Batch> batches = balanced ? bal->epoch() : plain->epoch();
    int fired = 0;
    for (int b = 0; b < steps_per_epoch; ++b) {
      const Batch& batch = batches[b];
      const long long step = static_cast<long long>(e) * steps_per_epoch + b + 1;
      Graph g;
      TensorPtr loss;
      double l_main = 0.0, l_domain = 0.0;
      if (adversarial || multitask) {
        LossTriple lt =
            adversarial
                ? after_losses(g, model, batch, config.lambda,
                               /*train_mode=*/true, drop_rng,
                               hooks.allow_lambda_zero)
                : multitask_losses(g, model, batch, config.lambda,
                                   /*train_mode=*/true, drop_rng,
                                   hooks.allow_lambda_zero);
        loss = lt.total;
        l_main = lt.main->data[0];
        l_domain = lt.domain->data[0];
      } else if (hooks.balanced_batches_for_sft) {
        SequenceRepr repr =
            encode(g, model, batch, /*train_mode=*/true, drop_rng);
        TensorPtr logits = task_logits(g, model, repr);
        loss = g.cross_entropy_logits(logits, batch.task_labels,
                                      batch.task_label_mask);
        l_main = loss->data[0];
      } else {
        loss = sft_loss(g, model, batch, /*train_mode=*/true, drop_rng);
        l_main = loss->data[0];
      }
      if (!std::isfinite(loss->data[0])) {
        char msg[160];
        std::snprintf(msg, sizeof(msg),
                      "finetune: non-finite loss at step %lld (main=%g, "
                      "domain=%g)",
                      step, l_main, l_domain);
        throw std::runtime_error(msg);
      }
      model.zero_grad();
      g.backward(loss);
      opt.step(lr_at(step, total, config.warmup_proportion, config.lr_peak));
      main_acc += l_main;
      dom_acc += l_domain;
      ++interval_n;

      bool evaluated = false;
      EvalOutcome outcome;
      while (fired < config.evals_per_epoch && eval_targets[fired] <= b + 1) {
        if (!evaluated) {
          outcome = evaluate_split(model, *main.val, config.batch_size,
                                   drop_rng);
          evaluated = true;
        }
        if (interval_n > 0) {
          last_main_mean = main_acc / interval_n;
          last_dom_mean = dom_acc / interval_n;
          main_acc = dom_acc = 0.0;
          interval_n = 0;
        }
        EvalRecord rec;
        rec.step = step;
        rec.train_main_loss = last_main_mean;
        rec.train_domain_loss = last_dom_mean;
        rec.val_loss = outcome.loss;
        rec.val_accuracy = outcome.accuracy;
        rec.val_f1 = outcome.f1;
        rec.val_mcc = outcome.mcc;
        result.evals.push_back(rec);
        if (outcome.loss < best_loss) {
          best_loss = outcome.loss;
          best_snap = snapshot_params(model);
          result.selected_step = step;
          result.best_val_accuracy = outcome.accuracy;
        }
        ++fired;
      }
    }
  }

  result.best_val_loss = best_loss;
  restore_params(model, best_snap);
  if (trained_model != nullptr) *trained_model = model.clone();
  EvalOutcome test =
      evaluate_split(model, *main.test, config.batch_size, drop_rng);
  result.test_accuracy = test.accuracy;
  result.test_f1 = test.f1;
  result.test_mcc = test.mcc;
  return result;
}

MetricStats aggregate(const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("aggregate: empty list");
  MetricStats s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double acc = 0.0;
    for (double v : values) acc += (v - s.mean) * (v - s.mean);
    s.stdev = std::sqrt(acc / static_cast<double>(values.size() - 1));
  }
  return s;
}

SweepResult lambda_sweep(const Checkpoint& checkpoint, const MainSplits& main,
                         const Dataset& aux, const TrainConfig& config,
                         const std::vector<double>& grid,
                         const std::vector<std::uint64_t>& seeds, int jobs) {
  if (grid.empty()) throw std::invalid_argument("lambda_sweep: empty grid");
  if (seeds.empty()) throw std::invalid_argument("lambda_sweep: no seeds");
  if (config.mode == TrainMode::kSft) {
    throw std::invalid_argument(
        "lambda_sweep: requires after or multitask mode");
  }

  struct CellSlot {
    std::optional<RunResult> run;
    std::string error;
  };
  std::vector<std::vector<CellSlot>> slots(
      grid.size(), std::vector<CellSlot>(seeds.size()));

  const std::size_t n_tasks = grid.size() * seeds.size();
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t task = next.fetch_add(1);
      if (task >= n_tasks) return;
      const std::size_t li = task / seeds.size();
      const std::size_t si = task % seeds.size();
      TrainConfig cell_config = config;
      cell_config.lambda = grid[li];
      try {
        slots[li][si].run =
            finetune(checkpoint, main, &aux, cell_config, seeds[si]);
      } catch (const std::exception& ex) {
        slots[li][si].error = "seed " + std::to_string(seeds[si]) + ": " +
                              ex.what();
      }
    }
  };
  const int n_threads =
      std::max(1, std::min<int>(jobs, static_cast<int>(n_tasks)));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  SweepResult sweep;
  sweep.cells.reserve(grid.size());
  double best_metric = -std::numeric_limits<double>::infinity();
  for (std::size_t li = 0; li < grid.size(); ++li) {
    SweepCell cell;
    cell.lambda = grid[li];
    std::vector<double> val_acc, test_acc, test_f1, test_mcc;
    for (std::size_t si = 0; si < seeds.size(); ++si) {
      auto& slot = slots[li][si];
      if (slot.run) {
        val_acc.push_back(slot.run->best_val_accuracy);
        test_acc.push_back(slot.run->test_accuracy);
        test_f1.push_back(slot.run->test_f1);
        test_mcc.push_back(slot.run->test_mcc);
        cell.runs.push_back(std::move(*slot.run));
      } else {
        cell.failures.push_back(slot.error);
      }
    }
    if (!val_acc.empty()) {
      cell.val_accuracy = aggregate(val_acc);
      cell.test_accuracy = aggregate(test_acc);
      cell.test_f1 = aggregate(test_f1);
      cell.test_mcc = aggregate(test_mcc);
      if (cell.val_accuracy.mean > best_metric) {
        best_metric = cell.val_accuracy.mean;
        sweep.best_lambda = cell.lambda;
        sweep.has_best = true;
      }
    }
    sweep.cells.push_back(std::move(cell));
  }
  return sweep;
}

std::string sweep_table(const SweepResult& sweep) {
  std::string out;
  char line[200];
  std::snprintf(line, sizeof(line), "%-10s %-5s %-19s %-19s %-19s %-19s\n",
                "lambda", "runs", "val_acc", "test_acc", "test_f1",
                "test_mcc");
  out += line;
  auto cell_text = [](const MetricStats& s) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.4f +/- %.4f", s.mean, s.stdev);
    return std::string(buf);
  };
  for (const auto& cell : sweep.cells) {
    if (cell.runs.empty()) {
      std::snprintf(line, sizeof(line), "%-10.4g %-5zu %s\n", cell.lambda,
                    cell.runs.size(), "all seeds failed");
    } else {
      std::snprintf(line, sizeof(line), "%-10.4g %-5zu %-19s %-19s %-19s %-19s\n",
                    cell.lambda, cell.runs.size(),
                    cell_text(cell.val_accuracy).c_str(),
                    cell_text(cell.test_accuracy).c_str(),
                    cell_text(cell.test_f1).c_str(),
                    cell_text(cell.test_mcc).c_str());
    }
    out += line;
    for (const auto& f : cell.failures) {
      out += "  failed: " + f + "\n";
    }
  }
  if (sweep.has_best) {
    std::snprintf(line, sizeof(line),
                  "best lambda %.4g by mean validation accuracy\n",
                  sweep.best_lambda);
    out += line;
  }
  return out;
}

}  // namespace after
