#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "after/data.hpp"
#include "after/model.hpp"
#include "after/rng.hpp"

namespace after {

enum class TrainMode { kSft, kAfter, kMultitask };

std::string to_string(TrainMode mode);
TrainMode train_mode_from_string(const std::string& s);

struct TrainConfig {
  TrainMode mode = TrainMode::kSft;
  double lambda = 0.1;  // AFTER: GRL coefficient; MULTITASK: +weight; SFT: unused
  double lr_peak = 3e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-6;
  double weight_decay = 0.01;
  double warmup_proportion = 0.1;
  int epochs = 4;
  int batch_size = 28;
  int evals_per_epoch = 5;
  double mlm_mask_prob = 0.15;
  int pretrain_steps = 2000;

  void validate() const;
};

// Decoupled-weight-decay Adam over the model's registered parameters.
// Decay touches only parameters flagged decay (weight matrices/embeddings).
class AdamW {
 public:
  AdamW(const std::vector<NamedParam>& params, const TrainConfig& config);

  // One update from the gradients currently stored on the parameters.
  void step(double lr_t);
  long long t() const { return t_; }

 private:
  struct Slot {
    TensorPtr tensor;
    std::vector<double> m, v;
    bool decay;
  };
  std::vector<Slot> slots_;
  double beta1_, beta2_, eps_, wd_;
  long long t_ = 0;
};

// Single-tensor AdamW update, the unit the optimizer is built from. m/v are
// caller-owned state vectors of the parameter's size; t is the 1-based step.
void adamw_apply(std::vector<double>& param, const std::vector<double>& grad,
                 std::vector<double>& m, std::vector<double>& v, long long t,
                 double lr_t, double beta1, double beta2, double eps,
                 double weight_decay, bool decay);

// Linear 0 -> lr_peak over the first ceil(wp * total) steps, then linear
// decay to 0 at total_steps. step is 1-based during training; 0 maps to 0.
double lr_at(long long step, long long total_steps, double warmup_proportion,
             double lr_peak);

// -------------------------------------------------------------- pretraining

// Trains the MLM objective in place for config.pretrain_steps steps, cycling
// shuffled epochs over the corpus. Returns the per-step loss curve.
std::vector<double> pretrain_mlm(EncoderModel& model, const Vocab& vocab,
                                 const Dataset& corpus,
                                 const TrainConfig& config, Rng rng);

// -------------------------------------------------------------- fine-tuning

struct EvalRecord {
  long long step = 0;
  double train_main_loss = 0.0;    // mean over batches since the last record
  double train_domain_loss = 0.0;  // 0 in SFT mode
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  double val_f1 = 0.0;
  double val_mcc = 0.0;
};

struct RunResult {
  std::uint64_t seed = 0;
  double lambda = 0.0;
  TrainMode mode = TrainMode::kSft;
  std::vector<EvalRecord> evals;
  long long selected_step = 0;
  double best_val_loss = 0.0;
  double best_val_accuracy = 0.0;
  double test_accuracy = 0.0;
  double test_f1 = 0.0;
  double test_mcc = 0.0;
};

struct MainSplits {
  const Dataset* train = nullptr;
  const Dataset* val = nullptr;
  const Dataset* test = nullptr;
};

struct FinetuneHooks {
  bool allow_lambda_zero = false;      // test hook: AFTER with lambda == 0
  bool balanced_batches_for_sft = false;  // test hook: SFT on balanced batches
};

// Clones the checkpoint model, re-draws the heads, trains with the mode's
// loss, evaluates the validation split evals_per_epoch times per epoch, and
// reports test metrics of the lowest-validation-loss snapshot. When
// trained_model is non-null it receives a deep copy of that snapshot.
RunResult finetune(const Checkpoint& checkpoint, const MainSplits& main,
                   const Dataset* aux, const TrainConfig& config,
                   std::uint64_t seed, const FinetuneHooks& hooks = {},
                   EncoderModel* trained_model = nullptr);

// ------------------------------------------------------------------- sweeps

struct MetricStats {
  double mean = 0.0;
  double stdev = 0.0;  // sample std, n-1 denominator; 0 when n == 1
};

MetricStats aggregate(const std::vector<double>& values);

struct SweepCell {
  double lambda = 0.0;
  std::vector<RunResult> runs;
  std::vector<std::string> failures;  // one message per failed seed
  MetricStats val_accuracy;
  MetricStats test_accuracy;
  MetricStats test_f1;
  MetricStats test_mcc;
};

struct SweepResult {
  std::vector<SweepCell> cells;
  double best_lambda = 0.0;  // argmax of mean validation accuracy
  bool has_best = false;     // false when every cell failed entirely
};

// Runs finetune for every (lambda, seed) pair; cells with failures record
// the message and aggregate over the surviving seeds. jobs > 1 distributes
// cells over a thread pool; results are identical regardless of jobs.
SweepResult lambda_sweep(const Checkpoint& checkpoint, const MainSplits& main,
                         const Dataset& aux, const TrainConfig& config,
                         const std::vector<double>& grid,
                         const std::vector<std::uint64_t>& seeds,
                         int jobs = 1);

// Aligned-column text table of a sweep, one row per lambda.
std::string sweep_table(const SweepResult& sweep);

}  // namespace after
