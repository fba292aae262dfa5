#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "after/rng.hpp"
#include "after/vocab.hpp"

namespace after {

// ---------------------------------------------------------------- datasets

struct TextExample {
  std::string text;
  std::optional<int> label;
};

struct TextDataset {
  std::string name;
  int domain_label = 0;
  std::vector<TextExample> items;
};

struct Example {
  std::vector<int> token_ids;  // starts with [CLS], length <= max_len
  std::optional<int> task_label;
  int domain_label = 0;
};

struct Dataset {
  std::string name;
  int domain_label = 0;
  std::vector<Example> examples;
};

enum class DatasetKind { kMain, kAuxiliary };

// Main lines need {"text": str, "label": int}; auxiliary lines need {"text"}
// and any label present is dropped. Domain label: main 0, auxiliary 1.
TextDataset load_jsonl(const std::string& path, DatasetKind kind);

Dataset encode_dataset(const TextDataset& text, const Vocab& vocab, int max_len);

// ------------------------------------------------------------- mlm masking

struct MlmMasked {
  std::vector<int> corrupted;
  std::vector<int> targets;  // original ids; meaningful where loss_mask is 1
  std::vector<std::uint8_t> loss_mask;
};

// BERT-style corruption: each non-special position is selected with
// mask_prob; selected positions go 80% [MASK] / 10% random non-special
// token / 10% unchanged. The whole draw repeats until at least one position
// is selected; ensure_one=false disables that rule (test hook).
MlmMasked mlm_mask(const std::vector<int>& ids, const Vocab& vocab, Rng& rng,
                   double mask_prob = 0.15, bool ensure_one = true);

// ---------------------------------------------------------------- batching

struct Batch {
  int size = 0;
  int seq = 0;  // padded length
  std::vector<int> token_ids;            // size*seq, [PAD]-filled
  std::vector<std::uint8_t> attn_mask;   // 1 on real tokens
  std::vector<int> task_labels;          // -1 where absent
  std::vector<std::uint8_t> task_label_mask;
  std::vector<int> domain_labels;
};

Batch collate(const std::vector<const Example*>& rows);

// One epoch = one full shuffled pass over Main. Each batch holds
// batch_size/2 Main rows and batch_size/2 Auxiliary rows drawn without
// replacement from a fresh per-epoch under-sample of size |Main| (with
// replacement, once warned, when the auxiliary split is smaller). The final
// partial batch keeps the 1:1 ratio; row order within a batch is shuffled.
class BalancedBatcher {
 public:
  BalancedBatcher(const Dataset& main, const Dataset& aux, int batch_size,
                  Rng rng);
  std::vector<Batch> epoch();
  int batches_per_epoch() const;

 private:
  const Dataset& main_;
  const Dataset& aux_;
  int batch_size_;
  Rng rng_;
  bool warned_small_aux_ = false;
};

// Plain shuffled single-dataset batcher (SFT fine-tuning and MLM pretraining).
class MainBatcher {
 public:
  MainBatcher(const Dataset& main, int batch_size, Rng rng);
  std::vector<Batch> epoch();
  int batches_per_epoch() const;

 private:
  const Dataset& main_;
  int batch_size_;
  Rng rng_;
};

}  // namespace after
