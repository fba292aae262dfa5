#include "after/data.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace after {

TextDataset load_jsonl(const std::string& path, DatasetKind kind) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_jsonl: cannot open " + path);

  TextDataset ds;
  ds.name = path;
  ds.domain_label = kind == DatasetKind::kMain ? 0 : 1;

  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": malformed JSON line: " + e.what());
    }
    if (!obj.is_object() || !obj.contains("text") || !obj["text"].is_string())
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": expected an object with a string \"text\"");
    TextExample ex;
    ex.text = obj["text"].get<std::string>();
    if (kind == DatasetKind::kMain) {
      if (!obj.contains("label") || !obj["label"].is_number_integer())
        throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                 ": main examples need an integer \"label\"");
      ex.label = obj["label"].get<int>();
    }
    ds.items.push_back(std::move(ex));
  }
  return ds;
}

Dataset encode_dataset(const TextDataset& text, const Vocab& vocab,
                       int max_len) {
  Dataset ds;
  ds.name = text.name;
  ds.domain_label = text.domain_label;
  ds.examples.reserve(text.items.size());
  for (const auto& item : text.items) {
    Example ex;
    ex.token_ids = encode_text(vocab, item.text, max_len);
    ex.task_label = item.label;
    ex.domain_label = text.domain_label;
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

MlmMasked mlm_mask(const std::vector<int>& ids, const Vocab& vocab, Rng& rng,
                   double mask_prob, bool ensure_one) {
  if (ids.empty() || ids.front() != Vocab::kCls)
    throw std::invalid_argument("mlm_mask: sequence must start with [CLS]");
  if (mask_prob < 0.0 || mask_prob > 1.0)
    throw std::invalid_argument("mlm_mask: mask_prob must be in [0,1]");
  if (ensure_one && mask_prob == 0.0)
    throw std::invalid_argument(
        "mlm_mask: mask_prob 0 cannot guarantee a selected position");

  bool any_maskable = false;
  for (int id : ids)
    if (!vocab.is_special(id)) any_maskable = true;
  if (!any_maskable)
    throw std::runtime_error("mlm_mask: sequence has no maskable positions");

  const int n_words = vocab.size() - Vocab::kNumSpecials;
  MlmMasked out;
  while (true) {
    out.corrupted = ids;
    out.targets.assign(ids.size(), 0);
    out.loss_mask.assign(ids.size(), 0);
    int selected = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (vocab.is_special(ids[i])) continue;
      if (!rng.bernoulli(mask_prob)) continue;
      ++selected;
      out.targets[i] = ids[i];
      out.loss_mask[i] = 1;
      const double r = rng.uniform();
      if (r < 0.8) {
        out.corrupted[i] = Vocab::kMask;
      } else if (r < 0.9 && n_words > 0) {
        out.corrupted[i] =
            Vocab::kNumSpecials + static_cast<int>(rng.below(n_words));
      }  // else leave the original token in place
    }
    if (selected > 0 || !ensure_one) return out;
  }
}

Batch collate(const std::vector<const Example*>& rows) {
  if (rows.empty()) throw std::invalid_argument("collate: empty batch");
  Batch b;
  b.size = static_cast<int>(rows.size());
  int seq = 0;
  for (const Example* ex : rows)
    seq = std::max(seq, static_cast<int>(ex->token_ids.size()));
  b.seq = seq;
  b.token_ids.assign(static_cast<std::size_t>(b.size) * seq, Vocab::kPad);
  b.attn_mask.assign(b.token_ids.size(), 0);
  b.task_labels.assign(rows.size(), -1);
  b.task_label_mask.assign(rows.size(), 0);
  b.domain_labels.assign(rows.size(), 0);
  for (int i = 0; i < b.size; ++i) {
    const Example& ex = *rows[static_cast<std::size_t>(i)];
    for (std::size_t j = 0; j < ex.token_ids.size(); ++j) {
      b.token_ids[static_cast<std::size_t>(i) * seq + j] = ex.token_ids[j];
      b.attn_mask[static_cast<std::size_t>(i) * seq + j] = 1;
    }
    if (ex.task_label) {
      b.task_labels[static_cast<std::size_t>(i)] = *ex.task_label;
      b.task_label_mask[static_cast<std::size_t>(i)] = 1;
    }
    b.domain_labels[static_cast<std::size_t>(i)] = ex.domain_label;
  }
  return b;
}

namespace {

void check_batcher_args(std::size_t main_size, int batch_size, bool need_even) {
  if (main_size == 0)
    throw std::invalid_argument("batcher: empty dataset");
  if (batch_size < 2)
    throw std::invalid_argument("batcher: batch_size must be >= 2");
  if (need_even && batch_size % 2 != 0)
    throw std::invalid_argument("batcher: batch_size must be even");
}

}  // namespace

BalancedBatcher::BalancedBatcher(const Dataset& main, const Dataset& aux,
                                 int batch_size, Rng rng)
    : main_(main), aux_(aux), batch_size_(batch_size), rng_(rng) {
  check_batcher_args(main.examples.size(), batch_size, true);
  if (aux.examples.empty())
    throw std::invalid_argument("batcher: empty auxiliary dataset");
}

int BalancedBatcher::batches_per_epoch() const {
  const int n = static_cast<int>(main_.examples.size());
  const int half = batch_size_ / 2;
  return (n + half - 1) / half;
}

std::vector<Batch> BalancedBatcher::epoch() {
  const std::size_t n_main = main_.examples.size();
  const std::size_t n_aux = aux_.examples.size();

  std::vector<std::size_t> main_order(n_main);
  std::iota(main_order.begin(), main_order.end(), 0);
  rng_.shuffle(main_order);

  // fresh per-epoch under-sample of the auxiliary split, size |Main|
  std::vector<std::size_t> aux_pick(n_main);
  if (n_aux >= n_main) {
    std::vector<std::size_t> aux_order(n_aux);
    std::iota(aux_order.begin(), aux_order.end(), 0);
    rng_.shuffle(aux_order);
    std::copy_n(aux_order.begin(), n_main, aux_pick.begin());
  } else {
    if (!warned_small_aux_) {
      std::cerr << "warning: auxiliary split (" << n_aux
                << ") smaller than main (" << n_main
                << "); sampling auxiliary with replacement\n";
      warned_small_aux_ = true;
    }
    for (auto& idx : aux_pick) idx = rng_.below(n_aux);
  }

  const std::size_t half = static_cast<std::size_t>(batch_size_) / 2;
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < n_main; start += half) {
    const std::size_t take = std::min(half, n_main - start);
    std::vector<const Example*> rows;
    rows.reserve(2 * take);
    for (std::size_t i = 0; i < take; ++i)
      rows.push_back(&main_.examples[main_order[start + i]]);
    for (std::size_t i = 0; i < take; ++i)
      rows.push_back(&aux_.examples[aux_pick[start + i]]);
    rng_.shuffle(rows);
    batches.push_back(collate(rows));
  }
  return batches;
}

MainBatcher::MainBatcher(const Dataset& main, int batch_size, Rng rng)
    : main_(main), batch_size_(batch_size), rng_(rng) {
  check_batcher_args(main.examples.size(), batch_size, false);
}

int MainBatcher::batches_per_epoch() const {
  const int n = static_cast<int>(main_.examples.size());
  return (n + batch_size_ - 1) / batch_size_;
}

std::vector<Batch> MainBatcher::epoch() {
  const std::size_t n = main_.examples.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  rng_.shuffle(order);

  std::vector<Batch> batches;
  for (std::size_t start = 0; start < n; start += batch_size_) {
    const std::size_t take =
        std::min(static_cast<std::size_t>(batch_size_), n - start);
    std::vector<const Example*> rows;
    rows.reserve(take);
    for (std::size_t i = 0; i < take; ++i)
      rows.push_back(&main_.examples[order[start + i]]);
    batches.push_back(collate(rows));
  }
  return batches;
}

}  // namespace after
