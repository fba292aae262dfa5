#include "after/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

#include "after/graph.hpp"

namespace after {

namespace {

std::map<std::string, long long> count_words(const Corpus& corpus) {
  std::map<std::string, long long> counts;
  for (const auto& line : corpus) {
    for (auto& tok : tokenize(line)) ++counts[tok];
  }
  if (counts.empty()) throw std::invalid_argument("analysis: empty corpus");
  return counts;
}

// Most frequent k words, count desc then token asc; all words if fewer.
std::set<std::string> top_k_set(const std::map<std::string, long long>& counts,
                                std::size_t top_k) {
  std::vector<std::pair<std::string, long long>> items(counts.begin(),
                                                       counts.end());
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (items.size() > top_k) items.resize(top_k);
  std::set<std::string> out;
  for (auto& [tok, cnt] : items) out.insert(tok);
  return out;
}

}  // namespace

std::vector<TermDistribution> term_distribution(
    const std::vector<Corpus>& corpora, std::size_t top_k) {
  if (corpora.empty()) throw std::invalid_argument("analysis: no corpora");
  std::vector<std::map<std::string, long long>> counts;
  counts.reserve(corpora.size());
  std::set<std::string> joint;
  for (const auto& corpus : corpora) {
    counts.push_back(count_words(corpus));
    auto top = top_k_set(counts.back(), top_k);
    joint.insert(top.begin(), top.end());
  }
  std::vector<std::string> vocab(joint.begin(), joint.end());
  std::vector<TermDistribution> dists;
  dists.reserve(corpora.size());
  for (const auto& c : counts) {
    TermDistribution d;
    d.joint_vocab = vocab;
    d.probs.resize(vocab.size(), 0.0);
    long long total = 0;
    for (std::size_t i = 0; i < vocab.size(); ++i) {
      auto it = c.find(vocab[i]);
      if (it != c.end()) {
        d.probs[i] = static_cast<double>(it->second);
        total += it->second;
      }
    }
    if (total == 0) {
      throw std::runtime_error("analysis: corpus shares no words with V");
    }
    for (auto& p : d.probs) p /= static_cast<double>(total);
    dists.push_back(std::move(d));
  }
  return dists;
}

double js_divergence(const TermDistribution& p, const TermDistribution& q) {
  if (p.joint_vocab != q.joint_vocab) {
    throw std::invalid_argument("js_divergence: vocabulary mismatch");
  }
  if (p.probs.size() != p.joint_vocab.size() ||
      q.probs.size() != q.joint_vocab.size()) {
    throw std::invalid_argument("js_divergence: probs/vocab length mismatch");
  }
  // Disjoint supports give exactly one bit no matter what the distributions
  // are; return that without accumulating rounding error.
  bool disjoint = true;
  for (std::size_t i = 0; i < p.probs.size() && disjoint; ++i) {
    disjoint = !(p.probs[i] > 0.0 && q.probs[i] > 0.0);
  }
  if (disjoint) return 1.0;
  // Separate accumulators keep the result bit-identical under argument swap.
  double acc_p = 0.0, acc_q = 0.0;
  for (std::size_t i = 0; i < p.probs.size(); ++i) {
    const double pi = p.probs[i];
    const double qi = q.probs[i];
    const double mi = 0.5 * (pi + qi);
    if (pi > 0.0) acc_p += pi * std::log(pi / mi);
    if (qi > 0.0) acc_q += qi * std::log(qi / mi);
  }
  const double jsd = 0.5 * (acc_p + acc_q) / std::log(2.0);
  return std::clamp(jsd, 0.0, 1.0);
}

double vocab_overlap(const Corpus& a, const Corpus& b, std::size_t top_k) {
  const auto va = top_k_set(count_words(a), top_k);
  const auto vb = top_k_set(count_words(b), top_k);
  std::size_t shared = 0;
  for (const auto& w : va) {
    if (vb.count(w)) ++shared;
  }
  return 100.0 * static_cast<double>(shared) / static_cast<double>(va.size());
}

double mlm_probe(const EncoderModel& model, const Vocab& vocab,
                 const Dataset& dataset, Rng rng, int n_passes) {
  if (vocab.size() != model.config().vocab_size) {
    throw std::invalid_argument("mlm_probe: vocab mismatch");
  }
  if (dataset.examples.empty()) {
    throw std::invalid_argument("mlm_probe: empty dataset");
  }
  if (n_passes < 1) throw std::invalid_argument("mlm_probe: n_passes < 1");

  constexpr std::size_t kBatch = 64;
  Rng eval_rng = rng.split("probe");  // dropout stream, unused in eval mode
  double loss_sum = 0.0;
  long long n_positions = 0;
  for (int pass = 0; pass < n_passes; ++pass) {
    for (std::size_t start = 0; start < dataset.examples.size();
         start += kBatch) {
      const std::size_t stop =
          std::min(start + kBatch, dataset.examples.size());
      std::vector<Example> corrupted;
      std::vector<std::pair<int, int>> hits;  // (row in batch, position)
      std::vector<int> targets;
      for (std::size_t i = start; i < stop; ++i) {
        Example ex = dataset.examples[i];
        MlmMasked m = mlm_mask(ex.token_ids, vocab, rng);
        ex.token_ids = m.corrupted;
        for (std::size_t j = 0; j < m.loss_mask.size(); ++j) {
          if (m.loss_mask[j]) {
            hits.emplace_back(static_cast<int>(corrupted.size()),
                              static_cast<int>(j));
            targets.push_back(m.targets[j]);
          }
        }
        corrupted.push_back(std::move(ex));
      }
      std::vector<const Example*> rows;
      rows.reserve(corrupted.size());
      for (const auto& ex : corrupted) rows.push_back(&ex);
      const Batch batch = collate(rows);

      Graph g;
      SequenceRepr repr = encode(g, model, batch, /*train_mode=*/false,
                                 eval_rng);
      std::vector<int> flat;
      flat.reserve(hits.size());
      for (auto [row, pos] : hits) flat.push_back(row * batch.seq + pos);
      TensorPtr logits = mlm_logits_rows(g, model, repr, flat);
      std::vector<std::uint8_t> all(targets.size(), 1);
      TensorPtr loss = g.cross_entropy_logits(logits, targets, all);
      loss_sum += loss->data[0] * static_cast<double>(targets.size());
      n_positions += static_cast<long long>(targets.size());
    }
  }
  return loss_sum / static_cast<double>(n_positions);
}

namespace {

// Frozen [CLS] vectors for a sample of examples, batched eval-mode encodes.
std::vector<std::vector<double>> cls_features(const EncoderModel& model,
                                              const Dataset& dataset,
                                              const std::vector<std::size_t>& idx,
                                              Rng& eval_rng) {
  constexpr std::size_t kBatch = 64;
  const int d = model.config().d_model;
  std::vector<std::vector<double>> feats;
  feats.reserve(idx.size());
  for (std::size_t start = 0; start < idx.size(); start += kBatch) {
    const std::size_t stop = std::min(start + kBatch, idx.size());
    std::vector<const Example*> rows;
    for (std::size_t i = start; i < stop; ++i) {
      rows.push_back(&dataset.examples[idx[i]]);
    }
    const Batch batch = collate(rows);
    Graph g;
    SequenceRepr repr =
        encode(g, model, batch, /*train_mode=*/false, eval_rng);
    for (int r = 0; r < repr.batch; ++r) {
      feats.emplace_back(repr.cls->data.begin() + r * d,
                         repr.cls->data.begin() + (r + 1) * d);
    }
  }
  return feats;
}

}  // namespace

double domain_probe(const EncoderModel& model, const Dataset& main,
                    const Dataset& aux, Rng rng) {
  constexpr std::size_t kSample = 500;
  constexpr std::size_t kMinPerDomain = 20;
  if (main.examples.size() < kMinPerDomain ||
      aux.examples.size() < kMinPerDomain) {
    throw std::invalid_argument(
        "domain_probe: fewer than 20 examples per domain");
  }
  const std::size_t n_per =
      std::min({kSample, main.examples.size(), aux.examples.size()});

  Rng sample_rng = rng.split("sample");
  Rng eval_rng = rng.split("eval");
  auto pick = [&](const Dataset& d) {
    std::vector<std::size_t> idx(d.examples.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    sample_rng.shuffle(idx);
    idx.resize(n_per);
    return idx;
  };
  const auto main_feats = cls_features(model, main, pick(main), eval_rng);
  const auto aux_feats = cls_features(model, aux, pick(aux), eval_rng);

  // 50/50 stratified split; sampling already randomized the order.
  const std::size_t n_train = n_per / 2;
  std::vector<const std::vector<double>*> train_x, test_x;
  std::vector<int> train_y, test_y;
  for (std::size_t i = 0; i < n_per; ++i) {
    const bool is_train = i < n_train;
    (is_train ? train_x : test_x).push_back(&main_feats[i]);
    (is_train ? train_y : test_y).push_back(0);
    (is_train ? train_x : test_x).push_back(&aux_feats[i]);
    (is_train ? train_y : test_y).push_back(1);
  }

  const int d = model.config().d_model;
  std::vector<double> w(d, 0.0);
  double b = 0.0;
  const double lr = 0.1;
  const int iters = 200;
  const double inv_n = 1.0 / static_cast<double>(train_x.size());
  for (int it = 0; it < iters; ++it) {
    std::vector<double> gw(d, 0.0);
    double gb = 0.0;
    for (std::size_t i = 0; i < train_x.size(); ++i) {
      const auto& x = *train_x[i];
      double z = b;
      for (int j = 0; j < d; ++j) z += w[j] * x[j];
      const double p = 1.0 / (1.0 + std::exp(-z));
      const double err = p - static_cast<double>(train_y[i]);
      for (int j = 0; j < d; ++j) gw[j] += err * x[j];
      gb += err;
    }
    for (int j = 0; j < d; ++j) w[j] -= lr * gw[j] * inv_n;
    b -= lr * gb * inv_n;
  }

  long long hits = 0;
  for (std::size_t i = 0; i < test_x.size(); ++i) {
    const auto& x = *test_x[i];
    double z = b;
    for (int j = 0; j < d; ++j) z += w[j] * x[j];
    const int pred = z > 0.0 ? 1 : 0;
    if (pred == test_y[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(test_x.size());
}

}  // namespace after
