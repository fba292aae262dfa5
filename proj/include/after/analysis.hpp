#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "after/data.hpp"
#include "after/model.hpp"
#include "after/rng.hpp"
#include "after/vocab.hpp"

namespace after {

// Probability vector over a joint vocabulary shared by a corpus group.
struct TermDistribution {
  std::vector<std::string> joint_vocab;
  std::vector<double> probs;
};

using Corpus = std::vector<std::string>;  // raw text lines

// Top-k word multiset of each corpus (count desc, token asc), V = sorted
// union; per-corpus counts over V normalized to probabilities.
std::vector<TermDistribution> term_distribution(
    const std::vector<Corpus>& corpora, std::size_t top_k = 5000);

// Base-2 Jensen-Shannon divergence; requires identical joint_vocab.
double js_divergence(const TermDistribution& p, const TermDistribution& q);

// 100 * |V_a ∩ V_b| / |V_a| over top-k word sets.
double vocab_overlap(const Corpus& a, const Corpus& b,
                     std::size_t top_k = 10000);

// Mean masked-position cross-entropy (nats) over the dataset, averaged
// across n_passes independent mask draws; eval mode.
double mlm_probe(const EncoderModel& model, const Vocab& vocab,
                 const Dataset& dataset, Rng rng, int n_passes = 5);

// Linear separability of frozen [CLS] representations between the two
// datasets: balanced sample (up to 500 per side), logistic head trained
// with full-batch GD (200 iters, lr 0.1) on half, accuracy on the held-out
// half. Lower = more domain-invariant.
double domain_probe(const EncoderModel& model, const Dataset& main,
                    const Dataset& aux, Rng rng);

}  // namespace after
