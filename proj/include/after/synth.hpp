#pragma once

#include <string>
#include <vector>

#include "after/data.hpp"
#include "after/rng.hpp"

namespace after {

// Two-domain synthetic benchmark. The 600-word vocabulary is partitioned
// into 100 class-A cue words and 100 class-B cue words (shared across
// domains) plus 200 style words per domain. A sentence mixes cue words for
// its class with style words for its domain. In the Main train split only,
// a fraction rho of class-A sentences get two extra tokens from a 20-word
// "shortcut" subset of the domain-0 style words, so a lazy model can fit
// the task through domain-specific features.
struct SynthSpec {
  int sentence_len = 20;
  double cue_frac = 0.3;
  double shortcut_rho = 0.9;
  int main_train = 2000;
  int main_val = 500;
  int main_test = 500;
  int aux_size = 10000;
  int pretrain_size = 20000;

  static constexpr int kCueWords = 100;       // per class
  static constexpr int kStyleWords = 200;     // per domain
  static constexpr int kShortcutWords = 20;   // subset of domain-0 style
  static constexpr int kVocabWords = 2 * kCueWords + 2 * kStyleWords;

  void validate() const;
};

struct SynthOutput {
  TextDataset main_train, main_val, main_test, aux;
  std::vector<std::string> pretrain;
};

// The fixed 600-word list: cue_a_00.., cue_b_00.., style0_000.., style1_000..
std::vector<std::string> synth_word_list();

SynthOutput gen_synthetic(const SynthSpec& spec, Rng& rng);

}  // namespace after
