#include "after/synth.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace after {

namespace {

std::string numbered(const char* prefix, int width, int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%0*d", prefix, width, i);
  return buf;
}

struct WordPools {
  std::vector<std::string> cue[2];     // per class
  std::vector<std::string> style[2];   // per domain
  std::vector<std::string> shortcut;   // first kShortcutWords of style[0]
};

WordPools make_pools() {
  WordPools p;
  for (int i = 0; i < SynthSpec::kCueWords; ++i) {
    p.cue[0].push_back(numbered("cue_a_", 2, i));
    p.cue[1].push_back(numbered("cue_b_", 2, i));
  }
  for (int i = 0; i < SynthSpec::kStyleWords; ++i) {
    p.style[0].push_back(numbered("style0_", 3, i));
    p.style[1].push_back(numbered("style1_", 3, i));
  }
  p.shortcut.assign(p.style[0].begin(),
                    p.style[0].begin() + SynthSpec::kShortcutWords);
  return p;
}

std::string make_sentence(const WordPools& pools, int cls, int domain,
                          const SynthSpec& spec, bool allow_shortcut,
                          Rng& rng) {
  const int n_cue =
      static_cast<int>(std::lround(spec.cue_frac * spec.sentence_len));
  const int n_style = spec.sentence_len - n_cue;

  std::vector<std::string> words;
  words.reserve(static_cast<std::size_t>(spec.sentence_len) + 2);
  const auto& cue = pools.cue[cls];
  const auto& style = pools.style[domain];
  for (int i = 0; i < n_cue; ++i)
    words.push_back(cue[rng.below(cue.size())]);
  for (int i = 0; i < n_style; ++i)
    words.push_back(style[rng.below(style.size())]);
  if (allow_shortcut && cls == 0 && rng.bernoulli(spec.shortcut_rho)) {
    words.push_back(pools.shortcut[rng.below(pools.shortcut.size())]);
    words.push_back(pools.shortcut[rng.below(pools.shortcut.size())]);
  }
  rng.shuffle(words);

  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

TextDataset make_main_split(const WordPools& pools, const SynthSpec& spec,
                            const std::string& name, int n,
                            bool allow_shortcut, Rng& rng) {
  TextDataset ds;
  ds.name = name;
  ds.domain_label = 0;
  ds.items.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int cls = i % 2;
    TextExample ex;
    ex.text = make_sentence(pools, cls, 0, spec, allow_shortcut, rng);
    ex.label = cls;
    ds.items.push_back(std::move(ex));
  }
  return ds;
}

}  // namespace

void SynthSpec::validate() const {
  if (sentence_len < 4)
    throw std::invalid_argument("SynthSpec: sentence_len must be >= 4");
  if (cue_frac <= 0.0 || cue_frac >= 1.0)
    throw std::invalid_argument("SynthSpec: cue_frac must be in (0,1)");
  if (shortcut_rho < 0.0 || shortcut_rho > 1.0)
    throw std::invalid_argument("SynthSpec: shortcut_rho must be in [0,1]");
  if (main_train < 2 || main_val < 2 || main_test < 2)
    throw std::invalid_argument("SynthSpec: main splits must hold >= 2 examples");
  if (main_train % 2 || main_val % 2 || main_test % 2)
    throw std::invalid_argument(
        "SynthSpec: main split sizes must be even for exact label balance");
  if (aux_size < 1 || pretrain_size < 1)
    throw std::invalid_argument("SynthSpec: aux/pretrain sizes must be >= 1");
  const int n_cue = static_cast<int>(std::lround(cue_frac * sentence_len));
  if (n_cue < 1 || n_cue >= sentence_len)
    throw std::invalid_argument(
        "SynthSpec: cue_frac leaves no room for cue or style words");
}

std::vector<std::string> synth_word_list() {
  const WordPools pools = make_pools();
  std::vector<std::string> all;
  all.reserve(SynthSpec::kVocabWords);
  for (const auto& group :
       {pools.cue[0], pools.cue[1], pools.style[0], pools.style[1]})
    all.insert(all.end(), group.begin(), group.end());
  return all;
}

SynthOutput gen_synthetic(const SynthSpec& spec, Rng& rng) {
  spec.validate();
  const WordPools pools = make_pools();

  SynthOutput out;
  out.main_train =
      make_main_split(pools, spec, "main_train", spec.main_train, true, rng);
  out.main_val =
      make_main_split(pools, spec, "main_val", spec.main_val, false, rng);
  out.main_test =
      make_main_split(pools, spec, "main_test", spec.main_test, false, rng);

  out.aux.name = "aux";
  out.aux.domain_label = 1;
  out.aux.items.reserve(static_cast<std::size_t>(spec.aux_size));
  for (int i = 0; i < spec.aux_size; ++i) {
    const int cls = static_cast<int>(rng.below(2));
    TextExample ex;
    ex.text = make_sentence(pools, cls, 1, spec, false, rng);
    out.aux.items.push_back(std::move(ex));
  }

  out.pretrain.reserve(static_cast<std::size_t>(spec.pretrain_size));
  for (int i = 0; i < spec.pretrain_size; ++i) {
    const int cls = static_cast<int>(rng.below(2));
    const int domain = static_cast<int>(rng.below(2));
    out.pretrain.push_back(
        make_sentence(pools, cls, domain, spec, false, rng));
  }
  return out;
}

}  // namespace after
