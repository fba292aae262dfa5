#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "after/data.hpp"
#include "after/rng.hpp"
#include "after/synth.hpp"
#include "after/vocab.hpp"

using namespace after;

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
  const std::string path = std::string("/tmp/after_test_") + name;
  std::ofstream out(path);
  out << content;
  return path;
}

Dataset tiny_dataset(const std::string& name, int domain, int n, bool labeled,
                     int len = 6) {
  Dataset ds;
  ds.name = name;
  ds.domain_label = domain;
  for (int i = 0; i < n; ++i) {
    Example ex;
    ex.token_ids.push_back(Vocab::kCls);
    for (int j = 1; j < len; ++j) ex.token_ids.push_back(5 + (i + j) % 3);
    if (labeled) ex.task_label = i % 2;
    ex.domain_label = domain;
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

}  // namespace

TEST_CASE("tokenize lowercases, splits and strips punctuation") {
  CHECK(tokenize("Hello, hello!") ==
        std::vector<std::string>{"hello", "hello"});
  CHECK(tokenize("a b b") == std::vector<std::string>{"a", "b", "b"});
  CHECK(tokenize("(good) -- movie...") ==
        std::vector<std::string>{"good", "movie"});
  CHECK(tokenize("").empty());
  CHECK(tokenize("  \t\n ").empty());
  // U+00A0 and U+2003 are whitespace; the accented char survives untouched
  CHECK(tokenize("caf\xc3\xa9.\xc2\xa0ok\xe2\x80\x83yes") ==
        std::vector<std::string>{"caf\xc3\xa9", "ok", "yes"});
  CHECK(tokenize("don't") == std::vector<std::string>{"don't"});
}

TEST_CASE("vocab build ordering and specials") {
  Vocab v = Vocab::build({"a b b"}, 7);
  CHECK(v.size() == 7);
  CHECK(v.id("[PAD]") == 0);
  CHECK(v.id("[MASK]") == 4);
  CHECK(v.id("b") == 5);  // frequency order
  CHECK(v.id("a") == 6);
  CHECK(v.id("zzz") == Vocab::kUnk);
  CHECK(v.token(5) == "b");

  Vocab tie = Vocab::build({"a b"}, 7);
  CHECK(tie.id("a") == 5);  // lexicographic tie-break
  CHECK(tie.id("b") == 6);

  Vocab capped = Vocab::build({"a b b c c c"}, 7);
  CHECK(capped.size() == 7);
  CHECK(capped.id("c") == 5);
  CHECK(capped.id("b") == 6);
  CHECK(capped.id("a") == Vocab::kUnk);

  Vocab merged = Vocab::build({"Hello, hello!"}, 10);
  CHECK(merged.id("hello") == 5);
  CHECK(merged.size() == 6);

  CHECK_THROWS_AS(Vocab::build({}, 10), std::invalid_argument);
  CHECK_THROWS_AS(Vocab::build({"..."}, 10), std::invalid_argument);
  CHECK_THROWS_AS(Vocab::build({"a"}, 5), std::invalid_argument);
}

TEST_CASE("vocab save/load round trip") {
  Vocab v = Vocab::build({"a b b c"}, 8);
  const std::string path = write_temp("vocab.txt", "");
  v.save(path);
  Vocab loaded = Vocab::load(path);
  CHECK(loaded.size() == v.size());
  CHECK(loaded.fingerprint() == v.fingerprint());
  CHECK(loaded.id("b") == v.id("b"));

  Vocab other = Vocab::build({"x y"}, 8);
  CHECK(other.fingerprint() != v.fingerprint());
  std::remove(path.c_str());
}

TEST_CASE("encode_text") {
  Vocab v = Vocab::build({"a b c"}, 10);
  CHECK(encode_text(v, "", 16) == std::vector<int>{Vocab::kCls});
  CHECK(encode_text(v, "b zzz", 16) ==
        std::vector<int>{Vocab::kCls, v.id("b"), Vocab::kUnk});

  std::string long_text;
  for (int i = 0; i < 200; ++i) long_text += "a ";
  CHECK(encode_text(v, long_text, 128).size() == 128);
  CHECK_THROWS_AS(encode_text(v, "a", 1), std::invalid_argument);
}

TEST_CASE("mlm_mask") {
  Vocab v = Vocab::build({"a b c d e f g h i j"}, 15);
  Rng rng(31);

  SUBCASE("[CLS] never selected, targets are originals") {
    std::vector<int> ids = {Vocab::kCls, 5, 6, 7, 8, 9};
    for (int t = 0; t < 50; ++t) {
      auto m = mlm_mask(ids, v, rng, 0.5);
      CHECK(m.loss_mask[0] == 0);
      CHECK(m.corrupted[0] == Vocab::kCls);
      int selected = 0;
      for (std::size_t i = 0; i < ids.size(); ++i) {
        if (!m.loss_mask[i]) continue;
        ++selected;
        CHECK(m.targets[i] == ids[i]);
        CHECK(m.corrupted[i] >= Vocab::kNumSpecials - 1);  // [MASK] or word
      }
      CHECK(selected >= 1);
    }
  }
  SUBCASE("mask_prob=0 with the forced-one rule disabled selects nothing") {
    std::vector<int> ids = {Vocab::kCls, 5, 6};
    auto m = mlm_mask(ids, v, rng, 0.0, false);
    for (auto f : m.loss_mask) CHECK(f == 0);
    CHECK(m.corrupted == ids);
  }
  SUBCASE("selected fraction tracks mask_prob") {
    std::vector<int> ids = {Vocab::kCls};
    for (int i = 0; i < 1000; ++i) ids.push_back(5 + i % 10);
    int selected = 0;
    auto m = mlm_mask(ids, v, rng, 0.15);
    for (auto f : m.loss_mask) selected += f;
    CHECK(selected > 1000 * 0.12);
    CHECK(selected < 1000 * 0.18);
  }
  SUBCASE("80/10/10 corruption split") {
    std::vector<int> ids = {Vocab::kCls};
    for (int i = 0; i < 20000; ++i) ids.push_back(5 + i % 10);
    auto m = mlm_mask(ids, v, rng, 1.0);
    int masked = 0, unchanged = 0, random = 0;
    for (std::size_t i = 1; i < ids.size(); ++i) {
      if (m.corrupted[i] == Vocab::kMask)
        ++masked;
      else if (m.corrupted[i] == ids[i])
        ++unchanged;
      else
        ++random;
    }
    CHECK(masked / 20000.0 == doctest::Approx(0.8).epsilon(0.03));
    // a "random" replacement can coincide with the original, so unchanged
    // absorbs ~1/10th of the random branch here (10 word vocab)
    CHECK((unchanged + random) / 20000.0 == doctest::Approx(0.2).epsilon(0.12));
    CHECK(random > 0);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(mlm_mask({5, 6}, v, rng, 0.15), std::invalid_argument);
    CHECK_THROWS_AS(mlm_mask({Vocab::kCls, Vocab::kSep}, v, rng, 0.15),
                    std::runtime_error);
    CHECK_THROWS_AS(mlm_mask({Vocab::kCls, 5}, v, rng, 0.0, true),
                    std::invalid_argument);
  }
}

TEST_CASE("load_jsonl") {
  SUBCASE("main requires integer labels") {
    const auto path = write_temp(
        "main.jsonl",
        "{\"text\":\"good movie\",\"label\":1}\n"
        "{\"text\":\"bad movie\",\"label\":0}\n");
    auto ds = load_jsonl(path, DatasetKind::kMain);
    CHECK(ds.domain_label == 0);
    REQUIRE(ds.items.size() == 2);
    CHECK(ds.items[0].text == "good movie");
    CHECK(ds.items[0].label == 1);
    std::remove(path.c_str());
  }
  SUBCASE("auxiliary drops labels") {
    const auto path = write_temp(
        "aux.jsonl",
        "{\"text\":\"the court ruled\",\"label\":\"x\"}\n"
        "{\"text\":\"plain\"}\n");
    auto ds = load_jsonl(path, DatasetKind::kAuxiliary);
    CHECK(ds.domain_label == 1);
    REQUIRE(ds.items.size() == 2);
    CHECK(!ds.items[0].label.has_value());
    CHECK(!ds.items[1].label.has_value());
    std::remove(path.c_str());
  }
  SUBCASE("malformed line names the line number") {
    const auto path = write_temp(
        "bad.jsonl", "{\"text\":\"ok\",\"label\":0}\n{\"text\": trunc\n");
    try {
      load_jsonl(path, DatasetKind::kMain);
      FAIL("expected an exception");
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()).find(":2") != std::string::npos);
    }
    std::remove(path.c_str());
  }
  SUBCASE("main with non-integer label rejected") {
    const auto path =
        write_temp("badlabel.jsonl", "{\"text\":\"ok\",\"label\":\"x\"}\n");
    CHECK_THROWS_AS(load_jsonl(path, DatasetKind::kMain), std::runtime_error);
    std::remove(path.c_str());
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_jsonl("/tmp/after_does_not_exist.jsonl",
                               DatasetKind::kMain),
                    std::runtime_error);
  }
}

TEST_CASE("collate pads and masks") {
  Dataset ds = tiny_dataset("m", 0, 2, true);
  ds.examples[1].token_ids.resize(3);
  std::vector<const Example*> rows = {&ds.examples[0], &ds.examples[1]};
  Batch b = collate(rows);
  CHECK(b.size == 2);
  CHECK(b.seq == 6);
  CHECK(b.token_ids[static_cast<std::size_t>(1) * 6 + 3] == Vocab::kPad);
  CHECK(b.attn_mask[static_cast<std::size_t>(1) * 6 + 2] == 1);
  CHECK(b.attn_mask[static_cast<std::size_t>(1) * 6 + 3] == 0);
  CHECK(b.task_labels[0] == 0);
  CHECK(b.task_labels[1] == 1);
  CHECK(b.domain_labels[0] == 0);
}

TEST_CASE("balanced batcher contract") {
  Dataset main = tiny_dataset("main", 0, 10, true);
  Dataset aux = tiny_dataset("aux", 1, 25, false);

  SUBCASE("|Main|=10, batch_size=4 gives 4,4,4,4,4 with a 2+2 tail") {
    BalancedBatcher batcher(main, aux, 4, Rng(41));
    auto batches = batcher.epoch();
    REQUIRE(batches.size() == 5);
    CHECK(batcher.batches_per_epoch() == 5);
    for (const auto& b : batches) CHECK(b.size == 4);

    // every batch is half main, half aux; epoch covers main exactly once
    std::multiset<int> seen_first_word;
    for (const auto& b : batches) {
      int n_main = 0;
      for (int i = 0; i < b.size; ++i) n_main += b.domain_labels[i] == 0;
      CHECK(n_main * 2 == b.size);
      for (int i = 0; i < b.size; ++i)
        if (b.domain_labels[static_cast<std::size_t>(i)] == 0)
          seen_first_word.insert(
              b.token_ids[static_cast<std::size_t>(i) * b.seq + 1]);
    }
    std::multiset<int> expect;
    for (const auto& ex : main.examples) expect.insert(ex.token_ids[1]);
    CHECK(seen_first_word == expect);
  }
  SUBCASE("aux rows carry no task labels") {
    BalancedBatcher batcher(main, aux, 4, Rng(42));
    for (const auto& b : batcher.epoch())
      for (int i = 0; i < b.size; ++i)
        if (b.domain_labels[static_cast<std::size_t>(i)] == 1)
          CHECK(b.task_label_mask[static_cast<std::size_t>(i)] == 0);
  }
  SUBCASE("same seed, same batches") {
    BalancedBatcher b1(main, aux, 4, Rng(43));
    BalancedBatcher b2(main, aux, 4, Rng(43));
    auto e1 = b1.epoch();
    auto e2 = b2.epoch();
    REQUIRE(e1.size() == e2.size());
    for (std::size_t i = 0; i < e1.size(); ++i)
      CHECK(e1[i].token_ids == e2[i].token_ids);
    // and a second epoch differs from the first (fresh shuffle)
    auto e1b = b1.epoch();
    bool any_diff = false;
    for (std::size_t i = 0; i < e1.size(); ++i)
      any_diff = any_diff || e1[i].token_ids != e1b[i].token_ids;
    CHECK(any_diff);
  }
  SUBCASE("small aux falls back to replacement") {
    Dataset tiny_aux = tiny_dataset("aux", 1, 3, false);
    BalancedBatcher batcher(main, tiny_aux, 4, Rng(44));
    auto batches = batcher.epoch();
    CHECK(batches.size() == 5);
  }
  SUBCASE("bad arguments") {
    CHECK_THROWS_AS(BalancedBatcher(main, aux, 5, Rng(45)),
                    std::invalid_argument);
    CHECK_THROWS_AS(BalancedBatcher(main, aux, 0, Rng(45)),
                    std::invalid_argument);
    Dataset empty;
    CHECK_THROWS_AS(BalancedBatcher(empty, aux, 4, Rng(45)),
                    std::invalid_argument);
    CHECK_THROWS_AS(BalancedBatcher(main, empty, 4, Rng(45)),
                    std::invalid_argument);
  }
}

TEST_CASE("main batcher covers the dataset") {
  Dataset main = tiny_dataset("main", 0, 7, true);
  MainBatcher batcher(main, 3, Rng(46));
  auto batches = batcher.epoch();
  REQUIRE(batches.size() == 3);
  CHECK(batches[0].size == 3);
  CHECK(batches[2].size == 1);
  int total = 0;
  for (const auto& b : batches) total += b.size;
  CHECK(total == 7);
}

TEST_CASE("synthetic benchmark") {
  SynthSpec spec;
  spec.main_train = 200;
  spec.main_val = 40;
  spec.main_test = 40;
  spec.aux_size = 100;
  spec.pretrain_size = 100;

  SUBCASE("word list has 600 distinct words") {
    auto words = synth_word_list();
    CHECK(words.size() == 600);
    std::set<std::string> uniq(words.begin(), words.end());
    CHECK(uniq.size() == 600);
  }
  SUBCASE("label balance and domains") {
    Rng rng(51);
    auto out = gen_synthetic(spec, rng);
    int a = 0, b = 0;
    for (const auto& ex : out.main_train.items) {
      CHECK(ex.label.has_value());
      (*ex.label == 0 ? a : b)++;
    }
    CHECK(a == 100);
    CHECK(b == 100);
    CHECK(out.main_train.domain_label == 0);
    CHECK(out.aux.domain_label == 1);
    for (const auto& ex : out.aux.items) CHECK(!ex.label.has_value());
    CHECK(out.pretrain.size() == 100);
  }
  SUBCASE("same seed is byte-identical") {
    Rng r1(52), r2(52);
    auto o1 = gen_synthetic(spec, r1);
    auto o2 = gen_synthetic(spec, r2);
    REQUIRE(o1.main_train.items.size() == o2.main_train.items.size());
    for (std::size_t i = 0; i < o1.main_train.items.size(); ++i)
      CHECK(o1.main_train.items[i].text == o2.main_train.items[i].text);
    CHECK(o1.pretrain == o2.pretrain);
  }
  SUBCASE("shortcut tokens appear only in class-A train sentences") {
    Rng rng(53);
    auto out = gen_synthetic(spec, rng);
    auto uses_shortcut = [](const TextExample& ex) {
      for (const auto& tok : tokenize(ex.text)) {
        if (tok.rfind("style0_0", 0) == 0 && tok.size() == 10) {
          const int idx = (tok[8] - '0') * 10 + (tok[9] - '0');
          if (idx < SynthSpec::kShortcutWords) return true;
        }
      }
      return false;
    };
    // sentences are length 20 or 22; only class-A train rows reach 22
    for (const auto& ex : out.main_train.items)
      if (tokenize(ex.text).size() > static_cast<std::size_t>(spec.sentence_len))
        CHECK(*ex.label == 0);
    for (const auto& ex : out.main_val.items)
      CHECK(tokenize(ex.text).size() ==
            static_cast<std::size_t>(spec.sentence_len));
    int a_with = 0, a_total = 0;
    for (const auto& ex : out.main_train.items) {
      if (*ex.label != 0) continue;
      ++a_total;
      a_with += uses_shortcut(ex);
    }
    // rho=0.9 plus occasional organic style draws
    CHECK(a_with > 0.8 * a_total);
  }
  SUBCASE("bag-of-cue-words logistic regression separates the classes") {
    SynthSpec big;
    big.main_train = 400;
    big.main_val = 40;
    big.main_test = 200;
    big.aux_size = 10;
    big.pretrain_size = 10;
    Rng rng(54);
    auto out = gen_synthetic(big, rng);

    const int n_features = 2 * SynthSpec::kCueWords;
    auto featurize = [&](const TextExample& ex) {
      std::vector<double> f(n_features, 0.0);
      for (const auto& tok : tokenize(ex.text)) {
        if (tok.rfind("cue_a_", 0) == 0)
          f[static_cast<std::size_t>(std::stoi(tok.substr(6)))] += 1.0;
        else if (tok.rfind("cue_b_", 0) == 0)
          f[static_cast<std::size_t>(SynthSpec::kCueWords +
                                     std::stoi(tok.substr(6)))] += 1.0;
      }
      return f;
    };

    std::vector<double> w(n_features, 0.0);
    double bias = 0.0;
    const double lr = 0.5;
    for (int iter = 0; iter < 200; ++iter) {
      std::vector<double> gw(n_features, 0.0);
      double gb = 0.0;
      for (const auto& ex : out.main_train.items) {
        const auto f = featurize(ex);
        double z = bias;
        for (int j = 0; j < n_features; ++j) z += w[static_cast<std::size_t>(j)] * f[static_cast<std::size_t>(j)];
        const double p = 1.0 / (1.0 + std::exp(-z));
        const double err = p - *ex.label;
        for (int j = 0; j < n_features; ++j) gw[static_cast<std::size_t>(j)] += err * f[static_cast<std::size_t>(j)];
        gb += err;
      }
      const double scale = lr / static_cast<double>(out.main_train.items.size());
      for (int j = 0; j < n_features; ++j) w[static_cast<std::size_t>(j)] -= scale * gw[static_cast<std::size_t>(j)];
      bias -= scale * gb;
    }

    int correct = 0;
    for (const auto& ex : out.main_test.items) {
      const auto f = featurize(ex);
      double z = bias;
      for (int j = 0; j < n_features; ++j) z += w[static_cast<std::size_t>(j)] * f[static_cast<std::size_t>(j)];
      correct += (z > 0 ? 1 : 0) == *ex.label;
    }
    CHECK(correct > 0.95 * out.main_test.items.size());
  }
  SUBCASE("invalid spec rejected") {
    SynthSpec bad = spec;
    bad.cue_frac = 1.5;
    Rng rng(55);
    CHECK_THROWS_AS(gen_synthetic(bad, rng), std::invalid_argument);
    bad = spec;
    bad.main_train = 3;
    CHECK_THROWS_AS(gen_synthetic(bad, rng), std::invalid_argument);
  }
}
