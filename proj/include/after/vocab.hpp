#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace after {

// Lowercase, split on Unicode whitespace, strip leading/trailing ASCII
// punctuation. Empty results are dropped.
std::vector<std::string> tokenize(std::string_view text);

// Word-level vocabulary. Ids 0-4 are the specials; the remaining slots are
// filled most-frequent-first with lexicographic tie-breaking, so the file
// is a pure function of the corpus and the size cap.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;
  static constexpr int kMask = 4;
  static constexpr int kNumSpecials = 5;
  static const std::array<const char*, kNumSpecials>& specials();

  static Vocab build(const std::vector<std::string>& lines, std::size_t max_size);
  static Vocab from_tokens(std::vector<std::string> id_to_token);
  static Vocab load(const std::string& path);
  void save(const std::string& path) const;

  int id(const std::string& token) const;  // kUnk for unknown tokens
  const std::string& token(int id) const;
  int size() const { return static_cast<int>(id_to_token_.size()); }
  bool is_special(int id) const { return id >= 0 && id < kNumSpecials; }

  // Order-sensitive hash of the full token list; stored in checkpoints so a
  // model is never probed under a different vocabulary.
  std::uint64_t fingerprint() const;

 private:
  Vocab() = default;
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
};

// [CLS] + token ids with OOV mapped to [UNK], truncated to max_len total.
std::vector<int> encode_text(const Vocab& vocab, std::string_view text,
                             int max_len);

}  // namespace after
