#include "after/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <stdexcept>

#include "after/rng.hpp"

namespace after {

namespace {

bool is_ws_codepoint(std::uint32_t cp) {
  switch (cp) {
    case 0x09: case 0x0A: case 0x0B: case 0x0C: case 0x0D: case 0x20:
    case 0x85: case 0xA0: case 0x1680:
    case 0x2000: case 0x2001: case 0x2002: case 0x2003: case 0x2004:
    case 0x2005: case 0x2006: case 0x2007: case 0x2008: case 0x2009:
    case 0x200A: case 0x2028: case 0x2029: case 0x202F: case 0x205F:
    case 0x3000:
      return true;
    default:
      return false;
  }
}

// Decodes one UTF-8 codepoint at s[i], advancing i. Malformed bytes are
// returned as-is (latin-1 style) so bad input degrades instead of throwing.
std::uint32_t next_codepoint(std::string_view s, std::size_t& i,
                             std::size_t& len) {
  const unsigned char c0 = static_cast<unsigned char>(s[i]);
  std::size_t n = 1;
  std::uint32_t cp = c0;
  if (c0 >= 0xF0) {
    n = 4;
    cp = c0 & 0x07u;
  } else if (c0 >= 0xE0) {
    n = 3;
    cp = c0 & 0x0Fu;
  } else if (c0 >= 0xC0) {
    n = 2;
    cp = c0 & 0x1Fu;
  }
  if (n > 1) {
    if (i + n > s.size()) {
      len = 1;
      ++i;
      return c0;
    }
    for (std::size_t j = 1; j < n; ++j) {
      const unsigned char cj = static_cast<unsigned char>(s[i + j]);
      if ((cj & 0xC0u) != 0x80u) {
        len = 1;
        ++i;
        return c0;
      }
      cp = (cp << 6) | (cj & 0x3Fu);
    }
  }
  len = n;
  i += n;
  return cp;
}

bool is_ascii_punct(char c) {
  return std::ispunct(static_cast<unsigned char>(c)) != 0;
}

void strip_punct(std::string& tok) {
  std::size_t b = 0, e = tok.size();
  while (b < e && is_ascii_punct(tok[b])) ++b;
  while (e > b && is_ascii_punct(tok[e - 1])) --e;
  tok = tok.substr(b, e - b);
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  std::size_t i = 0;
  while (i < text.size()) {
    const std::size_t start = i;
    std::size_t len = 0;
    const std::uint32_t cp = next_codepoint(text, i, len);
    if (is_ws_codepoint(cp)) {
      if (!cur.empty()) {
        strip_punct(cur);
        if (!cur.empty()) out.push_back(cur);
        cur.clear();
      }
    } else {
      for (std::size_t j = 0; j < len; ++j) {
        char c = text[start + j];
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
        cur.push_back(c);
      }
    }
  }
  if (!cur.empty()) {
    strip_punct(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

const std::array<const char*, Vocab::kNumSpecials>& Vocab::specials() {
  static const std::array<const char*, kNumSpecials> s = {
      "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
  return s;
}

Vocab Vocab::build(const std::vector<std::string>& lines, std::size_t max_size) {
  if (max_size <= kNumSpecials)
    throw std::invalid_argument("Vocab::build: max_size must exceed " +
                                std::to_string(kNumSpecials));
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& line : lines)
    for (auto& tok : tokenize(line)) ++counts[tok];
  if (counts.empty())
    throw std::invalid_argument("Vocab::build: empty corpus");

  std::vector<std::pair<std::string, std::size_t>> sorted(counts.begin(),
                                                          counts.end());
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  std::vector<std::string> tokens;
  tokens.reserve(std::min(max_size, sorted.size() + kNumSpecials));
  for (const char* s : specials()) tokens.emplace_back(s);
  const std::size_t keep = max_size - kNumSpecials;
  for (std::size_t i = 0; i < sorted.size() && i < keep; ++i)
    tokens.push_back(sorted[i].first);
  return from_tokens(std::move(tokens));
}

Vocab Vocab::from_tokens(std::vector<std::string> id_to_token) {
  if (id_to_token.size() < kNumSpecials)
    throw std::invalid_argument("Vocab: token list shorter than specials");
  for (int i = 0; i < kNumSpecials; ++i)
    if (id_to_token[static_cast<std::size_t>(i)] != specials()[static_cast<std::size_t>(i)])
      throw std::invalid_argument("Vocab: id " + std::to_string(i) +
                                  " must be " + specials()[static_cast<std::size_t>(i)]);
  Vocab v;
  v.id_to_token_ = std::move(id_to_token);
  v.token_to_id_.reserve(v.id_to_token_.size());
  for (std::size_t i = 0; i < v.id_to_token_.size(); ++i) {
    auto [it, inserted] =
        v.token_to_id_.emplace(v.id_to_token_[i], static_cast<int>(i));
    if (!inserted)
      throw std::invalid_argument("Vocab: duplicate token '" +
                                  v.id_to_token_[i] + "'");
  }
  return v;
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("Vocab::load: cannot open " + path);
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) tokens.push_back(line);
  return from_tokens(std::move(tokens));
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("Vocab::save: cannot open " + path);
  for (const auto& tok : id_to_token_) out << tok << '\n';
  if (!out) throw std::runtime_error("Vocab::save: write failed for " + path);
}

int Vocab::id(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size())
    throw std::out_of_range("Vocab::token: id " + std::to_string(id));
  return id_to_token_[static_cast<std::size_t>(id)];
}

std::uint64_t Vocab::fingerprint() const {
  std::string joined;
  for (const auto& tok : id_to_token_) {
    joined += tok;
    joined += '\n';
  }
  return fnv1a64(joined);
}

std::vector<int> encode_text(const Vocab& vocab, std::string_view text,
                             int max_len) {
  if (max_len < 2)
    throw std::invalid_argument("encode_text: max_len must be >= 2");
  std::vector<int> ids;
  ids.push_back(Vocab::kCls);
  for (const auto& tok : tokenize(text)) {
    if (static_cast<int>(ids.size()) >= max_len) break;
    ids.push_back(vocab.id(tok));
  }
  return ids;
}

}  // namespace after
