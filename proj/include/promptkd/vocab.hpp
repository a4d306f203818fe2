#pragma once

#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace promptkd {

// Character-level vocabulary with a handful of multi-character atoms.
//
// Ids 0..3 are the specials <pad>, <bos>, <eos>, <unk>. Every other symbol
// is literal text. Encoding is greedy longest-match over the literal
// symbols, so the fixed lines of the instruction template each become one
// token while free text stays one token per character.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr std::size_t kNumSpecials = 4;

  // Specials, newline, printable ASCII 0x20..0x7e, then the template atoms.
  static Vocab standard();

  // symbols[0..3] must be the specials in order; the rest must be distinct,
  // non-empty literal strings.
  explicit Vocab(std::vector<std::string> symbols);

  std::size_t size() const { return symbols_.size(); }
  const std::vector<std::string>& symbols() const { return symbols_; }
  const std::string& symbol(int id) const;
  // Throws IndexError when the symbol is unknown.
  int id(std::string_view symbol) const;
  bool is_special(int id) const { return id >= 0 && id < static_cast<int>(kNumSpecials); }

  // strict: out-of-vocabulary text throws EncodingError; otherwise each
  // unknown UTF-8 code point becomes one <unk>.
  std::vector<int> encode(std::string_view text, bool strict = true) const;
  // Concatenates literal symbols; specials are dropped.
  std::string decode(std::span<const int> ids) const;

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, int> index_;
  std::size_t longest_ = 1;
};

}  // namespace promptkd
