#include "promptkd/vocab.hpp"

#include <algorithm>

#include "promptkd/data.hpp"
#include "promptkd/errors.hpp"

namespace promptkd {

namespace {

const char* const kSpecialNames[] = {"<pad>", "<bos>", "<eos>", "<unk>"};

std::size_t utf8_length(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xe) return 3;
  if ((lead >> 3) == 0x1e) return 4;
  return 1;
}

}  // namespace

Vocab Vocab::standard() {
  std::vector<std::string> symbols(std::begin(kSpecialNames), std::end(kSpecialNames));
  symbols.emplace_back("\n");
  for (char c = 0x20; c < 0x7f; ++c) symbols.emplace_back(1, c);
  for (auto atom : {kTemplatePreamble, kTemplateDirective, kInstructionHeader, kInputHeader,
                    kResponseHeader}) {
    symbols.emplace_back(atom);
  }
  return Vocab(std::move(symbols));
}

Vocab::Vocab(std::vector<std::string> symbols) : symbols_(std::move(symbols)) {
  if (symbols_.size() <= kNumSpecials) throw ConfigError("vocab: no literal symbols");
  for (std::size_t i = 0; i < kNumSpecials; ++i) {
    if (symbols_[i] != kSpecialNames[i]) {
      throw ConfigError("vocab: special " + std::to_string(i) + " must be " + kSpecialNames[i]);
    }
  }
  for (std::size_t i = 0; i < symbols_.size(); ++i) {
    const auto& s = symbols_[i];
    if (s.empty()) throw ConfigError("vocab: empty symbol at id " + std::to_string(i));
    if (!index_.emplace(s, static_cast<int>(i)).second) {
      throw ConfigError("vocab: duplicate symbol '" + s + "'");
    }
    if (i >= kNumSpecials) longest_ = std::max(longest_, s.size());
  }
}

const std::string& Vocab::symbol(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= symbols_.size()) {
    throw IndexError("vocab: id " + std::to_string(id) + " out of range");
  }
  return symbols_[static_cast<std::size_t>(id)];
}

int Vocab::id(std::string_view symbol) const {
  auto it = index_.find(std::string(symbol));
  if (it == index_.end()) throw IndexError("vocab: unknown symbol '" + std::string(symbol) + "'");
  return it->second;
}

std::vector<int> Vocab::encode(std::string_view text, bool strict) const {
  std::vector<int> ids;
  ids.reserve(text.size());
  std::size_t pos = 0;
  std::string probe;
  while (pos < text.size()) {
    int found = -1;
    std::size_t found_len = 0;
    for (std::size_t len = std::min(longest_, text.size() - pos); len >= 1; --len) {
      probe.assign(text.substr(pos, len));
      auto it = index_.find(probe);
      if (it != index_.end() && !is_special(it->second)) {
        found = it->second;
        found_len = len;
        break;
      }
    }
    if (found >= 0) {
      ids.push_back(found);
      pos += found_len;
      continue;
    }
    if (strict) {
      throw EncodingError("vocab: character 0x" +
                          std::to_string(static_cast<unsigned char>(text[pos])) +
                          " at byte " + std::to_string(pos) + " is not in the vocabulary");
    }
    ids.push_back(kUnk);
    pos += std::min(utf8_length(static_cast<unsigned char>(text[pos])), text.size() - pos);
  }
  return ids;
}

std::string Vocab::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (is_special(id)) continue;
    out += symbol(id);
  }
  return out;
}

}  // namespace promptkd
