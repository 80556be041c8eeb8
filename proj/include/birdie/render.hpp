#pragma once

// Human-readable token dumps, and a word-level codec used for the worked
// examples (one token per whitespace-separated word).

#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "birdie/error.hpp"
#include "birdie/vocab.hpp"

namespace birdie {

// Special tokens as [NAME], separated from their neighbours by a space;
// runs of bytes are written verbatim.
inline std::string render_bytes(std::span<const TokenId> ids) {
  std::string out;
  bool in_bytes = false;
  for (const TokenId id : ids) {
    if (vocab::is_byte(id)) {
      if (!in_bytes && !out.empty()) out += ' ';
      out.push_back(static_cast<char>(id - vocab::kByteBase));
      in_bytes = true;
    } else {
      if (!out.empty()) out += ' ';
      out += vocab::special_name(id);
      in_bytes = false;
    }
  }
  return out;
}

class WordCodec {
 public:
  TokenSeq encode(const std::string& text) {
    TokenSeq out;
    std::istringstream in(text);
    for (std::string w; in >> w;) {
      auto it = index_.find(w);
      if (it == index_.end()) {
        if (words_.size() == 256) throw Error("word codec: more than 256 distinct words");
        it = index_.emplace(w, static_cast<TokenId>(vocab::kByteBase + words_.size())).first;
        words_.push_back(w);
      }
      out.push_back(it->second);
    }
    return out;
  }

  std::string render(std::span<const TokenId> ids) const {
    std::string out;
    for (const TokenId id : ids) {
      if (!out.empty()) out += ' ';
      if (vocab::is_byte(id)) {
        const auto k = static_cast<std::size_t>(id - vocab::kByteBase);
        if (k >= words_.size()) throw Error("word codec: unknown word id " + std::to_string(id));
        out += words_[k];
      } else {
        out += vocab::special_name(id);
      }
    }
    return out;
  }

 private:
  std::vector<std::string> words_;
  std::map<std::string, TokenId> index_;
};

}  // namespace birdie
