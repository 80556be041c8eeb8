#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "birdie/error.hpp"

namespace birdie {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

enum class ObjectiveClass : std::uint8_t {
  NextToken,
  PrefixLM,
  Infilling,
  Copying,
  Deshuffling,
  Autoencoding,
  SelectiveCopying,
};

inline constexpr std::size_t kNumObjectiveClasses = 7;

inline constexpr std::array<std::string_view, kNumObjectiveClasses> kObjectiveClassNames = {
    "next_token", "prefix_lm", "infilling", "copying", "deshuffling", "autoencoding", "selective_copying",
};

inline std::string_view class_name(ObjectiveClass c) { return kObjectiveClassNames[static_cast<std::size_t>(c)]; }

inline ObjectiveClass parse_class(std::string_view name) {
  for (std::size_t i = 0; i < kNumObjectiveClasses; ++i) {
    if (kObjectiveClassNames[i] == name) return static_cast<ObjectiveClass>(i);
  }
  throw Error("unknown objective class '" + std::string(name) + "'");
}

// Byte-level vocabulary. A reserved block of special tokens comes first,
// then the 256 byte values. Ids never change between runs.
//
//   0 PAD  1 SEP  2 BOS  3 DONE  4 COPY  5 START  6 END  7 CONTEXT
//   8..14  paradigm token per objective class
//   15..78 MASK_0..MASK_63
//   79..334 bytes 0x00..0xff
namespace vocab {

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kSep = 1;  // "begin generating"
inline constexpr TokenId kBos = 2;
inline constexpr TokenId kDone = 3;
inline constexpr TokenId kCopy = 4;
inline constexpr TokenId kStart = 5;
inline constexpr TokenId kEnd = 6;
inline constexpr TokenId kContext = 7;
inline constexpr TokenId kParadigmBase = 8;
inline constexpr TokenId kMaskBase = kParadigmBase + static_cast<TokenId>(kNumObjectiveClasses);
inline constexpr int kNumSentinels = 64;
inline constexpr TokenId kByteBase = kMaskBase + kNumSentinels;
inline constexpr TokenId kSize = kByteBase + 256;

inline constexpr TokenId paradigm(ObjectiveClass c) { return kParadigmBase + static_cast<TokenId>(c); }

inline TokenId mask(int k) {
  if (k < 0 || k >= kNumSentinels) {
    throw Error("sentinel index " + std::to_string(k) + " out of range (64 sentinels)");
  }
  return kMaskBase + k;
}

inline constexpr TokenId byte(std::uint8_t b) { return kByteBase + b; }

inline constexpr bool is_byte(TokenId id) { return id >= kByteBase && id < kSize; }
inline constexpr bool is_mask(TokenId id) { return id >= kMaskBase && id < kByteBase; }
inline constexpr bool is_special(TokenId id) { return id >= 0 && id < kByteBase; }
inline constexpr bool valid(TokenId id) { return id >= 0 && id < kSize; }

inline std::string special_name(TokenId id) {
  switch (id) {
    case kPad: return "[PAD]";
    case kSep: return "[SEP]";
    case kBos: return "[BOS]";
    case kDone: return "[DONE]";
    case kCopy: return "[COPY]";
    case kStart: return "[START]";
    case kEnd: return "[END]";
    case kContext: return "[CONTEXT]";
    default: break;
  }
  if (id >= kParadigmBase && id < kMaskBase) {
    return "[P:" + std::string(class_name(static_cast<ObjectiveClass>(id - kParadigmBase))) + "]";
  }
  if (is_mask(id)) return "[MASK_" + std::to_string(id - kMaskBase) + "]";
  throw Error("token id " + std::to_string(id) + " is not a special token");
}

}  // namespace vocab

inline TokenSeq encode(std::string_view text) {
  TokenSeq out;
  out.reserve(text.size());
  for (const char c : text) out.push_back(vocab::byte(static_cast<std::uint8_t>(c)));
  return out;
}

// Bytes are emitted raw; special tokens are rendered as their bracketed
// names, so decode(encode(s)) == s for any plain byte string.
inline std::string decode(std::span<const TokenId> ids) {
  std::string out;
  out.reserve(ids.size());
  for (const TokenId id : ids) {
    if (!vocab::valid(id)) throw Error("token id " + std::to_string(id) + " outside vocabulary");
    if (vocab::is_byte(id)) {
      out.push_back(static_cast<char>(id - vocab::kByteBase));
    } else {
      out += vocab::special_name(id);
    }
  }
  return out;
}

// Bytes only; special tokens are dropped. Used when scoring generated text.
inline std::string decode_text(std::span<const TokenId> ids) {
  std::string out;
  for (const TokenId id : ids) {
    if (vocab::is_byte(id)) out.push_back(static_cast<char>(id - vocab::kByteBase));
  }
  return out;
}

}  // namespace birdie
