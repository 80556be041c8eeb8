#pragma once

#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "birdie/error.hpp"
#include "birdie/vocab.hpp"

namespace birdie {

// Reset-mask codes. kNewSample zeroes the forward state (and ends the reverse
// scan of the previous sample); kCausal zeroes the reverse state so nothing
// flows backwards through the generation region.
enum ResetCode : std::uint8_t { kContinue = 0, kNewSample = 1, kCausal = 2 };

inline constexpr TokenId kNoTarget = -1;

// One training sample laid out for a decoder-only model. targets[t] is the
// token position t must predict, or kNoTarget.
struct TrainingSample {
  TokenSeq ids;
  TokenSeq targets;
  std::vector<std::uint8_t> reset_mask;

  std::size_t size() const { return ids.size(); }
  std::size_t num_targets() const {
    std::size_t n = 0;
    for (const TokenId t : targets) n += t != kNoTarget;
    return n;
  }
};

// input ++ [SEP] ++ label[:-1]; loss on label positions. The prefix is
// bidirectional, SEP and everything after it is causal.
inline TrainingSample build_teacher_forced(std::span<const TokenId> input, std::span<const TokenId> label) {
  if (input.empty()) throw Error("teacher forcing needs a nonempty input");
  if (label.empty()) throw Error("teacher forcing needs a nonempty label (nothing to train on)");
  TrainingSample s;
  const std::size_t n = input.size() + label.size();
  s.ids.reserve(n);
  s.ids.insert(s.ids.end(), input.begin(), input.end());
  s.ids.push_back(vocab::kSep);
  s.ids.insert(s.ids.end(), label.begin(), label.end() - 1);
  s.targets.assign(input.size(), kNoTarget);
  s.targets.insert(s.targets.end(), label.begin(), label.end());
  s.reset_mask.assign(input.size(), kContinue);
  s.reset_mask.resize(n, kCausal);
  s.reset_mask[0] = kNewSample;
  return s;
}

// Fully causal layout for aligned (input, target) pairs such as next-token
// prediction: a lead token forms a one-position prefix without loss, so the
// first real position never sees the future through the reverse state.
inline TrainingSample build_causal(std::span<const TokenId> input, std::span<const TokenId> target,
                                   TokenId lead = vocab::kBos) {
  if (input.size() != target.size() || input.empty()) {
    throw Error("causal sample needs aligned, nonempty input and target");
  }
  TrainingSample s;
  s.ids.push_back(lead);
  s.ids.insert(s.ids.end(), input.begin(), input.end());
  s.targets.push_back(kNoTarget);
  s.targets.insert(s.targets.end(), target.begin(), target.end());
  s.reset_mask.assign(s.ids.size(), kCausal);
  s.reset_mask[0] = kNewSample;
  return s;
}

struct PackedBatch {
  TokenSeq ids;
  TokenSeq targets;
  std::vector<std::uint8_t> loss_mask;
  std::vector<std::uint8_t> reset_mask;
  std::vector<std::int32_t> segment_ids;  // -1 on padding
  std::vector<std::size_t> sources;       // input sample index per segment

  std::size_t size() const { return ids.size(); }
};

// Greedy first-fit packing. Every batch has exactly max_len positions.
inline std::vector<PackedBatch> pack(std::span<const TrainingSample> samples, std::size_t max_len) {
  if (max_len == 0) throw Error("pack: max_len must be positive");
  std::vector<PackedBatch> batches;
  std::vector<std::size_t> used;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const TrainingSample& s = samples[i];
    if (s.size() > max_len) {
      throw Error("pack: sample " + std::to_string(i) + " has length " + std::to_string(s.size()) +
                  " > max_len " + std::to_string(max_len));
    }
    if (s.size() == 0) continue;
    std::size_t slot = 0;
    while (slot < batches.size() && used[slot] + s.size() > max_len) ++slot;
    if (slot == batches.size()) {
      batches.emplace_back();
      used.push_back(0);
    }
    PackedBatch& b = batches[slot];
    const auto seg = static_cast<std::int32_t>(b.sources.size());
    b.sources.push_back(i);
    b.ids.insert(b.ids.end(), s.ids.begin(), s.ids.end());
    b.targets.insert(b.targets.end(), s.targets.begin(), s.targets.end());
    for (const TokenId t : s.targets) b.loss_mask.push_back(t == kNoTarget ? 0 : 1);
    b.reset_mask.insert(b.reset_mask.end(), s.reset_mask.begin(), s.reset_mask.end());
    b.reset_mask[used[slot]] = kNewSample;
    b.segment_ids.insert(b.segment_ids.end(), s.size(), seg);
    used[slot] += s.size();
  }
  for (PackedBatch& b : batches) {
    const std::size_t pad = max_len - b.ids.size();
    b.ids.insert(b.ids.end(), pad, vocab::kPad);
    b.targets.insert(b.targets.end(), pad, kNoTarget);
    b.loss_mask.insert(b.loss_mask.end(), pad, 0);
    // Padding runs as its own inert segment so it cannot touch real state.
    if (pad > 0) {
      b.reset_mask.push_back(kNewSample);
      b.reset_mask.insert(b.reset_mask.end(), pad - 1, kCausal);
    }
    b.segment_ids.insert(b.segment_ids.end(), pad, -1);
  }
  return batches;
}

// Splits a packed batch back into its segments' token ids.
inline std::vector<TokenSeq> unpack_ids(const PackedBatch& b) {
  std::vector<TokenSeq> out(b.sources.size());
  for (std::size_t t = 0; t < b.size(); ++t) {
    if (b.segment_ids[t] >= 0) out[static_cast<std::size_t>(b.segment_ids[t])].push_back(b.ids[t]);
  }
  return out;
}

// Concatenates several packed rows into one long stream. Rows already begin
// with a reset, so the stream scans exactly like the rows side by side.
inline PackedBatch concat_rows(std::span<const PackedBatch> rows) {
  PackedBatch out;
  std::int32_t seg_offset = 0;
  for (const PackedBatch& r : rows) {
    out.ids.insert(out.ids.end(), r.ids.begin(), r.ids.end());
    out.targets.insert(out.targets.end(), r.targets.begin(), r.targets.end());
    out.loss_mask.insert(out.loss_mask.end(), r.loss_mask.begin(), r.loss_mask.end());
    out.reset_mask.insert(out.reset_mask.end(), r.reset_mask.begin(), r.reset_mask.end());
    for (const std::int32_t s : r.segment_ids) out.segment_ids.push_back(s < 0 ? -1 : s + seg_offset);
    out.sources.insert(out.sources.end(), r.sources.begin(), r.sources.end());
    seg_offset += static_cast<std::int32_t>(r.sources.size());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization: flat little-endian arrays. <prefix>.ids and <prefix>.targets
// hold int32 ids, <prefix>.loss and <prefix>.reset hold one byte per
// position, <prefix>.seg holds int32 segment ids. All rows share max_len.

namespace detail {

template <class T>
void write_le(std::ofstream& out, T v) {
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(v);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.put(static_cast<char>(u & 0xff));
    u = static_cast<U>(u >> 8);
  }
}

template <class T>
T read_le(std::ifstream& in) {
  using U = std::make_unsigned_t<T>;
  U u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    const int c = in.get();
    if (c == EOF) throw Error("unexpected end of file");
    u = static_cast<U>(u | (static_cast<U>(static_cast<unsigned char>(c)) << (8 * i)));
  }
  return static_cast<T>(u);
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  return out;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  return in;
}

}  // namespace detail

inline void write_packed(const std::string& prefix, std::span<const PackedBatch> batches) {
  auto ids = detail::open_out(prefix + ".ids");
  auto targets = detail::open_out(prefix + ".targets");
  auto loss = detail::open_out(prefix + ".loss");
  auto reset = detail::open_out(prefix + ".reset");
  auto seg = detail::open_out(prefix + ".seg");
  for (const PackedBatch& b : batches) {
    for (std::size_t t = 0; t < b.size(); ++t) {
      detail::write_le<std::int32_t>(ids, b.ids[t]);
      detail::write_le<std::int32_t>(targets, b.targets[t]);
      loss.put(static_cast<char>(b.loss_mask[t]));
      reset.put(static_cast<char>(b.reset_mask[t]));
      detail::write_le<std::int32_t>(seg, b.segment_ids[t]);
    }
  }
}

inline std::vector<PackedBatch> read_packed(const std::string& prefix, std::size_t max_len) {
  auto ids = detail::open_in(prefix + ".ids");
  auto targets = detail::open_in(prefix + ".targets");
  auto loss = detail::open_in(prefix + ".loss");
  auto reset = detail::open_in(prefix + ".reset");
  auto seg = detail::open_in(prefix + ".seg");
  ids.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(ids.tellg());
  ids.seekg(0);
  if (bytes % (4 * max_len) != 0) throw Error("packed file size is not a multiple of max_len");
  std::vector<PackedBatch> out(bytes / (4 * max_len));
  for (PackedBatch& b : out) {
    std::int32_t last_seg = -1;
    for (std::size_t t = 0; t < max_len; ++t) {
      b.ids.push_back(detail::read_le<std::int32_t>(ids));
      b.targets.push_back(detail::read_le<std::int32_t>(targets));
      b.loss_mask.push_back(static_cast<std::uint8_t>(loss.get()));
      b.reset_mask.push_back(static_cast<std::uint8_t>(reset.get()));
      const auto s = detail::read_le<std::int32_t>(seg);
      b.segment_ids.push_back(s);
      if (s > last_seg) {
        b.sources.push_back(static_cast<std::size_t>(s));
        last_seg = s;
      }
    }
  }
  return out;
}

// Corpus input: one document per line.
inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open corpus '" + path + "'");
  std::vector<std::string> docs;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) docs.push_back(line);
  }
  return docs;
}

// Corpus input: length-prefixed records (uint32 LE length, then bytes).
inline std::vector<std::string> read_records(const std::string& path) {
  auto in = detail::open_in(path);
  std::vector<std::string> docs;
  while (in.peek() != EOF) {
    const auto n = detail::read_le<std::uint32_t>(in);
    std::string doc(n, '\0');
    in.read(doc.data(), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n) throw Error("truncated record in '" + path + "'");
    docs.push_back(std::move(doc));
  }
  return docs;
}

inline void write_records(const std::string& path, std::span<const std::string> docs) {
  auto out = detail::open_out(path);
  for (const std::string& d : docs) {
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(d.size()));
    out.write(d.data(), static_cast<std::streamsize>(d.size()));
  }
}

}  // namespace birdie
