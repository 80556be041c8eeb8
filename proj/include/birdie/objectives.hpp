#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "birdie/error.hpp"
#include "birdie/rng.hpp"
#include "birdie/vocab.hpp"

namespace birdie {

enum class ContextPlacement : std::uint8_t { Before, After };

// One fully parameterized objective. Knobs a class does not use stay empty.
struct ObjectiveConfig {
  ObjectiveClass cls = ObjectiveClass::NextToken;
  std::pair<int, int> length_range{128, 256};
  std::optional<double> mask_fraction;      // infilling, autoencoding
  std::optional<double> mean_span;          // infilling, autoencoding
  std::optional<double> shuffle_fraction;   // deshuffling
  std::optional<int> num_spans;             // selective copying
  std::optional<ContextPlacement> placement;  // selective copying
  std::optional<bool> shuffle_unmasked;     // autoencoding

  std::string name() const {
    std::ostringstream os;
    os << class_name(cls) << "/len" << length_range.first << "-" << length_range.second;
    if (mask_fraction) os << "/mask" << *mask_fraction;
    if (mean_span) os << "/span" << *mean_span;
    if (shuffle_fraction) os << "/shuffle" << *shuffle_fraction;
    if (num_spans) os << "/spans" << *num_spans;
    if (placement) os << (*placement == ContextPlacement::Before ? "/query-first" : "/context-first");
    if (shuffle_unmasked) os << (*shuffle_unmasked ? "/shuffled" : "/ordered");
    return os.str();
  }

  void validate() const {
    const auto fail = [&](const std::string& why) { throw Error("objective " + name() + ": " + why); };
    if (length_range.first < 8) fail("length_range.min must be >= 8");
    if (length_range.second < length_range.first) fail("empty length range");
    const bool spans = cls == ObjectiveClass::Infilling || cls == ObjectiveClass::Autoencoding;
    if (spans != mask_fraction.has_value() || spans != mean_span.has_value()) {
      fail("mask_fraction/mean_span apply exactly to infilling and autoencoding");
    }
    if (mask_fraction) {
      static constexpr double kAllowed[] = {0.05, 0.15, 0.5, 0.85};
      if (std::none_of(std::begin(kAllowed), std::end(kAllowed),
                       [&](double v) { return std::abs(v - *mask_fraction) < 1e-12; })) {
        fail("mask_fraction must be one of 0.05, 0.15, 0.5, 0.85");
      }
      if (*mean_span < 1.0) fail("mean_span must be >= 1");
    }
    if ((cls == ObjectiveClass::Deshuffling) != shuffle_fraction.has_value()) fail("shuffle_fraction is deshuffling-only");
    if (shuffle_fraction && *shuffle_fraction != 0.5 && *shuffle_fraction != 1.0) fail("shuffle_fraction must be 0.5 or 1.0");
    const bool sel = cls == ObjectiveClass::SelectiveCopying;
    if (sel != num_spans.has_value() || sel != placement.has_value()) fail("num_spans/placement are selective-copying-only");
    if (num_spans && (*num_spans < 1 || *num_spans > 4)) fail("num_spans must be in 1..4");
    if ((cls == ObjectiveClass::Autoencoding) != shuffle_unmasked.has_value()) fail("shuffle_unmasked is autoencoding-only");
  }
};

// In = input_ids, Tgt = target_ids. Positions [0, prefix_len) of the input
// form the bidirectional context; prefix_len == 0 means fully causal, in
// which case input and target are aligned token-for-token.
struct TransformedSample {
  TokenSeq input_ids;
  TokenSeq target_ids;
  std::size_t prefix_len = 0;
  std::size_t config_index = 0;
};

// ---------------------------------------------------------------------------
// Plans: the random choices a transform makes. Drawing a plan and applying it
// are separate so fixtures can pin the choices exactly.

struct Span {
  std::size_t start = 0;
  std::size_t length = 0;
  bool operator==(const Span&) const = default;
};

struct CopyQuery {
  Span span;
  std::size_t start_delim = 1;
  std::size_t end_delim = 1;
};

namespace plan {

inline std::size_t prefix_split(std::size_t n, Rng& rng) {
  // 50% of the length on average, jittered by +-25%.
  const double frac = rng.uniform(0.25, 0.75);
  const auto split = static_cast<std::size_t>(std::llround(frac * static_cast<double>(n)));
  return std::clamp<std::size_t>(split, 1, n - 1);
}

inline std::size_t span_count(std::size_t n, double mask_fraction, double mean_span) {
  const double raw = std::round(static_cast<double>(n) * mask_fraction / mean_span);
  return std::max<std::size_t>(1, static_cast<std::size_t>(raw));
}

// Non-overlapping, non-adjacent spans with Poisson(mean_span) lengths
// (truncated to >= 1), placed uniformly. Up to 100 length draws per span
// count; the count drops by one whenever none of them fits.
inline std::vector<Span> corruption_spans(std::size_t n, double mask_fraction, double mean_span, Rng& rng) {
  if (n < 2) throw Error("span corruption needs at least 2 tokens");
  std::size_t count = span_count(n, mask_fraction, mean_span);
  if (count > static_cast<std::size_t>(vocab::kNumSentinels)) {
    throw Error("span corruption needs " + std::to_string(count) + " spans but only 64 sentinels exist");
  }
  for (; count >= 1; --count) {
    for (int attempt = 0; attempt < 100; ++attempt) {
      std::vector<std::size_t> lengths(count);
      std::size_t total = 0;
      for (auto& len : lengths) {
        len = static_cast<std::size_t>(std::max<std::int64_t>(1, rng.poisson(mean_span)));
        total += len;
      }
      // Keep at least one visible token and a one-token gap between spans.
      const std::size_t needed = total + (count - 1);
      if (needed >= n) continue;
      const std::size_t free_slots = n - needed;
      // Distribute the free tokens over count+1 gaps, uniformly over all
      // arrangements (stars and bars).
      std::vector<std::size_t> bars(free_slots + count);
      std::iota(bars.begin(), bars.end(), 0);
      for (std::size_t i = 0; i < count; ++i) {
        std::swap(bars[i], bars[i + rng.index(bars.size() - i)]);
      }
      std::vector<std::size_t> picks(bars.begin(), bars.begin() + static_cast<std::ptrdiff_t>(count));
      std::sort(picks.begin(), picks.end());
      std::vector<Span> spans(count);
      std::size_t pos = 0;
      std::size_t prev_pick = 0;
      for (std::size_t i = 0; i < count; ++i) {
        const std::size_t gap = picks[i] - (i == 0 ? 0 : prev_pick + 1);
        prev_pick = picks[i];
        pos += gap + (i == 0 ? 0 : 1);
        spans[i] = Span{pos, lengths[i]};
        pos += lengths[i];
      }
      return spans;
    }
  }
  // A single span always fits once it is cut to leave one visible token.
  const auto len = std::min<std::size_t>(n - 1, static_cast<std::size_t>(std::max<std::int64_t>(1, rng.poisson(mean_span))));
  return {Span{rng.index(n - len + 1), len}};
}

// Chosen positions and the permutation applied to their tokens: the token
// at positions[i] moves to positions[order[i]].
struct Shuffle {
  std::vector<std::size_t> positions;
  std::vector<std::size_t> order;
};

inline Shuffle shuffle(std::size_t n, double fraction, Rng& rng) {
  const auto k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n)));
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  rng.shuffle(std::span(all));
  Shuffle s;
  s.positions.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(std::min(k, n)));
  std::sort(s.positions.begin(), s.positions.end());
  s.order.resize(s.positions.size());
  std::iota(s.order.begin(), s.order.end(), 0);
  rng.shuffle(std::span(s.order));
  return s;
}

inline std::vector<CopyQuery> copy_queries(std::size_t n, int num_spans, Rng& rng) {
  constexpr std::size_t kMinSpan = 4, kMaxSpan = 32, kMaxDelim = 8;
  for (int attempt = 0; attempt < 100; ++attempt) {
    std::vector<CopyQuery> out;
    bool ok = true;
    for (int s = 0; s < num_spans && ok; ++s) {
      CopyQuery q;
      q.start_delim = static_cast<std::size_t>(rng.uniform_int(1, kMaxDelim));
      q.end_delim = static_cast<std::size_t>(rng.uniform_int(1, kMaxDelim));
      if (n < q.start_delim + q.end_delim + kMinSpan) {
        ok = false;
        break;
      }
      const std::size_t max_len = std::min(kMaxSpan, n - q.start_delim - q.end_delim);
      q.span.length = static_cast<std::size_t>(rng.uniform_int(kMinSpan, static_cast<std::int64_t>(max_len)));
      // uniform over the starts that miss every earlier span
      std::vector<std::size_t> starts;
      for (std::size_t st = q.start_delim; st + q.span.length + q.end_delim <= n; ++st) {
        bool free = true;
        for (const CopyQuery& o : out) free &= st + q.span.length <= o.span.start || o.span.start + o.span.length <= st;
        if (free) starts.push_back(st);
      }
      if (starts.empty()) {
        ok = false;
        break;
      }
      q.span.start = starts[rng.index(starts.size())];
      out.push_back(q);
    }
    if (ok) return out;
  }
  throw Error("cannot place " + std::to_string(num_spans) + " selective-copy spans in " + std::to_string(n) + " tokens");
}

}  // namespace plan

// ---------------------------------------------------------------------------
// Deterministic application of a plan.

namespace apply {

inline TransformedSample next_token(std::span<const TokenId> seq) {
  if (seq.size() < 2) throw Error("next_token needs at least 2 tokens");
  return {TokenSeq(seq.begin(), seq.end() - 1), TokenSeq(seq.begin() + 1, seq.end()), 0, 0};
}

inline TransformedSample prefix_lm(std::span<const TokenId> seq, std::size_t split) {
  if (split == 0 || split >= seq.size()) throw Error("prefix_lm split must leave both halves nonempty");
  return {TokenSeq(seq.begin(), seq.begin() + static_cast<std::ptrdiff_t>(split)),
          TokenSeq(seq.begin() + static_cast<std::ptrdiff_t>(split), seq.end()), split, 0};
}

inline void check_spans(std::span<const TokenId> seq, std::span<const Span> spans) {
  if (spans.size() > static_cast<std::size_t>(vocab::kNumSentinels)) throw Error("more spans than sentinels");
  std::size_t end = 0;
  for (std::size_t i = 0; i < spans.size(); ++i) {
    if (spans[i].length == 0 || spans[i].start + spans[i].length > seq.size()) throw Error("span out of range");
    if (i > 0 && spans[i].start <= end) throw Error("spans must be sorted, disjoint and non-adjacent");
    end = spans[i].start + spans[i].length;
  }
}

// Input with each span replaced by its sentinel, split into "units": a
// visible run plus the sentinel right after it. A leading sentinel is a unit
// of its own.
inline std::vector<TokenSeq> masked_units(std::span<const TokenId> seq, std::span<const Span> spans) {
  std::vector<TokenSeq> units;
  TokenSeq cur;
  std::size_t pos = 0;
  for (std::size_t k = 0; k < spans.size(); ++k) {
    cur.insert(cur.end(), seq.begin() + static_cast<std::ptrdiff_t>(pos),
               seq.begin() + static_cast<std::ptrdiff_t>(spans[k].start));
    cur.push_back(vocab::mask(static_cast<int>(k)));
    units.push_back(std::move(cur));
    cur.clear();
    pos = spans[k].start + spans[k].length;
  }
  cur.insert(cur.end(), seq.begin() + static_cast<std::ptrdiff_t>(pos), seq.end());
  if (!cur.empty()) units.push_back(std::move(cur));
  return units;
}

inline TransformedSample span_corrupt(std::span<const TokenId> seq, std::span<const Span> spans) {
  check_spans(seq, spans);
  TransformedSample out;
  for (const TokenSeq& u : masked_units(seq, spans)) out.input_ids.insert(out.input_ids.end(), u.begin(), u.end());
  for (std::size_t k = 0; k < spans.size(); ++k) {
    out.target_ids.push_back(vocab::mask(static_cast<int>(k)));
    const auto first = seq.begin() + static_cast<std::ptrdiff_t>(spans[k].start);
    out.target_ids.insert(out.target_ids.end(), first, first + static_cast<std::ptrdiff_t>(spans[k].length));
  }
  out.target_ids.push_back(vocab::kDone);
  out.prefix_len = out.input_ids.size();
  return out;
}

inline TransformedSample copy(std::span<const TokenId> seq) {
  if (seq.empty()) throw Error("copy needs a nonempty sequence");
  TransformedSample out{TokenSeq(seq.begin(), seq.end()), TokenSeq(seq.begin(), seq.end()), seq.size(), 0};
  out.target_ids.push_back(vocab::kDone);
  return out;
}

inline TransformedSample deshuffle(std::span<const TokenId> seq, const plan::Shuffle& s) {
  if (seq.size() < 2) throw Error("deshuffle needs at least 2 tokens");
  if (s.order.size() != s.positions.size()) throw Error("shuffle plan is inconsistent");
  TokenSeq shuffled(seq.begin(), seq.end());
  for (std::size_t i = 0; i < s.positions.size(); ++i) {
    shuffled.at(s.positions.at(s.order[i])) = seq[s.positions[i]];
  }
  TransformedSample out{std::move(shuffled), TokenSeq(seq.begin(), seq.end()), seq.size(), 0};
  out.target_ids.push_back(vocab::kDone);
  return out;
}

// unit_order: permutation of masked_units(); empty keeps the original order.
inline TransformedSample autoencode(std::span<const TokenId> seq, std::span<const Span> spans,
                                    std::span<const std::size_t> unit_order = {}) {
  check_spans(seq, spans);
  const std::vector<TokenSeq> units = masked_units(seq, spans);
  TransformedSample out;
  for (std::size_t i = 0; i < units.size(); ++i) {
    const TokenSeq& u = units[unit_order.empty() ? i : unit_order[i]];
    out.input_ids.insert(out.input_ids.end(), u.begin(), u.end());
  }
  out.target_ids.assign(seq.begin(), seq.end());
  out.target_ids.push_back(vocab::kDone);
  out.prefix_len = out.input_ids.size();
  return out;
}

inline TransformedSample selective_copy(std::span<const TokenId> context, std::span<const CopyQuery> queries,
                                        ContextPlacement placement) {
  if (queries.empty()) throw Error("selective copy needs at least one span");
  TokenSeq query_block;
  TokenSeq target;
  for (const CopyQuery& q : queries) {
    const std::size_t s = q.span.start, e = q.span.start + q.span.length;
    if (q.span.length == 0 || q.start_delim == 0 || q.end_delim == 0 || s < q.start_delim ||
        e + q.end_delim > context.size()) {
      throw Error("selective copy span or delimiters fall outside the context");
    }
    query_block.push_back(vocab::kCopy);
    query_block.push_back(vocab::kStart);
    query_block.insert(query_block.end(), context.begin() + static_cast<std::ptrdiff_t>(s - q.start_delim),
                       context.begin() + static_cast<std::ptrdiff_t>(s));
    query_block.push_back(vocab::kEnd);
    query_block.insert(query_block.end(), context.begin() + static_cast<std::ptrdiff_t>(e),
                       context.begin() + static_cast<std::ptrdiff_t>(e + q.end_delim));
    target.insert(target.end(), context.begin() + static_cast<std::ptrdiff_t>(s),
                  context.begin() + static_cast<std::ptrdiff_t>(e));
  }
  target.push_back(vocab::kDone);
  TokenSeq context_block{vocab::kContext};
  context_block.insert(context_block.end(), context.begin(), context.end());
  TransformedSample out;
  const TokenSeq& first = placement == ContextPlacement::Before ? query_block : context_block;
  const TokenSeq& second = placement == ContextPlacement::Before ? context_block : query_block;
  out.input_ids = first;
  out.input_ids.insert(out.input_ids.end(), second.begin(), second.end());
  out.target_ids = std::move(target);
  out.prefix_len = out.input_ids.size();
  return out;
}

}  // namespace apply

// ---------------------------------------------------------------------------
// Random transforms.

inline TransformedSample next_token(std::span<const TokenId> seq, const ObjectiveConfig&, Rng&) {
  return apply::next_token(seq);
}

inline TransformedSample prefix_lm(std::span<const TokenId> seq, const ObjectiveConfig&, Rng& rng) {
  if (seq.size() < 4) throw Error("prefix_lm needs at least 4 tokens");
  return apply::prefix_lm(seq, plan::prefix_split(seq.size(), rng));
}

inline TransformedSample span_corrupt(std::span<const TokenId> seq, const ObjectiveConfig& cfg, Rng& rng) {
  const auto spans = plan::corruption_spans(seq.size(), cfg.mask_fraction.value(), cfg.mean_span.value(), rng);
  return apply::span_corrupt(seq, spans);
}

inline TransformedSample copy(std::span<const TokenId> seq, const ObjectiveConfig&, Rng&) { return apply::copy(seq); }

inline TransformedSample deshuffle(std::span<const TokenId> seq, const ObjectiveConfig& cfg, Rng& rng) {
  if (seq.size() < 2) throw Error("deshuffle needs at least 2 tokens");
  return apply::deshuffle(seq, plan::shuffle(seq.size(), cfg.shuffle_fraction.value(), rng));
}

inline TransformedSample autoencode(std::span<const TokenId> seq, const ObjectiveConfig& cfg, Rng& rng) {
  const auto spans = plan::corruption_spans(seq.size(), cfg.mask_fraction.value(), cfg.mean_span.value(), rng);
  std::vector<std::size_t> order;
  if (cfg.shuffle_unmasked.value_or(false)) {
    order.resize(apply::masked_units(seq, spans).size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(std::span(order));
  }
  return apply::autoencode(seq, spans, order);
}

inline TransformedSample selective_copy(std::span<const TokenId> seq, const ObjectiveConfig& cfg, Rng& rng) {
  const auto queries = plan::copy_queries(seq.size(), cfg.num_spans.value(), rng);
  return apply::selective_copy(seq, queries, cfg.placement.value());
}

inline TransformedSample transform(std::span<const TokenId> seq, const ObjectiveConfig& cfg, Rng& rng) {
  switch (cfg.cls) {
    case ObjectiveClass::NextToken: return next_token(seq, cfg, rng);
    case ObjectiveClass::PrefixLM: return prefix_lm(seq, cfg, rng);
    case ObjectiveClass::Infilling: return span_corrupt(seq, cfg, rng);
    case ObjectiveClass::Copying: return copy(seq, cfg, rng);
    case ObjectiveClass::Deshuffling: return deshuffle(seq, cfg, rng);
    case ObjectiveClass::Autoencoding: return autoencode(seq, cfg, rng);
    case ObjectiveClass::SelectiveCopying: return selective_copy(seq, cfg, rng);
  }
  throw Error("unreachable objective class");
}

// Adds the class's paradigm token to the context, in front or at the end
// with equal probability. Causal samples have no context and are returned
// unchanged.
inline TransformedSample apply_paradigm(TransformedSample s, ObjectiveClass cls, Rng& rng) {
  if (s.prefix_len == 0) return s;
  const TokenId tok = vocab::paradigm(cls);
  const auto at = rng.bernoulli(0.5) ? s.input_ids.begin() : s.input_ids.begin() + static_cast<std::ptrdiff_t>(s.prefix_len);
  s.input_ids.insert(at, tok);
  ++s.prefix_len;
  return s;
}

// ---------------------------------------------------------------------------
// Mixtures.

struct WeightedConfig {
  ObjectiveConfig config;
  double weight = 1.0;
};

// Categorical sampler over configs.
class MixtureSampler {
 public:
  explicit MixtureSampler(std::vector<double> weights) : weights_(std::move(weights)) {
    if (weights_.empty()) throw Error("mixture needs at least one weight");
    double total = 0.0;
    for (const double w : weights_) {
      if (!(w >= 0.0) || !std::isfinite(w)) throw Error("mixture weights must be finite and nonnegative");
      total += w;
    }
    if (total <= 0.0) throw Error("mixture weights sum to zero");
    cumulative_.reserve(weights_.size());
    double acc = 0.0;
    for (double& w : weights_) {
      w /= total;
      acc += w;
      cumulative_.push_back(acc);
    }
  }

  std::size_t sample(Rng& rng) const {
    const double u = rng.uniform();
    const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    std::size_t i = static_cast<std::size_t>(it - cumulative_.begin());
    if (i >= weights_.size()) i = weights_.size() - 1;
    // Skip zero-weight entries that rounding could land on.
    while (weights_[i] == 0.0 && i > 0) --i;
    return i;
  }

  std::span<const double> probabilities() const { return weights_; }
  std::size_t size() const { return weights_.size(); }

 private:
  std::vector<double> weights_;
  std::vector<double> cumulative_;
};

inline ObjectiveConfig make_infilling(std::pair<int, int> len, double mask, double span) {
  ObjectiveConfig c;
  c.cls = ObjectiveClass::Infilling;
  c.length_range = len;
  c.mask_fraction = mask;
  c.mean_span = span;
  return c;
}

inline ObjectiveConfig make_autoencoding(std::pair<int, int> len, double mask, double span, bool shuffled) {
  ObjectiveConfig c = make_infilling(len, mask, span);
  c.cls = ObjectiveClass::Autoencoding;
  c.shuffle_unmasked = shuffled;
  return c;
}

inline ObjectiveConfig make_deshuffling(std::pair<int, int> len, double fraction) {
  ObjectiveConfig c;
  c.cls = ObjectiveClass::Deshuffling;
  c.length_range = len;
  c.shuffle_fraction = fraction;
  return c;
}

inline ObjectiveConfig make_selective_copying(std::pair<int, int> len, int spans, ContextPlacement p) {
  ObjectiveConfig c;
  c.cls = ObjectiveClass::SelectiveCopying;
  c.length_range = len;
  c.num_spans = spans;
  c.placement = p;
  return c;
}

inline ObjectiveConfig make_simple(ObjectiveClass cls, std::pair<int, int> len) {
  ObjectiveConfig c;
  c.cls = cls;
  c.length_range = len;
  return c;
}

// UL2 mixture-of-denoisers: R (span 3/8 at 15%), X (3/8 at 50%, 64 at 15%
// and 50%), S (prefix LM). Uniform weights.
inline std::vector<WeightedConfig> ul2_mixture(std::pair<int, int> len = {128, 256}) {
  const std::pair<double, double> denoisers[] = {{3, 0.15}, {8, 0.15}, {3, 0.5}, {8, 0.5}, {64, 0.15}, {64, 0.5}};
  std::vector<WeightedConfig> out;
  for (const auto& [span, mask] : denoisers) out.push_back({make_infilling(len, mask, span), 1.0 / 7.0});
  out.push_back({make_simple(ObjectiveClass::PrefixLM, len), 1.0 / 7.0});
  return out;
}

// Full configuration grid of the objective controls at pre-training scale
// (96 configurations).
inline std::vector<ObjectiveConfig> paper_grid() {
  std::vector<ObjectiveConfig> g;
  const std::pair<int, int> infill_len[] = {{128, 256}, {256, 512}, {512, 1024}, {1024, 2048}};
  for (const auto& len : infill_len)
    for (const double mask : {0.05, 0.15, 0.5})
      for (const double span : {3.0, 8.0, 32.0}) g.push_back(make_infilling(len, mask, span));
  g.push_back(make_simple(ObjectiveClass::NextToken, {1024, 2048}));
  g.push_back(make_simple(ObjectiveClass::PrefixLM, {1024, 2048}));
  for (const int spans : {1, 2, 3, 4})
    for (const auto p : {ContextPlacement::Before, ContextPlacement::After})
      for (const auto& len : {std::pair{384, 768}, std::pair{768, 1536}}) g.push_back(make_selective_copying(len, spans, p));
  g.push_back(make_simple(ObjectiveClass::Copying, {64, 256}));
  g.push_back(make_simple(ObjectiveClass::Copying, {256, 2014}));
  for (const auto& len : {std::pair{128, 256}, std::pair{512, 1024}})
    for (const double f : {0.5, 1.0}) g.push_back(make_deshuffling(len, f));
  for (const auto& len : {std::pair{192, 384}, std::pair{384, 768}, std::pair{768, 1536}})
    for (const double mask : {0.15, 0.85})
      for (const double span : {3.0, 8.0, 32.0})
        for (const bool shuf : {false, true}) g.push_back(make_autoencoding(len, mask, span, shuf));
  return g;
}

// Reduced grid for desk-scale byte-level runs: every class is represented,
// lengths fit a 512-token packing window.
inline std::vector<ObjectiveConfig> desk_grid() {
  std::vector<ObjectiveConfig> g;
  for (const auto& len : {std::pair{32, 64}, std::pair{64, 128}})
    for (const double mask : {0.15, 0.5}) g.push_back(make_infilling(len, mask, mask < 0.3 ? 3.0 : 8.0));
  g.push_back(make_simple(ObjectiveClass::NextToken, {128, 256}));
  g.push_back(make_simple(ObjectiveClass::PrefixLM, {128, 256}));
  for (const int spans : {1, 2})
    for (const auto p : {ContextPlacement::Before, ContextPlacement::After})
      g.push_back(make_selective_copying({96, 256}, spans, p));
  g.push_back(make_simple(ObjectiveClass::Copying, {8, 32}));
  g.push_back(make_simple(ObjectiveClass::Copying, {32, 64}));
  g.push_back(make_deshuffling({16, 48}, 0.5));
  g.push_back(make_deshuffling({16, 48}, 1.0));
  for (const double mask : {0.15, 0.85})
    for (const bool shuf : {false, true}) g.push_back(make_autoencoding({32, 64}, mask, 3.0, shuf));
  return g;
}

// Inverse of ObjectiveConfig::name(), e.g. "infilling/len32-64/mask0.15/span3".
inline ObjectiveConfig parse_objective(const std::string& name) {
  std::vector<std::string> parts;
  std::stringstream ss(name);
  for (std::string p; std::getline(ss, p, '/');) parts.push_back(p);
  if (parts.size() < 2) throw Error("objective name '" + name + "' needs at least class/lenMIN-MAX");
  ObjectiveConfig c;
  c.cls = parse_class(parts[0]);
  const auto num = [&](const std::string& v) {
    try {
      std::size_t pos = 0;
      const double d = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      throw Error("objective name '" + name + "': bad number '" + v + "'");
    }
  };
  const std::string& len = parts[1];
  const auto dash = len.find('-');
  if (len.rfind("len", 0) != 0 || dash == std::string::npos) throw Error("objective name '" + name + "': expected lenMIN-MAX");
  c.length_range = {static_cast<int>(num(len.substr(3, dash - 3))), static_cast<int>(num(len.substr(dash + 1)))};
  for (std::size_t i = 2; i < parts.size(); ++i) {
    const std::string& p = parts[i];
    if (p.rfind("mask", 0) == 0) c.mask_fraction = num(p.substr(4));
    else if (p.rfind("spans", 0) == 0) c.num_spans = static_cast<int>(num(p.substr(5)));
    else if (p.rfind("span", 0) == 0) c.mean_span = num(p.substr(4));
    else if (p.rfind("shuffle", 0) == 0 && p != "shuffled") c.shuffle_fraction = num(p.substr(7));
    else if (p == "query-first") c.placement = ContextPlacement::Before;
    else if (p == "context-first") c.placement = ContextPlacement::After;
    else if (p == "shuffled") c.shuffle_unmasked = true;
    else if (p == "ordered") c.shuffle_unmasked = false;
    else throw Error("objective name '" + name + "': unknown knob '" + p + "'");
  }
  c.validate();
  return c;
}

// Finds a config by its name().
inline std::size_t find_config(std::span<const ObjectiveConfig> grid, const std::string& name) {
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid[i].name() == name) return i;
  }
  std::string known;
  for (const auto& c : grid) known += "\n  " + c.name();
  throw Error("unknown objective config '" + name + "'; known configs:" + known);
}

}  // namespace birdie
