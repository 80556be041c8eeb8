#pragma once

// Diagonal linear recurrences h_t = a_t * h_{t-1} + b_t over an L x N
// row-major block, with reset-mask handling and the split-state
// bidirectional layout.
//
// Reset rules (r = reset_mask[t]):
//   forward direction: gate a_t is zeroed where r == 1 (new sample).
//   reverse direction: gate a_t is zeroed where r == 2 (causal region) and
//   where reset_mask[t+1] == 1 (last position of a sample), so reverse state
//   never crosses into the previous sample.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "birdie/error.hpp"
#include "birdie/packing.hpp"

namespace birdie {

enum class Direction : std::uint8_t { Forward, Reverse };

inline constexpr std::size_t kDefaultScanChunk = 128;

template <class T>
struct ScanInputs {
  std::span<const T> a;  // L x N gates
  std::span<const T> b;  // L x N drives
  std::span<const std::uint8_t> reset_mask;  // L, values in {0,1,2}; empty = no resets
  std::size_t length = 0;
  std::size_t width = 0;

  void validate(bool bidirectional = false) const {
    const std::size_t n = length * width;
    if (a.size() != n || b.size() != n) throw Error("scan: gate/drive sizes do not match L x N");
    if (!reset_mask.empty() && reset_mask.size() != length) throw Error("scan: reset_mask length != L");
    for (const std::uint8_t r : reset_mask) {
      if (r > 2) throw Error("scan: reset_mask values must be 0, 1 or 2");
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(a[i]) || !std::isfinite(b[i])) throw Error("scan: NaN or infinite input at flat index " + std::to_string(i));
    }
    if (bidirectional && width % 2 != 0) throw Error("scan: bidirectional scan needs an even state width");
  }
};

// Associative element of the recurrence: the map h -> a*h + b.
template <class T>
struct Affine {
  T a;
  T b;
};

// Apply `first`, then `second`.
template <class T>
constexpr Affine<T> combine(const Affine<T>& first, const Affine<T>& second) {
  return {first.a * second.a, second.a * first.b + second.b};
}

// Whether the gate at step t is forced to zero. The reverse gate at t
// carries state from t + 1, so it is cut when t + 1 starts a sample or lies
// in the causal region (and inside the causal region itself).
inline bool gate_blocked(std::span<const std::uint8_t> reset, std::size_t t, Direction dir) {
  if (reset.empty()) return false;
  if (dir == Direction::Forward) return reset[t] == kNewSample;
  return reset[t] == kCausal || (t + 1 < reset.size() && reset[t + 1] != kContinue);
}

namespace detail {

// Sequential scan over columns [c0, c1), writing out (L x N).
template <class T>
void scan_columns(std::span<const T> a, std::span<const T> b, std::span<const std::uint8_t> reset, std::size_t L,
                  std::size_t N, std::size_t c0, std::size_t c1, Direction dir, std::span<T> out) {
  if (L == 0 || c0 >= c1) return;
  const std::size_t w = c1 - c0;
  std::vector<T> h(w, T(0));
  for (std::size_t step = 0; step < L; ++step) {
    const std::size_t t = dir == Direction::Forward ? step : L - 1 - step;
    const T* at = a.data() + t * N + c0;
    const T* bt = b.data() + t * N + c0;
    T* ot = out.data() + t * N + c0;
    if (gate_blocked(reset, t, dir)) {
      for (std::size_t j = 0; j < w; ++j) h[j] = bt[j];
    } else {
      for (std::size_t j = 0; j < w; ++j) h[j] = at[j] * h[j] + bt[j];
    }
    std::copy(h.begin(), h.end(), ot);
  }
}

// Chunked three-phase scan: local scans per chunk, a sequential carry pass
// over chunk summaries, then a fix-up. Phases 1 and 3 are independent per
// chunk and may run on worker threads; results do not depend on the worker
// count.
template <class T>
void scan_columns_chunked(std::span<const T> a, std::span<const T> b, std::span<const std::uint8_t> reset,
                          std::size_t L, std::size_t N, std::size_t c0, std::size_t c1, Direction dir,
                          std::span<T> out, std::size_t chunk, std::size_t workers) {
  if (L == 0 || c0 >= c1) return;
  if (chunk == 0) throw Error("scan: chunk size must be positive");
  const std::size_t w = c1 - c0;
  const std::size_t num_chunks = (L + chunk - 1) / chunk;
  // prod[t] = product of effective gates from the chunk start through t.
  std::vector<T> prod(L * w);
  std::vector<Affine<T>> summary(num_chunks * w);

  const auto row = [&](std::size_t step) { return dir == Direction::Forward ? step : L - 1 - step; };

  const auto local = [&](std::size_t c) {
    const std::size_t s0 = c * chunk, s1 = std::min(L, s0 + chunk);
    std::vector<Affine<T>> acc(w, Affine<T>{T(1), T(0)});
    for (std::size_t step = s0; step < s1; ++step) {
      const std::size_t t = row(step);
      const bool blocked = gate_blocked(reset, t, dir);
      for (std::size_t j = 0; j < w; ++j) {
        const Affine<T> e{blocked ? T(0) : a[t * N + c0 + j], b[t * N + c0 + j]};
        acc[j] = combine(acc[j], e);
        out[t * N + c0 + j] = acc[j].b;
        prod[t * w + j] = acc[j].a;
      }
    }
    for (std::size_t j = 0; j < w; ++j) summary[c * w + j] = acc[j];
  };

  const auto fixup = [&](std::size_t c, std::span<const T> carry) {
    const std::size_t s0 = c * chunk, s1 = std::min(L, s0 + chunk);
    for (std::size_t step = s0; step < s1; ++step) {
      const std::size_t t = row(step);
      for (std::size_t j = 0; j < w; ++j) out[t * N + c0 + j] += prod[t * w + j] * carry[j];
    }
  };

  const auto run = [&](auto&& fn) {
    const std::size_t nw = std::max<std::size_t>(1, std::min(workers, num_chunks));
    if (nw == 1) {
      for (std::size_t c = 0; c < num_chunks; ++c) fn(c);
      return;
    }
    std::vector<std::thread> pool;
    pool.reserve(nw);
    for (std::size_t k = 0; k < nw; ++k) {
      pool.emplace_back([&, k] {
        for (std::size_t c = k; c < num_chunks; c += nw) fn(c);
      });
    }
    for (auto& th : pool) th.join();
  };

  run(local);

  // carries[c] = state entering chunk c.
  std::vector<T> carries(num_chunks * w, T(0));
  for (std::size_t c = 1; c < num_chunks; ++c) {
    for (std::size_t j = 0; j < w; ++j) {
      const Affine<T> entering{T(0), carries[(c - 1) * w + j]};
      carries[c * w + j] = combine(entering, summary[(c - 1) * w + j]).b;
    }
  }
  run([&](std::size_t c) {
    if (c > 0) fixup(c, std::span<const T>(carries.data() + c * w, w));
  });
}

}  // namespace detail

template <class T>
std::vector<T> scan_seq_forward(const ScanInputs<T>& in) {
  in.validate();
  std::vector<T> out(in.length * in.width);
  detail::scan_columns<T>(in.a, in.b, in.reset_mask, in.length, in.width, 0, in.width, Direction::Forward, out);
  return out;
}

template <class T>
std::vector<T> scan_seq_reverse(const ScanInputs<T>& in) {
  in.validate();
  std::vector<T> out(in.length * in.width);
  detail::scan_columns<T>(in.a, in.b, in.reset_mask, in.length, in.width, 0, in.width, Direction::Reverse, out);
  return out;
}

struct ParallelScanOptions {
  std::size_t chunk = kDefaultScanChunk;
  std::size_t workers = 1;
};

template <class T>
std::vector<T> scan_parallel(const ScanInputs<T>& in, Direction dir, ParallelScanOptions opt = {}) {
  in.validate();
  std::vector<T> out(in.length * in.width);
  detail::scan_columns_chunked<T>(in.a, in.b, in.reset_mask, in.length, in.width, 0, in.width, dir, out, opt.chunk,
                                  opt.workers);
  return out;
}

// Forward half [0, N/2) runs forward over the whole sequence, reverse half
// [N/2, N) runs backwards with its gates zeroed in the causal region.
template <class T>
void scan_bidirectional_into(std::span<const T> a, std::span<const T> b, std::span<const std::uint8_t> reset,
                             std::size_t L, std::size_t N, std::span<T> out) {
  if (N % 2 != 0) throw Error("scan: bidirectional scan needs an even state width");
  detail::scan_columns<T>(a, b, reset, L, N, 0, N / 2, Direction::Forward, out);
  detail::scan_columns<T>(a, b, reset, L, N, N / 2, N, Direction::Reverse, out);
}

template <class T>
std::vector<T> scan_bidirectional(const ScanInputs<T>& in) {
  in.validate(true);
  std::vector<T> out(in.length * in.width);
  scan_bidirectional_into<T>(in.a, in.b, in.reset_mask, in.length, in.width, out);
  return out;
}

// Gradient of a scan over columns [c0, c1) in direction dir. Given the
// states h it produced and dL/dh, accumulates dL/da and dL/db (both L x N,
// overwritten on those columns).
template <class T>
void scan_backward_columns(std::span<const T> a, std::span<const std::uint8_t> reset, std::span<const T> h,
                           std::span<const T> dh, std::size_t L, std::size_t N, std::size_t c0, std::size_t c1,
                           Direction dir, std::span<T> da, std::span<T> db) {
  if (L == 0 || c0 >= c1) return;
  const std::size_t w = c1 - c0;
  std::vector<T> g(w, T(0));
  // Walk against the scan direction. "prev" is the step that fed state into t.
  for (std::size_t step = 0; step < L; ++step) {
    const std::size_t t = dir == Direction::Forward ? L - 1 - step : step;
    const bool has_next = dir == Direction::Forward ? t + 1 < L : t > 0;
    const std::size_t next = dir == Direction::Forward ? t + 1 : t - 1;
    const bool next_blocked = has_next && gate_blocked(reset, next, dir);
    for (std::size_t j = 0; j < w; ++j) {
      const std::size_t i = t * N + c0 + j;
      const T carry = (has_next && !next_blocked) ? a[next * N + c0 + j] * g[j] : T(0);
      g[j] = dh[i] + carry;
      db[i] = g[j];
    }
    const bool has_prev = dir == Direction::Forward ? t > 0 : t + 1 < L;
    const std::size_t prev = dir == Direction::Forward ? t - 1 : t + 1;
    const bool blocked = gate_blocked(reset, t, dir);
    for (std::size_t j = 0; j < w; ++j) {
      const std::size_t i = t * N + c0 + j;
      da[i] = (blocked || !has_prev) ? T(0) : g[j] * h[prev * N + c0 + j];
    }
  }
}

// Scan used inside model layers: bidirectional split or a plain forward scan.
template <class T>
void scan_layer(std::span<const T> a, std::span<const T> b, std::span<const std::uint8_t> reset, std::size_t L,
                std::size_t N, bool bidirectional, std::span<T> out) {
  if (bidirectional) {
    scan_bidirectional_into<T>(a, b, reset, L, N, out);
  } else {
    detail::scan_columns<T>(a, b, reset, L, N, 0, N, Direction::Forward, out);
  }
}

template <class T>
void scan_layer_backward(std::span<const T> a, std::span<const std::uint8_t> reset, std::span<const T> h,
                         std::span<const T> dh, std::size_t L, std::size_t N, bool bidirectional, std::span<T> da,
                         std::span<T> db) {
  if (bidirectional) {
    scan_backward_columns<T>(a, reset, h, dh, L, N, 0, N / 2, Direction::Forward, da, db);
    scan_backward_columns<T>(a, reset, h, dh, L, N, N / 2, N, Direction::Reverse, da, db);
  } else {
    scan_backward_columns<T>(a, reset, h, dh, L, N, 0, N, Direction::Forward, da, db);
  }
}

}  // namespace birdie
