#include <gtest/gtest.h>

#include "birdie/packing.hpp"
#include "birdie/rng.hpp"
#include "birdie/scan.hpp"

using namespace birdie;

namespace {

struct Instance {
  std::size_t L = 0, N = 0;
  std::vector<double> a, b;
  std::vector<std::uint8_t> reset;
  ScanInputs<double> in() const { return {a, b, reset, L, N}; }
};

Instance random_instance(Rng& rng, std::size_t L, std::size_t N, bool resets) {
  Instance x;
  x.L = L;
  x.N = N;
  x.a.resize(L * N);
  x.b.resize(L * N);
  for (auto& v : x.a) v = rng.uniform();
  for (auto& v : x.b) v = rng.normal();
  if (resets) {
    x.reset.assign(L, kContinue);
    for (std::size_t t = 0; t < L; ++t) {
      const double u = rng.uniform();
      x.reset[t] = u < 0.05 ? kNewSample : u < 0.4 ? kCausal : kContinue;
    }
  }
  return x;
}

// Extended-precision evaluation written directly from the definition:
// forward gates are cut at new samples; reverse gates are cut in the causal
// region and just before a new sample or a causal position.
std::vector<long double> oracle(const Instance& x, bool reverse) {
  std::vector<long double> h(x.L * x.N, 0.0L);
  const auto code = [&](std::size_t t) { return x.reset.empty() ? static_cast<std::uint8_t>(kContinue) : x.reset[t]; };
  for (std::size_t j = 0; j < x.N; ++j) {
    long double s = 0;
    for (std::size_t k = 0; k < x.L; ++k) {
      const std::size_t t = reverse ? x.L - 1 - k : k;
      bool cut;
      if (!reverse) cut = code(t) == kNewSample;
      else cut = code(t) == kCausal || (t + 1 < x.L && code(t + 1) != kContinue);
      const long double gate = cut ? 0.0L : static_cast<long double>(x.a[t * x.N + j]);
      s = gate * s + static_cast<long double>(x.b[t * x.N + j]);
      h[t * x.N + j] = s;
    }
  }
  return h;
}

double max_diff(const std::vector<double>& u, const std::vector<long double>& v) {
  long double m = 0;
  for (std::size_t i = 0; i < u.size(); ++i) m = std::max(m, std::abs(static_cast<long double>(u[i]) - v[i]));
  return static_cast<double>(m);
}

double max_diff(const std::vector<double>& u, const std::vector<double>& v) {
  double m = 0;
  for (std::size_t i = 0; i < u.size(); ++i) m = std::max(m, std::abs(u[i] - v[i]));
  return m;
}

}  // namespace

TEST(Scan, ZeroGateIsMemoryless) {
  Rng rng(1);
  Instance x = random_instance(rng, 32, 4, false);
  std::fill(x.a.begin(), x.a.end(), 0.0);
  EXPECT_EQ(scan_seq_forward(x.in()), x.b);
  EXPECT_EQ(scan_seq_reverse(x.in()), x.b);
}

TEST(Scan, UnitGateIntegrates) {
  Rng rng(2);
  Instance x = random_instance(rng, 50, 3, false);
  std::fill(x.a.begin(), x.a.end(), 1.0);
  const auto h = scan_seq_forward(x.in());
  for (std::size_t j = 0; j < 3; ++j) {
    double s = 0;
    for (std::size_t t = 0; t < 50; ++t) {
      s += x.b[t * 3 + j];
      EXPECT_NEAR(h[t * 3 + j], s, 1e-12);
    }
  }
}

TEST(Scan, SequentialMatchesExtendedPrecision) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Instance x = random_instance(rng, 64, 8, trial % 2 == 1);
    EXPECT_LT(max_diff(scan_seq_forward(x.in()), oracle(x, false)), 1e-12);
    EXPECT_LT(max_diff(scan_seq_reverse(x.in()), oracle(x, true)), 1e-12);
  }
}

TEST(Scan, ReverseOfReversedIsForward) {
  Rng rng(4);
  const Instance x = random_instance(rng, 40, 5, false);
  Instance r = x;
  for (std::size_t t = 0; t < x.L; ++t) {
    for (std::size_t j = 0; j < x.N; ++j) {
      r.a[t * x.N + j] = x.a[(x.L - 1 - t) * x.N + j];
      r.b[t * x.N + j] = x.b[(x.L - 1 - t) * x.N + j];
    }
  }
  const auto f = scan_seq_forward(x.in());
  const auto rv = scan_seq_reverse(r.in());
  for (std::size_t t = 0; t < x.L; ++t)
    for (std::size_t j = 0; j < x.N; ++j) EXPECT_DOUBLE_EQ(rv[t * x.N + j], f[(x.L - 1 - t) * x.N + j]);
}

TEST(Scan, AllCausalReverseIsDrive) {
  Rng rng(5);
  Instance x = random_instance(rng, 30, 4, false);
  x.reset.assign(30, kCausal);
  EXPECT_EQ(scan_seq_reverse(x.in()), x.b);
}

TEST(Scan, ParallelSingleStep) {
  Rng rng(6);
  const Instance x = random_instance(rng, 1, 7, false);
  EXPECT_EQ(scan_parallel(x.in(), Direction::Forward), x.b);
  EXPECT_EQ(scan_parallel(x.in(), Direction::Reverse), x.b);
}

TEST(Scan, ParallelMatchesSequential) {
  Rng rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t L = static_cast<std::size_t>(rng.uniform_int(1, 1024));
    const std::size_t N = static_cast<std::size_t>(rng.uniform_int(1, 16));
    const Instance x = random_instance(rng, L, N, trial % 3 != 0);
    for (const std::size_t chunk : {std::size_t{1}, std::size_t{7}, kDefaultScanChunk}) {
      for (const std::size_t workers : {std::size_t{1}, std::size_t{3}}) {
        EXPECT_LT(max_diff(scan_parallel(x.in(), Direction::Forward, {chunk, workers}), scan_seq_forward(x.in())), 1e-10);
        EXPECT_LT(max_diff(scan_parallel(x.in(), Direction::Reverse, {chunk, workers}), scan_seq_reverse(x.in())), 1e-10);
      }
    }
  }
}

TEST(Scan, ParallelIsIndependentOfWorkerCount) {
  Rng rng(8);
  const Instance x = random_instance(rng, 2000, 8, true);
  const auto one = scan_parallel(x.in(), Direction::Forward, {128, 1});
  const auto four = scan_parallel(x.in(), Direction::Forward, {128, 4});
  EXPECT_EQ(one, four);
}

TEST(Scan, PackedSegmentsMatchUnpackedScans) {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<TrainingSample> samples;
    for (int s = 0; s < 3; ++s) {
      const auto m = static_cast<std::size_t>(rng.uniform_int(1, 20));
      const auto n = static_cast<std::size_t>(rng.uniform_int(1, 20));
      samples.push_back(build_teacher_forced(TokenSeq(m, 100), TokenSeq(n, 101)));
    }
    const PackedBatch p = pack(samples, 128).at(0);
    const std::size_t N = 6;
    Instance packed = random_instance(rng, p.size(), N, false);
    packed.reset = p.reset_mask;
    const auto fwd = scan_parallel(packed.in(), Direction::Forward);
    const auto bid = scan_bidirectional(packed.in());
    for (std::size_t seg = 0; seg < samples.size(); ++seg) {
      const std::size_t start = static_cast<std::size_t>(std::find(p.segment_ids.begin(), p.segment_ids.end(), static_cast<std::int32_t>(seg)) - p.segment_ids.begin());
      const std::size_t len = samples[p.sources[seg]].size();
      Instance alone;
      alone.L = len;
      alone.N = N;
      alone.a.assign(packed.a.begin() + static_cast<std::ptrdiff_t>(start * N), packed.a.begin() + static_cast<std::ptrdiff_t>((start + len) * N));
      alone.b.assign(packed.b.begin() + static_cast<std::ptrdiff_t>(start * N), packed.b.begin() + static_cast<std::ptrdiff_t>((start + len) * N));
      alone.reset.assign(p.reset_mask.begin() + static_cast<std::ptrdiff_t>(start), p.reset_mask.begin() + static_cast<std::ptrdiff_t>(start + len));
      const auto f1 = scan_seq_forward(alone.in());
      const auto b1 = scan_bidirectional(alone.in());
      for (std::size_t i = 0; i < len * N; ++i) {
        EXPECT_EQ(fwd[start * N + i], f1[i]);
        EXPECT_EQ(bid[start * N + i], b1[i]);
      }
    }
  }
}

TEST(Scan, BidirectionalNeedsEvenWidth) {
  Rng rng(10);
  const Instance x = random_instance(rng, 8, 3, false);
  EXPECT_THROW(scan_bidirectional(x.in()), Error);
}

TEST(Scan, NaNRejected) {
  Rng rng(11);
  Instance x = random_instance(rng, 8, 2, false);
  x.b[5] = std::nan("");
  EXPECT_THROW(scan_seq_forward(x.in()), Error);
  EXPECT_THROW(scan_parallel(x.in(), Direction::Forward), Error);
}

TEST(Scan, BidirectionalHalves) {
  Rng rng(12);
  Instance x = random_instance(rng, 20, 6, false);
  x.reset.assign(20, kCausal);
  x.reset[0] = kNewSample;
  const auto h = scan_bidirectional(x.in());
  // all causal after position 0: the reverse half carries nothing backwards
  for (std::size_t t = 0; t < 20; ++t)
    for (std::size_t j = 3; j < 6; ++j) EXPECT_EQ(h[t * 6 + j], x.b[t * 6 + j]);
}

TEST(Scan, SuffixCausalityAndPrefixBidirectionality) {
  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t L = 40, N = 8, prefix = 15;
    Instance x = random_instance(rng, L, N, false);
    x.reset.assign(L, kContinue);
    x.reset[0] = kNewSample;
    for (std::size_t t = prefix; t < L; ++t) x.reset[t] = kCausal;
    const auto base = scan_bidirectional(x.in());

    // perturb a suffix position j: nothing before j moves
    const std::size_t j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(prefix), L - 1));
    Instance y = x;
    for (std::size_t c = 0; c < N; ++c) y.b[j * N + c] += 1.0;
    const auto pert = scan_bidirectional(y.in());
    for (std::size_t i = 0; i < j * N; ++i) EXPECT_EQ(pert[i], base[i]);

    // perturb a prefix position k > 0: some reverse state before k moves
    const std::size_t k = static_cast<std::size_t>(rng.uniform_int(1, prefix - 1));
    Instance z = x;
    for (std::size_t c = 0; c < N; ++c) z.b[k * N + c] += 1.0;
    const auto pz = scan_bidirectional(z.in());
    bool changed = false;
    for (std::size_t t = 0; t < k; ++t)
      for (std::size_t c = N / 2; c < N; ++c) changed |= pz[t * N + c] != base[t * N + c];
    EXPECT_TRUE(changed);
  }
}

TEST(Scan, FloatWithinDocumentedTolerance) {
  Rng rng(14);
  const Instance x = random_instance(rng, 512, 8, true);
  std::vector<float> af(x.a.begin(), x.a.end()), bf(x.b.begin(), x.b.end());
  const ScanInputs<float> in{af, bf, x.reset, x.L, x.N};
  const auto hf = scan_parallel(in, Direction::Forward);
  const auto hd = scan_seq_forward(x.in());
  for (std::size_t i = 0; i < hd.size(); ++i) EXPECT_NEAR(hf[i], hd[i], 1e-5 * std::max(1.0, std::abs(hd[i])));
}
