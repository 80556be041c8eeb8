#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <numeric>

#include "birdie/curriculum.hpp"

using namespace birdie;
using MatD = nn::Mat<double>;

namespace {

// Written out from the definition in extended precision.
long double direct_reward(long double old_l, long double new_l, long double r = std::exp(1.0L)) {
  const long double dl = (old_l - new_l) / old_l;
  const long double s = std::sqrt(old_l * new_l);
  const long double raw = r * 100.0L * std::tanh(r * s * dl * dl * dl);
  return std::max(-1.0L, std::min(1.0L, raw));
}

RewardModelConfig small_model(std::size_t hidden = 32, std::size_t layers = 2) {
  RewardModelConfig c;
  c.hidden = hidden;
  c.num_layers = layers;
  return c;
}

// Predicts, for every config, the first action coordinate of the candidate.
struct FirstCoordinateStub final : RewardPredictor {
  std::size_t C;
  explicit FirstCoordinateStub(std::size_t c) : C(c) {}
  MatD predict(const MatD&, const MatD& cand) const override {
    MatD out = MatD::Zero(cand.rows(), static_cast<Eigen::Index>(C));
    out.col(0) = cand.col(static_cast<Eigen::Index>(C));
    return out;
  }
  bool trained() const override { return true; }
};

struct UntrainedStub final : RewardPredictor {
  MatD predict(const MatD&, const MatD& cand) const override { return MatD::Zero(cand.rows(), cand.cols() / 2); }
  bool trained() const override { return false; }
};

}  // namespace

TEST(Reward, EqualLossesGiveZero) {
  for (const double l : {0.1, 1.0, 4.5, 100.0}) EXPECT_EQ(reward(l, l), 0.0);
}

TEST(Reward, SimilarImprovementsGiveSimilarRewards) {
  const double a = reward(4.5, 4.2), b = reward(0.6, 0.5207);
  EXPECT_NEAR(a, static_cast<double>(direct_reward(4.5L, 4.2L)), 1e-12);
  EXPECT_NEAR(b, static_cast<double>(direct_reward(0.6L, 0.5207L)), 1e-12);
  EXPECT_NEAR(a, 0.952, 5e-4);
  EXPECT_NEAR(b, 0.954, 5e-4);
  EXPECT_LT(std::abs(a - b), 0.01);
}

TEST(Reward, ClippedAtExtremes) {
  EXPECT_GT(std::abs(reward_unclipped(10, 1)), 1.0);
  EXPECT_EQ(reward(10, 1), 1.0);
  EXPECT_EQ(reward(1, 10), -1.0);
}

TEST(Reward, PrintedSignPunishesImprovement) {
  RewardConfig printed;
  printed.sign = -1;
  EXPECT_LT(reward(4.5, 4.2, printed), 0);
  EXPECT_GT(reward(4.5, 4.2), 0);
}

TEST(Reward, OppositeDirectionsHaveOppositeSigns) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double a = rng.uniform(0.1, 10), b = rng.uniform(0.1, 10);
    if (a == b) continue;
    EXPECT_LT(reward(a, b) * reward(b, a), 0.0) << a << " " << b;
  }
}

TEST(Reward, MonotoneInImprovement) {
  for (const double old_l : {0.6, 2.0, 4.5}) {
    double prev = -2;
    for (int k = 0; k <= 400; ++k) {
      const double new_l = old_l * (1.5 - k / 400.0);
      if (new_l <= 0) break;
      const double r = reward(old_l, new_l);
      EXPECT_GE(r, prev);
      prev = r;
    }
  }
}

TEST(Reward, NonPositiveLossIsAnError) {
  EXPECT_THROW(reward(0, 1), Error);
  EXPECT_THROW(reward(1, -1), Error);
}

TEST(ClassMap, TotalRewardExamples) {
  const ClassMap one({0, 0, 0});
  const std::vector<double> half = {0.5, 0.5, 0.5};
  EXPECT_DOUBLE_EQ(one.total_reward(half), 0.5);
  const ClassMap two({0, 1, 1, 1});
  const std::vector<double> ones = {1, 1, 1, 1};
  EXPECT_DOUBLE_EQ(two.total_reward(ones), 2.0);
}

TEST(ClassMap, TotalRewardMatchesBruteForce) {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.index(20);
    std::vector<std::size_t> cls(n);
    for (auto& c : cls) c = rng.index(5);
    std::vector<double> r(n);
    for (auto& v : r) v = rng.uniform(-1, 1);
    std::map<std::size_t, std::vector<double>> groups;
    for (std::size_t i = 0; i < n; ++i) groups[cls[i]].push_back(r[i]);
    double expect = 0;
    for (const auto& [c, v] : groups) expect += std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    const ClassMap m(cls);
    EXPECT_NEAR(m.total_reward(r), expect, 1e-12);
    EXPECT_NEAR(m.class_mean(r), expect / static_cast<double>(groups.size()), 1e-12);
  }
}

TEST(ClassMap, DuplicatingAConfigKeepsItsClassContribution) {
  const ClassMap a({0, 1}), b({0, 1, 1}), c({0, 1, 1, 1, 1});
  const std::vector<double> ra = {0.3, -0.7}, rb = {0.3, -0.7, -0.7}, rc = {0.3, -0.7, -0.7, -0.7, -0.7};
  EXPECT_NEAR(a.total_reward(ra), b.total_reward(rb), 1e-15);
  EXPECT_NEAR(a.total_reward(ra), c.total_reward(rc), 1e-15);
}

TEST(Actions, ProposalsAreDistributions) {
  Rng rng(3);
  const MatD one = propose_actions(1, rng, 16);
  for (Eigen::Index i = 0; i < one.rows(); ++i) EXPECT_DOUBLE_EQ(one(i, 0), 1.0);
  const std::size_t C = 7;
  const MatD a = propose_actions(C, rng, 4096);
  ASSERT_EQ(a.rows(), 4096);
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    EXPECT_NEAR(a.row(i).sum(), 1.0, 1e-12);
    EXPECT_GE(a.row(i).minCoeff(), 0.0);
  }
  for (Eigen::Index j = 0; j < a.cols(); ++j) EXPECT_NEAR(a.col(j).mean(), 1.0 / C, 0.01);
  EXPECT_THROW(propose_actions(0, rng), Error);
}

TEST(Actions, SelectionMatchesBruteForce) {
  const std::size_t C = 5;
  const ClassMap classes({0, 1, 2, 3, 4});
  const FirstCoordinateStub stub(C);
  const std::vector<double> losses(C, 2.0);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng r1(seed), r2(seed);
    const Action got = select_action(stub, MatD(0, 2 * C), losses, classes, r1);
    const MatD cand = propose_actions(C, r2);
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(cand.rows()));
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](auto x, auto y) { return cand(x, 0) > cand(y, 0); });
    Action expect(C, 0.0);
    for (std::size_t k = 0; k < 8; ++k)
      for (std::size_t j = 0; j < C; ++j) expect[j] += cand(idx[k], static_cast<Eigen::Index>(j)) / 8.0;
    const double s = std::accumulate(expect.begin(), expect.end(), 0.0);
    for (std::size_t j = 0; j < C; ++j) EXPECT_NEAR(got[j], expect[j] / s, 1e-12);
    EXPECT_GT(got[0], 0.3);
  }
}

TEST(Actions, UntrainedPredictorFallsBackToUniform) {
  const ClassMap classes({0, 1, 1});
  Rng rng(4);
  const Action a = select_action(UntrainedStub{}, MatD(0, 6), std::vector<double>(3, 1.0), classes, rng);
  for (const double p : a) EXPECT_DOUBLE_EQ(p, 1.0 / 3.0);
  EXPECT_NO_THROW(validate_action(a));
}

TEST(Actions, UniformPredictionsGiveAValidDistribution) {
  const std::size_t C = 4;
  struct Flat final : RewardPredictor {
    MatD predict(const MatD&, const MatD& cand) const override { return MatD::Constant(cand.rows(), cand.cols() / 2, 0.1); }
    bool trained() const override { return true; }
  };
  Rng rng(5);
  const Action a = select_action(Flat{}, MatD(0, 2 * C), std::vector<double>(C, 1.0), ClassMap({0, 1, 2, 3}), rng);
  EXPECT_NO_THROW(validate_action(a));
}

TEST(RewardModel, FitsAConstant) {
  Rng rng(6);
  const std::size_t C = 4, T = 12;
  RewardModel m(C, small_model(), rng);
  MatD x(T, 2 * C), y = MatD::Constant(T, C, 0.2);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform();
  double loss = 0;
  for (int refit = 0; refit < 5; ++refit) loss = m.fit(x, y);
  EXPECT_LT(loss, 1e-3);
  EXPECT_EQ(m.fits(), 5u);
}

TEST(RewardModel, LearnsALinearEnvironment) {
  Rng rng(7);
  const std::size_t C = 3, T = 40;
  RewardModel m(C, small_model(), rng);
  const auto make = [&](MatD& x, MatD& y) {
    x.resize(T, 2 * C);
    y.resize(T, C);
    const MatD a = propose_actions(C, rng, T);
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(T); ++i) {
      for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(C); ++j) {
        x(i, j) = rng.uniform(1, 3);
        x(i, static_cast<Eigen::Index>(C) + j) = a(i, j);
        y(i, j) = 2.0 * (a(i, j) - 1.0 / C);
      }
    }
  };
  MatD x, y, hx, hy;
  make(x, y);
  make(hx, hy);
  for (int refit = 0; refit < 5; ++refit) m.fit(x, y);
  const double var = (hy.array() - hy.mean()).square().mean();
  EXPECT_LT(m.mse(hx, hy), var);
}

TEST(RewardModel, ZeroStepFitChangesNothing) {
  Rng rng(8);
  RewardModel m(3, small_model(), rng);
  MatD x(5, 6), y(5, 3);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform();
  y.setConstant(0.5);
  const MatD before = m.forward(x);
  m.fit(x, y, 0);
  EXPECT_EQ(m.forward(x), before);
  EXPECT_FALSE(m.trained());
}

TEST(RewardModel, ShapeMismatchIsAnError) {
  Rng rng(9);
  RewardModel m(3, small_model(), rng);
  EXPECT_THROW(m.fit(MatD::Zero(4, 5), MatD::Zero(4, 3)), Error);
  EXPECT_THROW(m.fit(MatD::Zero(0, 6), MatD::Zero(0, 3)), Error);
}

TEST(RewardModel, PredictContinuesTheHistory) {
  // Candidate predictions equal the last row of a full forward over
  // history ++ candidate.
  Rng rng(10);
  const std::size_t C = 3;
  RewardModel m(C, small_model(16, 2), rng);
  MatD hist(6, 2 * C), cand(4, 2 * C);
  for (Eigen::Index i = 0; i < hist.size(); ++i) hist.data()[i] = rng.uniform();
  for (Eigen::Index i = 0; i < cand.size(); ++i) cand.data()[i] = rng.uniform();
  MatD y = MatD::Constant(6, C, 0.1);
  m.fit(hist, y, 3);
  const MatD pred = m.predict(hist, cand);
  for (Eigen::Index k = 0; k < cand.rows(); ++k) {
    MatD full(7, 2 * C);
    full.topRows(6) = hist;
    full.row(6) = cand.row(k);
    const MatD out = m.forward(full);
    EXPECT_LT((out.row(6) - pred.row(k)).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Schedule, EvaluationSteps) {
  EXPECT_EQ(eval_steps(3200), (std::vector<std::size_t>{10, 50, 250, 500, 1000, 1500, 2000, 3000}));
  for (std::size_t s = 1; s <= 5000; ++s) {
    const auto e = eval_steps(5000);
    EXPECT_EQ(is_eval_step(s), std::find(e.begin(), e.end(), s) != e.end()) << s;
  }
}

TEST(Controller, WarmupIsUniformThenControllerOwnsAction) {
  ControllerConfig cfg;
  cfg.model = small_model(16, 2);
  cfg.num_candidates = 256;
  const ClassMap classes({0, 1, 2});
  Controller ctl(classes, cfg, 11);
  double l = 5;
  for (const std::size_t step : eval_steps(3000)) {
    std::vector<double> losses = {l, l * 1.1, l * 0.9};
    const TraceRow& row = ctl.observe(step, losses);
    if (step < kWarmupSteps) {
      for (const double p : row.action) EXPECT_DOUBLE_EQ(p, 1.0 / 3);
    } else {
      EXPECT_NO_THROW(validate_action(row.action));
    }
    l *= 0.97;
  }
  EXPECT_TRUE(ctl.reward_model().trained());
  EXPECT_EQ(ctl.trace().front().total_reward, 0.0);
}

TEST(Controller, StateRoundTripContinuesIdentically) {
  ControllerConfig cfg;
  cfg.model = small_model(16, 2);
  cfg.num_candidates = 128;
  const ClassMap classes({0, 0, 1});
  const auto losses_at = [](std::size_t step) {
    const double s = static_cast<double>(step);
    return std::vector<double>{4.0 / (1 + s / 500), 3.0 / (1 + s / 900), 5.0 / (1 + s / 300)};
  };
  const auto steps = eval_steps(6000);
  Controller a(classes, cfg, 12);
  Controller b(classes, cfg, 12);
  nlohmann::json saved;
  std::vector<MatD> tensors;
  for (const std::size_t s : steps) {
    a.observe(s, losses_at(s));
    if (s == 1500) {
      saved = a.state();
      for (auto* t : a.reward_model().state_tensors()) tensors.push_back(*t);
    }
  }
  b.load_state(nlohmann::json::parse(saved.dump()));
  const auto bt = b.reward_model().state_tensors();
  for (std::size_t k = 0; k < bt.size(); ++k) *bt[k] = tensors[k];
  for (const std::size_t s : steps)
    if (s > 1500) b.observe(s, losses_at(s));
  ASSERT_EQ(a.trace().size(), b.trace().size());
  for (std::size_t i = 0; i < a.trace().size(); ++i) EXPECT_EQ(a.trace()[i].to_json(), b.trace()[i].to_json());
}

TEST(Controller, TraceRowFormat) {
  TraceRow r;
  r.step = 10;
  r.action = {0.5, 0.5};
  r.losses = {1, 2};
  r.rewards = {0, 0};
  const auto j = r.to_json();
  for (const char* k : {"step", "action", "losses", "rewards", "total_reward"}) EXPECT_TRUE(j.contains(k)) << k;
  EXPECT_EQ(j.size(), 5u);
}

TEST(Simulator, IdentityTransferMovesOnlyTheChosenConfig) {
  SimDynamics d;
  const std::size_t C = 4;
  d.transfer.assign(C, std::vector<double>(C, 0.0));
  for (std::size_t i = 0; i < C; ++i) d.transfer[i][i] = 1.0;
  d.floor.assign(C, 0.5);
  d.initial.assign(C, 3.0);
  SimEnvironment env(d, 1);
  Action a(C, 0.0);
  a[2] = 1.0;
  for (int s = 0; s < 100; ++s) env.step(a);
  for (std::size_t i = 0; i < C; ++i) {
    if (i == 2) {
      EXPECT_LT(env.losses()[i], 3.0);
    } else {
      EXPECT_EQ(env.losses()[i], 3.0);
    }
  }
}

TEST(Simulator, ZeroTransferKeepsLossesConstant) {
  SimDynamics d;
  d.transfer.assign(3, std::vector<double>(3, 0.0));
  d.floor.assign(3, 0.5);
  d.initial = {2, 3, 4};
  SimEnvironment env(d, 2);
  for (int s = 0; s < 50; ++s) env.step(uniform_action(3));
  EXPECT_EQ(env.losses(), d.initial);
}

TEST(Simulator, EnumerationFindsTheDominantArm) {
  const ClassMap classes({0, 0, 1, 1, 2});
  for (std::size_t dom = 0; dom < 5; ++dom) {
    const SimDynamics d = dominant_arm_dynamics(5, dom);
    const auto finals = enumerate_one_hot(d, classes, 3000, 3);
    EXPECT_EQ(static_cast<std::size_t>(std::min_element(finals.begin(), finals.end()) - finals.begin()), dom);
  }
}

TEST(Simulator, InvalidDynamicsRejected) {
  SimDynamics d = dominant_arm_dynamics(3, 0);
  d.floor[1] = 10;
  EXPECT_THROW(d.validate(), Error);
  d = dominant_arm_dynamics(3, 0);
  d.transfer.pop_back();
  EXPECT_THROW(SimEnvironment(d, 1), Error);
}
