#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "birdie/error.hpp"
#include "birdie/layers.hpp"
#include "birdie/objectives.hpp"
#include "birdie/optim.hpp"
#include "birdie/rng.hpp"

namespace birdie {

using Action = std::vector<double>;

// ---------------------------------------------------------------------------
// Rewards.

struct RewardConfig {
  double sensitivity = std::numbers::e;
  // +1: loss reduction is rewarded. -1: the formula exactly as printed,
  // which punishes reduction.
  double sign = 1.0;
};

inline double reward_unclipped(double loss_old, double loss_new, const RewardConfig& cfg = {}) {
  if (!(loss_old > 0) || !(loss_new > 0)) {
    throw Error("reward: losses must be positive (got " + std::to_string(loss_old) + ", " +
                std::to_string(loss_new) + ")");
  }
  const double dl = (loss_old - loss_new) / loss_old;
  const double s = std::sqrt(loss_old * loss_new);
  const double r = cfg.sensitivity;
  return cfg.sign * r * 100.0 * std::tanh(r * s * dl * dl * dl);
}

inline double reward(double loss_old, double loss_new, const RewardConfig& cfg = {}) {
  return std::clamp(reward_unclipped(loss_old, loss_new, cfg), -1.0, 1.0);
}

inline std::vector<double> rewards(std::span<const double> old_losses, std::span<const double> new_losses,
                                   const RewardConfig& cfg = {}) {
  if (old_losses.size() != new_losses.size()) throw Error("rewards: loss vectors differ in length");
  std::vector<double> out(old_losses.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = reward(old_losses[i], new_losses[i], cfg);
  return out;
}

// Config index -> objective class, with 1/N_c scaling so every class counts
// once in the total reward.
class ClassMap {
 public:
  ClassMap() = default;
  explicit ClassMap(std::vector<std::size_t> class_of) : class_of_(std::move(class_of)) {
    if (class_of_.empty()) throw Error("ClassMap: no configurations");
    std::size_t nc = 0;
    for (const auto c : class_of_) nc = std::max(nc, c + 1);
    counts_.assign(nc, 0);
    for (const auto c : class_of_) ++counts_[c];
    scaling_.resize(class_of_.size());
    for (std::size_t i = 0; i < class_of_.size(); ++i) scaling_[i] = 1.0 / static_cast<double>(counts_[class_of_[i]]);
  }

  static ClassMap from_configs(std::span<const ObjectiveConfig> grid) {
    std::vector<std::size_t> cls;
    for (const auto& c : grid) cls.push_back(static_cast<std::size_t>(c.cls));
    return ClassMap(cls);
  }

  std::size_t size() const { return class_of_.size(); }
  std::size_t class_of(std::size_t i) const { return class_of_.at(i); }
  const std::vector<double>& scaling() const { return scaling_; }
  // Classes that have at least one configuration.
  std::size_t num_classes() const {
    return static_cast<std::size_t>(std::count_if(counts_.begin(), counts_.end(), [](std::size_t n) { return n > 0; }));
  }

  double total_reward(std::span<const double> r) const {
    if (r.size() != size()) throw Error("total_reward: reward vector does not match the class map");
    double t = 0;
    for (std::size_t i = 0; i < r.size(); ++i) t += r[i] * scaling_[i];
    return t;
  }

  // Mean over classes of each class's mean value.
  double class_mean(std::span<const double> v) const {
    if (v.size() != size()) throw Error("class_mean: vector does not match the class map");
    return total_reward(v) / static_cast<double>(num_classes());
  }

 private:
  std::vector<std::size_t> class_of_;
  std::vector<std::size_t> counts_;
  std::vector<double> scaling_;
};

// ---------------------------------------------------------------------------
// Candidate actions.

inline constexpr std::size_t kNumCandidates = 2048;
inline constexpr std::size_t kTopActions = 8;

// count x C, rows uniform(0,1) then L1-normalized.
inline nn::Mat<double> propose_actions(std::size_t num_configs, Rng& rng, std::size_t count = kNumCandidates) {
  if (num_configs == 0) throw Error("propose_actions: need at least one configuration");
  nn::Mat<double> a(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(num_configs));
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) a(i, j) = rng.uniform();
    double s = a.row(i).sum();
    if (s <= 0) {
      a.row(i).setConstant(1.0 / static_cast<double>(num_configs));
    } else {
      a.row(i) /= s;
    }
  }
  return a;
}

inline Action uniform_action(std::size_t n) { return Action(n, 1.0 / static_cast<double>(n)); }

inline void validate_action(std::span<const double> a) {
  double s = 0;
  for (const double p : a) {
    if (!(p >= 0) || !std::isfinite(p)) throw Error("action has a negative or non-finite entry");
    s += p;
  }
  if (std::abs(s - 1.0) > 1e-6) throw Error("action does not sum to 1");
}

// Mean of the top_k candidates by score (ties go to the lower index),
// renormalized.
inline Action average_top(const nn::Mat<double>& candidates, std::span<const double> scores, std::size_t top_k = kTopActions) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  const std::size_t k = std::min(top_k, order.size());
  Action out(static_cast<std::size_t>(candidates.cols()), 0.0);
  for (std::size_t r = 0; r < k; ++r) {
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += candidates(static_cast<Eigen::Index>(order[r]), static_cast<Eigen::Index>(j));
  }
  const double s = std::accumulate(out.begin(), out.end(), 0.0);
  for (double& p : out) p /= s;
  return out;
}

// History row layout: [losses | action].
inline std::vector<double> history_row(std::span<const double> losses, std::span<const double> action) {
  std::vector<double> row(losses.begin(), losses.end());
  row.insert(row.end(), action.begin(), action.end());
  return row;
}

// Anything that maps (history rows, candidate rows) to per-config reward
// predictions for each candidate.
class RewardPredictor {
 public:
  virtual ~RewardPredictor() = default;
  // history: T x 2C (may be empty), candidates: K x 2C. Returns K x C.
  virtual nn::Mat<double> predict(const nn::Mat<double>& history, const nn::Mat<double>& candidates) const = 0;
  virtual bool trained() const = 0;
};

// ---------------------------------------------------------------------------
// Reward model: independent RMSNorms over the loss and action halves, an
// input projection, a stack of causal Gated SSM layers, and a linear head
// predicting the per-config reward that follows each row.

struct RewardModelConfig {
  std::size_t num_layers = 4;
  std::size_t hidden = 256;
  std::size_t fit_steps = 200;
  AdamWConfig optim{1e-3, 1e-3, 0.9, 0.95, 1e-8, 0.1, 1.0, 0, 0};
};

class RewardModel final : public RewardPredictor {
 public:
  using Mat = nn::Mat<double>;

  RewardModel(std::size_t num_configs, RewardModelConfig cfg, Rng& rng)
      : c_(num_configs), cfg_(cfg),
        loss_norm_("reward.loss_norm", static_cast<Eigen::Index>(num_configs)),
        action_norm_("reward.action_norm", static_cast<Eigen::Index>(num_configs)),
        in_proj_("reward.in_proj", static_cast<Eigen::Index>(2 * num_configs), static_cast<Eigen::Index>(cfg.hidden), true),
        final_norm_("reward.final_norm", static_cast<Eigen::Index>(cfg.hidden)),
        head_("reward.head", static_cast<Eigen::Index>(cfg.hidden), static_cast<Eigen::Index>(num_configs), true) {
    if (num_configs == 0 || cfg.num_layers == 0 || cfg.hidden == 0) throw Error("reward model: bad dimensions");
    LayerConfig lc;
    lc.kind = LayerKind::GatedSSM;
    lc.d_model = cfg.hidden;
    lc.state_size = cfg.hidden;
    lc.bidirectional = false;
    for (std::size_t i = 0; i < cfg.num_layers; ++i) {
      const std::string p = "reward.layers." + std::to_string(i);
      norms_.emplace_back(p + ".norm", static_cast<Eigen::Index>(cfg.hidden));
      layers_.emplace_back(p + ".mixer", lc);
    }
    in_proj_.init(rng);
    for (auto& l : layers_) l.init(rng);
    head_.init(rng);
    optimizer_ = AdamW<double>(params(), cfg_.optim);
  }

  RewardModel(const RewardModel&) = delete;
  RewardModel& operator=(const RewardModel&) = delete;

  nn::ParamRefs<double> params() {
    nn::ParamRefs<double> out;
    loss_norm_.collect(out);
    action_norm_.collect(out);
    in_proj_.collect(out);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      norms_[i].collect(out);
      layers_[i].collect(out);
    }
    final_norm_.collect(out);
    head_.collect(out);
    return out;
  }

  std::size_t num_configs() const { return c_; }
  bool trained() const override { return fits_ > 0; }
  std::size_t fits() const { return fits_; }
  AdamW<double>& optimizer() { return optimizer_; }

  // T x 2C -> T x C
  Mat forward(const Mat& x) const { return run(x, nullptr); }

  // Regresses rows -> next rewards with squared error for `steps` optimizer
  // steps (default: the configured refit length), warm-started from the
  // current weights. Returns the final training loss.
  double fit(const Mat& x, const Mat& y, std::size_t steps) {
    if (x.rows() != y.rows() || x.cols() != static_cast<Eigen::Index>(2 * c_) || y.cols() != static_cast<Eigen::Index>(c_)) {
      throw Error("reward model: fit shapes do not match");
    }
    if (x.rows() == 0) throw Error("reward model: nothing to fit");
    double last = mse(x, y);
    for (std::size_t s = 0; s < steps; ++s) {
      for (auto* p : params()) p->zero_grad();
      Cache cache;
      const Mat pred = run(x, &cache);
      const Mat diff = pred - y;
      last = diff.squaredNorm() / static_cast<double>(diff.size());
      backward(cache, diff * (2.0 / static_cast<double>(diff.size())));
      optimizer_.step();
    }
    if (steps > 0) ++fits_;
    return steps > 0 ? mse(x, y) : last;
  }

  double fit(const Mat& x, const Mat& y) { return fit(x, y, cfg_.fit_steps); }

  // Every weight and optimizer moment, for exact save/restore.
  std::vector<Mat*> state_tensors() {
    std::vector<Mat*> out;
    auto ps = params();
    for (std::size_t k = 0; k < ps.size(); ++k) {
      out.push_back(&ps[k]->value);
      out.push_back(&optimizer_.first_moments()[k]);
      out.push_back(&optimizer_.second_moments()[k]);
    }
    return out;
  }
  void set_counters(std::size_t fits, std::size_t opt_steps) {
    fits_ = fits;
    optimizer_.set_step_count(opt_steps);
  }

  double mse(const Mat& x, const Mat& y) const {
    const Mat d = forward(x) - y;
    return d.squaredNorm() / static_cast<double>(d.size());
  }

  // Every candidate continues the state left by the shared history.
  Mat predict(const Mat& history, const Mat& candidates) const override {
    const auto H = static_cast<Eigen::Index>(cfg_.hidden);
    std::vector<nn::RowVec<double>> states(layers_.size(), nn::RowVec<double>::Zero(H));
    if (history.rows() > 0) {
      Mat x = embed(history, nullptr);
      const auto reset = reset_mask(static_cast<std::size_t>(history.rows()));
      for (std::size_t k = 0; k < layers_.size(); ++k) {
        nn::RecurrentState<double> st;
        x += layers_[k].forward(norms_[k].forward(x, nullptr), reset, nullptr, &st);
        states[k] = st.h;
      }
    }
    Mat x = embed(candidates, nullptr);
    for (std::size_t k = 0; k < layers_.size(); ++k) x += layers_[k].step_rows(norms_[k].forward(x, nullptr), states[k]);
    return head_.forward(final_norm_.forward(x, nullptr));
  }

 private:
  struct Cache {
    nn::RMSNorm<double>::Cache loss_norm, action_norm;
    Mat joined;
    std::vector<nn::RMSNorm<double>::Cache> norms;
    std::vector<std::unique_ptr<nn::LayerCacheBase>> layers;
    nn::RMSNorm<double>::Cache final_norm;
    Mat final_out;
    std::vector<std::uint8_t> reset;
  };

  static std::vector<std::uint8_t> reset_mask(std::size_t n) {
    std::vector<std::uint8_t> r(n, kContinue);
    if (n > 0) r[0] = kNewSample;
    return r;
  }

  Mat embed(const Mat& x, Cache* cache) const {
    const auto C = static_cast<Eigen::Index>(c_);
    Mat joined(x.rows(), 2 * C);
    joined.leftCols(C) = loss_norm_.forward(x.leftCols(C), cache ? &cache->loss_norm : nullptr);
    joined.rightCols(C) = action_norm_.forward(x.rightCols(C), cache ? &cache->action_norm : nullptr);
    Mat h = in_proj_.forward(joined);
    if (cache) cache->joined = std::move(joined);
    return h;
  }

  Mat run(const Mat& x, Cache* cache) const {
    Mat h = embed(x, cache);
    const auto reset = reset_mask(static_cast<std::size_t>(x.rows()));
    if (cache) {
      cache->reset = reset;
      cache->norms.resize(layers_.size());
      cache->layers.resize(layers_.size());
    }
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      const Mat n = norms_[k].forward(h, cache ? &cache->norms[k] : nullptr);
      h += layers_[k].forward(n, reset, cache ? &cache->layers[k] : nullptr, nullptr);
    }
    Mat f = final_norm_.forward(h, cache ? &cache->final_norm : nullptr);
    Mat out = head_.forward(f);
    if (cache) cache->final_out = std::move(f);
    return out;
  }

  void backward(const Cache& cache, const Mat& dout) {
    Mat dh = final_norm_.backward(cache.final_norm, head_.backward(cache.final_out, dout));
    for (std::size_t k = layers_.size(); k-- > 0;) {
      dh += norms_[k].backward(cache.norms[k], layers_[k].backward(*cache.layers[k], dh, cache.reset));
    }
    const Mat djoined = in_proj_.backward(cache.joined, dh);
    const auto C = static_cast<Eigen::Index>(c_);
    loss_norm_.backward(cache.loss_norm, djoined.leftCols(C));
    action_norm_.backward(cache.action_norm, djoined.rightCols(C));
  }

  std::size_t c_;
  RewardModelConfig cfg_;
  nn::RMSNorm<double> loss_norm_, action_norm_;
  nn::Linear<double> in_proj_;
  std::vector<nn::RMSNorm<double>> norms_;
  std::vector<nn::GatedSSMLayer<double>> layers_;
  nn::RMSNorm<double> final_norm_;
  nn::Linear<double> head_;
  AdamW<double> optimizer_;
  std::size_t fits_ = 0;
};

// Scores candidate actions against the history and averages the best few.
// Falls back to the uniform action when the predictor has not been trained.
inline Action select_action(const RewardPredictor& model, const nn::Mat<double>& history,
                            std::span<const double> current_losses, const ClassMap& classes, Rng& rng,
                            std::size_t num_candidates = kNumCandidates, std::size_t top_k = kTopActions) {
  const std::size_t C = classes.size();
  if (current_losses.size() != C) throw Error("select_action: loss vector does not match the class map");
  if (C == 1) return {1.0};
  if (!model.trained()) return uniform_action(C);
  const nn::Mat<double> cand = propose_actions(C, rng, num_candidates);
  nn::Mat<double> rows(cand.rows(), static_cast<Eigen::Index>(2 * C));
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    for (std::size_t j = 0; j < C; ++j) rows(i, static_cast<Eigen::Index>(j)) = current_losses[j];
    rows.row(i).tail(static_cast<Eigen::Index>(C)) = cand.row(i);
  }
  const nn::Mat<double> pred = model.predict(history, rows);
  std::vector<double> totals(static_cast<std::size_t>(pred.rows()));
  for (Eigen::Index i = 0; i < pred.rows(); ++i) {
    const std::vector<double> r(pred.row(i).data(), pred.row(i).data() + pred.cols());
    totals[static_cast<std::size_t>(i)] = classes.total_reward(r);
  }
  return average_top(cand, totals, top_k);
}

// ---------------------------------------------------------------------------
// Schedule.

inline constexpr std::size_t kWarmupSteps = 250;

// 10, 50, 250, 500, 1000, 1500, 2000, then every 1000 steps, up to total.
inline std::vector<std::size_t> eval_steps(std::size_t total_steps) {
  std::vector<std::size_t> out;
  for (const std::size_t s : {10, 50, 250, 500, 1000, 1500, 2000}) {
    if (s <= total_steps) out.push_back(s);
  }
  for (std::size_t s = 3000; s <= total_steps; s += 1000) out.push_back(s);
  return out;
}

inline bool is_eval_step(std::size_t step) {
  if (step == 10 || step == 50 || step == 250 || step == 500 || step == 1500) return true;
  return step >= 1000 && step % 1000 == 0;
}

struct ControllerConfig {
  std::size_t warmup_steps = kWarmupSteps;
  std::size_t num_candidates = kNumCandidates;
  std::size_t top_k = kTopActions;
  std::size_t history_cap = 256;
  RewardConfig reward;
  RewardModelConfig model;
};

struct TraceRow {
  std::size_t step = 0;
  Action action;  // action in force from this step on
  std::vector<double> losses;
  std::vector<double> rewards;  // vs the previous evaluation (zeros at the first)
  double total_reward = 0;
  double fit_loss = 0;

  nlohmann::json to_json() const {
    return {{"step", step}, {"action", action}, {"losses", losses}, {"rewards", rewards}, {"total_reward", total_reward}};
  }
};

// The Birdie controller: owns the history and the reward model.
class Controller {
 public:
  Controller(ClassMap classes, ControllerConfig cfg, std::uint64_t seed)
      : classes_(std::move(classes)), cfg_(cfg), seed_(seed), init_rng_(seed), model_(classes_.size(), cfg.model, init_rng_),
        action_(uniform_action(classes_.size())) {}

  Controller(const Controller&) = delete;
  Controller& operator=(const Controller&) = delete;

  const Action& action() const { return action_; }
  const ClassMap& classes() const { return classes_; }
  const std::vector<TraceRow>& trace() const { return trace_; }
  RewardModel& reward_model() { return model_; }
  std::size_t history_rows() const { return xs_.size(); }

  // Called at an evaluation step with freshly measured per-config losses.
  const TraceRow& observe(std::size_t step, std::span<const double> losses) {
    const std::size_t C = classes_.size();
    if (losses.size() != C) throw Error("controller: loss vector does not match the class map");
    TraceRow row;
    row.step = step;
    row.losses.assign(losses.begin(), losses.end());
    row.rewards.assign(C, 0.0);
    if (!prev_losses_.empty()) {
      row.rewards = rewards(prev_losses_, losses, cfg_.reward);
      xs_.push_back(history_row(prev_losses_, action_));
      ys_.push_back(row.rewards);
      if (xs_.size() > cfg_.history_cap) {
        xs_.erase(xs_.begin());
        ys_.erase(ys_.begin());
      }
    }
    row.total_reward = classes_.total_reward(row.rewards);
    prev_losses_ = row.losses;
    if (step >= cfg_.warmup_steps && xs_.size() >= 2) {
      const nn::Mat<double> x = to_mat(xs_), y = to_mat(ys_);
      row.fit_loss = model_.fit(x, y);
      // Seeded per step so a resumed run draws the same candidates.
      Rng rng(Rng::mix(seed_ ^ Rng::mix(step)));
      action_ = select_action(model_, x, losses, classes_, rng, cfg_.num_candidates, cfg_.top_k);
    }
    row.action = action_;
    trace_.push_back(std::move(row));
    return trace_.back();
  }

  // Small state as JSON; the reward model's tensors travel separately
  // (reward_model().state_tensors()).
  nlohmann::json state() {
    nlohmann::json j;
    j["action"] = action_;
    j["prev_losses"] = prev_losses_;
    j["xs"] = xs_;
    j["ys"] = ys_;
    j["trace"] = nlohmann::json::array();
    for (const auto& r : trace_) {
      auto t = r.to_json();
      t["fit_loss"] = r.fit_loss;
      j["trace"].push_back(std::move(t));
    }
    j["reward_fits"] = model_.fits();
    j["reward_opt_steps"] = model_.optimizer().step_count();
    return j;
  }

  void load_state(const nlohmann::json& j) {
    action_ = j.at("action").get<Action>();
    if (action_.size() != classes_.size()) throw Error("controller state: action size does not match the class map");
    prev_losses_ = j.at("prev_losses").get<std::vector<double>>();
    xs_ = j.at("xs").get<std::vector<std::vector<double>>>();
    ys_ = j.at("ys").get<std::vector<std::vector<double>>>();
    trace_.clear();
    for (const auto& t : j.at("trace")) {
      TraceRow r;
      r.step = t.at("step").get<std::size_t>();
      r.action = t.at("action").get<Action>();
      r.losses = t.at("losses").get<std::vector<double>>();
      r.rewards = t.at("rewards").get<std::vector<double>>();
      r.total_reward = t.at("total_reward").get<double>();
      r.fit_loss = t.value("fit_loss", 0.0);
      trace_.push_back(std::move(r));
    }
    model_.set_counters(j.at("reward_fits").get<std::size_t>(), j.at("reward_opt_steps").get<std::size_t>());
  }

 private:
  static nn::Mat<double> to_mat(const std::vector<std::vector<double>>& rows) {
    nn::Mat<double> m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t j = 0; j < rows[i].size(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
    return m;
  }

  ClassMap classes_;
  ControllerConfig cfg_;
  std::uint64_t seed_;
  Rng init_rng_;
  RewardModel model_;
  Action action_;
  std::vector<double> prev_losses_;
  std::vector<std::vector<double>> xs_, ys_;
  std::vector<TraceRow> trace_;
};

// ---------------------------------------------------------------------------
// Simulated training environment: per-config losses decay toward a floor at
// a rate set by the action through a transfer matrix,
//   L_i <- L_i - eta * (L_i - floor_i) * sum_j transfer[i][j] * a_j + noise.

struct SimDynamics {
  std::vector<std::vector<double>> transfer;  // C x C
  std::vector<double> floor;
  std::vector<double> initial;
  double eta = 1e-3;
  double noise = 0.0;       // per-step additive noise sd (relative to L - floor)
  double eval_noise = 0.0;  // measurement noise sd on evaluated losses

  std::size_t size() const { return initial.size(); }

  void validate() const {
    const std::size_t C = size();
    if (C == 0) throw Error("simulator: no configurations");
    if (floor.size() != C || transfer.size() != C) throw Error("simulator: dynamics dimensions disagree");
    for (const auto& r : transfer) {
      if (r.size() != C) throw Error("simulator: transfer matrix must be C x C");
    }
    for (std::size_t i = 0; i < C; ++i) {
      if (!(floor[i] > 0) || initial[i] < floor[i]) throw Error("simulator: need 0 < floor <= initial loss");
    }
  }
};

// Transfer matrix where config `dominant` helps every config, the rest
// only help themselves.
inline SimDynamics dominant_arm_dynamics(std::size_t num_configs, std::size_t dominant, double self_rate = 0.1,
                                         double dominant_rate = 3.0) {
  SimDynamics d;
  d.transfer.assign(num_configs, std::vector<double>(num_configs, 0.0));
  for (std::size_t i = 0; i < num_configs; ++i) {
    d.transfer[i][i] = self_rate;
    d.transfer[i][dominant] += dominant_rate;
  }
  d.floor.assign(num_configs, 0.5);
  d.initial.assign(num_configs, 5.0);
  d.eta = 1.5e-4;
  d.eval_noise = 0.01;
  return d;
}

class SimEnvironment {
 public:
  SimEnvironment(SimDynamics d, std::uint64_t seed) : d_(std::move(d)), rng_(seed), losses_(d_.initial) { d_.validate(); }

  void step(std::span<const double> action) {
    const std::size_t C = d_.size();
    if (action.size() != C) throw Error("simulator: action size mismatch");
    for (std::size_t i = 0; i < C; ++i) {
      double rate = 0;
      for (std::size_t j = 0; j < C; ++j) rate += d_.transfer[i][j] * action[j];
      const double gap = losses_[i] - d_.floor[i];
      double next = losses_[i] - d_.eta * gap * rate;
      if (d_.noise > 0) next += d_.noise * gap * rng_.normal();
      losses_[i] = std::max(d_.floor[i], next);
    }
  }

  std::vector<double> evaluate() {
    std::vector<double> out = losses_;
    if (d_.eval_noise > 0) {
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(1e-6, out[i] + d_.eval_noise * rng_.normal());
    }
    return out;
  }

  const std::vector<double>& losses() const { return losses_; }

 private:
  SimDynamics d_;
  Rng rng_;
  std::vector<double> losses_;
};

// Drives training steps and evaluations on the standard schedule. `train`
// performs one step under the given action; `evaluate` measures per-config
// losses. With a controller, it owns the action from the warm-up on;
// without one, `fixed` is used throughout.
struct ScheduleResult {
  std::vector<TraceRow> trace;
  std::vector<double> final_losses;
};

inline ScheduleResult run_schedule(std::size_t total_steps, Controller* controller, const Action& fixed,
                                   const std::function<void(std::size_t, const Action&)>& train,
                                   const std::function<std::vector<double>(std::size_t)>& evaluate,
                                   const RewardConfig& reward_cfg = {}, const ClassMap* classes = nullptr) {
  ScheduleResult res;
  Action action = controller ? controller->action() : fixed;
  std::vector<double> prev;
  for (std::size_t step = 1; step <= total_steps; ++step) {
    train(step, action);
    if (!is_eval_step(step)) continue;
    const std::vector<double> losses = evaluate(step);
    if (controller) {
      res.trace.push_back(controller->observe(step, losses));
      action = controller->action();
    } else {
      TraceRow row;
      row.step = step;
      row.action = action;
      row.losses = losses;
      row.rewards = prev.empty() ? std::vector<double>(losses.size(), 0.0) : rewards(prev, losses, reward_cfg);
      row.total_reward = classes ? classes->total_reward(row.rewards) : 0.0;
      prev = losses;
      res.trace.push_back(std::move(row));
    }
  }
  res.final_losses = evaluate(total_steps);
  return res;
}

struct SimResult {
  ScheduleResult schedule;
  double final_class_mean = 0;
};

inline SimResult simulate_environment(const SimDynamics& dyn, const ClassMap& classes, Controller* controller,
                                      std::size_t steps, std::uint64_t env_seed, const Action* fixed = nullptr) {
  SimEnvironment env(dyn, env_seed);
  const Action base = fixed ? *fixed : uniform_action(dyn.size());
  SimResult out;
  out.schedule = run_schedule(
      steps, controller, base, [&](std::size_t, const Action& a) { env.step(a); },
      [&](std::size_t) { return env.evaluate(); }, RewardConfig{}, &classes);
  out.final_class_mean = classes.class_mean(env.losses());
  return out;
}

// Enumeration oracle: final class-mean loss for each one-hot action.
inline std::vector<double> enumerate_one_hot(const SimDynamics& dyn, const ClassMap& classes, std::size_t steps,
                                             std::uint64_t env_seed) {
  std::vector<double> out;
  for (std::size_t k = 0; k < dyn.size(); ++k) {
    Action a(dyn.size(), 0.0);
    a[k] = 1.0;
    out.push_back(simulate_environment(dyn, classes, nullptr, steps, env_seed, &a).final_class_mean);
  }
  return out;
}

}  // namespace birdie
