#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "birdie/layers.hpp"
#include "birdie/packing.hpp"
#include "birdie/vocab.hpp"

namespace birdie {

// Which layers get the split-state bidirectional scan.
enum class BidirPattern : std::uint8_t { None, All, Alternate };

inline std::string pattern_name(BidirPattern p) {
  switch (p) {
    case BidirPattern::None: return "none";
    case BidirPattern::All: return "all";
    case BidirPattern::Alternate: return "alternate";
  }
  return "none";
}

inline BidirPattern parse_pattern(const std::string& s) {
  if (s == "none" || s == "causal") return BidirPattern::None;
  if (s == "all") return BidirPattern::All;
  if (s == "alternate") return BidirPattern::Alternate;
  throw Error("unknown bidirectional pattern '" + s + "' (expected none, all, alternate)");
}

inline std::string kind_name(LayerKind k) { return k == LayerKind::GatedSSM ? "gated_ssm" : "rglru"; }

inline LayerKind parse_kind(const std::string& s) {
  if (s == "gated_ssm" || s == "gatedssm") return LayerKind::GatedSSM;
  if (s == "rglru" || s == "rg_lru" || s == "hawk") return LayerKind::RGLRU;
  throw Error("unknown layer kind '" + s + "' (expected gated_ssm or rglru)");
}

// How a prompt is laid out for decoding and supervised samples. Prefix:
// the prompt is a bidirectional prefix. Causal: a BOS lead and everything
// causal, as a next-token model sees text.
enum class PromptMode : std::uint8_t { Prefix, Causal };

struct Layout {
  TokenSeq ids;
  std::vector<std::uint8_t> reset;
};

// [prompt ++ SEP] with its reset mask.
inline Layout prompt_layout(std::span<const TokenId> prompt, PromptMode mode) {
  Layout l;
  if (mode == PromptMode::Causal) l.ids.push_back(vocab::kBos);
  l.ids.insert(l.ids.end(), prompt.begin(), prompt.end());
  l.ids.push_back(vocab::kSep);
  l.reset.assign(l.ids.size(), mode == PromptMode::Causal ? kCausal : kContinue);
  l.reset.back() = kCausal;
  l.reset[0] = kNewSample;
  return l;
}

// Supervised (prompt, answer) sample in either layout.
inline TrainingSample supervised_sample(std::span<const TokenId> prompt, std::span<const TokenId> answer,
                                        PromptMode mode) {
  if (mode == PromptMode::Prefix) return build_teacher_forced(prompt, answer);
  if (answer.empty()) throw Error("supervised sample needs a nonempty answer");
  TrainingSample s;
  Layout l = prompt_layout(prompt, mode);
  s.ids = std::move(l.ids);
  s.reset_mask = std::move(l.reset);
  s.targets.assign(s.ids.size() - 1, kNoTarget);
  s.targets.insert(s.targets.end(), answer.begin(), answer.end());
  s.ids.insert(s.ids.end(), answer.begin(), answer.end() - 1);
  s.reset_mask.resize(s.ids.size(), kCausal);
  return s;
}

struct ModelConfig {
  LayerKind kind = LayerKind::GatedSSM;
  std::size_t num_layers = 4;
  std::size_t d_model = 128;
  std::size_t state_size = 128;
  BidirPattern bidir = BidirPattern::Alternate;
  std::size_t conv_width = 4;
  // Gated feed-forward after each mixer; on by default for RG-LRU.
  bool mlp = false;
  double mlp_expansion = 8.0 / 3.0;
  double max_gradient = 1000.0;
  std::size_t vocab_size = vocab::kSize;

  static ModelConfig gated_ssm(std::size_t layers = 4, std::size_t d = 128, std::size_t n = 128,
                               BidirPattern p = BidirPattern::Alternate) {
    ModelConfig c;
    c.kind = LayerKind::GatedSSM;
    c.num_layers = layers;
    c.d_model = d;
    c.state_size = n;
    c.bidir = p;
    return c;
  }

  static ModelConfig rglru(std::size_t layers = 4, std::size_t d = 128, std::size_t n = 128,
                           BidirPattern p = BidirPattern::Alternate) {
    ModelConfig c = gated_ssm(layers, d, n, p);
    c.kind = LayerKind::RGLRU;
    c.mlp = true;
    return c;
  }

  bool layer_bidirectional(std::size_t i) const {
    switch (bidir) {
      case BidirPattern::None: return false;
      case BidirPattern::All: return true;
      case BidirPattern::Alternate: return i % 2 == 0;
    }
    return false;
  }

  LayerConfig layer(std::size_t i) const {
    LayerConfig lc;
    lc.kind = kind;
    lc.d_model = d_model;
    lc.state_size = state_size;
    lc.bidirectional = layer_bidirectional(i);
    lc.conv_width = conv_width;
    return lc;
  }

  std::size_t mlp_hidden() const {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(mlp_expansion * static_cast<double>(d_model))));
  }

  void validate() const {
    if (num_layers == 0) throw Error("model needs at least one layer");
    if (vocab_size == 0) throw Error("vocab_size must be positive");
    for (std::size_t i = 0; i < num_layers; ++i) layer(i).validate();
  }

  // Single-line key=value description stored in checkpoints.
  std::string describe() const {
    std::ostringstream os;
    os << "kind=" << kind_name(kind) << " layers=" << num_layers << " d_model=" << d_model
       << " state_size=" << state_size << " bidir=" << pattern_name(bidir) << " conv_width=" << conv_width
       << " mlp=" << (mlp ? 1 : 0) << " mlp_expansion=" << mlp_expansion << " max_gradient=" << max_gradient
       << " vocab=" << vocab_size;
    return os.str();
  }

  bool operator==(const ModelConfig&) const = default;
};

template <class T>
class Model {
 public:
  using Mat = nn::Mat<T>;

  explicit Model(ModelConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    const auto d = static_cast<Eigen::Index>(cfg_.d_model);
    embedding_ = nn::Param<T>("embedding", static_cast<Eigen::Index>(cfg_.vocab_size), d, false);
    for (std::size_t i = 0; i < cfg_.num_layers; ++i) {
      const std::string p = "layers." + std::to_string(i);
      Block b;
      b.norm = nn::RMSNorm<T>(p + ".norm", d);
      const LayerConfig lc = cfg_.layer(i);
      if (lc.kind == LayerKind::GatedSSM) {
        b.mixer = std::make_unique<nn::GatedSSMLayer<T>>(p + ".mixer", lc);
      } else {
        b.mixer = std::make_unique<nn::RGLRULayer<T>>(p + ".mixer", lc, cfg_.max_gradient);
      }
      if (cfg_.mlp) {
        b.mlp_norm = nn::RMSNorm<T>(p + ".mlp_norm", d);
        b.mlp = nn::GatedMLP<T>(p + ".mlp", d, static_cast<Eigen::Index>(cfg_.mlp_hidden()));
      }
      blocks_.push_back(std::move(b));
    }
    final_norm_ = nn::RMSNorm<T>("final_norm", d);
    head_ = nn::Linear<T>("head", d, static_cast<Eigen::Index>(cfg_.vocab_size), true);
  }

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  void init(Rng& rng) {
    nn::init_truncated_normal(embedding_, rng, 1.0);
    for (Block& b : blocks_) {
      b.mixer->init(rng);
      if (cfg_.mlp) b.mlp.init(rng);
    }
    head_.init(rng);
  }

  const ModelConfig& config() const { return cfg_; }

  nn::ParamRefs<T> params() {
    nn::ParamRefs<T> out;
    out.push_back(&embedding_);
    for (Block& b : blocks_) {
      b.norm.collect(out);
      b.mixer->collect(out);
      if (cfg_.mlp) {
        b.mlp_norm.collect(out);
        b.mlp.collect(out);
      }
    }
    final_norm_.collect(out);
    head_.collect(out);
    return out;
  }

  std::size_t num_parameters() {
    std::size_t n = 0;
    for (auto* p : params()) n += static_cast<std::size_t>(p->size());
    return n;
  }

  void zero_grad() {
    for (auto* p : params()) p->zero_grad();
  }

  nn::Param<T>* find(const std::string& name) {
    for (auto* p : params()) {
      if (p->name == name) return p;
    }
    return nullptr;
  }

  struct ForwardCache {
    std::vector<TokenId> ids;
    struct BlockCache {
      typename nn::RMSNorm<T>::Cache norm;
      std::unique_ptr<nn::LayerCacheBase> mixer;
      typename nn::RMSNorm<T>::Cache mlp_norm;
      typename nn::GatedMLP<T>::Cache mlp;
    };
    std::vector<BlockCache> blocks;
    typename nn::RMSNorm<T>::Cache final_norm;
  };

  // Final normalized hidden states, L x d.
  Mat hidden(std::span<const TokenId> ids, std::span<const std::uint8_t> reset, ForwardCache* cache = nullptr,
             std::vector<nn::RecurrentState<T>>* states = nullptr) const {
    check_inputs(ids, reset);
    const auto L = static_cast<Eigen::Index>(ids.size());
    Mat x(L, static_cast<Eigen::Index>(cfg_.d_model));
    for (Eigen::Index t = 0; t < L; ++t) x.row(t) = embedding_.value.row(ids[static_cast<std::size_t>(t)]);
    if (cache) {
      cache->ids.assign(ids.begin(), ids.end());
      cache->blocks.clear();
      cache->blocks.resize(blocks_.size());
    }
    if (states) states->assign(blocks_.size(), {});
    for (std::size_t k = 0; k < blocks_.size(); ++k) {
      const Block& b = blocks_[k];
      auto* bc = cache ? &cache->blocks[k] : nullptr;
      Mat n = b.norm.forward(x, bc ? &bc->norm : nullptr);
      x += b.mixer->forward(n, reset, bc ? &bc->mixer : nullptr, states ? &(*states)[k] : nullptr);
      if (cfg_.mlp) {
        Mat m = b.mlp_norm.forward(x, bc ? &bc->mlp_norm : nullptr);
        x += b.mlp.forward(m, bc ? &bc->mlp : nullptr);
      }
    }
    return final_norm_.forward(x, cache ? &cache->final_norm : nullptr);
  }

  Mat logits(std::span<const TokenId> ids, std::span<const std::uint8_t> reset) const {
    return head_.forward(hidden(ids, reset));
  }

  // Mean cross-entropy over positions with a target.
  T loss(std::span<const TokenId> ids, std::span<const TokenId> targets, std::span<const std::uint8_t> reset) const {
    const Mat h = hidden(ids, reset);
    const auto rows = target_rows(targets);
    if (rows.empty()) throw Error("loss: batch has no target positions");
    const Mat lg = head_.forward(gather(h, rows));
    double total = 0;
    for (std::size_t r = 0; r < rows.size(); ++r) total += nll_row(lg, r, targets[rows[r]]);
    return static_cast<T>(total / static_cast<double>(rows.size()));
  }

  T loss(const PackedBatch& b) const { return loss(b.ids, b.targets, b.reset_mask); }

  // Per-position negative log-likelihood (NaN where there is no target).
  std::vector<double> token_losses(std::span<const TokenId> ids, std::span<const TokenId> targets,
                                   std::span<const std::uint8_t> reset) const {
    const Mat h = hidden(ids, reset);
    const auto rows = target_rows(targets);
    std::vector<double> out(ids.size(), std::numeric_limits<double>::quiet_NaN());
    if (rows.empty()) return out;
    const Mat lg = head_.forward(gather(h, rows));
    for (std::size_t r = 0; r < rows.size(); ++r) out[rows[r]] = nll_row(lg, r, targets[rows[r]]);
    return out;
  }

  // Forward + backward. Accumulates gradients into params and returns the
  // mean loss. Throws if any gradient is non-finite.
  T loss_and_grad(std::span<const TokenId> ids, std::span<const TokenId> targets, std::span<const std::uint8_t> reset) {
    ForwardCache cache;
    const Mat h = hidden(ids, reset, &cache);
    const auto rows = target_rows(targets);
    if (rows.empty()) throw Error("loss: batch has no target positions");
    const Mat hs = gather(h, rows);
    Mat lg = head_.forward(hs);
    double total = 0;
    const T inv = T(1) / static_cast<T>(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto ri = static_cast<Eigen::Index>(r);
      total += nll_row(lg, r, targets[rows[r]]);
      const T mx = lg.row(ri).maxCoeff();
      lg.row(ri) = (lg.row(ri).array() - mx).exp().matrix();
      lg.row(ri) /= lg.row(ri).sum();
      lg(ri, targets[rows[r]]) -= T(1);
      lg.row(ri) *= inv;
    }
    const Mat dhs = head_.backward(hs, lg);
    Mat dh = Mat::Zero(h.rows(), h.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      dh.row(static_cast<Eigen::Index>(rows[r])) = dhs.row(static_cast<Eigen::Index>(r));
    }
    backward(cache, dh, reset);
    for (auto* p : params()) {
      if (!p->grad.allFinite()) throw Error("non-finite gradient in parameter '" + p->name + "'");
    }
    return static_cast<T>(total / static_cast<double>(rows.size()));
  }

  T loss_and_grad(const PackedBatch& b) { return loss_and_grad(b.ids, b.targets, b.reset_mask); }

  // Greedy decoding from the recurrent state: the prompt (plus SEP) is
  // processed in parallel, then one O(1) step per generated token.
  TokenSeq greedy_decode(std::span<const TokenId> prompt, std::size_t max_new, TokenId stop = vocab::kDone,
                         PromptMode mode = PromptMode::Prefix) const {
    TokenSeq out;
    if (max_new == 0) return out;
    const Layout l = prompt_layout(prompt, mode);
    std::vector<nn::RecurrentState<T>> states;
    const Mat h = hidden(l.ids, l.reset, nullptr, &states);
    nn::RowVec<T> lg = head_.forward(Mat(h.bottomRows(1)));
    while (out.size() < max_new) {
      const TokenId next = argmax(lg);
      out.push_back(next);
      if (next == stop || out.size() == max_new) break;
      lg = step(next, states);
    }
    return out;
  }

  // Reference decoder: re-runs the full forward on the growing sequence.
  TokenSeq greedy_decode_full(std::span<const TokenId> prompt, std::size_t max_new, TokenId stop = vocab::kDone,
                              PromptMode mode = PromptMode::Prefix) const {
    TokenSeq out;
    Layout l = prompt_layout(prompt, mode);
    while (out.size() < max_new) {
      const Mat h = hidden(l.ids, l.reset);
      const TokenId next = argmax(nn::RowVec<T>(head_.forward(Mat(h.bottomRows(1)))));
      out.push_back(next);
      if (next == stop) break;
      l.ids.push_back(next);
      l.reset.push_back(kCausal);
    }
    return out;
  }

  // One causal step: feeds token through every layer, returns next logits.
  nn::RowVec<T> step(TokenId token, std::vector<nn::RecurrentState<T>>& states) const {
    if (token < 0 || static_cast<std::size_t>(token) >= cfg_.vocab_size) throw Error("step: token out of range");
    Mat x = embedding_.value.row(token);
    for (std::size_t k = 0; k < blocks_.size(); ++k) {
      const Block& b = blocks_[k];
      const Mat n = b.norm.forward(x, nullptr);
      x += Mat(b.mixer->step(nn::RowVec<T>(n), states[k]));
      if (cfg_.mlp) x += b.mlp.forward(b.mlp_norm.forward(x, nullptr), nullptr);
    }
    return head_.forward(final_norm_.forward(x, nullptr));
  }

  static TokenId argmax(const nn::RowVec<T>& row) {
    Eigen::Index best = 0;
    row.maxCoeff(&best);
    return static_cast<TokenId>(best);
  }

 private:
  struct Block {
    nn::RMSNorm<T> norm;
    std::unique_ptr<nn::SequenceLayer<T>> mixer;
    nn::RMSNorm<T> mlp_norm;
    nn::GatedMLP<T> mlp;
  };

  void check_inputs(std::span<const TokenId> ids, std::span<const std::uint8_t> reset) const {
    if (ids.empty()) throw Error("model: empty input");
    if (reset.size() != ids.size()) throw Error("model: reset mask length does not match ids");
    if (reset[0] != kNewSample) throw Error("model: sequence must start with a new-sample reset");
    for (const TokenId t : ids) {
      if (t < 0 || static_cast<std::size_t>(t) >= cfg_.vocab_size) {
        throw Error("model: token id " + std::to_string(t) + " out of range");
      }
    }
  }

  std::vector<std::size_t> target_rows(std::span<const TokenId> targets) const {
    std::vector<std::size_t> rows;
    for (std::size_t t = 0; t < targets.size(); ++t) {
      if (targets[t] == kNoTarget) continue;
      if (targets[t] < 0 || static_cast<std::size_t>(targets[t]) >= cfg_.vocab_size) {
        throw Error("model: target id " + std::to_string(targets[t]) + " out of range");
      }
      rows.push_back(t);
    }
    return rows;
  }

  static Mat gather(const Mat& h, const std::vector<std::size_t>& rows) {
    Mat out(static_cast<Eigen::Index>(rows.size()), h.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = h.row(static_cast<Eigen::Index>(rows[r]));
    return out;
  }

  static double nll_row(const Mat& lg, std::size_t r, TokenId target) {
    const auto ri = static_cast<Eigen::Index>(r);
    const double mx = static_cast<double>(lg.row(ri).maxCoeff());
    double s = 0;
    for (Eigen::Index j = 0; j < lg.cols(); ++j) s += std::exp(static_cast<double>(lg(ri, j)) - mx);
    return mx + std::log(s) - static_cast<double>(lg(ri, target));
  }

  void backward(const ForwardCache& cache, const Mat& dh, std::span<const std::uint8_t> reset) {
    Mat dx = final_norm_.backward(cache.final_norm, dh);
    for (std::size_t k = blocks_.size(); k-- > 0;) {
      Block& b = blocks_[k];
      const auto& bc = cache.blocks[k];
      if (cfg_.mlp) dx += b.mlp_norm.backward(bc.mlp_norm, b.mlp.backward(bc.mlp, dx));
      dx += b.norm.backward(bc.norm, b.mixer->backward(*bc.mixer, dx, reset));
    }
    for (std::size_t t = 0; t < cache.ids.size(); ++t) {
      embedding_.grad.row(cache.ids[t]) += dx.row(static_cast<Eigen::Index>(t));
    }
  }

  ModelConfig cfg_;
  nn::Param<T> embedding_;
  std::vector<Block> blocks_;
  nn::RMSNorm<T> final_norm_;
  nn::Linear<T> head_;
};

}  // namespace birdie
