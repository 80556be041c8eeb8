#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "birdie/nn.hpp"
#include "birdie/packing.hpp"
#include "birdie/scan.hpp"

namespace birdie {

enum class LayerKind : std::uint8_t { GatedSSM, RGLRU };

struct LayerConfig {
  LayerKind kind = LayerKind::GatedSSM;
  std::size_t d_model = 128;
  std::size_t state_size = 128;
  bool bidirectional = false;
  std::size_t conv_width = 4;

  void validate() const {
    if (d_model == 0 || state_size == 0) throw Error("layer dimensions must be positive");
    if (bidirectional && state_size % 2 != 0) throw Error("bidirectional layers need an even state_size");
    if (conv_width < 1) throw Error("conv_width must be >= 1");
  }
};

namespace nn {

// Index of the first position of the sample containing t.
inline std::vector<std::size_t> segment_starts(std::span<const std::uint8_t> reset, std::size_t L) {
  std::vector<std::size_t> start(L, 0);
  std::size_t s = 0;
  for (std::size_t t = 0; t < L; ++t) {
    if (!reset.empty() && reset[t] == kNewSample) s = t;
    start[t] = s;
  }
  return start;
}

// Depthwise causal convolution that never reads across a sample boundary:
// out[t] = bias + sum_k kernel[k] * u[t - k] for t - k within t's sample.
template <class T>
Mat<T> causal_conv1d(const Mat<T>& u, const Mat<T>& kernel, const RowVec<T>& bias,
                     std::span<const std::uint8_t> reset) {
  const auto L = static_cast<std::size_t>(u.rows());
  const auto starts = segment_starts(reset, L);
  Mat<T> out = Mat<T>::Zero(u.rows(), u.cols());
  out.rowwise() += bias;
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t k = 0; k < static_cast<std::size_t>(kernel.rows()) && k <= t - starts[t]; ++k) {
      out.row(static_cast<Eigen::Index>(t)) +=
          kernel.row(static_cast<Eigen::Index>(k)).cwiseProduct(u.row(static_cast<Eigen::Index>(t - k)));
    }
  }
  return out;
}

template <class T>
Mat<T> causal_conv1d_backward(const Mat<T>& u, const Mat<T>& kernel, const Mat<T>& dout,
                              std::span<const std::uint8_t> reset, Mat<T>& dkernel, Mat<T>& dbias) {
  const auto L = static_cast<std::size_t>(u.rows());
  const auto starts = segment_starts(reset, L);
  Mat<T> du = Mat<T>::Zero(u.rows(), u.cols());
  dbias += dout.colwise().sum();
  for (std::size_t t = 0; t < L; ++t) {
    const auto ti = static_cast<Eigen::Index>(t);
    for (std::size_t k = 0; k < static_cast<std::size_t>(kernel.rows()) && k <= t - starts[t]; ++k) {
      const auto src = static_cast<Eigen::Index>(t - k);
      const auto ki = static_cast<Eigen::Index>(k);
      du.row(src) += kernel.row(ki).cwiseProduct(dout.row(ti));
      dkernel.row(ki) += dout.row(ti).cwiseProduct(u.row(src));
    }
  }
  return du;
}

// State carried between single-token decode steps.
template <class T>
struct RecurrentState {
  RowVec<T> h;          // full state; only the forward-scanned columns carry over
  Mat<T> conv_history;  // most recent inputs to the conv, newest last
};

struct LayerCacheBase {
  virtual ~LayerCacheBase() = default;
};

template <class T>
class SequenceLayer {
 public:
  virtual ~SequenceLayer() = default;
  virtual void init(Rng& rng) = 0;
  // x: L x d normalized input. Writes the cache when non-null and the final
  // recurrent state when non-null.
  virtual Mat<T> forward(const Mat<T>& x, std::span<const std::uint8_t> reset, std::unique_ptr<LayerCacheBase>* cache,
                         RecurrentState<T>* final_state) const = 0;
  virtual Mat<T> backward(const LayerCacheBase& cache, const Mat<T>& dy, std::span<const std::uint8_t> reset) = 0;
  // One causal-region step.
  virtual RowVec<T> step(const RowVec<T>& x, RecurrentState<T>& state) const = 0;
  virtual void collect(ParamRefs<T>& out) = 0;
  virtual const LayerConfig& config() const = 0;
};

// i = sigma(W^i x), z = W^z x, o = GeLU(W^o x), f = sigma(W^f x),
// h_t = f_t * h_{t-1} + i_t * z_t, y = W^out(o * h).
template <class T>
class GatedSSMLayer final : public SequenceLayer<T> {
 public:
  GatedSSMLayer(const std::string& name, LayerConfig cfg)
      : cfg_(cfg),
        wi_(name + ".W_i", cfg.d_model, cfg.state_size, true),
        wz_(name + ".W_z", cfg.d_model, cfg.state_size, true),
        wo_(name + ".W_o", cfg.d_model, cfg.state_size, true),
        wf_(name + ".W_f", cfg.d_model, cfg.state_size, true, /*decay=*/false),
        wout_(name + ".W_out", cfg.state_size, cfg.d_model, true) {
    cfg_.validate();
  }

  void init(Rng& rng) override {
    wi_.init(rng);
    wz_.init(rng);
    wo_.init(rng);
    wf_.init(rng);
    wout_.init(rng);
    // Forget gates start in [0.9, 0.999].
    for (Eigen::Index j = 0; j < wf_.bias().value.cols(); ++j) {
      const double f = rng.uniform(0.9, 0.999);
      wf_.bias().value(0, j) = static_cast<T>(std::log(f / (1.0 - f)));
    }
  }

  struct Cache : LayerCacheBase {
    Mat<T> x, i, z, o_pre, o, f, drive, h, oh;
  };

  Mat<T> forward(const Mat<T>& x, std::span<const std::uint8_t> reset, std::unique_ptr<LayerCacheBase>* cache,
                 RecurrentState<T>* final_state) const override {
    const auto L = static_cast<std::size_t>(x.rows());
    const std::size_t N = cfg_.state_size;
    Mat<T> i = sigmoid_of<T>(wi_.forward(x));
    Mat<T> z = wz_.forward(x);
    Mat<T> o_pre = wo_.forward(x);
    Mat<T> o = gelu_of<T>(o_pre);
    Mat<T> f = sigmoid_of<T>(wf_.forward(x));
    Mat<T> drive = i.cwiseProduct(z);
    Mat<T> h(x.rows(), static_cast<Eigen::Index>(N));
    scan_layer<T>(std::span<const T>(f.data(), f.size()), std::span<const T>(drive.data(), drive.size()), reset, L, N,
                  cfg_.bidirectional, std::span<T>(h.data(), h.size()));
    Mat<T> oh = o.cwiseProduct(h);
    Mat<T> y = wout_.forward(oh);
    if (final_state && L > 0) {
      final_state->h = h.row(x.rows() - 1);
      final_state->conv_history.resize(0, static_cast<Eigen::Index>(N));
    }
    if (cache) {
      auto c = std::make_unique<Cache>();
      c->x = x;
      c->i = std::move(i);
      c->z = std::move(z);
      c->o_pre = std::move(o_pre);
      c->o = std::move(o);
      c->f = std::move(f);
      c->drive = std::move(drive);
      c->h = std::move(h);
      c->oh = std::move(oh);
      *cache = std::move(c);
    }
    return y;
  }

  Mat<T> backward(const LayerCacheBase& base, const Mat<T>& dy, std::span<const std::uint8_t> reset) override {
    const auto& c = static_cast<const Cache&>(base);
    const auto L = static_cast<std::size_t>(c.x.rows());
    const std::size_t N = cfg_.state_size;
    Mat<T> doh = wout_.backward(c.oh, dy);
    Mat<T> dh = doh.cwiseProduct(c.o);
    Mat<T> do_pre = doh.cwiseProduct(c.h).cwiseProduct(gelu_grad_of<T>(c.o_pre));
    Mat<T> df(c.f.rows(), c.f.cols());
    Mat<T> ddrive(c.f.rows(), c.f.cols());
    scan_layer_backward<T>(std::span<const T>(c.f.data(), c.f.size()), reset, std::span<const T>(c.h.data(), c.h.size()),
                           std::span<const T>(dh.data(), dh.size()), L, N, cfg_.bidirectional,
                           std::span<T>(df.data(), df.size()), std::span<T>(ddrive.data(), ddrive.size()));
    Mat<T> di_pre = ddrive.cwiseProduct(c.z).cwiseProduct(c.i.cwiseProduct((T(1) - c.i.array()).matrix()));
    Mat<T> dz = ddrive.cwiseProduct(c.i);
    Mat<T> df_pre = df.cwiseProduct(c.f.cwiseProduct((T(1) - c.f.array()).matrix()));
    Mat<T> dx = wi_.backward(c.x, di_pre);
    dx += wz_.backward(c.x, dz);
    dx += wo_.backward(c.x, do_pre);
    dx += wf_.backward(c.x, df_pre);
    return dx;
  }

  RowVec<T> step(const RowVec<T>& x, RecurrentState<T>& state) const override {
    const Mat<T> xm = x;
    const RowVec<T> i = sigmoid_of<T>(wi_.forward(xm));
    const RowVec<T> z = wz_.forward(xm);
    const RowVec<T> o = gelu_of<T>(wo_.forward(xm));
    const RowVec<T> f = sigmoid_of<T>(wf_.forward(xm));
    const RowVec<T> drive = i.cwiseProduct(z);
    advance_state(f, drive, state.h);
    return wout_.forward(Mat<T>(o.cwiseProduct(state.h)));
  }

  // Many independent one-step continuations of the same state h_prev.
  Mat<T> step_rows(const Mat<T>& x, const RowVec<T>& h_prev) const {
    const Mat<T> i = sigmoid_of<T>(wi_.forward(x));
    const Mat<T> o = gelu_of<T>(wo_.forward(x));
    const Mat<T> f = sigmoid_of<T>(wf_.forward(x));
    const Mat<T> drive = i.cwiseProduct(wz_.forward(x));
    Mat<T> h = drive;
    const auto N = static_cast<Eigen::Index>(cfg_.state_size);
    const Eigen::Index fwd = cfg_.bidirectional ? N / 2 : N;
    h.leftCols(fwd) += (f.leftCols(fwd).array().rowwise() * h_prev.head(fwd).array()).matrix();
    return wout_.forward(Mat<T>(o.cwiseProduct(h)));
  }

  void collect(ParamRefs<T>& out) override {
    wi_.collect(out);
    wz_.collect(out);
    wo_.collect(out);
    wf_.collect(out);
    wout_.collect(out);
  }

  const LayerConfig& config() const override { return cfg_; }

  nn::Linear<T>& W_f() { return wf_; }

 private:
  // Causal-region update: forward columns recur, reverse columns (if any)
  // see only the current drive.
  void advance_state(const RowVec<T>& gate, const RowVec<T>& drive, RowVec<T>& h) const {
    const auto N = static_cast<Eigen::Index>(cfg_.state_size);
    const Eigen::Index fwd = cfg_.bidirectional ? N / 2 : N;
    h.head(fwd) = gate.head(fwd).cwiseProduct(h.head(fwd)) + drive.head(fwd);
    if (fwd < N) h.tail(N - fwd) = drive.tail(N - fwd);
  }

  LayerConfig cfg_;
  nn::Linear<T> wi_, wz_, wo_, wf_, wout_;
};

// RG-LRU block: u = causal_conv(x W_input); r = sigma(W_a u), g = sigma(W_x u);
// log a = -8 r softplus(lambda); h_t = a h_{t-1} + sqrt(1 - a^2) g u;
// y = W_output(GeLU(x W_gate) * h). The sqrt uses a clipped derivative.
template <class T>
class RGLRULayer final : public SequenceLayer<T> {
 public:
  static constexpr double kGateScale = 8.0;

  RGLRULayer(const std::string& name, LayerConfig cfg, double max_gradient = 1000.0)
      : cfg_(cfg), max_gradient_(static_cast<T>(max_gradient)),
        w_input_(name + ".W_input", cfg.d_model, cfg.state_size, false),
        w_a_(name + ".W_a", cfg.state_size, cfg.state_size, true, false),
        w_x_(name + ".W_x", cfg.state_size, cfg.state_size, true, false),
        w_gate_(name + ".W_gate", cfg.d_model, cfg.state_size, false),
        w_output_(name + ".W_output", cfg.state_size, cfg.d_model, false),
        a_param_(name + ".a_param", 1, cfg.state_size, false),
        conv_kernel_(name + ".conv.kernel", cfg.conv_width, cfg.state_size, false),
        conv_bias_(name + ".conv.bias", 1, cfg.state_size, false) {
    cfg_.validate();
  }

  void init(Rng& rng) override {
    w_input_.init(rng);
    w_a_.init(rng);
    w_x_.init(rng);
    w_gate_.init(rng);
    w_output_.init(rng);
    // a = exp(-8 softplus(lambda)) uniform in [0.9, 0.999] at r = 1.
    for (Eigen::Index j = 0; j < a_param_.value.cols(); ++j) {
      const double a = rng.uniform(0.9, 0.999);
      a_param_.value(0, j) = static_cast<T>(softplus_inverse(-std::log(a) / kGateScale));
    }
    const double k = 1.0 / static_cast<double>(cfg_.conv_width);
    for (Eigen::Index i = 0; i < conv_kernel_.value.size(); ++i) {
      conv_kernel_.value.data()[i] = static_cast<T>(rng.uniform(-k, k));
    }
  }

  struct Cache : LayerCacheBase {
    Mat<T> x, gate_pre, u, c, r, gx, log_a, a, beta_arg, beta, drive, h, gh;
    RowVec<T> sp;
  };

  Mat<T> forward(const Mat<T>& x, std::span<const std::uint8_t> reset, std::unique_ptr<LayerCacheBase>* cache,
                 RecurrentState<T>* final_state) const override {
    const auto L = static_cast<std::size_t>(x.rows());
    const std::size_t N = cfg_.state_size;
    Mat<T> gate_pre = w_gate_.forward(x);
    Mat<T> u = w_input_.forward(x);
    Mat<T> c = causal_conv1d<T>(u, conv_kernel_.value, conv_bias_.value, reset);
    Mat<T> r = sigmoid_of<T>(w_a_.forward(c));
    Mat<T> gx = sigmoid_of<T>(w_x_.forward(c));
    const RowVec<T> sp = map<T>(Mat<T>(a_param_.value), softplus<T>);
    Mat<T> log_a = (r.array().rowwise() * (T(-kGateScale) * sp.array())).matrix();
    Mat<T> a = log_a.array().exp().matrix();
    Mat<T> beta_arg = map<T>(log_a, [](T v) { return -std::expm1(T(2) * v); });
    Mat<T> beta = beta_arg.cwiseSqrt();
    Mat<T> drive = beta.cwiseProduct(gx).cwiseProduct(c);
    Mat<T> h(x.rows(), static_cast<Eigen::Index>(N));
    scan_layer<T>(std::span<const T>(a.data(), a.size()), std::span<const T>(drive.data(), drive.size()), reset, L, N,
                  cfg_.bidirectional, std::span<T>(h.data(), h.size()));
    Mat<T> gh = gelu_of<T>(gate_pre).cwiseProduct(h);
    Mat<T> y = w_output_.forward(gh);
    if (final_state && L > 0) {
      final_state->h = h.row(x.rows() - 1);
      const auto starts = segment_starts(reset, L);
      const std::size_t avail = std::min(L - starts[L - 1], cfg_.conv_width - 1);
      final_state->conv_history = u.bottomRows(static_cast<Eigen::Index>(avail));
    }
    if (cache) {
      auto cc = std::make_unique<Cache>();
      cc->x = x;
      cc->gate_pre = std::move(gate_pre);
      cc->u = std::move(u);
      cc->c = std::move(c);
      cc->r = std::move(r);
      cc->gx = std::move(gx);
      cc->log_a = std::move(log_a);
      cc->a = std::move(a);
      cc->beta_arg = std::move(beta_arg);
      cc->beta = std::move(beta);
      cc->drive = std::move(drive);
      cc->h = std::move(h);
      cc->gh = std::move(gh);
      cc->sp = sp;
      *cache = std::move(cc);
    }
    return y;
  }

  Mat<T> backward(const LayerCacheBase& base, const Mat<T>& dy, std::span<const std::uint8_t> reset) override {
    const auto& c = static_cast<const Cache&>(base);
    const auto L = static_cast<std::size_t>(c.x.rows());
    const std::size_t N = cfg_.state_size;
    Mat<T> dgh = w_output_.backward(c.gh, dy);
    Mat<T> dh = dgh.cwiseProduct(gelu_of<T>(c.gate_pre));
    Mat<T> dgate_pre = dgh.cwiseProduct(c.h).cwiseProduct(gelu_grad_of<T>(c.gate_pre));
    Mat<T> da(c.a.rows(), c.a.cols());
    Mat<T> ddrive(c.a.rows(), c.a.cols());
    scan_layer_backward<T>(std::span<const T>(c.a.data(), c.a.size()), reset, std::span<const T>(c.h.data(), c.h.size()),
                           std::span<const T>(dh.data(), dh.size()), L, N, cfg_.bidirectional,
                           std::span<T>(da.data(), da.size()), std::span<T>(ddrive.data(), ddrive.size()));
    Mat<T> dbeta = ddrive.cwiseProduct(c.gx).cwiseProduct(c.c);
    Mat<T> dgx = ddrive.cwiseProduct(c.beta).cwiseProduct(c.c);
    Mat<T> dc = ddrive.cwiseProduct(c.beta).cwiseProduct(c.gx);
    const T mg = max_gradient_;
    Mat<T> dbeta_arg = dbeta.binaryExpr(c.beta_arg, [mg](T g, T v) { return g * clipped_sqrt_grad<T>(v, mg); });
    // beta_arg = 1 - exp(2 log_a); a = exp(log_a)
    Mat<T> dlog_a = da.cwiseProduct(c.a) - T(2) * dbeta_arg.cwiseProduct(c.a.cwiseProduct(c.a));
    Mat<T> dr = (dlog_a.array().rowwise() * (T(-kGateScale) * c.sp.array())).matrix();
    const RowVec<T> dsp = (dlog_a.cwiseProduct(c.r) * T(-kGateScale)).colwise().sum();
    a_param_.grad += dsp.cwiseProduct(sigmoid_of<T>(Mat<T>(a_param_.value))).eval();
    Mat<T> dr_pre = dr.cwiseProduct(c.r.cwiseProduct((T(1) - c.r.array()).matrix()));
    Mat<T> dgx_pre = dgx.cwiseProduct(c.gx.cwiseProduct((T(1) - c.gx.array()).matrix()));
    dc += w_a_.backward(c.c, dr_pre);
    dc += w_x_.backward(c.c, dgx_pre);
    Mat<T> du = causal_conv1d_backward<T>(c.u, conv_kernel_.value, dc, reset, conv_kernel_.grad, conv_bias_.grad);
    Mat<T> dx = w_input_.backward(c.x, du);
    dx += w_gate_.backward(c.x, dgate_pre);
    return dx;
  }

  RowVec<T> step(const RowVec<T>& x, RecurrentState<T>& state) const override {
    const Mat<T> xm = x;
    const auto N = static_cast<Eigen::Index>(cfg_.state_size);
    const RowVec<T> gate = gelu_of<T>(w_gate_.forward(xm));
    const RowVec<T> u = w_input_.forward(xm);
    RowVec<T> c = conv_bias_.value;
    c += conv_kernel_.value.row(0).cwiseProduct(u);
    const Eigen::Index hist = state.conv_history.rows();
    for (Eigen::Index k = 1; k < conv_kernel_.value.rows() && k <= hist; ++k) {
      c += conv_kernel_.value.row(k).cwiseProduct(state.conv_history.row(hist - k));
    }
    // Keep the last conv_width - 1 inputs.
    const Eigen::Index keep = static_cast<Eigen::Index>(cfg_.conv_width) - 1;
    if (keep > 0) {
      Mat<T> next(std::min<Eigen::Index>(hist + 1, keep), N);
      const Eigen::Index from_hist = next.rows() - 1;
      if (from_hist > 0) next.topRows(from_hist) = state.conv_history.bottomRows(from_hist);
      next.row(next.rows() - 1) = u;
      state.conv_history = std::move(next);
    }
    const Mat<T> cm = c;
    const RowVec<T> r = sigmoid_of<T>(w_a_.forward(cm));
    const RowVec<T> gx = sigmoid_of<T>(w_x_.forward(cm));
    const RowVec<T> sp = map<T>(Mat<T>(a_param_.value), softplus<T>);
    const RowVec<T> log_a = (T(-kGateScale) * r.array() * sp.array()).matrix();
    const RowVec<T> a = log_a.array().exp().matrix();
    const RowVec<T> beta = map<T>(Mat<T>(log_a), [](T v) { return std::sqrt(-std::expm1(T(2) * v)); });
    const RowVec<T> drive = beta.cwiseProduct(gx).cwiseProduct(c);
    const Eigen::Index fwd = cfg_.bidirectional ? N / 2 : N;
    state.h.head(fwd) = a.head(fwd).cwiseProduct(state.h.head(fwd)) + drive.head(fwd);
    if (fwd < N) state.h.tail(N - fwd) = drive.tail(N - fwd);
    return w_output_.forward(Mat<T>(gate.cwiseProduct(state.h)));
  }

  void collect(ParamRefs<T>& out) override {
    w_input_.collect(out);
    out.push_back(&conv_kernel_);
    out.push_back(&conv_bias_);
    w_a_.collect(out);
    w_x_.collect(out);
    out.push_back(&a_param_);
    w_gate_.collect(out);
    w_output_.collect(out);
  }

  const LayerConfig& config() const override { return cfg_; }

  Param<T>& a_param() { return a_param_; }
  Param<T>& conv_kernel() { return conv_kernel_; }
  Param<T>& conv_bias() { return conv_bias_; }
  nn::Linear<T>& W_a() { return w_a_; }
  nn::Linear<T>& W_x() { return w_x_; }

 private:
  LayerConfig cfg_;
  T max_gradient_;
  nn::Linear<T> w_input_, w_a_, w_x_, w_gate_, w_output_;
  Param<T> a_param_;
  Param<T> conv_kernel_;
  Param<T> conv_bias_;
};

}  // namespace nn
}  // namespace birdie
