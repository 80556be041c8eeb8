#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "birdie/error.hpp"
#include "birdie/rng.hpp"

namespace birdie::nn {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

// A named trainable tensor with its gradient accumulator.
template <class T>
struct Param {
  std::string name;
  Mat<T> value;
  Mat<T> grad;
  bool decay = true;

  Param() = default;
  Param(std::string n, Eigen::Index rows, Eigen::Index cols, bool wd = true)
      : name(std::move(n)), value(Mat<T>::Zero(rows, cols)), grad(Mat<T>::Zero(rows, cols)), decay(wd) {}

  void zero_grad() { grad.setZero(); }
  Eigen::Index size() const { return value.size(); }
};

template <class T>
using ParamRefs = std::vector<Param<T>*>;

template <class T>
void init_truncated_normal(Param<T>& p, Rng& rng, double stddev = 0.02) {
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<T>(rng.truncated_normal(stddev));
}

// ---------------------------------------------------------------------------
// Elementwise functions.

template <class T>
T sigmoid(T x) {
  return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

template <class T>
T softplus(T x) {
  return std::log1p(std::exp(-std::abs(x))) + std::max(x, T(0));
}

template <class T>
T softplus_inverse(T y) {
  return y > T(20) ? y : std::log(std::expm1(y));
}

// tanh approximation of GeLU.
template <class T>
T gelu(T x) {
  const T k = T(std::sqrt(2.0 / std::numbers::pi));
  return T(0.5) * x * (T(1) + std::tanh(k * (x + T(0.044715) * x * x * x)));
}

template <class T>
T gelu_grad(T x) {
  const T k = T(std::sqrt(2.0 / std::numbers::pi));
  const T inner = k * (x + T(0.044715) * x * x * x);
  const T t = std::tanh(inner);
  return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * k * (T(1) + T(3 * 0.044715) * x * x);
}

// Square root whose derivative is evaluated at max(x, 1/(4 g^2)), so it
// never exceeds g. Forward value is the plain sqrt.
template <class T>
T clipped_sqrt_grad(T x, T max_gradient) {
  const T floor = T(1) / (T(4) * max_gradient * max_gradient);
  if (x <= floor) return max_gradient;
  return T(1) / (T(2) * std::sqrt(x));
}

template <class T, class F>
Mat<T> map(const Mat<T>& m, F&& f) {
  return m.unaryExpr([&](T v) { return f(v); });
}

// Vectorized whole-matrix versions of the above.
template <class T>
Mat<T> sigmoid_of(const Mat<T>& x) {
  return (T(1) + (-x.array()).exp()).inverse().matrix();
}

template <class T>
Mat<T> gelu_of(const Mat<T>& x) {
  const T k = T(std::sqrt(2.0 / std::numbers::pi));
  const auto a = x.array();
  return (T(0.5) * a * (T(1) + (k * (a + T(0.044715) * a.cube())).tanh())).matrix();
}

template <class T>
Mat<T> gelu_grad_of(const Mat<T>& x) {
  const T k = T(std::sqrt(2.0 / std::numbers::pi));
  const auto a = x.array();
  const auto t = (k * (a + T(0.044715) * a.cube())).tanh().eval();
  return (T(0.5) * (T(1) + t) + T(0.5) * a * (T(1) - t.square()) * k * (T(1) + T(3 * 0.044715) * a.square())).matrix();
}

// ---------------------------------------------------------------------------

template <class T>
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, Eigen::Index in, Eigen::Index out, bool bias, bool decay = true)
      : weight_(name + ".weight", in, out, decay), has_bias_(bias) {
    if (bias) bias_ = Param<T>(name + ".bias", 1, out, false);
  }

  void init(Rng& rng, double stddev = 0.02) { init_truncated_normal(weight_, rng, stddev); }

  Mat<T> forward(const Mat<T>& x) const {
    Mat<T> y(x.rows(), weight_.value.cols());
    y.noalias() = x * weight_.value;
    if (has_bias_) y.rowwise() += RowVec<T>(bias_.value);
    return y;
  }

  // Accumulates parameter gradients; returns dL/dx.
  Mat<T> backward(const Mat<T>& x, const Mat<T>& dy) {
    weight_.grad.noalias() += x.transpose() * dy;
    if (has_bias_) bias_.grad += dy.colwise().sum();
    Mat<T> dx(dy.rows(), weight_.value.rows());
    dx.noalias() = dy * weight_.value.transpose();
    return dx;
  }

  void collect(ParamRefs<T>& out) {
    out.push_back(&weight_);
    if (has_bias_) out.push_back(&bias_);
  }

  Param<T>& weight() { return weight_; }
  Param<T>& bias() { return bias_; }
  const Param<T>& weight() const { return weight_; }
  const Param<T>& bias() const { return bias_; }
  bool has_bias() const { return has_bias_; }

 private:
  Param<T> weight_;
  Param<T> bias_;
  bool has_bias_ = false;
};

template <class T>
class RMSNorm {
 public:
  RMSNorm() = default;
  RMSNorm(const std::string& name, Eigen::Index dim) : scale_(name + ".scale", 1, dim, false) {
    scale_.value.setOnes();
  }

  struct Cache {
    Mat<T> normalized;  // x / rms
    Eigen::Matrix<T, Eigen::Dynamic, 1> inv_rms;
  };

  Mat<T> forward(const Mat<T>& x, Cache* cache) const {
    const Eigen::Index d = x.cols();
    Eigen::Matrix<T, Eigen::Dynamic, 1> inv = ((x.array().square().rowwise().sum() / T(d)) + T(kEps)).rsqrt();
    Mat<T> n = x.array().colwise() * inv.array();
    Mat<T> y = n.array().rowwise() * RowVec<T>(scale_.value).array();
    if (cache) {
      cache->normalized = std::move(n);
      cache->inv_rms = std::move(inv);
    }
    return y;
  }

  Mat<T> backward(const Cache& c, const Mat<T>& dy) {
    scale_.grad += (dy.array() * c.normalized.array()).colwise().sum().matrix();
    const Eigen::Index d = dy.cols();
    Mat<T> dn = dy.array().rowwise() * RowVec<T>(scale_.value).array();
    // dx = inv * (dn - n * mean(dn * n))
    Eigen::Matrix<T, Eigen::Dynamic, 1> proj = (dn.array() * c.normalized.array()).rowwise().sum() / T(d);
    Mat<T> dx = (dn.array() - c.normalized.array().colwise() * proj.array()).colwise() * c.inv_rms.array();
    return dx;
  }

  void collect(ParamRefs<T>& out) { out.push_back(&scale_); }
  Param<T>& scale() { return scale_; }

  static constexpr double kEps = 1e-6;

 private:
  Param<T> scale_;
};

// Gated feed-forward block: W_down(GeLU(x W_gate) * (x W_up)).
template <class T>
class GatedMLP {
 public:
  GatedMLP() = default;
  GatedMLP(const std::string& name, Eigen::Index d, Eigen::Index hidden)
      : gate_(name + ".W_gate", d, hidden, false), up_(name + ".W_up", d, hidden, false),
        down_(name + ".W_down", hidden, d, false) {}

  void init(Rng& rng) {
    gate_.init(rng);
    up_.init(rng);
    down_.init(rng);
  }

  struct Cache {
    Mat<T> x, gate_pre, up, act;
  };

  Mat<T> forward(const Mat<T>& x, Cache* cache) const {
    Mat<T> g = gate_.forward(x);
    Mat<T> u = up_.forward(x);
    Mat<T> act = gelu_of<T>(g).cwiseProduct(u);
    Mat<T> y = down_.forward(act);
    if (cache) *cache = Cache{x, std::move(g), std::move(u), std::move(act)};
    return y;
  }

  Mat<T> backward(const Cache& c, const Mat<T>& dy) {
    Mat<T> dact = down_.backward(c.act, dy);
    Mat<T> du = dact.cwiseProduct(gelu_of<T>(c.gate_pre));
    Mat<T> dg = dact.cwiseProduct(c.up).cwiseProduct(gelu_grad_of<T>(c.gate_pre));
    Mat<T> dx = up_.backward(c.x, du);
    dx += gate_.backward(c.x, dg);
    return dx;
  }

  void collect(ParamRefs<T>& out) {
    gate_.collect(out);
    up_.collect(out);
    down_.collect(out);
  }

 private:
  Linear<T> gate_, up_, down_;
};

}  // namespace birdie::nn
