#pragma once

// Recurrent-plus-dense action-value network with hand-written backprop.
//
//   h_t = tanh(Wx x_t + Wh h_{t-1} + bh)      over the state rows, root first
//   g2  = relu(W2 h_T + b2)
//   g3  = relu(W3 g2 + b3)
//   Q   = softmax(Wo g3 + bo)                 (or the raw logits, linear head)
//
// All parameters live in one flat vector so the online/target copies, the
// finite-difference checks and checkpoints all see the same layout.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "rltir/errors.hpp"
#include "rltir/update_actions.hpp"

namespace rltir {

enum class QHead : std::uint8_t { Softmax, Linear };

inline const char* to_string(QHead h) { return h == QHead::Softmax ? "softmax" : "linear"; }

struct NetworkShape {
  std::size_t rows = 12;
  std::size_t cols = kStateColumns;
  std::size_t h1 = 32;
  std::size_t h2 = 32;
  std::size_t h3 = 16;
  QHead head = QHead::Softmax;

  bool operator==(const NetworkShape&) const = default;
};

using QValues = std::array<double, kActionCount>;

class QNetwork {
 public:
  struct Layout {
    std::size_t wx, wh, bh, w2, b2, w3, b3, wo, bo, total;
    bool operator==(const Layout&) const = default;
  };

  QNetwork() = default;
  explicit QNetwork(NetworkShape shape) : shape_(shape), layout_(make_layout(shape)) {
    if (shape.rows == 0 || shape.cols == 0 || shape.h1 == 0 || shape.h2 == 0 || shape.h3 == 0)
      throw ConfigError("network widths must be positive");
    online_.assign(layout_.total, 0.0);
    target_ = online_;
  }

  const NetworkShape& shape() const { return shape_; }
  const Layout& layout() const { return layout_; }
  std::size_t parameter_count() const { return layout_.total; }

  std::span<double> online() { return online_; }
  std::span<const double> online() const { return online_; }
  std::span<const double> target() const { return target_; }

  /// Glorot-uniform weights, zero biases, target synced.
  template <class Rng>
  void randomize(Rng& rng) {
    auto fill = [&](std::size_t off, std::size_t fan_out, std::size_t fan_in) {
      const double lim = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      std::uniform_real_distribution<double> u(-lim, lim);
      for (std::size_t i = 0; i < fan_out * fan_in; ++i) online_[off + i] = u(rng);
    };
    std::fill(online_.begin(), online_.end(), 0.0);
    fill(layout_.wx, shape_.h1, shape_.cols);
    fill(layout_.wh, shape_.h1, shape_.h1);
    fill(layout_.w2, shape_.h2, shape_.h1);
    fill(layout_.w3, shape_.h3, shape_.h2);
    fill(layout_.wo, kActionCount, shape_.h3);
    sync_target();
  }

  void sync_target() {
    target_ = online_;
    target_version_ = next_version();
  }

  void set_parameters(std::vector<double> online, std::vector<double> target) {
    if (online.size() != layout_.total || target.size() != layout_.total)
      throw ConfigError("parameter vector size does not match network shape");
    online_ = std::move(online);
    target_ = std::move(target);
    target_version_ = next_version();
  }

  /// Changes whenever the target parameters change; unique across networks.
  std::uint64_t target_version() const { return target_version_; }

  QValues forward(const TreeStateEncoding& s, bool use_target = false) const {
    Cache c;
    return forward_with(use_target ? std::span<const double>(target_) : std::span<const double>(online_), s, c);
  }

  /// Mean squared error between `targets` and the Q-values of `actions`;
  /// accumulates dL/dtheta into `grad` (resized and zeroed here).
  double loss_and_gradient(std::span<const double> params, std::span<const TreeStateEncoding* const> states,
                           std::span<const int> actions, std::span<const double> targets,
                           std::vector<double>& grad) const {
    if (states.size() != actions.size() || states.size() != targets.size() || states.empty())
      throw InputError("loss batch lists must be equal-length and non-empty");
    grad.assign(layout_.total, 0.0);
    const double inv_b = 1.0 / static_cast<double>(states.size());
    double loss = 0.0;
    Cache c;
    for (std::size_t b = 0; b < states.size(); ++b) {
      const QValues q = forward_with(params, *states[b], c);
      const auto a = static_cast<std::size_t>(actions[b]);
      const double err = targets[b] - q[a];
      loss += err * err * inv_b;
      backward(params, *states[b], c, a, -2.0 * err * inv_b, grad);
    }
    return loss;
  }

  double loss(std::span<const double> params, std::span<const TreeStateEncoding* const> states,
              std::span<const int> actions, std::span<const double> targets) const {
    Cache c;
    double total = 0.0;
    for (std::size_t b = 0; b < states.size(); ++b) {
      const QValues q = forward_with(params, *states[b], c);
      const double err = targets[b] - q[static_cast<std::size_t>(actions[b])];
      total += err * err;
    }
    return total / static_cast<double>(states.size());
  }

  bool operator==(const QNetwork& o) const {
    return shape_ == o.shape_ && layout_ == o.layout_ && online_ == o.online_ && target_ == o.target_;
  }

 private:
  struct Cache {
    std::vector<double> h;  // (rows + 1) x h1, h[0] = 0
    std::vector<double> z2, g2, z3, g3;
    QValues out{};
  };

  static Layout make_layout(const NetworkShape& s) {
    Layout l{};
    std::size_t off = 0;
    auto take = [&](std::size_t n) {
      const std::size_t o = off;
      off += n;
      return o;
    };
    l.wx = take(s.h1 * s.cols);
    l.wh = take(s.h1 * s.h1);
    l.bh = take(s.h1);
    l.w2 = take(s.h2 * s.h1);
    l.b2 = take(s.h2);
    l.w3 = take(s.h3 * s.h2);
    l.b3 = take(s.h3);
    l.wo = take(kActionCount * s.h3);
    l.bo = take(kActionCount);
    l.total = off;
    return l;
  }

  void check(const TreeStateEncoding& s) const {
    if (s.rows != shape_.rows || s.values.size() != shape_.rows * shape_.cols)
      throw InputError("state shape does not match the network input");
  }

  // out = W in + b, W is (nout x nin) row-major.
  static void affine(const double* w, const double* b, const double* in, std::size_t nout, std::size_t nin,
                     double* out) {
    for (std::size_t o = 0; o < nout; ++o) {
      const double* row = w + o * nin;
      double acc = b[o];
      for (std::size_t i = 0; i < nin; ++i) acc += row[i] * in[i];
      out[o] = acc;
    }
  }

  QValues forward_with(std::span<const double> p, const TreeStateEncoding& s, Cache& c) const {
    check(s);
    const auto& sh = shape_;
    const double* P = p.data();
    c.h.assign((sh.rows + 1) * sh.h1, 0.0);
    std::vector<double> a(sh.h1);
    for (std::size_t t = 0; t < sh.rows; ++t) {
      const double* x = s.values.data() + t * sh.cols;
      const double* hp = c.h.data() + t * sh.h1;
      double* hn = c.h.data() + (t + 1) * sh.h1;
      affine(P + layout_.wx, P + layout_.bh, x, sh.h1, sh.cols, a.data());
      for (std::size_t o = 0; o < sh.h1; ++o) {
        const double* row = P + layout_.wh + o * sh.h1;
        double acc = a[o];
        for (std::size_t i = 0; i < sh.h1; ++i) acc += row[i] * hp[i];
        hn[o] = std::tanh(acc);
      }
    }
    const double* hT = c.h.data() + sh.rows * sh.h1;
    c.z2.resize(sh.h2);
    c.g2.resize(sh.h2);
    affine(P + layout_.w2, P + layout_.b2, hT, sh.h2, sh.h1, c.z2.data());
    for (std::size_t i = 0; i < sh.h2; ++i) c.g2[i] = c.z2[i] > 0.0 ? c.z2[i] : 0.0;
    c.z3.resize(sh.h3);
    c.g3.resize(sh.h3);
    affine(P + layout_.w3, P + layout_.b3, c.g2.data(), sh.h3, sh.h2, c.z3.data());
    for (std::size_t i = 0; i < sh.h3; ++i) c.g3[i] = c.z3[i] > 0.0 ? c.z3[i] : 0.0;
    QValues logits{};
    affine(P + layout_.wo, P + layout_.bo, c.g3.data(), kActionCount, sh.h3, logits.data());
    if (sh.head == QHead::Linear) {
      c.out = logits;
    } else {
      const double mx = *std::max_element(logits.begin(), logits.end());
      double sum = 0.0;
      for (std::size_t j = 0; j < kActionCount; ++j) sum += (c.out[j] = std::exp(logits[j] - mx));
      for (auto& v : c.out) v /= sum;
    }
    return c.out;
  }

  // Adds dQ_a/dtheta * scale into grad, using the cache of the last forward.
  void backward(std::span<const double> p, const TreeStateEncoding& s, const Cache& c, std::size_t a,
                double scale, std::vector<double>& grad) const {
    const auto& sh = shape_;
    const double* P = p.data();
    double* G = grad.data();

    std::array<double, kActionCount> dzo{};
    if (sh.head == QHead::Linear) {
      dzo[a] = scale;
    } else {
      for (std::size_t j = 0; j < kActionCount; ++j)
        dzo[j] = scale * c.out[a] * ((j == a ? 1.0 : 0.0) - c.out[j]);
    }

    std::vector<double> dz3(sh.h3, 0.0);
    for (std::size_t j = 0; j < kActionCount; ++j) {
      G[layout_.bo + j] += dzo[j];
      double* gw = G + layout_.wo + j * sh.h3;
      const double* w = P + layout_.wo + j * sh.h3;
      for (std::size_t i = 0; i < sh.h3; ++i) {
        gw[i] += dzo[j] * c.g3[i];
        dz3[i] += w[i] * dzo[j];
      }
    }
    for (std::size_t i = 0; i < sh.h3; ++i)
      if (c.z3[i] <= 0.0) dz3[i] = 0.0;

    std::vector<double> dz2(sh.h2, 0.0);
    for (std::size_t o = 0; o < sh.h3; ++o) {
      if (dz3[o] == 0.0) continue;
      G[layout_.b3 + o] += dz3[o];
      double* gw = G + layout_.w3 + o * sh.h2;
      const double* w = P + layout_.w3 + o * sh.h2;
      for (std::size_t i = 0; i < sh.h2; ++i) {
        gw[i] += dz3[o] * c.g2[i];
        dz2[i] += w[i] * dz3[o];
      }
    }
    for (std::size_t i = 0; i < sh.h2; ++i)
      if (c.z2[i] <= 0.0) dz2[i] = 0.0;

    const double* hT = c.h.data() + sh.rows * sh.h1;
    std::vector<double> dh(sh.h1, 0.0);
    for (std::size_t o = 0; o < sh.h2; ++o) {
      if (dz2[o] == 0.0) continue;
      G[layout_.b2 + o] += dz2[o];
      double* gw = G + layout_.w2 + o * sh.h1;
      const double* w = P + layout_.w2 + o * sh.h1;
      for (std::size_t i = 0; i < sh.h1; ++i) {
        gw[i] += dz2[o] * hT[i];
        dh[i] += w[i] * dz2[o];
      }
    }

    std::vector<double> da(sh.h1), dprev(sh.h1);
    for (std::size_t t = sh.rows; t-- > 0;) {
      const double* hn = c.h.data() + (t + 1) * sh.h1;
      const double* hp = c.h.data() + t * sh.h1;
      const double* x = s.values.data() + t * sh.cols;
      for (std::size_t o = 0; o < sh.h1; ++o) da[o] = dh[o] * (1.0 - hn[o] * hn[o]);
      std::fill(dprev.begin(), dprev.end(), 0.0);
      for (std::size_t o = 0; o < sh.h1; ++o) {
        const double d = da[o];
        if (d == 0.0) continue;
        G[layout_.bh + o] += d;
        double* gx = G + layout_.wx + o * sh.cols;
        for (std::size_t i = 0; i < sh.cols; ++i) gx[i] += d * x[i];
        double* gh = G + layout_.wh + o * sh.h1;
        const double* w = P + layout_.wh + o * sh.h1;
        for (std::size_t i = 0; i < sh.h1; ++i) {
          gh[i] += d * hp[i];
          dprev[i] += w[i] * d;
        }
      }
      std::swap(dh, dprev);
    }
  }

  static std::uint64_t next_version() {
    static std::atomic<std::uint64_t> counter{0};
    return ++counter;
  }

  NetworkShape shape_;
  Layout layout_{};
  std::vector<double> online_;
  std::vector<double> target_;
  std::uint64_t target_version_ = next_version();
};

}  // namespace rltir
