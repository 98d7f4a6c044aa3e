#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "ttrec/checkpoint.hpp"
#include "ttrec/gemm.hpp"
#include "ttrec/rng.hpp"

namespace ttrec {

/// Fully connected stack with ReLU between layers (none after the last).
/// Inputs/outputs are row-major (batch x dim). Layer weights are (out x in);
/// init is U(-1/sqrt(in), 1/sqrt(in)), biases zero.
template <Scalar T>
class Mlp {
 public:
  struct Layer {
    index_t in = 0, out = 0;
    std::vector<T> w, b;
    std::vector<T> gw, gb;
    std::vector<T> x;   // saved input
    std::vector<T> z;   // saved pre-activation
    std::vector<T> dz;  // scratch
  };

  Mlp() = default;
  Mlp(index_t input_dim, const std::vector<index_t>& layer_dims) {
    require_arg(input_dim >= 1, "input_dim must be positive");
    require_arg(!layer_dims.empty(), "need at least one layer");
    index_t in = input_dim;
    for (index_t out : layer_dims) {
      require_arg(out >= 1, "layer width must be positive, got ", out);
      Layer l;
      l.in = in;
      l.out = out;
      l.w.assign(static_cast<size_t>(out) * in, T(0));
      l.b.assign(out, T(0));
      l.gw.assign(l.w.size(), T(0));
      l.gb.assign(l.b.size(), T(0));
      layers_.push_back(std::move(l));
      in = out;
    }
  }

  index_t input_dim() const { return layers_.front().in; }
  index_t output_dim() const { return layers_.back().out; }
  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }

  void init(std::uint64_t seed) {
    for (size_t i = 0; i < layers_.size(); ++i) {
      Rng rng = Rng::derive(seed, i);
      Layer& l = layers_[i];
      const double s = 1.0 / std::sqrt(static_cast<double>(l.in));
      for (T& v : l.w) v = static_cast<T>(rng.uniform(-s, s));
      std::fill(l.b.begin(), l.b.end(), T(0));
    }
  }

  index_t parameter_count() const {
    index_t n = 0;
    for (const Layer& l : layers_) n += l.out * l.in + l.out;
    return n;
  }

  /// Returns the final (batch x output_dim) activations; valid until the
  /// next forward call.
  std::span<const T> forward(std::span<const T> x, index_t batch) {
    require_arg(static_cast<index_t>(x.size()) == batch * input_dim(),
                "mlp forward: input size mismatch");
    batch_ = batch;
    const T* cur = x.data();
    for (size_t i = 0; i < layers_.size(); ++i) {
      Layer& l = layers_[i];
      l.x.assign(cur, cur + static_cast<size_t>(batch) * l.in);
      l.z.resize(static_cast<size_t>(batch) * l.out);
      matmul_abt(l.x.data(), l.w.data(), l.z.data(), batch, l.in, l.out);
      for (index_t r = 0; r < batch; ++r)
        for (index_t j = 0; j < l.out; ++j) l.z[r * l.out + j] += l.b[j];
      if (i + 1 < layers_.size()) {
        act_.resize(l.z.size());
        for (size_t e = 0; e < l.z.size(); ++e) act_[e] = l.z[e] > T(0) ? l.z[e] : T(0);
        cur = act_.data();
      } else {
        cur = l.z.data();
      }
    }
    return {cur, static_cast<size_t>(batch_) * output_dim()};
  }

  /// dy is (batch x output_dim); accumulates gw/gb and returns
  /// d(loss)/d(input) (valid until the next backward call).
  std::span<const T> backward(std::span<const T> dy) {
    require_arg(static_cast<index_t>(dy.size()) == batch_ * output_dim(),
                "mlp backward: grad size mismatch");
    const T* cur = dy.data();
    for (size_t i = layers_.size(); i-- > 0;) {
      Layer& l = layers_[i];
      l.dz.assign(cur, cur + static_cast<size_t>(batch_) * l.out);
      if (i + 1 < layers_.size()) {
        // ReLU mask from the saved pre-activation
        for (size_t e = 0; e < l.dz.size(); ++e)
          if (l.z[e] <= T(0)) l.dz[e] = T(0);
      }
      matmul_atb_acc(l.dz.data(), l.x.data(), l.gw.data(), batch_, l.out, l.in);
      for (index_t r = 0; r < batch_; ++r)
        for (index_t j = 0; j < l.out; ++j) l.gb[j] += l.dz[r * l.out + j];
      dx_.resize(static_cast<size_t>(batch_) * l.in);
      matmul(l.dz.data(), l.w.data(), dx_.data(), batch_, l.out, l.in);
      cur = dx_.data();
    }
    return {cur, static_cast<size_t>(batch_) * input_dim()};
  }

  void zero_grad() {
    for (Layer& l : layers_) {
      std::fill(l.gw.begin(), l.gw.end(), T(0));
      std::fill(l.gb.begin(), l.gb.end(), T(0));
    }
  }

  void step(double lr) {
    const T s = static_cast<T>(lr);
    for (Layer& l : layers_) {
      for (size_t e = 0; e < l.w.size(); ++e) l.w[e] -= s * l.gw[e];
      for (size_t e = 0; e < l.b.size(); ++e) l.b[e] -= s * l.gb[e];
    }
  }

  void put(Checkpoint& cp, const std::string& prefix) const {
    for (size_t i = 0; i < layers_.size(); ++i) {
      const Layer& l = layers_[i];
      cp.put_array<T>(concat(prefix, ".w", i), {l.out, l.in}, l.w);
      cp.put_array<T>(concat(prefix, ".b", i), {l.out}, l.b);
    }
  }

  void load_from(const Checkpoint& cp, const std::string& prefix) {
    for (size_t i = 0; i < layers_.size(); ++i) {
      Layer& l = layers_[i];
      auto w = cp.get_array<T>(concat(prefix, ".w", i));
      auto b = cp.get_array<T>(concat(prefix, ".b", i));
      require(w.size() == l.w.size() && b.size() == l.b.size(),
              "checkpoint layer shape mismatch at ", prefix, " layer ", i);
      l.w = std::move(w);
      l.b = std::move(b);
    }
  }

 private:
  std::vector<Layer> layers_;
  std::vector<T> act_, dx_;
  index_t batch_ = 0;
};

}  // namespace ttrec
