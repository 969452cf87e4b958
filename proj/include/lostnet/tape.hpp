#pragma once

// Reverse-mode recording for the fixed op set in ops.hpp. A Tape holds the
// value of every node produced on it; when recording, it also keeps the
// closure that maps a node's upstream gradient onto its inputs.

#include <functional>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "lostnet/ops.hpp"

namespace lostnet {

template <typename T>
class Tape {
 public:
  struct Var {
    std::size_t id = static_cast<std::size_t>(-1);
    bool valid() const { return id != static_cast<std::size_t>(-1); }
  };

  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Tensor<T> value) { return push(std::move(value), false, {}); }

  /// A leaf. Gradients are collected for it only when recording and trainable.
  Var parameter(Tensor<T> value, bool trainable = true) {
    return push(std::move(value), recording_ && trainable, {});
  }

  /// A leaf that refers to an externally owned tensor; `value` must outlive the tape.
  Var parameter_ref(const Tensor<T>& value, bool trainable = true) {
    Var v = push(Tensor<T>(), recording_ && trainable, {});
    nodes_.back().ref = &value;
    return v;
  }

  const Tensor<T>& value(Var v) const {
    const Node& nd = node(v);
    return nd.ref ? *nd.ref : nd.value;
  }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  bool has_grad(Var v) const { return node(v).grad_set; }

  const Tensor<T>& grad(Var v) const {
    const Node& nd = node(v);
    if (!nd.grad_set) throw std::logic_error("tape: no gradient was propagated to node " + std::to_string(v.id));
    return nd.grad;
  }

  /// Propagates `upstream` (shaped like out's value) back through every recorded node.
  void backward(Var out, const Tensor<T>& upstream) {
    if (!recording_) throw std::logic_error("tape: backward called but the forward pass was not recorded");
    if (!node(out).requires_grad) {
      throw std::logic_error("tape: backward from a node that does not depend on parameters");
    }
    require_same_shape(value(out).shape(), upstream.shape(), "tape backward upstream");
    accumulate(out, upstream);
    for (std::size_t i = out.id + 1; i-- > 0;) {
      Node& nd = nodes_[i];
      if (!nd.grad_set || !nd.fn) continue;
      Tensor<T> g = std::move(nd.grad);
      nd.grad = Tensor<T>();
      nd.grad_set = false;
      nd.fn(*this, g);
    }
  }

  /// Backward from a scalar node with unit upstream gradient.
  void backward(Var scalar) { backward(scalar, Tensor<T>(value(scalar).shape(), T(1))); }

  void accumulate(Var v, const Tensor<T>& g) {
    Node& nd = node(v);
    if (!nd.requires_grad) return;
    if (!nd.grad_set) {
      require_same_shape(value(v).shape(), g.shape(), "tape gradient");
      nd.grad = g;
      nd.grad_set = true;
      return;
    }
    require_same_shape(nd.grad.shape(), g.shape(), "tape gradient");
    for (std::size_t i = 0; i < g.size(); ++i) nd.grad[i] += g[i];
  }

  void accumulate(Var v, const std::vector<T>& g) {
    if (!v.valid() || !requires_grad(v)) return;
    accumulate(v, Tensor<T>(value(v).shape(), g));
  }

  // --- ops ----------------------------------------------------------------

  Var conv2d(Var x, Var w, std::optional<Var> b, std::size_t stride, std::size_t pad, std::size_t groups) {
    std::span<const T> bias;
    if (b) bias = value(*b).values();
    Tensor<T> y = lostnet::conv2d(value(x), value(w), bias, stride, pad, groups);
    const Var bv = b.value_or(Var{});
    return record(std::move(y), {x, w, bv}, [=](Tape& t, const Tensor<T>& gy) {
      const bool gb = bv.valid() && t.requires_grad(bv);
      auto g = conv2d_backward(t.value(x), t.value(w), gy, stride, pad, groups, t.requires_grad(x),
                               t.requires_grad(w), gb);
      if (t.requires_grad(x)) t.accumulate(x, g.input);
      if (t.requires_grad(w)) t.accumulate(w, g.weights);
      if (gb) t.accumulate(bv, g.bias);
    });
  }

  /// Normalization over a node. In Training mode running_mean / running_var
  /// are updated in place.
  Var batchnorm(Var x, Var scale, Var shift, std::span<T> running_mean, std::span<T> running_var,
                BatchNormMode mode, BatchNormConfig cfg = {}) {
    auto r = lostnet::batchnorm(value(x), value(scale).values(), value(shift).values(), running_mean,
                                running_var, mode, cfg);
    return finish_batchnorm(x, scale, shift, std::move(r), mode);
  }

  /// Inference-mode normalization against read-only statistics.
  Var batchnorm(Var x, Var scale, Var shift, std::span<const T> running_mean, std::span<const T> running_var,
                BatchNormConfig cfg = {}) {
    auto r = batchnorm_inference(value(x), value(scale).values(), value(shift).values(), running_mean,
                                 running_var, cfg);
    return finish_batchnorm(x, scale, shift, std::move(r), BatchNormMode::Inference);
  }

 private:
  Var finish_batchnorm(Var x, Var scale, Var shift, BatchNormResult<T> r, BatchNormMode mode) {
    std::vector<T> mean = std::move(r.mean), inv = std::move(r.inv_std);
    return record(std::move(r.output), {x, scale, shift}, [=](Tape& t, const Tensor<T>& gy) {
      auto g = batchnorm_backward(t.value(x), t.value(scale).values(), std::span<const T>(mean),
                                  std::span<const T>(inv), gy, mode);
      t.accumulate(x, g.input);
      t.accumulate(scale, g.scale);
      t.accumulate(shift, g.shift);
    });
  }

 public:

  Var relu6(Var x) {
    return record(lostnet::relu6(value(x)), {x}, [=](Tape& t, const Tensor<T>& gy) {
      t.accumulate(x, relu6_backward(t.value(x), gy));
    });
  }

  Var relu(Var x) {
    return record(lostnet::relu(value(x)), {x}, [=](Tape& t, const Tensor<T>& gy) {
      t.accumulate(x, relu_backward(t.value(x), gy));
    });
  }

  Var sigmoid(Var x) {
    Var out = record(lostnet::sigmoid(value(x)), {x}, {});
    set_fn(out, [=](Tape& t, const Tensor<T>& gy) { t.accumulate(x, sigmoid_backward(t.value(out), gy)); });
    return out;
  }

  Var softmax(Var x, std::size_t axis = 1) {
    Var out = record(lostnet::softmax(value(x), axis), {x}, {});
    set_fn(out, [=](Tape& t, const Tensor<T>& gy) {
      t.accumulate(x, softmax_backward(t.value(out), gy, axis));
    });
    return out;
  }

  Var global_avg_pool(Var x) {
    const Shape in = value(x).shape();
    return record(lostnet::global_avg_pool(value(x)), {x}, [=](Tape& t, const Tensor<T>& gy) {
      t.accumulate(x, global_avg_pool_backward(in, gy));
    });
  }

  Var global_max_pool(Var x) {
    return record(lostnet::global_max_pool(value(x)), {x}, [=](Tape& t, const Tensor<T>& gy) {
      t.accumulate(x, global_max_pool_backward(t.value(x), gy));
    });
  }

  Var channel_avg(Var x) {
    const Shape in = value(x).shape();
    return record(lostnet::channel_avg(value(x)), {x}, [=](Tape& t, const Tensor<T>& gy) {
      t.accumulate(x, channel_avg_backward(in, gy));
    });
  }

  Var channel_max(Var x) {
    return record(lostnet::channel_max(value(x)), {x}, [=](Tape& t, const Tensor<T>& gy) {
      t.accumulate(x, channel_max_backward(t.value(x), gy));
    });
  }

  Var linear(Var x, Var w, std::optional<Var> b) {
    std::span<const T> bias;
    if (b) bias = value(*b).values();
    const Var bv = b.value_or(Var{});
    return record(lostnet::linear(value(x), value(w), bias), {x, w, bv}, [=](Tape& t, const Tensor<T>& gy) {
      const bool gb = bv.valid() && t.requires_grad(bv);
      auto g = linear_backward(t.value(x), t.value(w), gy, t.requires_grad(x), t.requires_grad(w), gb);
      if (t.requires_grad(x)) t.accumulate(x, g.input);
      if (t.requires_grad(w)) t.accumulate(w, g.weights);
      if (gb) t.accumulate(bv, g.bias);
    });
  }

  Var add(Var a, Var b) {
    return record(lostnet::add(value(a), value(b)), {a, b}, [=](Tape& t, const Tensor<T>& gy) {
      t.accumulate(a, gy);
      t.accumulate(b, gy);
    });
  }

  /// x times a gate broadcast over channels or space.
  Var mul(Var x, Var gate) {
    return record(mul_broadcast(value(x), value(gate)), {x, gate}, [=](Tape& t, const Tensor<T>& gy) {
      auto g = mul_broadcast_backward(t.value(x), t.value(gate), gy);
      t.accumulate(x, g.input);
      t.accumulate(gate, g.gate);
    });
  }

  Var concat(Var a, Var b) {
    const std::size_t ca = value(a).shape().c();
    return record(concat_channels(value(a), value(b)), {a, b}, [=](Tape& t, const Tensor<T>& gy) {
      auto [ga, gb] = split_channels(gy, ca);
      t.accumulate(a, ga);
      t.accumulate(b, gb);
    });
  }

  /// Mean cross-entropy of softmax(logits) against integer labels; a (1,1,1,1) node.
  Var softmax_cross_entropy(Var logits, std::vector<std::size_t> labels) {
    Tensor<T> probs = lostnet::softmax(value(logits), 1);
    const Shape& s = probs.shape();
    const std::size_t k = s.c() * s.plane();
    if (labels.size() != s.n()) {
      throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                       s.str());
    }
    double loss = 0;
    for (std::size_t n = 0; n < s.n(); ++n) {
      if (labels[n] >= k) throw std::out_of_range("label " + std::to_string(labels[n]) + " out of range");
      loss -= std::log(std::max<double>(probs[n * k + labels[n]], 1e-12));
    }
    loss /= static_cast<double>(s.n());
    Tensor<T> value_t(Shape(1, 1, 1, 1), static_cast<T>(loss));
    return record(std::move(value_t), {logits},
                  [=, probs = std::move(probs), labels = std::move(labels)](Tape& t, const Tensor<T>& gy) {
                    Tensor<T> g = softmax_cross_entropy_backward(probs, std::span<const std::size_t>(labels));
                    for (auto& v : g.values()) v *= gy[0];
                    t.accumulate(logits, g);
                  });
  }

 private:
  using Fn = std::function<void(Tape&, const Tensor<T>&)>;

  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    bool grad_set = false;
    Fn fn;
    const Tensor<T>* ref = nullptr;
  };

  Node& node(Var v) {
    if (v.id >= nodes_.size()) throw std::out_of_range("tape: unknown node " + std::to_string(v.id));
    return nodes_[v.id];
  }
  const Node& node(Var v) const {
    if (v.id >= nodes_.size()) throw std::out_of_range("tape: unknown node " + std::to_string(v.id));
    return nodes_[v.id];
  }

  Var push(Tensor<T> value, bool requires_grad, Fn fn) {
    nodes_.push_back(Node{std::move(value), Tensor<T>(), requires_grad, false, std::move(fn), nullptr});
    return Var{nodes_.size() - 1};
  }

  Var record(Tensor<T> value, std::initializer_list<Var> inputs, Fn fn) {
    bool needs = false;
    if (recording_) {
      for (const Var& v : inputs) needs = needs || (v.valid() && node(v).requires_grad);
    }
    return push(std::move(value), needs, needs ? std::move(fn) : Fn{});
  }

  void set_fn(Var v, Fn fn) {
    Node& nd = node(v);
    if (nd.requires_grad) nd.fn = std::move(fn);
  }

  bool recording_;
  std::vector<Node> nodes_;
};

}  // namespace lostnet
