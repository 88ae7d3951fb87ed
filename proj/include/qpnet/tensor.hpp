#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "qpnet/errors.hpp"

namespace qpnet::engine {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

template <typename S>
class Tape;

// Lightweight handle to a node owned by a Tape. Channel-major layout:
// rows = channels, cols = time. Scalars are 1x1.
template <typename S>
class Tensor {
 public:
  Tensor() = default;

  Eigen::Index rows() const;
  Eigen::Index cols() const;
  const Mat<S>& value() const;
  // Gradient accumulated by backward(); zero-shaped matrices read as all-zero.
  Mat<S> grad() const;
  bool requires_grad() const;
  bool valid() const { return tape_ != nullptr; }
  int id() const { return id_; }

 private:
  friend class Tape<S>;
  Tensor(Tape<S>* tape, int id) : tape_(tape), id_(id) {}
  Tape<S>* tape_ = nullptr;
  int id_ = -1;
};

// Define-by-run reverse-mode tape. One tape per training step; single-threaded.
// backward() releases intermediate buffers as it walks the tape, so peak memory
// stays close to the forward footprint.
template <typename S>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor<S> leaf(Mat<S> value, bool requires_grad = true);
  Tensor<S> constant(Mat<S> value) { return leaf(std::move(value), false); }

  // out[c,t] = sum_k w[c,k] * x[k,t] + b[c]
  Tensor<S> channel_mix_1x1(Tensor<S> w, Tensor<S> x, Tensor<S> b);
  Tensor<S> channel_mix_1x1(Tensor<S> w, Tensor<S> x);

  // out[:,t] = x[:, t - offsets[t]], zero column when the index is negative.
  // offsets[t] >= 1; backward scatters with additive collision handling.
  Tensor<S> causal_gather(Tensor<S> x, std::vector<int> offsets);

  Tensor<S> add(Tensor<S> a, Tensor<S> b);
  Tensor<S> add_n(std::span<const Tensor<S>> terms);
  Tensor<S> mul(Tensor<S> a, Tensor<S> b);
  Tensor<S> tanh(Tensor<S> x);
  Tensor<S> sigmoid(Tensor<S> x);
  Tensor<S> relu(Tensor<S> x);

  // Mean over columns of -log softmax(logits[:,t])[targets[t]].
  Tensor<S> softmax_cross_entropy(Tensor<S> logits, std::span<const uint8_t> targets);

  void backward(Tensor<S> loss);
  bool consumed() const { return consumed_; }
  size_t size() const { return nodes_.size(); }

 private:
  friend class Tensor<S>;

  struct Node {
    Mat<S> value;
    Mat<S> grad;  // lazily allocated on first accumulation
    Eigen::Index rows = 0, cols = 0;
    bool requires_grad = false;
    bool is_leaf = false;
    bool released = false;
    std::function<void(Tape&, Node&)> backprop;
  };

  Tensor<S> emplace(Mat<S> value, bool requires_grad, std::function<void(Tape&, Node&)> fn);
  Node& node(int id) { return nodes_[static_cast<size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
  const Mat<S>& value_of(int id) const;
  Mat<S>& grad_buffer(int id);
  bool wants_grad(int id) const { return node(id).requires_grad; }

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// Adam with bias correction. Moment buffers are index-aligned with the
// parameter list handed to adam_step.
template <typename S>
struct AdamState {
  S learning_rate = S(1e-4);
  S beta1 = S(0.9);
  S beta2 = S(0.999);
  S epsilon = S(1e-8);
  int64_t step_count = 0;
  std::vector<Mat<S>> first_moment;
  std::vector<Mat<S>> second_moment;

  static AdamState zeros_like(std::span<const Mat<S>* const> params, S learning_rate);
};

template <typename S>
void adam_step(std::span<Mat<S>* const> params, std::span<const Mat<S>* const> grads,
               AdamState<S>& state);

using TapeF = Tape<float>;
using TapeD = Tape<double>;

extern template class Tape<float>;
extern template class Tape<double>;
extern template class Tensor<float>;
extern template class Tensor<double>;
extern template struct AdamState<float>;
extern template struct AdamState<double>;
extern template void adam_step<float>(std::span<Mat<float>* const>,
                                      std::span<const Mat<float>* const>, AdamState<float>&);
extern template void adam_step<double>(std::span<Mat<double>* const>,
                                       std::span<const Mat<double>* const>, AdamState<double>&);

}  // namespace qpnet::engine
