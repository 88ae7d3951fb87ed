#include "qpnet/tensor.hpp"

#include <cmath>
#include <memory>
#include <utility>

namespace qpnet::engine {

namespace {

template <typename S>
std::string shape_str(const Mat<S>& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

template <typename S>
Eigen::Index Tensor<S>::rows() const {
  return tape_->node(id_).rows;
}

template <typename S>
Eigen::Index Tensor<S>::cols() const {
  return tape_->node(id_).cols;
}

template <typename S>
const Mat<S>& Tensor<S>::value() const {
  return tape_->value_of(id_);
}

template <typename S>
Mat<S> Tensor<S>::grad() const {
  const auto& n = tape_->node(id_);
  if (n.grad.size() == 0) return Mat<S>::Zero(n.rows, n.cols);
  return n.grad;
}

template <typename S>
bool Tensor<S>::requires_grad() const {
  return tape_->node(id_).requires_grad;
}

template <typename S>
const Mat<S>& Tape<S>::value_of(int id) const {
  const Node& n = node(id);
  if (n.released) throw UsageError("tensor value was released by backward()");
  return n.value;
}

template <typename S>
Mat<S>& Tape<S>::grad_buffer(int id) {
  Node& n = node(id);
  if (n.grad.size() == 0) n.grad = Mat<S>::Zero(n.rows, n.cols);
  return n.grad;
}

template <typename S>
Tensor<S> Tape<S>::emplace(Mat<S> value, bool requires_grad, std::function<void(Tape&, Node&)> fn) {
  if (consumed_) throw UsageError("tape already consumed by backward()");
  Node n;
  n.rows = value.rows();
  n.cols = value.cols();
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.backprop = std::move(fn);
  nodes_.push_back(std::move(n));
  return Tensor<S>(this, static_cast<int>(nodes_.size()) - 1);
}

template <typename S>
Tensor<S> Tape<S>::leaf(Mat<S> value, bool requires_grad) {
  Tensor<S> t = emplace(std::move(value), requires_grad, nullptr);
  node(t.id()).is_leaf = true;
  return t;
}

template <typename S>
Tensor<S> Tape<S>::channel_mix_1x1(Tensor<S> w, Tensor<S> x, Tensor<S> b) {
  const Mat<S>& wv = value_of(w.id());
  const Mat<S>& xv = value_of(x.id());
  const Mat<S>& bv = value_of(b.id());
  if (wv.cols() != xv.rows())
    throw ConfigError("channel_mix_1x1: weight " + shape_str(wv) + " does not match input " +
                      shape_str(xv));
  if (bv.rows() != wv.rows() || bv.cols() != 1)
    throw ConfigError("channel_mix_1x1: bias " + shape_str(bv) + " must be " +
                      std::to_string(wv.rows()) + "x1");
  Mat<S> out(wv.rows(), xv.cols());
  out.noalias() = wv * xv;
  out.colwise() += bv.col(0);
  bool rg = wants_grad(w.id()) || wants_grad(x.id()) || wants_grad(b.id());
  int wi = w.id(), xi = x.id(), bi = b.id();
  return emplace(std::move(out), rg, !rg ? std::function<void(Tape&, Node&)>() : [wi, xi, bi](Tape& t, Node& self) {
    const Mat<S>& g = self.grad;
    if (t.wants_grad(wi)) t.grad_buffer(wi).noalias() += g * t.value_of(xi).transpose();
    if (t.wants_grad(xi)) t.grad_buffer(xi).noalias() += t.value_of(wi).transpose() * g;
    if (t.wants_grad(bi)) t.grad_buffer(bi).col(0).noalias() += g.rowwise().sum();
  });
}

template <typename S>
Tensor<S> Tape<S>::channel_mix_1x1(Tensor<S> w, Tensor<S> x) {
  const Mat<S>& wv = value_of(w.id());
  const Mat<S>& xv = value_of(x.id());
  if (wv.cols() != xv.rows())
    throw ConfigError("channel_mix_1x1: weight " + shape_str(wv) + " does not match input " +
                      shape_str(xv));
  Mat<S> out(wv.rows(), xv.cols());
  out.noalias() = wv * xv;
  bool rg = wants_grad(w.id()) || wants_grad(x.id());
  int wi = w.id(), xi = x.id();
  return emplace(std::move(out), rg, !rg ? std::function<void(Tape&, Node&)>() : [wi, xi](Tape& t, Node& self) {
    const Mat<S>& g = self.grad;
    if (t.wants_grad(wi)) t.grad_buffer(wi).noalias() += g * t.value_of(xi).transpose();
    if (t.wants_grad(xi)) t.grad_buffer(xi).noalias() += t.value_of(wi).transpose() * g;
  });
}

namespace {

// -1 when offsets vary over time, otherwise the shared value.
inline int constant_offset(const std::vector<int>& offsets) {
  if (offsets.empty()) return -1;
  int d = offsets[0];
  for (int o : offsets)
    if (o != d) return -1;
  return d;
}

}  // namespace

template <typename S>
Tensor<S> Tape<S>::causal_gather(Tensor<S> x, std::vector<int> offsets) {
  const Mat<S>& xv = value_of(x.id());
  const auto T = xv.cols();
  if (static_cast<Eigen::Index>(offsets.size()) != T)
    throw ConfigError("causal_gather: offsets length " + std::to_string(offsets.size()) +
                      " does not match T=" + std::to_string(T));
  for (int o : offsets)
    if (o < 1) throw ConfigError("causal_gather: offset " + std::to_string(o) + " breaks causality (must be >= 1)");

  Mat<S> out = Mat<S>::Zero(xv.rows(), T);
  const int d = constant_offset(offsets);
  if (d > 0) {
    if (d < T) out.rightCols(T - d) = xv.leftCols(T - d);
  } else {
    for (Eigen::Index t = 0; t < T; ++t) {
      Eigen::Index src = t - offsets[static_cast<size_t>(t)];
      if (src >= 0) out.col(t) = xv.col(src);
    }
  }
  bool rg = wants_grad(x.id());
  int xi = x.id();
  return emplace(std::move(out), rg,
                 !rg ? std::function<void(Tape&, Node&)>()
                     : [xi, offs = std::move(offsets), d](Tape& t, Node& self) {
                         Mat<S>& gx = t.grad_buffer(xi);
                         const Mat<S>& g = self.grad;
                         const Eigen::Index T = g.cols();
                         if (d > 0) {
                           if (d < T) gx.leftCols(T - d) += g.rightCols(T - d);
                         } else {
                           for (Eigen::Index tt = 0; tt < T; ++tt) {
                             Eigen::Index src = tt - offs[static_cast<size_t>(tt)];
                             if (src >= 0) gx.col(src) += g.col(tt);
                           }
                         }
                       });
}

template <typename S>
Tensor<S> Tape<S>::add(Tensor<S> a, Tensor<S> b) {
  const Mat<S>& av = value_of(a.id());
  const Mat<S>& bv = value_of(b.id());
  if (av.rows() != bv.rows() || av.cols() != bv.cols())
    throw ConfigError("add: shape mismatch " + shape_str(av) + " vs " + shape_str(bv));
  Mat<S> out = av + bv;
  bool rg = wants_grad(a.id()) || wants_grad(b.id());
  int ai = a.id(), bi = b.id();
  return emplace(std::move(out), rg, !rg ? std::function<void(Tape&, Node&)>() : [ai, bi](Tape& t, Node& self) {
    if (t.wants_grad(ai)) t.grad_buffer(ai) += self.grad;
    if (t.wants_grad(bi)) t.grad_buffer(bi) += self.grad;
  });
}

template <typename S>
Tensor<S> Tape<S>::add_n(std::span<const Tensor<S>> terms) {
  if (terms.empty()) throw ConfigError("add_n: no terms");
  Mat<S> out = value_of(terms[0].id());
  for (size_t i = 1; i < terms.size(); ++i) {
    const Mat<S>& v = value_of(terms[i].id());
    if (v.rows() != out.rows() || v.cols() != out.cols())
      throw ConfigError("add_n: shape mismatch " + shape_str(out) + " vs " + shape_str(v));
    out += v;
  }
  std::vector<int> ids(terms.size());
  bool rg = false;
  for (size_t i = 0; i < terms.size(); ++i) {
    ids[i] = terms[i].id();
    rg = rg || wants_grad(ids[i]);
  }
  return emplace(std::move(out), rg,
                 !rg ? std::function<void(Tape&, Node&)>() : [ids = std::move(ids)](Tape& t, Node& self) {
                   for (int id : ids)
                     if (t.wants_grad(id)) t.grad_buffer(id) += self.grad;
                 });
}

template <typename S>
Tensor<S> Tape<S>::mul(Tensor<S> a, Tensor<S> b) {
  const Mat<S>& av = value_of(a.id());
  const Mat<S>& bv = value_of(b.id());
  if (av.rows() != bv.rows() || av.cols() != bv.cols())
    throw ConfigError("mul: shape mismatch " + shape_str(av) + " vs " + shape_str(bv));
  Mat<S> out = av.cwiseProduct(bv);
  bool rg = wants_grad(a.id()) || wants_grad(b.id());
  int ai = a.id(), bi = b.id();
  return emplace(std::move(out), rg, !rg ? std::function<void(Tape&, Node&)>() : [ai, bi](Tape& t, Node& self) {
    if (t.wants_grad(ai)) t.grad_buffer(ai).array() += self.grad.array() * t.value_of(bi).array();
    if (t.wants_grad(bi)) t.grad_buffer(bi).array() += self.grad.array() * t.value_of(ai).array();
  });
}

template <typename S>
Tensor<S> Tape<S>::tanh(Tensor<S> x) {
  Mat<S> out = value_of(x.id()).array().tanh();
  bool rg = wants_grad(x.id());
  int xi = x.id();
  return emplace(std::move(out), rg, !rg ? std::function<void(Tape&, Node&)>() : [xi](Tape& t, Node& self) {
    t.grad_buffer(xi).array() += self.grad.array() * (S(1) - self.value.array().square());
  });
}

template <typename S>
Tensor<S> Tape<S>::sigmoid(Tensor<S> x) {
  Mat<S> out = value_of(x.id()).array().logistic();
  bool rg = wants_grad(x.id());
  int xi = x.id();
  return emplace(std::move(out), rg, !rg ? std::function<void(Tape&, Node&)>() : [xi](Tape& t, Node& self) {
    t.grad_buffer(xi).array() +=
        self.grad.array() * self.value.array() * (S(1) - self.value.array());
  });
}

template <typename S>
Tensor<S> Tape<S>::relu(Tensor<S> x) {
  Mat<S> out = value_of(x.id()).array().max(S(0));
  bool rg = wants_grad(x.id());
  int xi = x.id();
  return emplace(std::move(out), rg, !rg ? std::function<void(Tape&, Node&)>() : [xi](Tape& t, Node& self) {
    t.grad_buffer(xi).array() +=
        self.grad.array() * (t.value_of(xi).array() > S(0)).template cast<S>();
  });
}

template <typename S>
Tensor<S> Tape<S>::softmax_cross_entropy(Tensor<S> logits, std::span<const uint8_t> targets) {
  const Mat<S>& lv = value_of(logits.id());
  const Eigen::Index T = lv.cols();
  if (static_cast<Eigen::Index>(targets.size()) != T)
    throw DataError("softmax_cross_entropy: targets length " + std::to_string(targets.size()) +
                    " does not match T=" + std::to_string(T));
  for (uint8_t c : targets)
    if (static_cast<Eigen::Index>(c) >= lv.rows())
      throw DataError("softmax_cross_entropy: target code " + std::to_string(int(c)) +
                      " out of range for " + std::to_string(lv.rows()) + " classes");

  // Stable column-wise softmax; probabilities kept for backward.
  auto probs = std::make_shared<Mat<S>>(lv.rows(), T);
  double loss_acc = 0.0;
  for (Eigen::Index t = 0; t < T; ++t) {
    S m = lv.col(t).maxCoeff();
    probs->col(t) = (lv.col(t).array() - m).exp();
    S z = probs->col(t).sum();
    probs->col(t) /= z;
    loss_acc += static_cast<double>(std::log(z) + m - lv(targets[static_cast<size_t>(t)], t));
  }
  Mat<S> out(1, 1);
  out(0, 0) = static_cast<S>(loss_acc / static_cast<double>(T));

  bool rg = wants_grad(logits.id());
  int li = logits.id();
  std::vector<uint8_t> tg(targets.begin(), targets.end());
  return emplace(std::move(out), rg,
                 !rg ? std::function<void(Tape&, Node&)>()
                     : [li, probs, tg = std::move(tg)](Tape& t, Node& self) {
                         const S scale = self.grad(0, 0) / static_cast<S>(tg.size());
                         Mat<S>& gl = t.grad_buffer(li);
                         for (Eigen::Index c = 0; c < gl.cols(); ++c) {
                           gl.col(c) += scale * probs->col(c);
                           gl(tg[static_cast<size_t>(c)], c) -= scale;
                         }
                       });
}

template <typename S>
void Tape<S>::backward(Tensor<S> loss) {
  if (consumed_) throw UsageError("backward: tape already consumed");
  Node& ln = node(loss.id());
  if (ln.rows != 1 || ln.cols != 1) throw UsageError("backward: loss must be a 1x1 scalar");
  grad_buffer(loss.id()).setConstant(S(1));

  for (int id = loss.id(); id >= 0; --id) {
    Node& n = node(id);
    if (n.backprop && n.requires_grad && n.grad.size() != 0) {
      n.backprop(*this, n);
    }
    n.backprop = nullptr;  // drop closure captures eagerly
    if (!n.is_leaf) {
      n.value.resize(0, 0);
      n.grad.resize(0, 0);
      n.released = true;
    }
  }
  consumed_ = true;
}

template <typename S>
AdamState<S> AdamState<S>::zeros_like(std::span<const Mat<S>* const> params, S learning_rate) {
  AdamState<S> st;
  st.learning_rate = learning_rate;
  st.first_moment.reserve(params.size());
  st.second_moment.reserve(params.size());
  for (const Mat<S>* p : params) {
    st.first_moment.push_back(Mat<S>::Zero(p->rows(), p->cols()));
    st.second_moment.push_back(Mat<S>::Zero(p->rows(), p->cols()));
  }
  return st;
}

template <typename S>
void adam_step(std::span<Mat<S>* const> params, std::span<const Mat<S>* const> grads,
               AdamState<S>& state) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size())
    throw ConfigError("adam_step: parameter/gradient/state count mismatch");
  state.step_count += 1;
  const S b1 = state.beta1, b2 = state.beta2;
  const S c1 = S(1) - static_cast<S>(std::pow(static_cast<double>(b1), double(state.step_count)));
  const S c2 = S(1) - static_cast<S>(std::pow(static_cast<double>(b2), double(state.step_count)));
  for (size_t i = 0; i < params.size(); ++i) {
    Mat<S>& p = *params[i];
    const Mat<S>& g = *grads[i];
    if (p.rows() != g.rows() || p.cols() != g.cols())
      throw ConfigError("adam_step: shape mismatch at parameter " + std::to_string(i));
    Mat<S>& m = state.first_moment[i];
    Mat<S>& v = state.second_moment[i];
    m = b1 * m + (S(1) - b1) * g;
    v.array() = b2 * v.array() + (S(1) - b2) * g.array().square();
    p.array() -= state.learning_rate * (m.array() / c1) /
                 ((v.array() / c2).sqrt() + state.epsilon);
  }
}

template class Tape<float>;
template class Tape<double>;
template class Tensor<float>;
template class Tensor<double>;
template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step<float>(std::span<Mat<float>* const>, std::span<const Mat<float>* const>,
                               AdamState<float>&);
template void adam_step<double>(std::span<Mat<double>* const>, std::span<const Mat<double>* const>,
                                AdamState<double>&);

}  // namespace qpnet::engine
