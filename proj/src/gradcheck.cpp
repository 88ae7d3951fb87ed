#include "qpnet/gradcheck.hpp"

#include <cmath>
#include <functional>

#include "qpnet/model.hpp"
#include "qpnet/rng.hpp"
#include "qpnet/tensor.hpp"

namespace qpnet::gradcheck {

namespace {

using engine::Mat;
using engine::Tape;
using engine::Tensor;

constexpr double kStep = 1e-5;
constexpr double kTol = 1e-4;

Mat<double> random_mat(Eigen::Index r, Eigen::Index c, uint64_t seed, double scale = 1.0) {
  auto g = rng::make(seed, "gcmat");
  Mat<double> m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = rng::uniform(g, -scale, scale);
  return m;
}

// Checks analytic gradients of `build` w.r.t. every entry of every matrix in
// `leaves`; `build` creates tape leaves from the matrices in order, runs
// backward, and returns the scalar loss. Returns the worst relative error.
double check(std::vector<Mat<double>*> leaves,
             const std::function<double(Tape<double>&, std::vector<Tensor<double>>&)>& build) {
  std::vector<Mat<double>> analytic;
  {
    Tape<double> tape;
    std::vector<Tensor<double>> handles;
    handles.reserve(leaves.size());
    for (auto* m : leaves) handles.push_back(tape.leaf(*m));
    build(tape, handles);
    analytic.reserve(handles.size());
    for (auto& h : handles) analytic.push_back(h.grad());
  }
  auto eval = [&]() {
    Tape<double> tape;
    std::vector<Tensor<double>> handles;
    handles.reserve(leaves.size());
    for (auto* m : leaves) handles.push_back(tape.leaf(*m, false));
    return build(tape, handles);
  };
  double worst = 0.0;
  for (size_t li = 0; li < leaves.size(); ++li) {
    Mat<double>& m = *leaves[li];
    for (Eigen::Index k = 0; k < m.size(); ++k) {
      double keep = m.data()[k];
      m.data()[k] = keep + kStep;
      double up = eval();
      m.data()[k] = keep - kStep;
      double down = eval();
      m.data()[k] = keep;
      double fd = (up - down) / (2.0 * kStep);
      double an = analytic[li].data()[k];
      double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
      worst = std::max(worst, std::abs(fd - an) / denom);
    }
  }
  return worst;
}

// Reduce a C x T tensor to a scalar through fixed random projections so that
// gradients reach every entry.
Tensor<double> to_scalar(Tape<double>& tape, Tensor<double> x, uint64_t seed) {
  auto left = tape.constant(random_mat(1, x.rows(), rng::derive(seed, "left"), 0.7));
  auto right = tape.constant(random_mat(x.cols(), 1, rng::derive(seed, "right"), 0.7));
  return tape.channel_mix_1x1(tape.channel_mix_1x1(left, x), right);
}

// Backward only when the leaves were created trainable (analytic pass).
double finish(Tape<double>& tape, Tensor<double> scalar, bool trainable) {
  double v = scalar.value()(0, 0);
  if (trainable) tape.backward(scalar);
  return v;
}

}  // namespace

std::vector<CheckResult> run_all(uint64_t seed) {
  std::vector<CheckResult> results;
  auto record = [&results](const std::string& name, double err) {
    results.push_back({name, err, err < kTol});
  };

  {
    Mat<double> w = random_mat(4, 3, rng::derive(seed, "w1"));
    Mat<double> x = random_mat(3, 6, rng::derive(seed, "x1"));
    Mat<double> b = random_mat(4, 1, rng::derive(seed, "b1"));
    record("channel_mix_1x1", check({&w, &x, &b}, [seed](Tape<double>& t, auto& h) {
             auto s = to_scalar(t, t.channel_mix_1x1(h[0], h[1], h[2]), rng::derive(seed, "s1"));
             return finish(t, s, h[0].requires_grad());
           }));
  }
  {
    Mat<double> x = random_mat(3, 10, rng::derive(seed, "x2"));
    std::vector<int> offs;
    auto g = rng::make(seed, "offs");
    for (int i = 0; i < 10; ++i) offs.push_back(1 + int(g() % 12));
    record("causal_gather", check({&x}, [offs, seed](Tape<double>& t, auto& h) {
             auto s = to_scalar(t, t.causal_gather(h[0], offs), rng::derive(seed, "s2"));
             return finish(t, s, h[0].requires_grad());
           }));
  }
  {
    Mat<double> a = random_mat(3, 5, rng::derive(seed, "a3"));
    Mat<double> b = random_mat(3, 5, rng::derive(seed, "b3"));
    record("add", check({&a, &b}, [seed](Tape<double>& t, auto& h) {
             auto s = to_scalar(t, t.add(h[0], h[1]), rng::derive(seed, "s3"));
             return finish(t, s, h[0].requires_grad());
           }));
    record("mul", check({&a, &b}, [seed](Tape<double>& t, auto& h) {
             auto s = to_scalar(t, t.mul(h[0], h[1]), rng::derive(seed, "s4"));
             return finish(t, s, h[0].requires_grad());
           }));
  }
  for (const char* unary : {"tanh", "sigmoid", "relu"}) {
    Mat<double> x = random_mat(4, 5, rng::derive(seed, unary), 1.5);
    // keep relu inputs away from the kink
    for (Eigen::Index k = 0; k < x.size(); ++k)
      if (std::abs(x.data()[k]) < 1e-3) x.data()[k] = 0.1;
    std::string name = unary;
    record(name, check({&x}, [name, seed](Tape<double>& t, auto& h) {
             Tensor<double> y;
             if (name == "tanh")
               y = t.tanh(h[0]);
             else if (name == "sigmoid")
               y = t.sigmoid(h[0]);
             else
               y = t.relu(h[0]);
             auto s = to_scalar(t, y, rng::derive(seed, "s5"));
             return finish(t, s, h[0].requires_grad());
           }));
  }
  {
    Mat<double> logits = random_mat(8, 6, rng::derive(seed, "logits"), 2.0);
    std::vector<uint8_t> targets = {0, 3, 7, 2, 5, 1};
    record("softmax_cross_entropy", check({&logits}, [targets](Tape<double>& t, auto& h) {
             auto loss = t.softmax_cross_entropy(h[0], targets);
             return finish(t, loss, h[0].requires_grad());
           }));
  }

  // End-to-end: tiny adaptive model, several entries of every buffer.
  {
    using namespace qpnet::model;
    ModelConfig cfg;
    cfg.macroblocks = {{MacroblockKind::adaptive, 1, 2}};
    cfg.residual_channels = cfg.gate_channels = cfg.skip_channels = 4;
    cfg.output_mid_channels = 4;
    cfg.dense_factor = 8;
    auto params = init_params<double>(cfg, rng::derive(seed, "net"));
    {
      auto g = rng::make(seed, "headrand");
      for (Eigen::Index k = 0; k < params.out_w.size(); ++k)
        params.out_w.data()[k] = rng::uniform(g, -0.3, 0.3);
    }
    // Keep the head pre-activations off the exact ReLU kink, where central
    // differences disagree with the subgradient convention by construction.
    params.mid_b.setConstant(0.05);
    const int64_t T = 32;
    auto aux = AuxTrack::constant(150.0, T);
    std::vector<uint8_t> codes(static_cast<size_t>(T));
    auto g = rng::make(seed, "codes");
    for (auto& c : codes) c = uint8_t(g() % 256);

    auto eval = [&]() {
      Tape<double> tape;
      auto net = bind_network(tape, params, false);
      auto out = forward_teacher_forced(tape, net, cfg, codes, aux);
      return tape.softmax_cross_entropy(out.logits, codes).value()(0, 0);
    };
    std::vector<Mat<double>> analytic;
    {
      Tape<double> tape;
      auto net = bind_network(tape, params, true);
      auto out = forward_teacher_forced(tape, net, cfg, codes, aux);
      auto loss = tape.softmax_cross_entropy(out.logits, codes);
      tape.backward(loss);
      for (auto& h : net.flat) analytic.push_back(h.grad());
    }
    double worst = 0.0;
    size_t bi = 0;
    auto pick = rng::make(seed, "pick");
    params.for_each_buffer([&](const std::string&, Mat<double>& m) {
      const Mat<double>& an = analytic[bi++];
      int checks = std::min<int>(6, int(m.size()));
      for (int k = 0; k < checks; ++k) {
        Eigen::Index idx = Eigen::Index(pick() % uint64_t(m.size()));
        double keep = m.data()[idx];
        m.data()[idx] = keep + kStep;
        double up = eval();
        m.data()[idx] = keep - kStep;
        double down = eval();
        m.data()[idx] = keep;
        double fd = (up - down) / (2.0 * kStep);
        double denom = std::max({std::abs(fd), std::abs(an.data()[idx]), 1e-8});
        worst = std::max(worst, std::abs(fd - an.data()[idx]) / denom);
      }
    });
    record("end_to_end_tiny_model", worst);
  }

  return results;
}

bool all_pass(const std::vector<CheckResult>& results) {
  for (const auto& r : results)
    if (!r.pass) return false;
  return !results.empty();
}

}  // namespace qpnet::gradcheck
