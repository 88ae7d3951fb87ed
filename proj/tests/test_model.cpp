#include <doctest.h>

#include <cmath>
#include <cstring>

#include "qpnet/model.hpp"
#include "qpnet/rng.hpp"

using namespace qpnet;
using namespace qpnet::model;
using engine::Mat;
using engine::Tape;

namespace {

ModelConfig tiny_config(std::vector<MacroblockSpec> mbs, int dense = 8) {
  ModelConfig cfg;
  cfg.macroblocks = std::move(mbs);
  cfg.residual_channels = cfg.gate_channels = cfg.skip_channels = 4;
  cfg.output_mid_channels = 4;
  cfg.dense_factor = dense;
  return cfg;
}

std::vector<uint8_t> random_codes(int64_t n, uint64_t seed) {
  auto g = rng::make(seed, "codes");
  std::vector<uint8_t> codes(static_cast<size_t>(n));
  for (auto& c : codes) c = uint8_t(g() % 256);
  return codes;
}

// init_params zeroes the output head (uniform initial distribution); give it
// signal so sensitivity-style tests can observe the network.
template <typename S>
void randomize_head(NetworkParamsT<S>& params, uint64_t seed) {
  auto g = rng::make(seed, "head");
  for (Eigen::Index j = 0; j < params.out_w.cols(); ++j)
    for (Eigen::Index i = 0; i < params.out_w.rows(); ++i)
      params.out_w(i, j) = S(rng::uniform(g, -0.3, 0.3));
}

}  // namespace

TEST_CASE("compute_dilation_factor reproduces the quoted values") {
  CHECK(compute_dilation_factor(500.0, 22050.0, 8) == 6);    // "6 for 500 Hz"
  CHECK(compute_dilation_factor(50.0, 22050.0, 8) == 55);    // 55.125 rounds half-up to 55
  CHECK(compute_dilation_factor(350.0, 22050.0, 64) == 1);   // degenerates to a DCNN
  CHECK(compute_dilation_factor(345.0, 22050.0, 64) == 1);
  CHECK(compute_dilation_factor(150.0, 22050.0, 8) == 18);
  CHECK_THROWS_AS((void)compute_dilation_factor(0.0, 22050.0, 8), DataError);
}

TEST_CASE("dilation factor monotonicity in f0") {
  auto g = rng::make(4, "mono");
  for (int i = 0; i < 200; ++i) {
    double fa = rng::uniform(g, 10.0, 800.0);
    double fb = rng::uniform(g, 10.0, 800.0);
    if (fa < fb) std::swap(fa, fb);  // fa >= fb
    int a = 1 << (g() % 7);
    CHECK(compute_dilation_factor(fa, 22050.0, a) <= compute_dilation_factor(fb, 22050.0, a));
  }
}

TEST_CASE("interpolate_f0 fills unvoiced gaps linearly and holds edges") {
  std::vector<double> f0 = {100, 0, 0, 0, 200};
  std::vector<uint8_t> v = {1, 0, 0, 0, 1};
  auto out = interpolate_f0(f0, v);
  CHECK(out[0] == 100.0);
  CHECK(out[1] == doctest::Approx(125.0));
  CHECK(out[2] == doctest::Approx(150.0));
  CHECK(out[3] == doctest::Approx(175.0));
  CHECK(out[4] == 200.0);

  std::vector<double> all = {90, 95, 100};
  std::vector<uint8_t> allv = {1, 1, 1};
  CHECK(interpolate_f0(all, allv) == all);

  std::vector<double> lead = {0, 0, 150, 160};
  std::vector<uint8_t> leadv = {0, 0, 1, 1};
  auto lo = interpolate_f0(lead, leadv);
  CHECK(lo[0] == 150.0);
  CHECK(lo[1] == 150.0);

  std::vector<uint8_t> nov = {0, 0, 0};
  std::vector<double> novf = {0, 0, 0};
  CHECK_THROWS_AS((void)interpolate_f0(novf, nov), DataError);
  for (double x : lo) CHECK(x > 0.0);
}

TEST_CASE("build_dilation_plan: fixed doubling, adaptive scaling, degeneration") {
  auto aux = AuxTrack::constant(150.0, 16);  // E_t = 18 at fs 22050, a = 8

  auto fixed_cfg = tiny_config({{MacroblockKind::fixed, 1, 4}});
  auto fixed_plan = build_dilation_plan(fixed_cfg, aux);
  REQUIRE(fixed_plan.offsets.size() == 4);
  for (int l = 0; l < 4; ++l)
    for (int t = 0; t < 16; ++t) CHECK(fixed_plan.offsets[size_t(l)][size_t(t)] == (1 << l));

  auto adapt_cfg = tiny_config({{MacroblockKind::adaptive, 1, 4}});
  auto adapt_plan = build_dilation_plan(adapt_cfg, aux);
  const int expect[4] = {18, 36, 72, 144};
  for (int l = 0; l < 4; ++l)
    for (int t = 0; t < 16; ++t) CHECK(adapt_plan.offsets[size_t(l)][size_t(t)] == expect[l]);

  // E_t = 1 everywhere makes the adaptive plan equal the fixed plan bit-for-bit.
  auto unit = AuxTrack::constant(400.0, 16);  // fs/(400*64) < 1 -> clamped to 1
  auto degen_cfg = tiny_config({{MacroblockKind::adaptive, 1, 4}}, 64);
  auto degen_plan = build_dilation_plan(degen_cfg, unit);
  auto fixed_ref = build_dilation_plan(tiny_config({{MacroblockKind::fixed, 1, 4}}, 64), unit);
  CHECK(degen_plan.offsets == fixed_ref.offsets);
}

TEST_CASE("receptive_field_length matches the published arithmetic") {
  CHECK(receptive_field_length(standard_config("WNf", "desk", 8)) == 3070);
  CHECK(receptive_field_length(standard_config("WNc", "desk", 8)) == 61);
  // QPNet fixed part alone: 3 chunks x 4 blocks.
  auto fixed_part = tiny_config({{MacroblockKind::fixed, 3, 4}});
  CHECK(receptive_field_length(fixed_part) == 46);
  // Counting the adaptive span at unit factor: a 4x4 pQPNet also reads 61.
  CHECK(receptive_field_length(standard_config("pQPNet", "desk", 8)) == 61);
}

TEST_CASE("effective_receptive_field_length closed forms") {
  auto pqp = standard_config("pQPNet", "desk", 8);
  auto unit = AuxTrack::constant(400.0, 8);
  auto cfg64 = pqp;
  cfg64.dense_factor = 64;
  CHECK(effective_receptive_field_length(cfg64, unit, 0) == 61);

  auto aux150 = AuxTrack::constant(150.0, 8);  // E_t = 18
  CHECK(effective_receptive_field_length(pqp, aux150, 3) == 60 * 18 + 1);

  auto qp = standard_config("QPNet", "desk", 8);
  CHECK(effective_receptive_field_length(qp, aux150, 0) == 46 + 15 * 18);
}

TEST_CASE("parameter count is injective over the table configs") {
  auto wnf = parameter_count(standard_config("WNf", "paper", 8));
  auto wnc = parameter_count(standard_config("WNc", "paper", 8));
  auto qp = parameter_count(standard_config("QPNet", "paper", 8));
  auto rqp = parameter_count(standard_config("rQPNet", "paper", 8));
  auto pqp = parameter_count(standard_config("pQPNet", "paper", 8));
  CHECK(wnf > wnc);
  CHECK(wnc == qp);
  CHECK(qp == rqp);
  CHECK(rqp == pqp);

  // Closed form agrees with actual storage.
  auto params = init_params<float>(standard_config("WNc", "desk", 8), 1);
  CHECK(params.total_values() == parameter_count(standard_config("WNc", "desk", 8)));
}

TEST_CASE("residual block: zero weights pass input through and emit zero skip") {
  ModelConfig cfg = tiny_config({{MacroblockKind::fixed, 1, 1}});
  NetworkParamsT<double> params = init_params<double>(cfg, 3);
  auto& blk = params.blocks[0];
  blk.wf_c.setZero();
  blk.wf_p.setZero();
  blk.vf.setZero();
  blk.bf.setZero();
  blk.wg_c.setZero();
  blk.wg_p.setZero();
  blk.vg.setZero();
  blk.bg.setZero();
  blk.w_res.setZero();
  blk.b_res.setZero();
  blk.w_skip.setZero();
  blk.b_skip.setZero();

  Tape<double> tape;
  auto net = bind_network(tape, params, false);
  auto g = rng::make(9, "x");
  Mat<double> xv(4, 6);
  for (int j = 0; j < 6; ++j)
    for (int i = 0; i < 4; ++i) xv(i, j) = rng::uniform(g, -1, 1);
  auto x = tape.constant(xv);
  auto aux = tape.constant(Mat<double>::Zero(1, 6));
  std::vector<int> offs(6, 2);
  auto [res, skip] = residual_block_forward(tape, net.blocks[0], x, aux, offs);
  CHECK((res.value() - xv).cwiseAbs().maxCoeff() == 0.0);
  CHECK(skip.value().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("residual block matches a per-sample double-loop oracle") {
  const int R = 4, T = 32;
  ModelConfig cfg = tiny_config({{MacroblockKind::adaptive, 1, 1}});
  NetworkParamsT<double> params = init_params<double>(cfg, 21);
  auto g = rng::make(22, "inputs");
  Mat<double> xv(R, T), auxv(1, T);
  for (int t = 0; t < T; ++t) {
    for (int i = 0; i < R; ++i) xv(i, t) = rng::uniform(g, -1, 1);
    auxv(0, t) = rng::uniform(g, -1, 1);
  }
  std::vector<int> offs(T);
  for (auto& o : offs) o = 1 + int(g() % 8);  // random time-variant dilations

  Tape<double> tape;
  auto net = bind_network(tape, params, false);
  auto [res, skip] =
      residual_block_forward(tape, net.blocks[0], tape.constant(xv), tape.constant(auxv), offs);

  // Independent double loop over (channel, time).
  const auto& b = params.blocks[0];
  for (int t = 0; t < T; ++t) {
    std::vector<double> xpast(R, 0.0);
    if (t - offs[size_t(t)] >= 0)
      for (int k = 0; k < R; ++k) xpast[size_t(k)] = xv(k, t - offs[size_t(t)]);
    std::vector<double> z(R);
    for (int c = 0; c < R; ++c) {
      double uf = b.bf(c, 0) + b.vf(c, 0) * auxv(0, t);
      double ug = b.bg(c, 0) + b.vg(c, 0) * auxv(0, t);
      for (int k = 0; k < R; ++k) {
        uf += b.wf_c(c, k) * xv(k, t) + b.wf_p(c, k) * xpast[size_t(k)];
        ug += b.wg_c(c, k) * xv(k, t) + b.wg_p(c, k) * xpast[size_t(k)];
      }
      z[size_t(c)] = std::tanh(uf) * (1.0 / (1.0 + std::exp(-ug)));
    }
    for (int c = 0; c < R; ++c) {
      double r = xv(c, t) + b.b_res(c, 0);
      double s = b.b_skip(c, 0);
      for (int k = 0; k < R; ++k) {
        r += b.w_res(c, k) * z[size_t(k)];
        s += b.w_skip(c, k) * z[size_t(k)];
      }
      CHECK(res.value()(c, t) == doctest::Approx(r).epsilon(1e-6));
      CHECK(skip.value()(c, t) == doctest::Approx(s).epsilon(1e-6));
    }
  }
}

TEST_CASE("residual block causality: perturbing x[:,t] leaves earlier outputs unchanged") {
  const int R = 4, T = 24;
  ModelConfig cfg = tiny_config({{MacroblockKind::fixed, 1, 1}});
  NetworkParamsT<double> params = init_params<double>(cfg, 31);
  auto g = rng::make(32, "x");
  Mat<double> xv(R, T);
  for (int t = 0; t < T; ++t)
    for (int i = 0; i < R; ++i) xv(i, t) = rng::uniform(g, -1, 1);
  Mat<double> auxv = Mat<double>::Zero(1, T);
  std::vector<int> offs(T, 3);

  auto run = [&](const Mat<double>& x) {
    Tape<double> tape;
    auto net = bind_network(tape, params, false);
    auto [res, skip] =
        residual_block_forward(tape, net.blocks[0], tape.constant(x), tape.constant(auxv), offs);
    return Mat<double>(res.value());
  };
  Mat<double> base = run(xv);
  Mat<double> xp = xv;
  xp.col(10).array() += 0.5;
  Mat<double> pert = run(xp);
  for (int s = 0; s < 10; ++s)
    CHECK((pert.col(s) - base.col(s)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((pert.col(10) - base.col(10)).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("plan length mismatch is a configuration error") {
  ModelConfig cfg = tiny_config({{MacroblockKind::fixed, 1, 1}});
  NetworkParamsT<double> params = init_params<double>(cfg, 41);
  Tape<double> tape;
  auto net = bind_network(tape, params, false);
  auto x = tape.constant(Mat<double>::Zero(4, 8));
  auto aux = tape.constant(Mat<double>::Zero(1, 8));
  std::vector<int> offs(5, 1);  // wrong length
  CHECK_THROWS_AS((void)residual_block_forward(tape, net.blocks[0], x, aux, offs), ConfigError);
}

TEST_CASE("teacher-forced forward: causality audit over code replacement") {
  const int64_t T = 48;
  ModelConfig cfg = tiny_config({{MacroblockKind::fixed, 1, 3}});
  NetworkParamsT<double> params = init_params<double>(cfg, 51);
  randomize_head(params, 510);
  params.mid_b.setConstant(0.2);  // keep head ReLUs alive for the sensitivity side
  auto aux = AuxTrack::constant(200.0, T);
  auto codes = random_codes(T, 52);

  auto run = [&](std::span<const uint8_t> cs) {
    Tape<double> tape;
    auto net = bind_network(tape, params, false);
    auto out = forward_teacher_forced(tape, net, cfg, cs, aux);
    return Mat<double>(out.logits.value());
  };
  Mat<double> base = run(codes);

  auto tampered = codes;
  const int64_t cut = 20;
  auto g = rng::make(53, "tamper");
  for (int64_t t = cut; t < T; ++t)
    tampered[size_t(t)] = uint8_t((codes[size_t(t)] + 1 + g() % 255) % 256);  // always differs
  Mat<double> pert = run(tampered);
  // logits[:,t] depends on codes <= t-1, so columns 0..cut stay identical.
  for (int64_t s = 0; s <= cut; ++s)
    CHECK((pert.col(s) - base.col(s)).cwiseAbs().maxCoeff() == 0.0);
  double later = 0.0;
  for (int64_t s = cut + 1; s < T; ++s)
    later = std::max(later, (pert.col(s) - base.col(s)).cwiseAbs().maxCoeff());
  CHECK(later > 0.0);
}

TEST_CASE("zero-initialized output head gives the uniform distribution") {
  const int64_t T = 16;
  ModelConfig cfg = tiny_config({{MacroblockKind::fixed, 1, 2}});
  NetworkParamsT<double> params = init_params<double>(cfg, 61);  // out head zero by init
  auto aux = AuxTrack::constant(120.0, T);
  auto codes = random_codes(T, 62);

  Tape<double> tape;
  auto net = bind_network(tape, params, false);
  auto out = forward_teacher_forced(tape, net, cfg, codes, aux);
  CHECK(out.logits.value().cwiseAbs().maxCoeff() == 0.0);

  Tape<double> tape2;
  auto net2 = bind_network(tape2, params, false);
  auto out2 = forward_teacher_forced(tape2, net2, cfg, codes, aux);
  auto loss = tape2.softmax_cross_entropy(out2.logits, codes);
  CHECK(loss.value()(0, 0) == doctest::Approx(std::log(256.0)).epsilon(1e-9));
}

TEST_CASE("degeneration: adaptive net with E_t=1 equals the fixed twin bit-for-bit") {
  const int64_t T = 64;
  ModelConfig adaptive = tiny_config({{MacroblockKind::adaptive, 2, 3}}, 64);
  ModelConfig fixed = adaptive;
  for (auto& mb : fixed.macroblocks) mb.kind = MacroblockKind::fixed;

  NetworkParamsT<float> params = init_params<float>(adaptive, 71);  // shapes are identical
  randomize_head(params, 710);
  auto aux = AuxTrack::constant(400.0, T);  // 22050/(400*64) < 1.5 -> E_t = 1
  auto codes = random_codes(T, 72);

  auto run = [&](const ModelConfig& cfg) {
    Tape<float> tape;
    auto net = bind_network(tape, params, false);
    auto out = forward_teacher_forced(tape, net, cfg, codes, aux);
    return Mat<float>(out.logits.value());
  };
  Mat<float> a = run(adaptive);
  Mat<float> f = run(fixed);
  CHECK(std::memcmp(a.data(), f.data(), sizeof(float) * size_t(a.size())) == 0);
}

TEST_CASE("softmax columns sum to one") {
  auto g = rng::make(81, "sm");
  Mat<float> logits(256, 7);
  for (int j = 0; j < 7; ++j)
    for (int i = 0; i < 256; ++i) logits(i, j) = float(rng::uniform(g, -10, 10));
  auto p = softmax_columns(logits);
  for (int j = 0; j < 7; ++j) CHECK(p.col(j).sum() == doctest::Approx(1.0f).epsilon(1e-6));
}

TEST_CASE("end-to-end gradient check on a tiny model") {
  // R=S=4, T=32, 2 blocks, double precision, h=1e-5, rel err < 1e-4.
  const int64_t T = 32;
  ModelConfig cfg = tiny_config({{MacroblockKind::adaptive, 1, 2}});
  NetworkParamsT<double> params = init_params<double>(cfg, 91);
  randomize_head(params, 910);
  params.mid_b.setConstant(0.05);  // keep head pre-activations off the ReLU kink
  auto aux = AuxTrack::constant(150.0, T);
  auto codes = random_codes(T, 92);

  auto eval = [&]() {
    Tape<double> tape;
    auto net = bind_network(tape, params, true);
    auto out = forward_teacher_forced(tape, net, cfg, codes, aux);
    return tape.softmax_cross_entropy(out.logits, codes).value()(0, 0);
  };

  // Analytic gradients.
  std::vector<Mat<double>> grads;
  {
    Tape<double> tape;
    auto net = bind_network(tape, params, true);
    auto out = forward_teacher_forced(tape, net, cfg, codes, aux);
    auto loss = tape.softmax_cross_entropy(out.logits, codes);
    tape.backward(loss);
    for (auto& leafh : net.flat) grads.push_back(leafh.grad());
  }

  // Spot-check a subset of entries in every buffer (full causal_w scan is slow).
  const double h = 1e-5;
  size_t bi = 0;
  auto prng = rng::make(93, "pick");
  params.for_each_buffer([&](const std::string& name, Mat<double>& m) {
    const Mat<double>& gmat = grads[bi++];
    int checks = std::min<int>(4, int(m.size()));
    for (int k = 0; k < checks; ++k) {
      Eigen::Index idx = Eigen::Index(prng() % uint64_t(m.size()));
      double keep = m.data()[idx];
      m.data()[idx] = keep + h;
      double up = eval();
      m.data()[idx] = keep - h;
      double down = eval();
      m.data()[idx] = keep;
      double fd = (up - down) / (2 * h);
      double an = gmat.data()[idx];
      double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
      CAPTURE(name);
      CHECK(std::abs(fd - an) / denom < 1e-4);
    }
  });
}
