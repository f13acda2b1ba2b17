#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "eegc/cascade.hpp"
#include "eegc/errors.hpp"
#include "eegc/metrics.hpp"
#include "support/testsupport.hpp"

using namespace eegc;
using ag::Tensor;
namespace ts = testsupport;

namespace {

ModelConfig toy_config(int seq_len = 12) {
  ModelConfig c;
  c.n_encoders = 1;
  c.n_decoders = 1;
  c.d_qkv = 4;
  c.n_heads = 2;
  c.d_model = 8;
  c.d_ff = 16;
  c.seq_len = seq_len;
  return c;
}

MaskedSegment make_masked(std::vector<double> samples, std::vector<int> missing,
                          MaskMethod method = MaskMethod::Zero) {
  Segment seg;
  seg.samples = std::move(samples);
  const auto spec = explicit_mask(seg.n(), std::move(missing), method);
  return apply_mask(seg, spec);
}

std::vector<MaskedSegment> synth_masked_set(int count, int n, int missing,
                                            std::uint64_t seed) {
  std::vector<MaskedSegment> out;
  for (int i = 0; i < count; ++i) {
    auto raw = ts::synth_eeg(n, seed + static_cast<std::uint64_t>(i));
    auto [norm, rec] = normalize(raw);
    Segment seg;
    seg.samples = std::move(norm);
    seg.source_id = "synth";
    const auto spec = build_mask(n, missing, PositionMode::Middle);
    out.push_back(apply_mask(seg, spec));
  }
  return out;
}

}  // namespace

TEST_CASE("compose_stage2_input") {
  SUBCASE("empty missing set returns the observed input verbatim") {
    Segment seg;
    seg.samples = {0.1, 0.2, 0.3, 0.4};
    MaskedSegment masked;
    masked.input = seg.samples;
    masked.target = seg;
    masked.spec.position = PositionMode::Explicit;
    // no missing indices at all
    const auto out = compose_stage2_input(masked, {0.9, 0.9, 0.9, 0.9});
    CHECK(out == seg.samples);
  }
  SUBCASE("all indices missing returns stage1 verbatim") {
    auto masked = make_masked({0.1, 0.2, 0.3, 0.4}, {0, 1, 2, 3});
    const std::vector<double> s1{0.5, 0.6, 0.7, 0.8};
    CHECK(compose_stage2_input(masked, s1) == s1);
  }
  SUBCASE("per-index case split") {
    auto masked = make_masked({0.1, 0.2, 0.3, 0.4}, {1, 2});
    CHECK(masked.input == std::vector<double>{0.1, 0.0, 0.0, 0.4});
    const auto out = compose_stage2_input(masked, {0.9, 0.2, 0.3, 0.9});
    CHECK(out == std::vector<double>{0.1, 0.2, 0.3, 0.4});
  }
  SUBCASE("unmasked indices equal the target exactly, whatever stage1 emits") {
    std::mt19937_64 rng(51);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (int rep = 0; rep < 100; ++rep) {
      std::vector<double> samples(20), s1(20);
      for (auto& v : samples) v = dist(rng);
      for (auto& v : s1) v = dist(rng);
      const auto spec = build_mask(20, 5, PositionMode::Explicit, rep);
      Segment seg;
      seg.samples = samples;
      const auto masked = apply_mask(seg, spec);
      const auto out = compose_stage2_input(masked, s1);
      std::vector is_missing(20, false);
      for (int idx : spec.missing_indices) is_missing[static_cast<size_t>(idx)] = true;
      for (int i = 0; i < 20; ++i) {
        if (is_missing[static_cast<size_t>(i)])
          CHECK(out[static_cast<size_t>(i)] == s1[static_cast<size_t>(i)]);
        else
          CHECK(out[static_cast<size_t>(i)] == samples[static_cast<size_t>(i)]);
      }
    }
  }
  SUBCASE("length mismatch") {
    auto masked = make_masked({0.1, 0.2, 0.3, 0.4}, {1});
    CHECK_THROWS_AS(compose_stage2_input(masked, {0.0}), std::invalid_argument);
  }
}

TEST_CASE("weighted_loss") {
  SUBCASE("alpha 1 equals the plain MSE within 1e-15") {
    std::mt19937_64 rng(52);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (int rep = 0; rep < 100; ++rep) {
      std::vector<double> out(50), tgt(50);
      for (auto& v : out) v = dist(rng);
      for (auto& v : tgt) v = dist(rng);
      const auto spec = build_mask(50, 9, PositionMode::Explicit, rep);
      double mse = 0.0;
      for (size_t i = 0; i < out.size(); ++i)
        mse += (out[i] - tgt[i]) * (out[i] - tgt[i]);
      mse /= 50.0;
      CHECK(std::abs(weighted_loss(out, tgt, spec.missing_indices, 1.0) - mse)
            <= 1e-15);
    }
  }
  SUBCASE("zero loss on a perfect output") {
    std::vector<double> v{0.4, -0.2, 0.9};
    for (double alpha : {1.0, 2.0, 7.5})
      CHECK(weighted_loss(v, v, {1}, alpha) == 0.0);
  }
  SUBCASE("hand case: errors (1,1), missing {1}, alpha 3") {
    std::vector<double> out{1.0, 1.0};
    std::vector<double> tgt{0.0, 0.0};
    CHECK(weighted_loss(out, tgt, {1}, 3.0) == doctest::Approx(2.0).epsilon(1e-15));
  }
  SUBCASE("monotonically non-decreasing in alpha") {
    std::mt19937_64 rng(53);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    std::vector<double> out(30), tgt(30);
    for (auto& v : out) v = dist(rng);
    for (auto& v : tgt) v = dist(rng);
    const auto spec = build_mask(30, 6, PositionMode::Middle);
    double prev = weighted_loss(out, tgt, spec.missing_indices, 1.0);
    for (double alpha : {1.5, 2.0, 4.0, 11.0}) {
      const double cur = weighted_loss(out, tgt, spec.missing_indices, alpha);
      CHECK(cur >= prev);
      prev = cur;
    }
  }
  SUBCASE("absolute-error kernel") {
    std::vector<double> out{1.0, -2.0};
    std::vector<double> tgt{0.0, 0.0};
    CHECK(weighted_loss(out, tgt, {1}, 2.0, ag::LossKernel::AbsoluteError) ==
          doctest::Approx((1.0 + 2.0 * 2.0) / 2.0));
  }
  SUBCASE("bad arguments") {
    std::vector<double> v{1.0};
    CHECK_THROWS_AS(weighted_loss({}, {}, {0}, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(weighted_loss(v, v, {0}, 0.5), std::invalid_argument);
  }
}

TEST_CASE("cascade_forward") {
  const ModelConfig cfg = toy_config(8);
  CascadeModel model = make_cascade(cfg, 61, true);

  SUBCASE("deterministic") {
    auto masked = make_masked({0.1, -0.3, 0.2, 0.5, -0.1, 0.0, 0.4, -0.2}, {3, 4});
    const auto a = cascade_forward(model, masked);
    const auto b = cascade_forward(model, masked);
    CHECK(a.stage1_out == b.stage1_out);
    CHECK(a.stage2_out == b.stage2_out);
  }
  SUBCASE("stage2 input matches the target on unmasked indices") {
    std::mt19937_64 rng(54);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    std::vector<double> samples(8);
    for (auto& v : samples) v = dist(rng);
    auto masked = make_masked(samples, {2, 3, 4});
    const auto out = cascade_forward(model, masked);
    const auto in2 = compose_stage2_input(masked, out.stage1_out);
    for (int i = 0; i < 8; ++i)
      if (i < 2 || i > 4)
        CHECK(in2[static_cast<size_t>(i)] == samples[static_cast<size_t>(i)]);
  }
  SUBCASE("basic model passes stage1 through") {
    CascadeModel basic = make_cascade(cfg, 62, false);
    auto masked = make_masked({0.1, -0.3, 0.2, 0.5, -0.1, 0.0, 0.4, -0.2}, {3});
    const auto out = cascade_forward(basic, masked);
    CHECK(out.stage1_out == out.stage2_out);
  }
}

TEST_CASE("one SGD step matches the hand gradient on a linear toy model") {
  // pred = x W, loss = mean((pred - t)^2); dW = 2/n x^T (x W - t)
  auto w = Tensor::from_values({2, 2}, {0.5, -0.25, 1.0, 0.75}, true);
  auto x = Tensor::from_values({3, 2}, {1, 2, -1, 0.5, 0.25, -2});
  auto t = Tensor::from_values({3, 2}, {0.2, -0.4, 1.0, 0.1, -0.6, 0.9});
  auto ones = Tensor::full({3, 2}, 1.0);
  const std::vector<double> w0 = w->value;

  auto loss = ag::weighted_mean_loss(ag::matmul(x, w), t, ones);
  ag::backward(loss);
  const double lr = 0.01;
  Optimizer opt(OptimizerKind::Sgd, {w}, lr);
  opt.step();

  // hand gradient
  std::vector<double> pred(6, 0.0);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 2; ++c)
      for (int k = 0; k < 2; ++k)
        pred[static_cast<size_t>(r * 2 + c)] +=
            x->value[static_cast<size_t>(r * 2 + k)] * w0[static_cast<size_t>(k * 2 + c)];
  std::vector<double> grad(4, 0.0);
  for (int k = 0; k < 2; ++k)
    for (int c = 0; c < 2; ++c)
      for (int r = 0; r < 3; ++r)
        grad[static_cast<size_t>(k * 2 + c)] +=
            x->value[static_cast<size_t>(r * 2 + k)] * 2.0 *
            (pred[static_cast<size_t>(r * 2 + c)] -
             t->value[static_cast<size_t>(r * 2 + c)]) / 6.0;
  for (size_t i = 0; i < 4; ++i)
    CHECK(std::abs(w->value[i] - (w0[i] - lr * grad[i])) < 1e-10);
}

TEST_CASE("training") {
  const ModelConfig cfg = toy_config(20);

  TrainConfig tc;
  tc.alpha = 2.0;
  tc.learning_rate = 3e-3;
  tc.batch_size = 8;
  tc.max_epochs = 12;
  tc.patience = 5;
  tc.seed = 7;
  tc.warmup_steps = 10;

  auto train_set = synth_masked_set(16, 20, 4, 100);
  auto val_set = synth_masked_set(4, 20, 4, 900);

  SUBCASE("loss goes down and reruns are bit-identical") {
    CascadeModel m1 = make_cascade(cfg, 70, true);
    const auto r1 = train(m1, train_set, val_set, tc);
    REQUIRE(!r1.epochs.empty());
    CHECK(r1.epochs.back().train_loss < r1.epochs.front().train_loss);

    CascadeModel m2 = make_cascade(cfg, 70, true);
    const auto r2 = train(m2, train_set, val_set, tc);
    REQUIRE(r1.epochs.size() == r2.epochs.size());
    for (size_t i = 0; i < r1.epochs.size(); ++i) {
      CHECK(r1.epochs[i].train_loss == r2.epochs[i].train_loss);
      CHECK(r1.epochs[i].val_nrmse_missing == r2.epochs[i].val_nrmse_missing);
      CHECK(r1.epochs[i].val_nrmse_all == r2.epochs[i].val_nrmse_all);
    }
    const auto p1 = m1.params();
    const auto p2 = m2.params();
    for (size_t i = 0; i < p1.size(); ++i) CHECK(p1[i]->value == p2[i]->value);
  }

  SUBCASE("empty validation set disables patience stopping") {
    CascadeModel m = make_cascade(cfg, 71, false);
    TrainConfig quick = tc;
    quick.max_epochs = 3;
    const auto r = train(m, train_set, {}, quick);
    CHECK(r.epochs.size() == 3);
  }

  SUBCASE("target NRMSE stops early") {
    CascadeModel m = make_cascade(cfg, 72, false);
    TrainConfig quick = tc;
    quick.max_epochs = 50;
    quick.target_nrmse = 10.0;  // trivially satisfied after one epoch
    const auto r = train(m, train_set, {}, quick);
    CHECK(r.epochs.size() == 1);
  }

  SUBCASE("divergence raises TrainingDiverged") {
    CascadeModel m = make_cascade(cfg, 73, false);
    TrainConfig bad = tc;
    // an absurd SGD rate overflows the attention scores within a few steps
    bad.optimizer = OptimizerKind::Sgd;
    bad.learning_rate = 1e160;
    bad.warmup_steps = 0;
    bad.max_epochs = 5;
    CHECK_THROWS_AS(train(m, train_set, {}, bad), TrainingDiverged);
  }

  SUBCASE("sequential mode freezes stage1 while stage2 trains") {
    CascadeModel m = make_cascade(cfg, 74, true);
    TrainConfig seq = tc;
    seq.sequential = true;
    seq.max_epochs = 3;
    const auto r = train(m, train_set, val_set, seq);
    CHECK(r.epochs.size() == 6);  // two phases of max_epochs each
    for (auto& p : m.params()) CHECK(p->requires_grad);
  }

  SUBCASE("gradient flows through the composition into stage1") {
    CascadeModel m = make_cascade(cfg, 75, true);
    auto masked = synth_masked_set(1, 20, 4, 500);
    // loss on stage2 only; stage1 still receives gradient through the copy
    TrainConfig s2 = tc;
    s2.stage_loss = StageLossMode::Stage2Only;
    s2.max_epochs = 1;
    s2.batch_size = 1;
    std::vector<std::vector<double>> before;
    for (const auto& p : m.stage1.params()) before.push_back(p->value);
    train(m, masked, {}, s2);
    const auto after = m.stage1.params();
    bool changed = false;
    for (size_t i = 0; i < after.size(); ++i)
      changed = changed || before[i] != after[i]->value;
    CHECK(changed);
  }
}

TEST_CASE("tiny overfit sanity") {
  // a small model must be able to near-memorize a handful of segments
  ModelConfig cfg = toy_config(40);
  cfg.n_encoders = 2;
  cfg.n_decoders = 2;
  CascadeModel m = make_cascade(cfg, 80, false);

  auto set = synth_masked_set(4, 40, 4, 300);
  TrainConfig tc;
  tc.alpha = 2.0;
  tc.learning_rate = 2e-3;
  tc.batch_size = 4;
  tc.max_epochs = 400;
  tc.seed = 9;
  tc.warmup_steps = 30;
  tc.target_nrmse = 0.08;
  const auto report = train(m, set, {}, tc);
  const auto [missing_nrmse, all_nrmse] = evaluate_nrmse(m, set, 4);
  CAPTURE(report.epochs.size());
  CHECK(missing_nrmse < 0.15);
}
