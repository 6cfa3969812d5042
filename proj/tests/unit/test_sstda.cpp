#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "gradcheck.hpp"
#include "mini_sstda.hpp"
#include "sstda/error.hpp"
#include "sstda/sstda.hpp"

namespace sstda {
namespace {

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c) {
  Matrix m(r, c);
  for (double& v : m.data()) v = rng.normal();
  return m;
}

Tensor rows_of(double a, double b, std::size_t T) {
  Matrix m(T, 2);
  for (std::size_t t = 0; t < T; ++t) {
    m(t, 0) = a;
    m(t, 1) = b;
  }
  return Tensor::constant(m);
}

// All balanced 0/1 strings of length 2m, in lexicographic order.
std::vector<std::vector<int>> balanced_strings(int m) {
  std::vector<std::vector<int>> out;
  const int n = 2 * m;
  for (int bits = 0; bits < (1 << n); ++bits) {
    std::vector<int> s(static_cast<std::size_t>(n));
    int ones = 0;
    for (int i = 0; i < n; ++i) {
      s[static_cast<std::size_t>(i)] = (bits >> (n - 1 - i)) & 1;
      ones += s[static_cast<std::size_t>(i)];
    }
    if (ones == m) out.push_back(s);
  }
  return out;
}

TEST(SplitSegments, Examples) {
  EXPECT_EQ(split_segments(8, 2), (std::vector<SegmentRange>{{0, 4}, {4, 8}}));
  EXPECT_EQ(split_segments(7, 2), (std::vector<SegmentRange>{{0, 4}, {4, 7}}));
  EXPECT_EQ(split_segments(6, 3), (std::vector<SegmentRange>{{0, 2}, {2, 4}, {4, 6}}));
  EXPECT_THROW(split_segments(1, 2), ConfigError);
}

TEST(SplitSegments, CoverAndBalance) {
  for (std::size_t T = 1; T <= 40; ++T) {
    for (int m = 1; m <= static_cast<int>(std::min<std::size_t>(T, 6)); ++m) {
      const auto segs = split_segments(T, m);
      ASSERT_EQ(segs.size(), static_cast<std::size_t>(m));
      std::size_t expect_begin = 0, lo = T, hi = 0;
      for (const auto& s : segs) {
        EXPECT_EQ(s.begin, expect_begin);
        EXPECT_GT(s.end, s.begin);
        expect_begin = s.end;
        lo = std::min(lo, s.length());
        hi = std::max(hi, s.length());
      }
      EXPECT_EQ(expect_begin, T);
      EXPECT_LE(hi - lo, 1u);
      EXPECT_GE(segs.front().length(), segs.back().length());
    }
  }
  Rng rng(1);
  const Matrix f = random_matrix(rng, 7, 3);
  const auto parts = split_segments(Tensor::constant(f), 2);
  ASSERT_EQ(parts.size(), 2u);
  EXPECT_EQ(parts[0].rows(), 4u);
  EXPECT_EQ(parts[1].value()(0, 2), f(4, 2));
}

TEST(Datp, WorkedExamples) {
  const double w = 2.0 - std::log(2.0);
  auto att = domain_attention(rows_of(0.5, 0.5, 2));
  EXPECT_NEAR(att.value()(0, 0), 1.306853, 1e-6);
  EXPECT_NEAR(att.value()(0, 0), w, 1e-15);

  auto v = datp(Tensor::constant(Matrix::from_rows({{1, 0}, {0, 1}})), rows_of(0.5, 0.5, 2));
  EXPECT_NEAR(v.value()(0, 0), 0.653426, 1e-6);
  EXPECT_NEAR(v.value()(0, 1), 0.653426, 1e-6);

  Rng rng(2);
  const Matrix f = random_matrix(rng, 5, 3);
  auto sharp = datp(Tensor::constant(f), rows_of(1.0, 0.0, 5));
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0.0;
    for (std::size_t t = 0; t < 5; ++t) mean += f(t, c) / 5.0;
    EXPECT_NEAR(sharp.value()(0, c), 2.0 * mean, 1e-12);
  }

  auto one = datp(Tensor::constant(Matrix(1, 2, {4, -2})), rows_of(0.5, 0.5, 1));
  EXPECT_NEAR(one.value()(0, 0), 5.22741, 1e-5);
  EXPECT_NEAR(one.value()(0, 1), -2.61371, 1e-5);

  EXPECT_THROW(datp(Tensor::constant(Matrix(3, 2)), rows_of(0.5, 0.5, 2)), ConfigError);
}

TEST(Datp, UniformDomainIsScaledMean) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t T = 1 + rng.index(15);
    const Matrix f = random_matrix(rng, T, 4);
    auto v = datp(Tensor::constant(f), rows_of(0.5, 0.5, T));
    for (std::size_t c = 0; c < 4; ++c) {
      double mean = 0.0;
      for (std::size_t t = 0; t < T; ++t) mean += f(t, c);
      mean /= static_cast<double>(T);
      EXPECT_NEAR(v.value()(0, c), (2.0 - std::log(2.0)) * mean, 1e-6);
    }
  }
}

TEST(Datp, AttentionWithinBounds) {
  Rng rng(4);
  auto probs = softmax_rows(Tensor::constant(random_matrix(rng, 50, 2)));
  for (double w : testing::values(domain_attention(probs).value())) {
    EXPECT_GE(w, 2.0 - std::log(2.0) - 1e-12);
    EXPECT_LE(w, 2.0);
  }
}

TEST(Datp, GradientsMatchFiniteDifferences) {
  Rng rng(5);
  auto f = Tensor::parameter(random_matrix(rng, 6, 3));
  auto logits = Tensor::parameter(random_matrix(rng, 6, 2));
  auto probe = Tensor::constant(random_matrix(rng, 1, 3));
  // Detached attention: gradient reaches f only.
  auto fixed = testing::grad_check([&] { return sum(mul(datp(f, detach(softmax_rows(logits))), probe)); }, {f});
  EXPECT_LT(fixed.worst_relative, 1e-4);
  logits.zero_grad();
  backward(sum(mul(datp(f, softmax_rows(logits)), probe)));
  EXPECT_FALSE(logits.has_grad() && testing::relative_error(logits.grad(), Matrix(6, 2)) > 0.0);
  auto full = testing::grad_check([&] { return sum(mul(datp(f, softmax_rows(logits), true), probe)); }, {f, logits});
  EXPECT_LT(full.worst_relative, 1e-4);
}

TEST(Permutation, WorkedExamples) {
  EXPECT_EQ(encode_permutation(std::vector<int>{0, 0, 1, 1}), 0u);
  EXPECT_EQ(encode_permutation(std::vector<int>{0, 1, 1, 0}), 2u);
  EXPECT_EQ(encode_permutation(std::vector<int>{1, 1, 0, 0}), 5u);
  EXPECT_EQ(encode_permutation(std::vector<int>{0, 1}), 0u);
  EXPECT_EQ(encode_permutation(std::vector<int>{1, 0}), 1u);
  EXPECT_EQ(decode_permutation(2, 2), (std::vector<int>{0, 1, 1, 0}));
  EXPECT_THROW(encode_permutation(std::vector<int>{0, 1, 1, 1}), ConfigError);
  EXPECT_THROW(encode_permutation(std::vector<int>{0, 2, 1, 0}), ConfigError);
  EXPECT_THROW(decode_permutation(6, 2), ConfigError);
}

TEST(Permutation, ExhaustiveBijection) {
  for (int m = 1; m <= 4; ++m) {
    const auto all = balanced_strings(m);
    ASSERT_EQ(all.size(), permutation_class_count(m));
    for (std::size_t i = 0; i < all.size(); ++i) {
      EXPECT_EQ(encode_permutation(all[i]), i);
      EXPECT_EQ(decode_permutation(i, m), all[i]);
    }
  }
}

TEST(ShuffleAndLabel, PreservesOrderAndLabelsSlots) {
  Rng rng(6);
  std::vector<Tensor> src, tgt;
  for (int i = 0; i < 3; ++i) {
    src.push_back(Tensor::constant(Matrix(1, 2, {static_cast<double>(i), 0.0})));
    tgt.push_back(Tensor::constant(Matrix(1, 2, {static_cast<double>(i), 1.0})));
  }
  for (int trial = 0; trial < 50; ++trial) {
    auto out = shuffle_and_label(src, tgt, rng);
    ASSERT_EQ(out.concat.cols(), 12u);
    EXPECT_EQ(out.label.class_index, encode_permutation(out.label.domain_seq));
    double next_src = 0.0, next_tgt = 0.0;
    for (std::size_t slot = 0; slot < 6; ++slot) {
      const double idx = out.concat.value()(0, 2 * slot);
      const double dom = out.concat.value()(0, 2 * slot + 1);
      EXPECT_EQ(dom, static_cast<double>(out.label.domain_seq[slot]));
      double& expected = dom == 0.0 ? next_src : next_tgt;
      EXPECT_EQ(idx, expected);
      expected += 1.0;
    }
  }
  std::vector<Tensor> short_tgt(tgt.begin(), tgt.begin() + 2);
  EXPECT_THROW(shuffle_and_label(src, short_tgt, rng), ConfigError);
}

TEST(ShuffleAndLabel, UniformOverClasses) {
  Rng rng(7);
  std::vector<Tensor> src(2, Tensor::constant(Matrix(1, 1))), tgt(2, Tensor::constant(Matrix(1, 1)));
  std::map<std::size_t, int> counts;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) ++counts[shuffle_and_label(src, tgt, rng).label.class_index];
  ASSERT_EQ(counts.size(), 6u);
  for (const auto& [cls, n] : counts) EXPECT_NEAR(n / static_cast<double>(draws), 1.0 / 6.0, 0.02) << cls;
}

TEST(PredictionLoss, Examples) {
  // Near one-hot, constant over time.
  Matrix confident(6, 3, -60.0);
  std::vector<int> labels(6, 1);
  for (std::size_t t = 0; t < 6; ++t) confident(t, 1) = 60.0;
  EXPECT_NEAR(prediction_loss(Tensor::constant(confident), labels, {}, 0.15).item(), 0.0, 1e-12);

  std::vector<int> any{0, 3, 2, 1, 1};
  EXPECT_NEAR(prediction_loss(Tensor::constant(Matrix(5, 4)), any, {}, 0.15).item(), 1.386294, 1e-6);

  Rng rng(8);
  const Matrix logits = random_matrix(rng, 8, 4);
  const std::vector<int> y{0, 1, 2, 3, 3, 2, 1, 0};
  const std::vector<std::uint8_t> mask{1, 0, 1, 0, 1, 0, 1, 0};
  double ce = 0.0;
  int kept = 0;
  for (std::size_t t = 0; t < 8; ++t) {
    if (!mask[t]) continue;
    double z = 0.0;
    for (std::size_t c = 0; c < 4; ++c) z += std::exp(logits(t, c));
    ce += std::log(z) - logits(t, static_cast<std::size_t>(y[t]));
    ++kept;
  }
  EXPECT_NEAR(prediction_loss(Tensor::constant(logits), y, mask, 0.0).item(), ce / kept, 1e-12);
  EXPECT_THROW(prediction_loss(Tensor::constant(logits), y, std::vector<std::uint8_t>(8, 0), 0.15), ConfigError);
}

TEST(PredictionLoss, SmoothingTermMatchesLoopOracle) {
  Rng rng(9);
  Matrix logits = random_matrix(rng, 10, 3);
  for (double& v : logits.data()) v *= 4.0;
  const std::vector<int> y(10, 0);
  double smooth = 0.0;
  std::vector<std::vector<double>> logp(10, std::vector<double>(3));
  for (std::size_t t = 0; t < 10; ++t) {
    double z = 0.0;
    for (std::size_t c = 0; c < 3; ++c) z += std::exp(logits(t, c));
    for (std::size_t c = 0; c < 3; ++c) logp[t][c] = logits(t, c) - std::log(z);
  }
  for (std::size_t t = 1; t < 10; ++t)
    for (std::size_t c = 0; c < 3; ++c) smooth += std::min(std::pow(logp[t][c] - logp[t - 1][c], 2), 16.0);
  smooth /= 27.0;
  const double with = prediction_loss(Tensor::constant(logits), y, {}, 0.15).item();
  const double without = prediction_loss(Tensor::constant(logits), y, {}, 0.0).item();
  EXPECT_NEAR(with - without, 0.15 * smooth, 1e-12);
}

TEST(LocalDomainLoss, Examples) {
  EXPECT_NEAR(local_domain_loss(Tensor::constant(Matrix(4, 2)), Tensor::constant(Matrix(3, 2))).item(), std::log(2.0), 1e-12);
  EXPECT_NEAR(local_domain_loss(rows_of(50, -50, 3), rows_of(-50, 50, 2)).item(), 0.0, 1e-12);
  auto src = rows_of(std::log(0.9), std::log(0.1), 4);
  auto tgt = rows_of(std::log(0.2), std::log(0.8), 7);
  EXPECT_NEAR(local_domain_loss(src, tgt).item(), 0.164252, 1e-6);
  EXPECT_THROW(local_domain_loss(Tensor::constant(Matrix(0, 2)), tgt), ConfigError);
}

TEST(LocalDomainLoss, InvariantToFramePermutation) {
  Rng rng(10);
  const Matrix s = random_matrix(rng, 9, 2), t = random_matrix(rng, 5, 2);
  Matrix s_rev(9, 2), t_rev(5, 2);
  for (std::size_t i = 0; i < 9; ++i) for (std::size_t c = 0; c < 2; ++c) s_rev(i, c) = s(8 - i, c);
  for (std::size_t i = 0; i < 5; ++i) for (std::size_t c = 0; c < 2; ++c) t_rev(i, c) = t((i + 2) % 5, c);
  const double a = local_domain_loss(Tensor::constant(s), Tensor::constant(t)).item();
  const double b = local_domain_loss(Tensor::constant(s_rev), Tensor::constant(t_rev)).item();
  EXPECT_NEAR(a, b, 1e-14);
}

TEST(GlobalDomainLoss, Examples) {
  EXPECT_NEAR(global_domain_loss(Tensor::constant(Matrix(1, 6)), 3).item(), 1.791759, 1e-6);
  Matrix big(1, 6);
  big(0, 2) = 100.0;
  EXPECT_NEAR(global_domain_loss(Tensor::constant(big), 2).item(), 0.0, 1e-12);
  // Direct evaluation: ln(e + 5) - 1.
  const double expected = std::log(std::exp(1.0) + 5.0) - 1.0;
  EXPECT_NEAR(global_domain_loss(Tensor::constant(Matrix(1, 6, {1, 0, 0, 0, 0, 0})), 0).item(), expected, 1e-12);
  EXPECT_NEAR(expected, 1.043592, 1e-6);
  EXPECT_THROW(global_domain_loss(Tensor::constant(Matrix(1, 6)), 6), ConfigError);
}

TEST(AttentiveEntropy, Examples) {
  Matrix onehot(4, 3);
  for (std::size_t t = 0; t < 4; ++t) onehot(t, t % 3) = 1.0;
  EXPECT_EQ(attentive_entropy_loss(Tensor::constant(onehot), rows_of(0.5, 0.5, 4)).item(), 0.0);

  const double ln2 = std::log(2.0);
  const double uniform = attentive_entropy_loss(rows_of(0.5, 0.5, 3), rows_of(0.5, 0.5, 3)).item();
  EXPECT_NEAR(uniform, (ln2 + 1.0) * ln2, 1e-12);
  EXPECT_NEAR(uniform, 1.173600, 1e-6);
  EXPECT_NEAR(attentive_entropy_loss(rows_of(0.5, 0.5, 3), rows_of(1.0, 0.0, 3)).item(), 0.693147, 1e-6);
  EXPECT_THROW(attentive_entropy_loss(rows_of(0.5, 0.5, 3), rows_of(0.5, 0.5, 2)), ConfigError);
}

TEST(AttentiveEntropy, GradientsMatchFiniteDifferences) {
  Rng rng(11);
  auto y = Tensor::parameter(random_matrix(rng, 7, 3));
  auto d = Tensor::parameter(random_matrix(rng, 7, 2));
  auto fixed = testing::grad_check(
      [&] { return attentive_entropy_loss(softmax_rows(y), detach(softmax_rows(d))); }, {y});
  EXPECT_LT(fixed.worst_relative, 1e-4);
  auto full = testing::grad_check(
      [&] { return attentive_entropy_loss(softmax_rows(y), softmax_rows(d), true); }, {y, d});
  EXPECT_LT(full.worst_relative, 1e-4);
}

TEST(TotalLoss, Composition) {
  const Tensor one = Tensor::scalar(1.0);
  std::vector<Tensor> pred{Tensor::scalar(0.5), Tensor::scalar(0.25)};
  std::vector<DaStageTerms> terms{{.stage = 2, .local = one, .global = one, .entropy = one}};
  const std::vector<int> da{2};
  LossWeights w{.alpha = 0.15, .mu = 1.0, .beta_l = 1.0, .beta_g = 1.0};
  EXPECT_DOUBLE_EQ(total_loss(pred, terms, w, 2, da).item(), 0.75 + 3.0);
  w.mu = w.beta_l = w.beta_g = 0.0;
  EXPECT_DOUBLE_EQ(total_loss(pred, terms, w, 2, da).item(), 0.75);

  EXPECT_THROW(total_loss(std::span(pred).first(1), terms, w, 2, da), ConfigError);
  EXPECT_THROW(total_loss(pred, {}, w, 2, da), ConfigError);
  terms[0].stage = 1;
  EXPECT_THROW(total_loss(pred, terms, w, 2, da), ConfigError);
}

TEST(TotalLoss, ReversalScalesBackboneGradientOfLocalTerm) {
  auto p = testing::make_mini_problem(12);
  const double beta_l = 0.7, lambda = 0.6;
  auto grads = [&](bool reversed) {
    p.model.zero_grad();
    auto src = mstcn_forward(Tensor::constant(p.source), p.model);
    auto tgt = mstcn_forward(Tensor::constant(p.target), p.model);
    const auto& head = p.model.local_head(2);
    auto path = [&](const Tensor& f) { return reversed ? gradient_reverse(f, lambda) : f; };
    auto loss = local_domain_loss(local_domain_classifier(path(src[1].features), head),
                                  local_domain_classifier(path(tgt[1].features), head));
    backward(scale(loss, beta_l));
    std::vector<std::pair<std::string, Matrix>> out;
    for (const auto& prm : p.model.parameters()) out.emplace_back(prm.name, prm.tensor.grad());
    return out;
  };
  const auto with = grads(true), without = grads(false);
  bool any_nonzero = false;
  for (std::size_t i = 0; i < with.size(); ++i) {
    const double factor = testing::is_domain_head(with[i].first) ? 1.0 : -lambda;
    for (std::size_t j = 0; j < with[i].second.size(); ++j) {
      const double expect = factor * without[i].second.data()[j];
      EXPECT_NEAR(with[i].second.data()[j], expect, 1e-12 * (1.0 + std::abs(expect))) << with[i].first;
      any_nonzero = any_nonzero || expect != 0.0;
    }
  }
  EXPECT_TRUE(any_nonzero);
}

TEST(TotalLoss, MiniatureGraphMatchesFiniteDifferences) {
  // Seed 1 puts a local-head relu input within the difference step of 0.
  for (std::uint64_t seed : {2u, 3u, 4u, 5u}) {
    auto p = testing::make_mini_problem(seed);
    const auto r = testing::check_mini_problem(p);
    EXPECT_LT(r.value_gap, 1e-12);
    EXPECT_LT(r.grads.worst_relative, 1e-3) << "seed " << seed << " " << r.grads.worst_tensor;
  }
}

TEST(AdaptStage, TermsAndPermutation) {
  auto p = testing::make_mini_problem(13);
  auto src = mstcn_forward(Tensor::constant(p.source), p.model);
  auto tgt = mstcn_forward(Tensor::constant(p.target), p.model);
  Rng rng(1);
  auto all = adapt_stage(src[1], tgt[1], p.model, 2, 1.0, rng, {});
  EXPECT_TRUE(all.terms.local.defined());
  EXPECT_TRUE(all.terms.global.defined());
  EXPECT_TRUE(all.terms.entropy.defined());
  EXPECT_EQ(all.permutation.domain_seq.size(), 4u);
  EXPECT_LT(all.permutation.class_index, 6u);

  AdaptationOptions local_only{.use_global = false};
  auto local = adapt_stage(src[1], tgt[1], p.model, 2, 1.0, rng, local_only);
  EXPECT_FALSE(local.terms.global.defined());
  EXPECT_TRUE(local.permutation.domain_seq.empty());
  EXPECT_EQ(local.terms.local.item(), all.terms.local.item());
  EXPECT_EQ(local.terms.entropy.item(), all.terms.entropy.item());

  EXPECT_THROW(adapt_stage(src[0], tgt[0], p.model, 1, 1.0, rng, {}), ConfigError);
}

TEST(Schedule, RampValues) {
  EXPECT_EQ(ramp(0.0), 0.0);
  EXPECT_NEAR(ramp(0.5), 0.986614, 1e-6);
  EXPECT_NEAR(ramp(1.0), 0.999909, 1e-6);
  EXPECT_EQ(ramp(-1.0), 0.0);
  EXPECT_EQ(ramp(2.0), ramp(1.0));
  double prev = -1.0;
  for (int i = 0; i <= 1000; ++i) {
    const double r = ramp(i / 1000.0);
    EXPECT_GE(r, prev);
    EXPECT_LT(r, 1.0);
    prev = r;
  }
  const auto s = beta_schedule(0.3);
  EXPECT_EQ(s.beta_l, ramp(0.3));
  EXPECT_EQ(s.beta_g, ramp(0.3));
  EXPECT_EQ(s.grl_lambda, ramp(0.3));
}

}  // namespace
}  // namespace sstda
