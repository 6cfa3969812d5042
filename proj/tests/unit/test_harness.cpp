#include <gtest/gtest.h>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>

#include "gradcheck.hpp"
#include "json.hpp"
#include "sstda/error.hpp"
#include "sstda/harness.hpp"

namespace sstda {
namespace {

SynthConfig small_synth() {
  SynthConfig c;
  c.num_classes = 3;
  c.feature_dim = 4;
  c.source_videos = 3;
  c.target_videos = 2;
  c.script_length = 3;
  c.min_duration = 3;
  c.max_duration = 6;
  c.class_separation = 2.0;
  c.noise = 0.5;
  c.shift = 0.8;
  c.duration_factor = 1.5;
  return c;
}

TrainConfig small_train(TrainMode mode = TrainMode::kFull) {
  TrainConfig t;
  t.mode = mode;
  t.epochs = 2;
  t.learning_rate = 5e-3;
  t.model.num_stages = 2;
  t.model.da_stages = {2};
  t.model.stage.layers = 3;
  t.model.stage.filters = 8;
  t.model.stage.num_classes = 3;
  t.model.input_dim = 4;
  t.seed = 7;
  return t;
}

std::vector<const Video*> pointers(const Dataset& d, const std::string& split) { return d.split(split); }

std::vector<Matrix> parameter_values(const Model& m) {
  std::vector<Matrix> out;
  for (const auto& p : m.parameters()) out.push_back(p.tensor.value());
  return out;
}

std::vector<Matrix> parameter_grads(const Model& m) {
  std::vector<Matrix> out;
  for (const auto& p : m.parameters()) out.push_back(p.tensor.grad());
  return out;
}

TEST(Adam, ZeroGradientLeavesParameters) {
  auto p = Tensor::parameter(Matrix(2, 2, 0.7));
  p.zero_grad();
  backward(scale(sum(p), 0.0));
  AdamState state;
  std::vector<Tensor> params{p};
  adam_step(params, state, 0.1);
  for (double v : testing::values(p.value())) EXPECT_EQ(v, 0.7);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  auto p = Tensor::parameter(Matrix(1, 1, 1.0));
  backward(sum(p));
  AdamState state;
  std::vector<Tensor> params{p};
  adam_step(params, state, 0.1);
  // m_hat = 1, v_hat = 1: step = lr / (1 + eps).
  EXPECT_NEAR(p.value()(0, 0), 0.9, 1e-8);
  EXPECT_EQ(state.step, 1u);
}

TEST(Adam, ConvergesOnQuadratic) {
  auto x = Tensor::parameter(Matrix(1, 1, 3.0));
  AdamState state;
  std::vector<Tensor> params{x};
  int steps = 0;
  while (steps < 2000 && std::abs(x.value()(0, 0)) >= 1e-3) {
    x.zero_grad();
    backward(sum(mul(x, x)));
    adam_step(params, state, 0.1);
    ++steps;
  }
  EXPECT_LT(std::abs(x.value()(0, 0)), 1e-3);
  EXPECT_LE(steps, 2000);
}

TEST(Adam, RejectsNonFiniteGradient) {
  auto p = Tensor::parameter(Matrix(1, 2, 1.0));
  p.node()->ensure_grad().data()[1] = std::nan("");
  AdamState state;
  std::vector<Tensor> params{p};
  EXPECT_THROW(adam_step(params, state, 0.1), NumericalError);
  EXPECT_EQ(p.value()(0, 0), 1.0);
  EXPECT_EQ(state.step, 0u);
}

TEST(TrainConfig, TextRoundTripAndValidation) {
  TrainConfig t = small_train(TrainMode::kLocal);
  t.labeled_fraction = 0.65;
  t.mask_mode = MaskMode::kRandom;
  TrainConfig back;
  back.apply_text(t.to_text());
  EXPECT_EQ(back.to_text(), t.to_text());
  EXPECT_EQ(back.mode, TrainMode::kLocal);

  TrainConfig c;
  EXPECT_THROW(c.apply_text("epoch = 3\n"), ConfigError);
  EXPECT_THROW(c.apply_text("mode = adversarial\n"), ConfigError);
  TrainConfig bad = small_train();
  bad.epochs = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = small_train();
  bad.labeled_fraction = 0.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_EQ(parse_train_mode("source-only"), TrainMode::kSourceOnly);
  EXPECT_STREQ(to_string(TrainMode::kFull), "full");
}

TEST(Schedule, ModesShapeTheWeights) {
  TrainConfig t = small_train(TrainMode::kSourceOnly);
  auto w = scheduled_weights(t, 0.5);
  EXPECT_EQ(w.beta_l, 0.0);
  EXPECT_EQ(w.beta_g, 0.0);
  EXPECT_EQ(w.mu, 0.0);
  EXPECT_EQ(w.alpha, 0.15);
  t.mode = TrainMode::kLocal;
  w = scheduled_weights(t, 0.5);
  EXPECT_EQ(w.beta_g, 0.0);
  EXPECT_EQ(w.beta_l, ramp(0.5));
  t.mode = TrainMode::kFull;
  w = scheduled_weights(t, 0.0);
  EXPECT_EQ(w.beta_l, 0.0);
  EXPECT_EQ(w.grl_lambda, 0.0);
  w = scheduled_weights(t, 1.0);
  EXPECT_EQ(w.beta_g, ramp(1.0));
  EXPECT_EQ(w.mu, 0.01);
}

TEST(TrainStep, SourceOnlyIgnoresTarget) {
  const auto corpus = generate_synthetic(small_synth(), 1);
  const Video& src = corpus.source.videos.begin()->second;
  Video noise = corpus.target.videos.begin()->second;
  Rng rng(3);
  for (double& v : noise.features.data()) v = 10.0 * rng.normal();
  const TrainConfig cfg = small_train(TrainMode::kSourceOnly);
  const LabelMask mask(src.labels.size(), 1);

  Model a(cfg.model, 1), b(cfg.model, 1);
  TrainState sa, sb;
  compute_step(src, mask, corpus.target.videos.begin()->second, a, sa, cfg);
  compute_step(src, mask, noise, b, sb, cfg);
  EXPECT_EQ(parameter_grads(a), parameter_grads(b));
}

TEST(TrainStep, OnePermutationPerDaStage) {
  const auto corpus = generate_synthetic(small_synth(), 2);
  TrainConfig cfg = small_train();
  cfg.model.num_stages = 3;
  cfg.model.da_stages = {2, 3};
  Model model(cfg.model, 3);
  TrainState state;
  state.total_steps = 10;
  const Video& src = corpus.source.videos.begin()->second;
  const LabelMask mask(src.labels.size(), 1);
  for (int i = 0; i < 10; ++i) {
    const auto losses = train_step(src, mask, corpus.target.videos.begin()->second, model, state, cfg);
    ASSERT_EQ(losses.permutation_classes.size(), 2u);
    for (auto c : losses.permutation_classes) EXPECT_LT(c, 6u);
    EXPECT_EQ(losses.local.size(), 2u);
    EXPECT_EQ(losses.prediction.size(), 3u);
  }
  cfg.mode = TrainMode::kLocal;
  const auto local = train_step(src, mask, corpus.target.videos.begin()->second, model, state, cfg);
  EXPECT_TRUE(local.permutation_classes.empty());
  EXPECT_TRUE(local.global.empty());
}

TEST(Train, CountsStepsAndTargetUses) {
  auto corpus = generate_synthetic(small_synth(), 3);
  auto src = pointers(corpus.source, "source");
  src.resize(2);
  auto tgt = pointers(corpus.target, "target");
  tgt.resize(1);
  TrainConfig cfg = small_train();
  cfg.epochs = 3;
  std::size_t callbacks = 0;
  const auto result = train(src, tgt, cfg, [&](const StepRecord&, const Model&) { ++callbacks; });
  EXPECT_EQ(result.log.size(), 6u);
  EXPECT_EQ(callbacks, 6u);
  std::map<std::string, int> per_source;
  for (std::size_t i = 0; i < result.log.size(); ++i) {
    EXPECT_EQ(result.log[i].step, i);
    EXPECT_EQ(result.log[i].target, tgt[0]->id);
    EXPECT_EQ(result.log[i].epoch, static_cast<int>(i / 2));
    ++per_source[result.log[i].source];
  }
  for (const auto* v : src) EXPECT_EQ(per_source[v->id], 3);

  cfg.target_reload = 2;
  EXPECT_EQ(train(src, tgt, cfg).log.size(), 12u);
  EXPECT_THROW(train({}, tgt, cfg), ConfigError);
  EXPECT_THROW(train(src, {}, cfg), ConfigError);
}

TEST(Train, ScheduleRampsOverSteps) {
  const auto corpus = generate_synthetic(small_synth(), 4);
  TrainConfig cfg = small_train();
  const auto result = train(pointers(corpus.source, "source"), pointers(corpus.target, "target"), cfg);
  const double n = static_cast<double>(result.log.size());
  for (const auto& r : result.log) {
    EXPECT_DOUBLE_EQ(r.losses.schedule.beta_l, ramp(static_cast<double>(r.step) / n));
    EXPECT_DOUBLE_EQ(r.losses.schedule.grl_lambda, ramp(static_cast<double>(r.step) / n));
  }
}

TEST(Train, BitwiseDeterministic) {
  const auto corpus = generate_synthetic(small_synth(), 5);
  const auto src = pointers(corpus.source, "source"), tgt = pointers(corpus.target, "target");
  TrainConfig cfg = small_train();
  cfg.labeled_fraction = 0.65;
  const auto a = train(src, tgt, cfg), b = train(src, tgt, cfg);
  EXPECT_EQ(encode_checkpoint(a.model), encode_checkpoint(b.model));
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    EXPECT_EQ(a.log[i].losses.total, b.log[i].losses.total);
    EXPECT_EQ(a.log[i].target, b.log[i].target);
  }
  cfg.seed = 8;
  EXPECT_NE(encode_checkpoint(train(src, tgt, cfg).model), encode_checkpoint(a.model));

  const auto e1 = evaluate(a.model, tgt, {}, 1), e4 = evaluate(a.model, tgt, {}, 4);
  EXPECT_EQ(report_to_json(e1.report), report_to_json(e4.report));
  EXPECT_EQ(e1.predictions, e4.predictions);
}

TEST(Train, LocalEqualsFullWithoutGlobalWeight) {
  const auto corpus = generate_synthetic(small_synth(), 6);
  const auto src = pointers(corpus.source, "source"), tgt = pointers(corpus.target, "target");
  TrainConfig local = small_train(TrainMode::kLocal);
  TrainConfig full = small_train(TrainMode::kFull);
  full.weights.beta_g = 0.0;
  Model ml(local.model, 1), mf(full.model, 1);
  TrainState sl, sf;
  sl.total_steps = sf.total_steps = 5;
  const Video& s = *src[0];
  const LabelMask mask(s.labels.size(), 1);
  for (int step = 0; step < 5; ++step) {
    const Video& t = *tgt[static_cast<std::size_t>(step) % tgt.size()];
    train_step(s, mask, t, ml, sl, local);
    train_step(s, mask, t, mf, sf, full);
    const auto pl = ml.parameters(), pf = mf.parameters();
    for (std::size_t i = 0; i < pl.size(); ++i) {
      if (pl[i].name.find(".global.") != std::string::npos) {
        EXPECT_EQ(pf[i].tensor.grad(), Matrix(pf[i].tensor.rows(), pf[i].tensor.cols()));
      } else {
        EXPECT_EQ(pl[i].tensor.grad(), pf[i].tensor.grad()) << pl[i].name << " step " << step;
      }
      EXPECT_EQ(pl[i].tensor.value(), pf[i].tensor.value()) << pl[i].name << " step " << step;
    }
  }
}

TEST(Train, ZeroAdaptationWeightsMatchSourceOnly) {
  const auto corpus = generate_synthetic(small_synth(), 7);
  const auto src = pointers(corpus.source, "source"), tgt = pointers(corpus.target, "target");
  TrainConfig base = small_train(TrainMode::kSourceOnly);
  TrainConfig full = small_train(TrainMode::kFull);
  full.weights.beta_l = full.weights.beta_g = full.weights.mu = 0.0;
  std::vector<std::vector<Matrix>> trace;
  train(src, tgt, base, [&](const StepRecord&, const Model& m) { trace.push_back(parameter_values(m)); });
  std::size_t i = 0;
  train(src, tgt, full, [&](const StepRecord& r, const Model& m) {
    const auto values = parameter_values(m);
    const auto names = m.parameters();
    for (std::size_t k = 0; k < values.size(); ++k) {
      EXPECT_EQ(values[k], trace[i][k]) << names[k].name << " step " << r.step;
    }
    ++i;
  });
  EXPECT_EQ(i, trace.size());
}

TEST(Train, LossesStayFiniteOverManySteps) {
  SynthConfig sc = small_synth();
  sc.source_videos = 10;
  sc.target_videos = 5;
  sc.noise = 2.0;
  sc.shift = 1.5;
  const auto corpus = generate_synthetic(sc, 8);
  TrainConfig cfg = small_train();
  cfg.epochs = 50;
  cfg.learning_rate = 1e-3;
  cfg.weights.mu = 0.1;
  const auto result = train(pointers(corpus.source, "source"), pointers(corpus.target, "target"), cfg);
  ASSERT_EQ(result.log.size(), 500u);
  for (const auto& r : result.log) {
    ASSERT_TRUE(std::isfinite(r.losses.total)) << r.step;
    for (double v : r.losses.local) ASSERT_TRUE(std::isfinite(v));
    for (double v : r.losses.global) ASSERT_TRUE(std::isfinite(v));
    for (double v : r.losses.entropy) ASSERT_TRUE(std::isfinite(v));
  }
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < 50; ++i) {
    for (double v : result.log[i].losses.prediction) first += v;
    for (double v : result.log[450 + i].losses.prediction) last += v;
  }
  EXPECT_LT(last, first);
}

TEST(Evaluate, OverfitsTwoTinyVideos) {
  SynthConfig sc = small_synth();
  sc.source_videos = 2;
  const auto corpus = generate_synthetic(sc, 9);
  const auto src = pointers(corpus.source, "source");
  TrainConfig cfg = small_train(TrainMode::kSourceOnly);
  cfg.epochs = 150;
  cfg.learning_rate = 1e-2;
  const auto result = train(src, pointers(corpus.target, "target"), cfg);
  EXPECT_GT(evaluate(result.model, src).report.acc, 95.0);
}

TEST(Evaluate, ZeroModelPredictsLowestClass) {
  TrainConfig cfg = small_train();
  Model model(cfg.model, 1);
  model.set_all_parameters(0.0);
  const auto corpus = generate_synthetic(small_synth(), 10);
  for (const auto* v : pointers(corpus.target, "target")) {
    for (int p : predict(model, v->features)) EXPECT_EQ(p, 0);
  }
}

TEST(Evaluate, ReportKeysAndCheckpointExactness) {
  const auto corpus = generate_synthetic(small_synth(), 11);
  const auto src = pointers(corpus.source, "source"), tgt = pointers(corpus.target, "target");
  const auto result = train(src, tgt, small_train());
  const auto before = evaluate(result.model, tgt);
  const auto j = nlohmann::json::parse(report_to_json(before.report));
  std::set<std::string> keys;
  for (const auto& [k, v] : j.items()) keys.insert(k);
  EXPECT_EQ(keys, (std::set<std::string>{"acc", "edit", "f1_10", "f1_25", "f1_50"}));
  EXPECT_EQ(before.videos.size(), tgt.size());

  const auto path = std::filesystem::temp_directory_path() / "sstda_harness_eval.ckpt";
  save_checkpoint(result.model, path);
  const Model loaded = load_checkpoint(path);
  std::filesystem::remove(path);
  const auto after = evaluate(loaded, tgt);
  EXPECT_EQ(after.predictions, before.predictions);
  EXPECT_EQ(report_to_json(after.report), report_to_json(before.report));
  EXPECT_EQ(parameter_values(loaded), parameter_values(result.model));
}

TEST(Timeline, SvgSpansAndWellFormedness) {
  const std::vector<TimelineTrack> tracks{{"gt", {0, 0, 1}}, {"pred <&>", {0, 0, 1}}};
  const std::string svg = render_timeline_svg(tracks);
  boost::property_tree::ptree tree;
  std::istringstream in(svg);
  ASSERT_NO_THROW(boost::property_tree::read_xml(in, tree));

  std::vector<std::vector<std::pair<double, std::string>>> bars;
  for (const auto& [tag, g] : tree.get_child("svg")) {
    if (tag != "g") continue;
    bars.emplace_back();
    for (const auto& [rtag, rect] : g) {
      if (rtag != "rect") continue;
      bars.back().emplace_back(rect.get<double>("<xmlattr>.width"), rect.get<std::string>("<xmlattr>.fill"));
    }
  }
  ASSERT_EQ(bars.size(), 2u);
  ASSERT_EQ(bars[0].size(), 2u);
  EXPECT_NEAR(bars[0][0].first / bars[0][1].first, 2.0, 1e-5);  // widths carry 3 decimals
  EXPECT_NE(bars[0][0].second, bars[0][1].second);
  EXPECT_EQ(bars[0], bars[1]);
  EXPECT_EQ(class_color(1), bars[0][1].second);

  const std::vector<TimelineTrack> uneven{{"a", {0, 1}}, {"b", {0}}};
  EXPECT_THROW(render_timeline_svg(uneven), ConfigError);
  EXPECT_THROW(render_timeline_ascii(uneven), ConfigError);
}

TEST(Timeline, AsciiAndPalette) {
  const std::vector<TimelineTrack> tracks{{"gt", {0, 0, 1}}, {"p", {0, 0, 1}}};
  EXPECT_EQ(render_timeline_ascii(tracks), "gt |AAB|\np  |AAB|\n");
  std::set<std::string> colors;
  for (int c = 0; c < 40; ++c) {
    const auto col = class_color(c);
    EXPECT_EQ(col.size(), 7u);
    EXPECT_EQ(col[0], '#');
    EXPECT_EQ(col, class_color(c));
    colors.insert(col);
  }
  EXPECT_EQ(colors.size(), 40u);
}

}  // namespace
}  // namespace sstda
