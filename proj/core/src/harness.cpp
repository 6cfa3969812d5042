#include "sstda/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <thread>

#include "sstda/config_file.hpp"
#include "sstda/error.hpp"

namespace sstda {

namespace {

constexpr std::uint64_t kModelSalt = 11;
constexpr std::uint64_t kOrderSalt = 12;
constexpr std::uint64_t kPermutationSalt = 13;

std::vector<Tensor> parameter_tensors(const Model& model) {
  std::vector<Tensor> out;
  for (auto& p : model.parameters()) out.push_back(p.tensor);
  return out;
}

}  // namespace

// --- configuration ------------------------------------------------------------

const char* to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::kSourceOnly: return "source-only";
    case TrainMode::kLocal: return "local";
    case TrainMode::kFull: return "full";
  }
  return "?";
}

TrainMode parse_train_mode(const std::string& text) {
  if (text == "source-only") return TrainMode::kSourceOnly;
  if (text == "local") return TrainMode::kLocal;
  if (text == "full") return TrainMode::kFull;
  throw ConfigError("unknown mode '" + text + "' (expected source-only, local or full)");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(labeled_fraction > 0.0) || labeled_fraction > 1.0) throw ConfigError("labeled fraction must be in (0, 1]");
  if (target_reload < 1) throw ConfigError("target_reload must be >= 1");
  const auto& w = weights;
  if (w.alpha < 0 || w.mu < 0 || w.beta_l < 0 || w.beta_g < 0 || w.grl_lambda < 0 || w.smoothing_tau <= 0) {
    throw ConfigError("loss weights must be nonnegative");
  }
  model.validate();
}

namespace {

const std::vector<std::string> kTrainKeys{
    "mode", "epochs", "learning_rate", "num_stages", "da_stages", "layers", "filters", "kernel",
    "num_classes", "input_dim", "segment_count", "head_hidden", "alpha", "mu", "beta_l", "beta_g",
    "grl_lambda", "smoothing_tau", "labeled_fraction", "mask_mode", "seed", "target_reload",
    "entropy_domains", "differentiate_attention", "round_final"};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

const char* to_string(EntropyDomains d) {
  switch (d) {
    case EntropyDomains::kBoth: return "both";
    case EntropyDomains::kSource: return "source";
    case EntropyDomains::kTarget: return "target";
  }
  return "?";
}

}  // namespace

void TrainConfig::apply_text(const std::string& text) {
  const auto kv = KeyValueFile::parse(text);
  if (const auto unknown = kv.unknown_keys(kTrainKeys); !unknown.empty()) {
    throw ConfigError("unknown training config key '" + unknown.front() + "'");
  }
  if (kv.contains("mode")) mode = parse_train_mode(kv.get_string("mode", ""));
  epochs = static_cast<int>(kv.get_int("epochs", epochs));
  learning_rate = kv.get_double("learning_rate", learning_rate);
  model.num_stages = static_cast<int>(kv.get_int("num_stages", model.num_stages));
  model.da_stages = kv.get_int_list("da_stages", model.da_stages);
  model.stage.layers = static_cast<int>(kv.get_int("layers", model.stage.layers));
  model.stage.filters = static_cast<int>(kv.get_int("filters", model.stage.filters));
  model.stage.kernel = static_cast<int>(kv.get_int("kernel", model.stage.kernel));
  model.stage.num_classes = static_cast<int>(kv.get_int("num_classes", model.stage.num_classes));
  model.input_dim = static_cast<int>(kv.get_int("input_dim", model.input_dim));
  model.segment_count = static_cast<int>(kv.get_int("segment_count", model.segment_count));
  model.head_hidden = static_cast<int>(kv.get_int("head_hidden", model.head_hidden));
  weights.alpha = kv.get_double("alpha", weights.alpha);
  weights.mu = kv.get_double("mu", weights.mu);
  weights.beta_l = kv.get_double("beta_l", weights.beta_l);
  weights.beta_g = kv.get_double("beta_g", weights.beta_g);
  weights.grl_lambda = kv.get_double("grl_lambda", weights.grl_lambda);
  weights.smoothing_tau = kv.get_double("smoothing_tau", weights.smoothing_tau);
  labeled_fraction = kv.get_double("labeled_fraction", labeled_fraction);
  if (kv.contains("mask_mode")) {
    const auto m = kv.get_string("mask_mode", "");
    if (m == "even") mask_mode = MaskMode::kEvenStride;
    else if (m == "random") mask_mode = MaskMode::kRandom;
    else throw ConfigError("mask_mode must be 'even' or 'random'");
  }
  seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<long long>(seed)));
  target_reload = static_cast<int>(kv.get_int("target_reload", target_reload));
  if (kv.contains("entropy_domains")) {
    const auto d = kv.get_string("entropy_domains", "");
    if (d == "both") entropy_domains = EntropyDomains::kBoth;
    else if (d == "source") entropy_domains = EntropyDomains::kSource;
    else if (d == "target") entropy_domains = EntropyDomains::kTarget;
    else throw ConfigError("entropy_domains must be both, source or target");
  }
  differentiate_attention = kv.get_bool("differentiate_attention", differentiate_attention);
  round_final = kv.get_bool("round_final", round_final);
}

std::string TrainConfig::to_text() const {
  KeyValueFile kv;
  kv.set("mode", to_string(mode));
  kv.set("epochs", std::to_string(epochs));
  kv.set("learning_rate", fmt(learning_rate));
  auto model_kv = KeyValueFile::parse(model.to_text());
  for (const auto& [k, v] : model_kv.values()) kv.set(k, v);
  kv.set("alpha", fmt(weights.alpha));
  kv.set("mu", fmt(weights.mu));
  kv.set("beta_l", fmt(weights.beta_l));
  kv.set("beta_g", fmt(weights.beta_g));
  kv.set("grl_lambda", fmt(weights.grl_lambda));
  kv.set("smoothing_tau", fmt(weights.smoothing_tau));
  kv.set("labeled_fraction", fmt(labeled_fraction));
  kv.set("mask_mode", mask_mode == MaskMode::kEvenStride ? "even" : "random");
  kv.set("seed", std::to_string(seed));
  kv.set("target_reload", std::to_string(target_reload));
  kv.set("entropy_domains", to_string(entropy_domains));
  kv.set("differentiate_attention", differentiate_attention ? "true" : "false");
  kv.set("round_final", round_final ? "true" : "false");
  return kv.format();
}

// --- optimizer ----------------------------------------------------------------

void adam_step(std::span<Tensor> params, AdamState& state, double learning_rate, const AdamOptions& o) {
  if (state.first.empty()) {
    for (const auto& p : params) {
      state.first.emplace_back(p.rows(), p.cols());
      state.second.emplace_back(p.rows(), p.cols());
    }
  }
  if (state.first.size() != params.size()) throw ConfigError("adam state does not match parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!state.first[i].same_shape(params[i].value())) throw ConfigError("adam moment shape mismatch");
    if (params[i].has_grad() && !params[i].grad().all_finite()) {
      throw NumericalError("non-finite gradient in parameter #" + std::to_string(i) + " at step " +
                           std::to_string(state.step + 1));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad()) continue;
    auto& value = params[i].mutable_value().data();
    const auto& grad = params[i].node()->grad.data();
    auto& m = state.first[i].data();
    auto& v = state.second[i].data();
    for (std::size_t j = 0; j < value.size(); ++j) {
      m[j] = o.beta1 * m[j] + (1.0 - o.beta1) * grad[j];
      v[j] = o.beta2 * v[j] + (1.0 - o.beta2) * grad[j] * grad[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      value[j] -= learning_rate * mhat / (std::sqrt(vhat) + o.eps);
    }
  }
}

// --- training -----------------------------------------------------------------

double TrainState::progress() const {
  if (total_steps == 0) return 0.0;
  return std::clamp(static_cast<double>(step) / static_cast<double>(total_steps), 0.0, 1.0);
}

LossWeights scheduled_weights(const TrainConfig& config, double progress) {
  LossWeights w = config.weights;
  if (config.mode == TrainMode::kSourceOnly) {
    w.beta_l = w.beta_g = w.mu = w.grl_lambda = 0.0;
    return w;
  }
  const Schedule s = beta_schedule(progress);
  w.beta_l *= s.beta_l;
  w.beta_g = config.mode == TrainMode::kFull ? w.beta_g * s.beta_g : 0.0;
  w.grl_lambda *= s.grl_lambda;
  return w;
}

AdaptationOptions adaptation_options(const TrainConfig& config) {
  AdaptationOptions o;
  o.use_local = config.mode != TrainMode::kSourceOnly;
  o.use_global = config.mode == TrainMode::kFull;
  o.use_entropy = config.mode != TrainMode::kSourceOnly;
  o.entropy_domains = config.entropy_domains;
  o.differentiate_attention = config.differentiate_attention;
  return o;
}

StepLosses compute_step(const Video& source, const LabelMask& mask, const Video& target, Model& model,
                        TrainState& state, const TrainConfig& config) {
  const auto& mc = model.config();
  const double progress = state.progress();
  const LossWeights w = scheduled_weights(config, progress);

  model.zero_grad();
  StepLosses out;
  out.schedule = {w.beta_l, w.beta_g, w.grl_lambda};

  const auto src_out = mstcn_forward(Tensor::constant(source.features), model);
  std::vector<Tensor> prediction;
  for (const auto& stage : src_out) {
    prediction.push_back(prediction_loss(stage.logits, source.labels, mask, w.alpha, w.smoothing_tau));
    out.prediction.push_back(prediction.back().item());
  }

  std::vector<DaStageTerms> terms;
  std::span<const int> expected;
  if (config.mode != TrainMode::kSourceOnly) {
    expected = mc.da_stages;
    const auto tgt_out = mstcn_forward(Tensor::constant(target.features), model);
    const auto options = adaptation_options(config);
    for (int s : mc.da_stages) {
      const auto idx = static_cast<std::size_t>(s - 1);
      auto adapted = adapt_stage(src_out[idx], tgt_out[idx], model, s, w.grl_lambda, state.permutation_rng, options);
      out.local.push_back(adapted.terms.local.item());
      if (adapted.terms.global.defined()) {
        out.global.push_back(adapted.terms.global.item());
        out.permutation_classes.push_back(adapted.permutation.class_index);
      }
      out.entropy.push_back(adapted.terms.entropy.item());
      terms.push_back(std::move(adapted.terms));
    }
  }
  const Tensor total = total_loss(prediction, terms, w, mc.num_stages, expected);
  out.total = total.item();
  if (!std::isfinite(out.total)) {
    throw NumericalError("non-finite loss at step " + std::to_string(state.step) + " (source " + source.id +
                         ", target " + target.id + ")");
  }
  backward(total);
  return out;
}

StepLosses train_step(const Video& source, const LabelMask& mask, const Video& target, Model& model,
                      TrainState& state, const TrainConfig& config) {
  StepLosses losses = compute_step(source, mask, target, model, state, config);
  auto params = parameter_tensors(model);
  adam_step(params, state.adam, config.learning_rate);
  ++state.step;
  return losses;
}

TrainResult train(std::span<const Video* const> source, std::span<const Video* const> target,
                  const TrainConfig& config, const StepCallback& on_step) {
  config.validate();
  if (source.empty()) throw ConfigError("training needs at least one source video");
  if (target.empty()) throw ConfigError("training needs at least one target video");

  TrainResult result{Model(config.model, Rng::derive(config.seed, kModelSalt)), {}};
  std::vector<LabelMask> masks;
  for (const auto* v : source) {
    if (v->features.cols() != static_cast<std::size_t>(config.model.input_dim)) {
      throw ConfigError("video '" + v->id + "' has " + std::to_string(v->features.cols()) +
                        " feature channels, model expects " + std::to_string(config.model.input_dim));
    }
    masks.push_back(make_label_mask(v->labels.size(), config.labeled_fraction, mask_seed(v->id, config.seed),
                                    config.mask_mode));
  }

  TrainState state;
  state.total_steps = static_cast<std::size_t>(config.epochs) * source.size() *
                      static_cast<std::size_t>(config.target_reload);
  state.permutation_rng = Rng(Rng::derive(config.seed, kPermutationSalt));
  Rng order_rng(Rng::derive(config.seed, kOrderSalt));

  std::vector<std::size_t> order(source.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[order_rng.index(i)]);
    for (std::size_t i : order) {
      for (int r = 0; r < config.target_reload; ++r) {
        const Video& tgt = *target[order_rng.index(target.size())];
        StepRecord record;
        record.step = state.step;
        record.epoch = epoch;
        record.source = source[i]->id;
        record.target = tgt.id;
        record.losses = train_step(*source[i], masks[i], tgt, result.model, state, config);
        if (on_step) on_step(record, result.model);
        result.log.push_back(std::move(record));
      }
    }
  }
  if (config.round_final) result.model.round_to_float();
  return result;
}

// --- evaluation ---------------------------------------------------------------

std::vector<int> predict(const Model& model, const Matrix& features) {
  const auto outputs = mstcn_forward(Tensor::constant(features), model);
  const Matrix& probs = outputs.back().probs.value();
  std::vector<int> labels(probs.rows());
  for (std::size_t t = 0; t < probs.rows(); ++t) {
    auto row = probs.row(t);
    std::size_t best = 0;
    for (std::size_t c = 1; c < row.size(); ++c) {
      if (row[c] > row[best]) best = c;
    }
    labels[t] = static_cast<int>(best);
  }
  return labels;
}

Evaluation evaluate(const Model& model, std::span<const Video* const> videos, const MetricOptions& options,
                    unsigned threads) {
  if (videos.empty()) throw ConfigError("evaluation split is empty");
  std::vector<std::vector<int>> preds(videos.size());
  std::vector<VideoScore> scores(videos.size());
  auto work = [&](std::size_t i) {
    preds[i] = predict(model, videos[i]->features);
    scores[i] = score_video(videos[i]->id, preds[i], videos[i]->labels, options);
  };
  const unsigned n = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(videos.size())));
  if (n == 1) {
    for (std::size_t i = 0; i < videos.size(); ++i) work(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(n);
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < n; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = next++; i < videos.size(); i = next++) work(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  Evaluation ev;
  ev.report = aggregate_corpus(scores);
  ev.videos = std::move(scores);
  for (std::size_t i = 0; i < videos.size(); ++i) ev.predictions[videos[i]->id] = std::move(preds[i]);
  return ev;
}

// --- timeline rendering -------------------------------------------------------

std::string class_color(int class_id) {
  static const char* const kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                         "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
                                         "#aec7e8", "#ffbb78", "#98df8a", "#ff9896", "#c5b0d5",
                                         "#c49c94", "#f7b6d2", "#c7c7c7", "#dbdb8d", "#9edae5"};
  constexpr int kCount = static_cast<int>(std::size(kPalette));
  if (class_id >= 0 && class_id < kCount) return kPalette[class_id];
  // golden-ratio hue walk beyond the fixed table
  const double h = std::fmod(0.61803398875 * std::abs(class_id), 1.0) * 6.0;
  const double s = 0.55;
  const double v = 0.85;
  const double f = h - std::floor(h);
  const double p = v * (1 - s), q = v * (1 - s * f), u = v * (1 - s * (1 - f));
  double r = v, g = u, b = p;
  switch (static_cast<int>(h)) {
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = u; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = u; g = p; b = v; break;
    case 5: r = v; g = p; b = q; break;
    default: break;
  }
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", static_cast<int>(r * 255), static_cast<int>(g * 255),
                static_cast<int>(b * 255));
  return buf;
}

namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
  return out;
}

std::size_t common_length(std::span<const TimelineTrack> tracks) {
  if (tracks.empty()) throw ConfigError("timeline needs at least one track");
  const std::size_t T = tracks[0].labels.size();
  if (T == 0) throw ConfigError("timeline track '" + tracks[0].name + "' is empty");
  for (const auto& t : tracks) {
    if (t.labels.size() != T) {
      throw ConfigError("timeline track '" + t.name + "' has " + std::to_string(t.labels.size()) +
                        " frames, expected " + std::to_string(T));
    }
  }
  return T;
}

}  // namespace

std::string render_timeline_svg(std::span<const TimelineTrack> tracks, const ClassMapping* mapping,
                                std::span<const std::string> palette) {
  const std::size_t T = common_length(tracks);
  constexpr double kLabelWidth = 120.0;
  constexpr double kBarWidth = 800.0;
  constexpr double kRowHeight = 28.0;
  constexpr double kBarHeight = 20.0;
  const double unit = kBarWidth / static_cast<double>(T);
  const double height = kRowHeight * static_cast<double>(tracks.size()) + 8.0;
  char buf[512];
  std::string svg = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" viewBox=\"0 0 %.0f %.0f\">\n",
                kLabelWidth + kBarWidth + 8, height, kLabelWidth + kBarWidth + 8, height);
  svg += buf;
  for (std::size_t r = 0; r < tracks.size(); ++r) {
    const double y = 4.0 + kRowHeight * static_cast<double>(r);
    std::snprintf(buf, sizeof buf,
                  "  <g class=\"track\" data-name=\"%s\">\n"
                  "    <text x=\"4\" y=\"%.2f\" font-family=\"monospace\" font-size=\"12\">%s</text>\n",
                  xml_escape(tracks[r].name).c_str(), y + kBarHeight * 0.75, xml_escape(tracks[r].name).c_str());
    svg += buf;
    for (const auto& seg : labels_to_segments(tracks[r].labels)) {
      const std::string color =
          (seg.class_id >= 0 && static_cast<std::size_t>(seg.class_id) < palette.size())
              ? palette[static_cast<std::size_t>(seg.class_id)]
              : class_color(seg.class_id);
      const std::string title = mapping != nullptr && seg.class_id >= 0 &&
                                        static_cast<std::size_t>(seg.class_id) < mapping->size()
                                    ? mapping->name(seg.class_id)
                                    : std::to_string(seg.class_id);
      std::snprintf(buf, sizeof buf,
                    "    <rect x=\"%.3f\" y=\"%.2f\" width=\"%.3f\" height=\"%.2f\" fill=\"%s\" "
                    "data-class=\"%d\" data-start=\"%zu\" data-end=\"%zu\"><title>%s</title></rect>\n",
                    kLabelWidth + unit * static_cast<double>(seg.start), y, unit * static_cast<double>(seg.end - seg.start),
                    kBarHeight, xml_escape(color).c_str(), seg.class_id, seg.start, seg.end, xml_escape(title).c_str());
      svg += buf;
    }
    svg += "  </g>\n";
  }
  svg += "</svg>\n";
  return svg;
}

std::string render_timeline_ascii(std::span<const TimelineTrack> tracks, std::size_t width) {
  const std::size_t T = common_length(tracks);
  const std::size_t cols = std::max<std::size_t>(1, std::min(width, T));
  std::size_t name_width = 0;
  for (const auto& t : tracks) name_width = std::max(name_width, t.name.size());
  static const std::string kSymbols = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789";
  std::string out;
  for (const auto& t : tracks) {
    out += t.name + std::string(name_width - t.name.size(), ' ') + " |";
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t lo = c * T / cols;
      const std::size_t hi = std::max(lo + 1, (c + 1) * T / cols);
      std::map<int, std::size_t> votes;
      for (std::size_t f = lo; f < hi; ++f) ++votes[t.labels[f]];
      int best = votes.begin()->first;
      for (const auto& [cls, n] : votes) {
        if (n > votes[best]) best = cls;
      }
      out += best >= 0 && static_cast<std::size_t>(best) < kSymbols.size() ? kSymbols[static_cast<std::size_t>(best)] : '?';
    }
    out += "|\n";
  }
  return out;
}

}  // namespace sstda
