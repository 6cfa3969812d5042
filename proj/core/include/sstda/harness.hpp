#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sstda/data.hpp"
#include "sstda/metrics.hpp"
#include "sstda/model.hpp"
#include "sstda/sstda.hpp"

namespace sstda {

enum class TrainMode { kSourceOnly, kLocal, kFull };

const char* to_string(TrainMode mode);
TrainMode parse_train_mode(const std::string& text);

struct TrainConfig {
  TrainMode mode = TrainMode::kFull;
  int epochs = 1;
  double learning_rate = 5e-4;
  ModelConfig model;
  /// Base weights; beta_l, beta_g and grl_lambda are multiplied by the ramp.
  LossWeights weights{.alpha = 0.15, .mu = 1e-2, .beta_l = 1.0, .beta_g = 1.0, .grl_lambda = 1.0};
  double labeled_fraction = 1.0;
  MaskMode mask_mode = MaskMode::kEvenStride;
  std::uint64_t seed = 0;
  /// Target draws per source video and epoch.
  int target_reload = 1;
  EntropyDomains entropy_domains = EntropyDomains::kBoth;
  bool differentiate_attention = false;
  /// Round the final parameters to 4-byte floats so checkpoints are exact.
  bool round_final = true;

  void validate() const;
  /// Overrides fields from `key = value` text; unknown keys are rejected.
  void apply_text(const std::string& text);
  std::string to_text() const;
};

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::size_t step = 0;
  std::vector<Matrix> first;
  std::vector<Matrix> second;
};

/// One bias-corrected Adam update from the accumulated gradients of `params`.
/// Throws NumericalError before touching anything if a gradient is not finite.
void adam_step(std::span<Tensor> params, AdamState& state, double learning_rate,
               const AdamOptions& options = {});

struct TrainState {
  std::size_t step = 0;
  std::size_t total_steps = 1;
  AdamState adam;
  Rng permutation_rng{0};

  double progress() const;
};

struct StepLosses {
  double total = 0.0;
  std::vector<double> prediction;  // per stage
  std::vector<double> local;       // per DA stage
  std::vector<double> global;
  std::vector<double> entropy;
  std::vector<std::size_t> permutation_classes;
  Schedule schedule;
};

/// Effective loss weights at the current progress.
LossWeights scheduled_weights(const TrainConfig& config, double progress);
AdaptationOptions adaptation_options(const TrainConfig& config);

/// Forward/backward on one (source, target) pair; computes gradients only.
StepLosses compute_step(const Video& source, const LabelMask& mask, const Video& target, Model& model,
                        TrainState& state, const TrainConfig& config);

/// compute_step followed by one Adam update.
StepLosses train_step(const Video& source, const LabelMask& mask, const Video& target, Model& model,
                      TrainState& state, const TrainConfig& config);

struct StepRecord {
  std::size_t step = 0;
  int epoch = 0;
  std::string source;
  std::string target;
  StepLosses losses;
};

struct TrainResult {
  Model model;
  std::vector<StepRecord> log;
};

using StepCallback = std::function<void(const StepRecord&, const Model&)>;

/// Per epoch, visits source videos in seeded shuffled order and pairs each
/// with `target_reload` uniformly drawn target videos.
TrainResult train(std::span<const Video* const> source, std::span<const Video* const> target,
                  const TrainConfig& config, const StepCallback& on_step = {});

/// Per-frame argmax of the last stage; ties go to the lowest class id.
std::vector<int> predict(const Model& model, const Matrix& features);

struct Evaluation {
  MetricsReport report;
  std::vector<VideoScore> videos;
  std::map<std::string, std::vector<int>> predictions;
};

/// `threads` > 1 scores videos concurrently; results do not depend on it.
Evaluation evaluate(const Model& model, std::span<const Video* const> videos,
                    const MetricOptions& options = {}, unsigned threads = 1);

struct TimelineTrack {
  std::string name;
  std::vector<int> labels;
};

/// Deterministic color for a class id ("#rrggbb").
std::string class_color(int class_id);

/// One horizontal bar per track, spans colored by class.
std::string render_timeline_svg(std::span<const TimelineTrack> tracks, const ClassMapping* mapping = nullptr,
                                std::span<const std::string> palette = {});

/// Fixed-width rows, one character per bucket of frames, for terminals.
std::string render_timeline_ascii(std::span<const TimelineTrack> tracks, std::size_t width = 80);

}  // namespace sstda
