#pragma once

// Self-supervised temporal domain adaptation: segment pooling, permutation
// labels and the loss terms of the joint objective.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "sstda/model.hpp"
#include "sstda/numerics.hpp"
#include "sstda/random.hpp"

namespace sstda {

struct SegmentRange {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
  std::size_t length() const noexcept { return end - begin; }
  friend bool operator==(const SegmentRange&, const SegmentRange&) = default;
};

/// m contiguous ranges covering [0, T); the first T mod m are one frame longer.
std::vector<SegmentRange> split_segments(std::size_t frames, int segment_count);
std::vector<Tensor> split_segments(const Tensor& features, int segment_count);

/// Per-frame attention w = (1 - H(d)) + 1 for domain probability rows, T x 1.
Tensor domain_attention(const Tensor& domain_probs);

/// Domain attentive temporal pooling: (1/T') sum_j w_j f_j, 1 x filters.
/// The attention is a constant unless `differentiate_attention` is set.
Tensor datp(const Tensor& features, const Tensor& domain_probs, bool differentiate_attention = false);

struct PermutationLabel {
  std::vector<int> domain_seq;  // 0 = source slot, 1 = target slot
  std::size_t class_index = 0;
};

/// Lexicographic rank among balanced binary strings of the same length.
std::size_t encode_permutation(std::span<const int> domain_seq);
std::vector<int> decode_permutation(std::size_t class_index, int segment_count);

struct ShuffledSegments {
  Tensor concat;  // 1 x (2m * filters)
  PermutationLabel label;
};

/// Interleaves pooled source and target segment features uniformly at random
/// while keeping each domain's segments in their original order.
ShuffledSegments shuffle_and_label(std::span<const Tensor> source, std::span<const Tensor> target,
                                   Rng& rng);

struct LossWeights {
  double alpha = 0.15;  // smoothing
  double mu = 1e-2;     // attentive entropy
  double beta_l = 0.0;
  double beta_g = 0.0;
  double grl_lambda = 0.0;
  double smoothing_tau = 4.0;
};

/// Masked mean cross-entropy plus alpha times the truncated MSE of adjacent
/// log-probabilities (squared differences capped at tau^2).
Tensor prediction_loss(const Tensor& logits, std::span<const int> labels,
                       std::span<const std::uint8_t> mask, double alpha, double tau = 4.0);

/// Binary domain cross-entropy: source frames labelled 0, target frames 1,
/// averaged within each domain, then across the two domains.
Tensor local_domain_loss(const Tensor& source_logits, const Tensor& target_logits);

/// Cross-entropy of the permutation logits at class `label`.
Tensor global_domain_loss(const Tensor& permutation_logits, std::size_t label);

/// (1/T) sum_j (H(d_j) + 1) * H(y_j) over probability rows. The domain
/// factor is a constant unless `differentiate_attention` is set.
Tensor attentive_entropy_loss(const Tensor& class_probs, const Tensor& domain_probs,
                              bool differentiate_attention = false);

struct DaStageTerms {
  int stage = 0;  // 1-based
  Tensor local;
  Tensor global;  // undefined when the global branch is disabled
  Tensor entropy;
};

/// sum_s L_y(s) + sum_da (beta_l L_ld + beta_g L_gd + mu L_ae). The
/// adversarial sign lives in the gradient reversal inside each term's graph.
Tensor total_loss(std::span<const Tensor> prediction_losses, std::span<const DaStageTerms> da_terms,
                  const LossWeights& weights, int num_stages, std::span<const int> da_stages);

/// 2 / (1 + exp(-10 p)) - 1 with p clamped to [0, 1].
double ramp(double progress);

struct Schedule {
  double beta_l = 0.0;
  double beta_g = 0.0;
  double grl_lambda = 0.0;
};

Schedule beta_schedule(double progress);

enum class EntropyDomains { kBoth, kSource, kTarget };

struct AdaptationOptions {
  bool use_local = true;
  bool use_global = true;
  bool use_entropy = true;
  EntropyDomains entropy_domains = EntropyDomains::kBoth;
  bool differentiate_attention = false;
};

struct StageAdaptation {
  DaStageTerms terms;
  PermutationLabel permutation;  // empty when the global branch is off
};

/// Builds the local, global and attentive-entropy terms of one DA stage from
/// the stage outputs of a source and a target video.
StageAdaptation adapt_stage(const StageOutput& source, const StageOutput& target, const Model& model,
                            int stage, double grl_lambda, Rng& rng, const AdaptationOptions& options);

}  // namespace sstda
