#include "sstda/sstda.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sstda/error.hpp"

namespace sstda {

namespace {

std::size_t binomial(std::size_t n, std::size_t k) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  std::size_t r = 1;
  for (std::size_t i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

Tensor rows_of(const Tensor& x, const SegmentRange& r) { return slice_rows(x, r.begin, r.end); }

}  // namespace

std::vector<SegmentRange> split_segments(std::size_t frames, int segment_count) {
  if (segment_count < 1) throw ConfigError("segment count must be >= 1");
  const auto m = static_cast<std::size_t>(segment_count);
  if (frames < m) {
    throw ConfigError("cannot split " + std::to_string(frames) + " frames into " +
                      std::to_string(m) + " segments");
  }
  const std::size_t base = frames / m;
  const std::size_t extra = frames % m;
  std::vector<SegmentRange> out;
  std::size_t begin = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t len = base + (i < extra ? 1 : 0);
    out.push_back({begin, begin + len});
    begin += len;
  }
  return out;
}

std::vector<Tensor> split_segments(const Tensor& features, int segment_count) {
  std::vector<Tensor> out;
  for (const auto& r : split_segments(features.rows(), segment_count)) out.push_back(rows_of(features, r));
  return out;
}

Tensor domain_attention(const Tensor& domain_probs) {
  // 1 - H(d) plus the residual 1
  return add_scalar(scale(row_entropy(domain_probs), -1.0), 2.0);
}

Tensor datp(const Tensor& features, const Tensor& domain_probs, bool differentiate_attention) {
  if (features.rows() != domain_probs.rows()) {
    throw ConfigError("datp: " + std::to_string(features.rows()) + " feature rows vs " +
                      std::to_string(domain_probs.rows()) + " domain rows");
  }
  if (domain_probs.cols() != 2) throw ConfigError("datp: domain probabilities must have 2 columns");
  const Tensor probs = differentiate_attention ? domain_probs : detach(domain_probs);
  return weighted_row_mean(features, domain_attention(probs));
}

std::size_t encode_permutation(std::span<const int> domain_seq) {
  const std::size_t n = domain_seq.size();
  if (n == 0 || n % 2 != 0) throw ConfigError("permutation sequence must have even, nonzero length");
  std::size_t zeros = 0;
  for (int v : domain_seq) {
    if (v != 0 && v != 1) throw ConfigError("permutation entries must be 0 or 1");
    zeros += v == 0 ? 1 : 0;
  }
  if (zeros * 2 != n) throw ConfigError("permutation sequence is not balanced");
  std::size_t rank = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (domain_seq[i] == 0) {
      --zeros;
    } else if (zeros > 0) {
      // strings sharing this prefix with a 0 here come first
      rank += binomial(n - i - 1, zeros - 1);
    }
  }
  return rank;
}

std::vector<int> decode_permutation(std::size_t class_index, int segment_count) {
  const std::size_t P = permutation_class_count(segment_count);
  if (class_index >= P) {
    throw ConfigError("permutation index " + std::to_string(class_index) + " out of range [0, " +
                      std::to_string(P) + ")");
  }
  const std::size_t n = 2 * static_cast<std::size_t>(segment_count);
  std::size_t zeros = n / 2;
  std::vector<int> seq(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t with_zero = zeros > 0 ? binomial(n - i - 1, zeros - 1) : 0;
    if (class_index < with_zero) {
      seq[i] = 0;
      --zeros;
    } else {
      seq[i] = 1;
      class_index -= with_zero;
    }
  }
  return seq;
}

ShuffledSegments shuffle_and_label(std::span<const Tensor> source, std::span<const Tensor> target,
                                   Rng& rng) {
  if (source.size() != target.size() || source.empty()) {
    throw ConfigError("shuffle_and_label needs equally many source and target segments");
  }
  const int m = static_cast<int>(source.size());
  ShuffledSegments out;
  out.label.class_index = rng.index(permutation_class_count(m));
  out.label.domain_seq = decode_permutation(out.label.class_index, m);
  std::vector<Tensor> ordered;
  std::size_t next_source = 0;
  std::size_t next_target = 0;
  for (int d : out.label.domain_seq) {
    ordered.push_back(d == 0 ? source[next_source++] : target[next_target++]);
  }
  out.concat = concat_cols(ordered);
  return out;
}

Tensor prediction_loss(const Tensor& logits, std::span<const int> labels,
                       std::span<const std::uint8_t> mask, double alpha, double tau) {
  const Tensor log_probs = log_softmax_rows(logits);
  Tensor loss = masked_nll(log_probs, labels, mask);
  if (alpha != 0.0) loss = add(loss, scale(truncated_mse(log_probs, tau), alpha));
  return loss;
}

Tensor local_domain_loss(const Tensor& source_logits, const Tensor& target_logits) {
  if (source_logits.rows() == 0 || target_logits.rows() == 0) {
    throw ConfigError("local domain loss needs frames from both domains");
  }
  if (source_logits.cols() != 2 || target_logits.cols() != 2) {
    throw ConfigError("local domain logits must have 2 columns");
  }
  const std::vector<int> zeros(source_logits.rows(), 0);
  const std::vector<int> ones(target_logits.rows(), 1);
  const Tensor src = masked_nll(log_softmax_rows(source_logits), zeros, {});
  const Tensor tgt = masked_nll(log_softmax_rows(target_logits), ones, {});
  return scale(add(src, tgt), 0.5);
}

Tensor global_domain_loss(const Tensor& permutation_logits, std::size_t label) {
  if (permutation_logits.rows() != 1) throw ConfigError("permutation logits must be a single row");
  if (label >= permutation_logits.cols()) {
    throw ConfigError("permutation label " + std::to_string(label) + " out of range");
  }
  const std::vector<int> target{static_cast<int>(label)};
  return masked_nll(log_softmax_rows(permutation_logits), target, {});
}

Tensor attentive_entropy_loss(const Tensor& class_probs, const Tensor& domain_probs,
                              bool differentiate_attention) {
  if (class_probs.rows() != domain_probs.rows()) {
    throw ConfigError("attentive entropy: " + std::to_string(class_probs.rows()) + " class rows vs " +
                      std::to_string(domain_probs.rows()) + " domain rows");
  }
  const Tensor d = differentiate_attention ? domain_probs : detach(domain_probs);
  const Tensor attention = add_scalar(row_entropy(d), 1.0);
  return mean(mul(attention, row_entropy(class_probs)));
}

Tensor total_loss(std::span<const Tensor> prediction_losses, std::span<const DaStageTerms> da_terms,
                  const LossWeights& weights, int num_stages, std::span<const int> da_stages) {
  if (prediction_losses.size() != static_cast<std::size_t>(num_stages)) {
    throw ConfigError("expected " + std::to_string(num_stages) + " prediction losses, got " +
                      std::to_string(prediction_losses.size()));
  }
  if (da_terms.size() != da_stages.size()) {
    throw ConfigError("expected domain terms for " + std::to_string(da_stages.size()) + " stages, got " +
                      std::to_string(da_terms.size()));
  }
  Tensor total = prediction_losses[0];
  for (std::size_t s = 1; s < prediction_losses.size(); ++s) total = add(total, prediction_losses[s]);
  for (std::size_t i = 0; i < da_terms.size(); ++i) {
    const auto& t = da_terms[i];
    if (t.stage != da_stages[i]) {
      throw ConfigError("domain terms for stage " + std::to_string(da_stages[i]) + " missing");
    }
    if (t.local.defined()) total = add(total, scale(t.local, weights.beta_l));
    if (t.global.defined()) total = add(total, scale(t.global, weights.beta_g));
    if (t.entropy.defined()) total = add(total, scale(t.entropy, weights.mu));
  }
  return total;
}

double ramp(double progress) {
  const double p = std::clamp(progress, 0.0, 1.0);
  return 2.0 / (1.0 + std::exp(-10.0 * p)) - 1.0;
}

Schedule beta_schedule(double progress) {
  const double r = ramp(progress);
  return {r, r, r};
}

StageAdaptation adapt_stage(const StageOutput& source, const StageOutput& target, const Model& model,
                            int stage, double grl_lambda, Rng& rng, const AdaptationOptions& options) {
  StageAdaptation out;
  out.terms.stage = stage;
  const auto& local = model.local_head(stage);
  const Tensor src_features = gradient_reverse(source.features, grl_lambda);
  const Tensor tgt_features = gradient_reverse(target.features, grl_lambda);
  const Tensor src_domain_logits = local_domain_classifier(src_features, local);
  const Tensor tgt_domain_logits = local_domain_classifier(tgt_features, local);
  if (options.use_local) out.terms.local = local_domain_loss(src_domain_logits, tgt_domain_logits);

  const bool need_domain_probs = options.use_global || options.use_entropy;
  if (!need_domain_probs) return out;
  const Tensor src_domain = softmax_rows(src_domain_logits);
  const Tensor tgt_domain = softmax_rows(tgt_domain_logits);

  if (options.use_global) {
    const int m = model.config().segment_count;
    std::vector<Tensor> pooled_src;
    std::vector<Tensor> pooled_tgt;
    for (const auto& r : split_segments(src_features.rows(), m)) {
      pooled_src.push_back(datp(rows_of(src_features, r), rows_of(src_domain, r), options.differentiate_attention));
    }
    for (const auto& r : split_segments(tgt_features.rows(), m)) {
      pooled_tgt.push_back(datp(rows_of(tgt_features, r), rows_of(tgt_domain, r), options.differentiate_attention));
    }
    auto shuffled = shuffle_and_label(pooled_src, pooled_tgt, rng);
    const Tensor logits = sequential_domain_classifier(shuffled.concat, model.global_head(stage), m);
    out.terms.global = global_domain_loss(logits, shuffled.label.class_index);
    out.permutation = std::move(shuffled.label);
  }

  if (options.use_entropy) {
    std::vector<Tensor> class_rows;
    std::vector<Tensor> domain_rows;
    if (options.entropy_domains != EntropyDomains::kTarget) {
      class_rows.push_back(source.probs);
      domain_rows.push_back(src_domain);
    }
    if (options.entropy_domains != EntropyDomains::kSource) {
      class_rows.push_back(target.probs);
      domain_rows.push_back(tgt_domain);
    }
    out.terms.entropy = attentive_entropy_loss(concat_rows(class_rows), concat_rows(domain_rows),
                                               options.differentiate_attention);
  }
  return out;
}

}  // namespace sstda
