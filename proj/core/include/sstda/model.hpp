#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sstda/numerics.hpp"

namespace sstda {

struct StageConfig {
  int layers = 10;
  int filters = 64;
  int kernel = 3;
  int num_classes = 0;
};

struct ModelConfig {
  int num_stages = 4;
  /// 1-based stage indices carrying domain-adaptation heads.
  std::vector<int> da_stages{2, 3};
  StageConfig stage;
  int input_dim = 0;
  int segment_count = 2;
  /// Width of the hidden layer in both domain heads; 0 means `filters`.
  int head_hidden = 0;

  /// Throws ConfigError on violated invariants.
  void validate() const;
  int hidden_width() const { return head_hidden > 0 ? head_hidden : stage.filters; }
  bool is_da_stage(int stage_index) const;

  std::string to_text() const;
  static ModelConfig from_text(const std::string& text);
};

/// binomial(2m, m): the number of balanced source/target arrangements.
std::size_t permutation_class_count(int segment_count);

/// Frames influencing one output frame of a stage: 1 + 2*(2^layers - 1) for k=3.
std::size_t receptive_field(const StageConfig& config);

/// Closed-form parameter count for a configuration.
std::size_t parameter_count(const ModelConfig& config);

struct Conv {
  Tensor weight;
  Tensor bias;
};

struct ResidualLayer {
  Conv dilated;
  Conv pointwise;
  std::size_t dilation = 1;
};

struct StageParams {
  Conv input;
  std::vector<ResidualLayer> layers;
  Conv output;
};

struct DomainHead {
  Conv hidden;
  Conv output;
};

struct StageOutput {
  Tensor features;  // T x filters, input of the domain heads
  Tensor logits;    // T x C
  Tensor probs;     // softmax of logits
};

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

/// Multi-stage dilated TCN with per-stage local and global domain heads.
class Model {
 public:
  /// Uniform(+-1/sqrt(fan_in)) weights and zero biases from `seed`.
  Model(ModelConfig config, std::uint64_t seed);

  // Parameters are shared handles; copies would alias them.
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  /// Independent deep copy.
  Model clone() const;

  const ModelConfig& config() const noexcept { return config_; }
  const std::vector<StageParams>& stages() const noexcept { return stages_; }

  /// Local (frame-level binary) head of 1-based DA stage `stage_index`.
  const DomainHead& local_head(int stage_index) const;
  /// Global (sequential permutation) head of 1-based DA stage `stage_index`.
  const DomainHead& global_head(int stage_index) const;

  /// Every parameter in a fixed, documented order.
  std::vector<NamedParameter> parameters() const;
  void zero_grad();
  void set_all_parameters(double value);
  /// Rounds every parameter to the nearest 4-byte float.
  void round_to_float();

 private:
  ModelConfig config_;
  std::vector<StageParams> stages_;
  std::vector<DomainHead> local_heads_;   // parallel to config_.da_stages
  std::vector<DomainHead> global_heads_;  // parallel to config_.da_stages
};

StageOutput stage_forward(const Tensor& input, const StageParams& params, int kernel);

/// Stage 1 reads `x`; stage s > 1 reads the probabilities of stage s - 1.
std::vector<StageOutput> mstcn_forward(const Tensor& x, const Model& model);

/// Per-frame domain logits, T x 2.
Tensor local_domain_classifier(const Tensor& features, const DomainHead& head);

/// Permutation logits, 1 x binomial(2m, m), from a 1 x (2m*filters) row.
Tensor sequential_domain_classifier(const Tensor& concat, const DomainHead& head,
                                    int segment_count);

// Checkpoint container, all integers little-endian:
//   "SCKP" | u32 version=1 | u32 len | config text (UTF-8, key = value lines)
//   | u32 count | count x (u32 len | name UTF-8 | u32 rows | u32 cols
//   | rows*cols f32, row-major)
void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_checkpoint(const Model& model);
Model decode_checkpoint(const std::vector<std::uint8_t>& bytes);

}  // namespace sstda
