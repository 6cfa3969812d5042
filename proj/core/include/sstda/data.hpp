#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "sstda/numerics.hpp"

namespace sstda {

/// Class id <-> name table; ids are contiguous from 0.
class ClassMapping {
 public:
  ClassMapping() = default;
  explicit ClassMapping(std::vector<std::string> names);

  std::size_t size() const noexcept { return names_.size(); }
  const std::string& name(int id) const;
  /// -1 when unknown.
  int find(const std::string& name) const;
  const std::vector<std::string>& names() const noexcept { return names_; }

 private:
  std::vector<std::string> names_;
  std::map<std::string, int> ids_;
};

struct Video {
  std::string id;
  Matrix features;          // T x D
  std::vector<int> labels;  // T class ids
};

struct Dataset {
  ClassMapping mapping;
  std::map<std::string, Video> videos;
  std::map<std::string, std::vector<std::string>> splits;

  /// Videos of a split in bundle order; throws DataError on unknown names.
  std::vector<const Video*> split(const std::string& name) const;
  std::size_t feature_dim() const;
  /// Throws DataError on violated cross-file invariants.
  void validate() const;
};

// FSEQ: "FSEQ" | u32 version=1 | u32 T | u32 D | T*D f32, frame-major; all
// little-endian.
std::vector<std::uint8_t> encode_features(const Matrix& features);
Matrix decode_features(std::span<const std::uint8_t> bytes);
void write_features(const std::filesystem::path& path, const Matrix& features);
Matrix read_features(const std::filesystem::path& path);

/// One class name per line, exactly T lines.
std::string format_labels(std::span<const int> labels, const ClassMapping& mapping);
std::vector<int> parse_labels(std::string_view text, const ClassMapping& mapping);
void write_labels(const std::filesystem::path& path, std::span<const int> labels, const ClassMapping& mapping);
std::vector<int> read_labels(const std::filesystem::path& path, const ClassMapping& mapping);

/// "id name" lines.
ClassMapping parse_mapping(std::string_view text);
std::string format_mapping(const ClassMapping& mapping);

Dataset load_dataset(const std::filesystem::path& root);
void write_dataset(const Dataset& dataset, const std::filesystem::path& root);

using LabelMask = std::vector<std::uint8_t>;

enum class MaskMode { kEvenStride, kRandom };

/// Keeps ceil(fraction * T) frames. Even-stride mode keeps floor(i*T/n) for
/// i < n; random mode draws n distinct frames from `seed`.
LabelMask make_label_mask(std::size_t frames, double fraction, std::uint64_t seed = 0,
                          MaskMode mode = MaskMode::kEvenStride);
/// Seed of a video's mask, derived from its id and a run seed.
std::uint64_t mask_seed(const std::string& video_id, std::uint64_t seed);

struct SynthConfig {
  int num_classes = 6;
  int feature_dim = 16;
  int source_videos = 20;
  int target_videos = 10;
  int script_length = 6;
  int min_duration = 8;
  int max_duration = 20;
  double class_separation = 1.0;
  double noise = 1.0;
  /// Target features are A x + b with A = I + shift * G / sqrt(D), G and
  /// the bias direction standard normal.
  double shift = 0.0;
  double bias = 0.0;
  double duration_factor = 1.0;

  void validate() const;
  static SynthConfig from_text(const std::string& text);
  std::string to_text() const;
};

struct SyntheticCorpus {
  Dataset source;  // split "source"
  Dataset target;  // split "target"
  Matrix transform;     // D x D
  Matrix transform_bias;  // 1 x D

  /// Both domains in one dataset with splits "source" and "target".
  Dataset merged() const;
};

SyntheticCorpus generate_synthetic(const SynthConfig& config, std::uint64_t seed);

}  // namespace sstda
