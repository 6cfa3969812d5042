#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace sstda {

struct Segment {
  int class_id = 0;
  std::size_t start = 0;
  std::size_t end = 0;  // exclusive
  friend bool operator==(const Segment&, const Segment&) = default;
};

/// Maximal runs of equal labels, in order.
std::vector<Segment> labels_to_segments(std::span<const int> labels);

/// Percentage of frames where pred == gt.
double frame_accuracy(std::span<const int> pred, std::span<const int> gt);

/// 100 * (1 - Levenshtein(pred classes, gt classes) / max(|pred|, |gt|)).
double edit_score(std::span<const Segment> pred, std::span<const Segment> gt);

struct OverlapCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  OverlapCounts& operator+=(const OverlapCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
};

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Greedy in-order matching: each prediction takes the same-class ground-truth
/// segment with the best IoU (first on ties); it is a hit when that IoU is
/// strictly above k/100 and the segment has not been claimed yet.
OverlapCounts overlap_counts(std::span<const Segment> pred, std::span<const Segment> gt, double k);
PrecisionRecall precision_recall(const OverlapCounts& counts);
PrecisionRecall f1_at_k(std::span<const Segment> pred, std::span<const Segment> gt, double k);

inline constexpr std::array<double, 3> kOverlapThresholds{10.0, 25.0, 50.0};

struct MetricOptions {
  /// Segments of this class are dropped before edit and F1 scoring; frame
  /// accuracy still counts every frame.
  std::optional<int> exclude_class;
};

/// Scores and raw counts of one video.
struct VideoScore {
  std::string video;
  std::size_t frames = 0;
  std::size_t correct = 0;
  double edit = 0.0;
  std::array<OverlapCounts, 3> overlaps{};
};

VideoScore score_video(std::string video, std::span<const int> pred, std::span<const int> gt,
                       const MetricOptions& options = {});

struct MetricsReport {
  double acc = 0.0;
  double edit = 0.0;
  std::array<double, 3> f1{};  // at kOverlapThresholds

  double f1_10() const { return f1[0]; }
  double f1_25() const { return f1[1]; }
  double f1_50() const { return f1[2]; }
};

MetricsReport report_for(const VideoScore& score);

/// Pooled accuracy, mean edit, F1 from summed counts.
MetricsReport aggregate_corpus(std::span<const VideoScore> videos);

/// {"acc":..,"edit":..,"f1_10":..,"f1_25":..,"f1_50":..} with 4 decimals.
std::string report_to_json(const MetricsReport& report);

}  // namespace sstda
