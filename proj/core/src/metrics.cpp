#include "sstda/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

#include "sstda/error.hpp"

namespace sstda {

std::vector<Segment> labels_to_segments(std::span<const int> labels) {
  if (labels.empty()) throw ConfigError("labels_to_segments: empty label sequence");
  std::vector<Segment> out;
  std::size_t start = 0;
  for (std::size_t t = 1; t <= labels.size(); ++t) {
    if (t == labels.size() || labels[t] != labels[start]) {
      out.push_back({labels[start], start, t});
      start = t;
    }
  }
  return out;
}

double frame_accuracy(std::span<const int> pred, std::span<const int> gt) {
  if (pred.size() != gt.size()) {
    throw ConfigError("frame_accuracy: " + std::to_string(pred.size()) + " predicted vs " +
                      std::to_string(gt.size()) + " ground-truth frames");
  }
  if (gt.empty()) throw ConfigError("frame_accuracy: empty sequences");
  std::size_t hits = 0;
  for (std::size_t t = 0; t < gt.size(); ++t) hits += pred[t] == gt[t] ? 1 : 0;
  return 100.0 * static_cast<double>(hits) / static_cast<double>(gt.size());
}

double edit_score(std::span<const Segment> pred, std::span<const Segment> gt) {
  const std::size_t n = pred.size();
  const std::size_t m = gt.size();
  if (n == 0 && m == 0) return 100.0;
  std::vector<std::size_t> prev(m + 1);
  std::vector<std::size_t> cur(m + 1);
  std::iota(prev.begin(), prev.end(), std::size_t{0});
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t sub = prev[j - 1] + (pred[i - 1].class_id == gt[j - 1].class_id ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  const double dist = static_cast<double>(prev[m]);
  return std::max(0.0, 100.0 * (1.0 - dist / static_cast<double>(std::max(n, m))));
}

OverlapCounts overlap_counts(std::span<const Segment> pred, std::span<const Segment> gt, double k) {
  const double threshold = k / 100.0;
  std::vector<bool> used(gt.size(), false);
  OverlapCounts counts;
  for (const auto& p : pred) {
    if (p.start >= p.end) throw ConfigError("malformed predicted segment");
    double best = -1.0;
    std::size_t best_idx = 0;
    for (std::size_t j = 0; j < gt.size(); ++j) {
      const auto& g = gt[j];
      if (g.class_id != p.class_id) continue;
      const std::size_t lo = std::max(p.start, g.start);
      const std::size_t hi = std::min(p.end, g.end);
      const double inter = hi > lo ? static_cast<double>(hi - lo) : 0.0;
      const double uni = static_cast<double>(std::max(p.end, g.end) - std::min(p.start, g.start));
      const double iou = inter / uni;
      if (iou > best) {
        best = iou;
        best_idx = j;
      }
    }
    if (best > threshold && !used[best_idx]) {
      used[best_idx] = true;
      ++counts.tp;
    } else {
      ++counts.fp;
    }
  }
  counts.fn = static_cast<std::size_t>(std::count(used.begin(), used.end(), false));
  return counts;
}

PrecisionRecall precision_recall(const OverlapCounts& c) {
  PrecisionRecall pr;
  const double tp = static_cast<double>(c.tp);
  if (c.tp + c.fp > 0) pr.precision = 100.0 * tp / static_cast<double>(c.tp + c.fp);
  if (c.tp + c.fn > 0) pr.recall = 100.0 * tp / static_cast<double>(c.tp + c.fn);
  if (pr.precision + pr.recall > 0.0) {
    pr.f1 = 2.0 * pr.precision * pr.recall / (pr.precision + pr.recall);
  }
  return pr;
}

PrecisionRecall f1_at_k(std::span<const Segment> pred, std::span<const Segment> gt, double k) {
  return precision_recall(overlap_counts(pred, gt, k));
}

VideoScore score_video(std::string video, std::span<const int> pred, std::span<const int> gt,
                       const MetricOptions& options) {
  VideoScore s;
  s.video = std::move(video);
  s.frames = gt.size();
  frame_accuracy(pred, gt);  // validates lengths
  for (std::size_t t = 0; t < gt.size(); ++t) s.correct += pred[t] == gt[t] ? 1 : 0;
  auto pred_segs = labels_to_segments(pred);
  auto gt_segs = labels_to_segments(gt);
  if (options.exclude_class) {
    const int bg = *options.exclude_class;
    std::erase_if(pred_segs, [bg](const Segment& x) { return x.class_id == bg; });
    std::erase_if(gt_segs, [bg](const Segment& x) { return x.class_id == bg; });
  }
  s.edit = edit_score(pred_segs, gt_segs);
  for (std::size_t i = 0; i < kOverlapThresholds.size(); ++i) {
    s.overlaps[i] = overlap_counts(pred_segs, gt_segs, kOverlapThresholds[i]);
  }
  return s;
}

MetricsReport report_for(const VideoScore& score) {
  return aggregate_corpus(std::span<const VideoScore>(&score, 1));
}

MetricsReport aggregate_corpus(std::span<const VideoScore> videos) {
  if (videos.empty()) throw ConfigError("aggregate_corpus: no videos");
  MetricsReport r;
  std::size_t frames = 0;
  std::size_t correct = 0;
  double edit = 0.0;
  std::array<OverlapCounts, 3> totals{};
  for (const auto& v : videos) {
    frames += v.frames;
    correct += v.correct;
    edit += v.edit;
    for (std::size_t i = 0; i < totals.size(); ++i) totals[i] += v.overlaps[i];
  }
  r.acc = frames == 0 ? 0.0 : 100.0 * static_cast<double>(correct) / static_cast<double>(frames);
  r.edit = edit / static_cast<double>(videos.size());
  for (std::size_t i = 0; i < totals.size(); ++i) r.f1[i] = precision_recall(totals[i]).f1;
  return r;
}

std::string report_to_json(const MetricsReport& report) {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "{\"acc\": %.4f, \"edit\": %.4f, \"f1_10\": %.4f, \"f1_25\": %.4f, \"f1_50\": %.4f}",
                report.acc, report.edit, report.f1[0], report.f1[1], report.f1[2]);
  return buf;
}

}  // namespace sstda
