#include "sstda/data.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "binary_io.hpp"
#include "sstda/config_file.hpp"
#include "sstda/error.hpp"
#include "sstda/random.hpp"

namespace sstda {

namespace fs = std::filesystem;

const char* to_string(DataErrorCode code) {
  switch (code) {
    case DataErrorCode::kIo: return "io";
    case DataErrorCode::kBadMagic: return "bad-magic";
    case DataErrorCode::kBadVersion: return "bad-version";
    case DataErrorCode::kTruncated: return "truncated";
    case DataErrorCode::kOverflow: return "overflow";
    case DataErrorCode::kTrailingBytes: return "trailing-bytes";
    case DataErrorCode::kUnknownLabel: return "unknown-label";
    case DataErrorCode::kEmpty: return "empty";
    case DataErrorCode::kMismatch: return "mismatch";
    case DataErrorCode::kMissing: return "missing";
    case DataErrorCode::kMalformed: return "malformed";
  }
  return "unknown";
}

namespace {

constexpr char kFeatureMagic[] = "FSEQ";
constexpr std::uint32_t kFeatureVersion = 1;
// Upper bound on T*D accepted by the reader (1 GiB of payload).
constexpr std::uint64_t kMaxFeatureValues = std::uint64_t{1} << 28;

std::string read_text(const fs::path& path) {
  const auto bytes = io::read_file(path);
  return {bytes.begin(), bytes.end()};
}

void write_text(const fs::path& path, const std::string& text) {
  io::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    auto line = text.substr(0, nl);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    if (nl == std::string_view::npos) break;
    text.remove_prefix(nl + 1);
  }
  return lines;
}

}  // namespace

// --- mapping ------------------------------------------------------------------

ClassMapping::ClassMapping(std::vector<std::string> names) : names_(std::move(names)) {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i].empty()) throw DataError(DataErrorCode::kMalformed, "empty class name");
    if (!ids_.emplace(names_[i], static_cast<int>(i)).second) {
      throw DataError(DataErrorCode::kMalformed, "duplicate class name '" + names_[i] + "'");
    }
  }
}

const std::string& ClassMapping::name(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= names_.size()) {
    throw DataError(DataErrorCode::kUnknownLabel, "class id " + std::to_string(id) + " not in mapping");
  }
  return names_[static_cast<std::size_t>(id)];
}

int ClassMapping::find(const std::string& name) const {
  const auto it = ids_.find(name);
  return it == ids_.end() ? -1 : it->second;
}

ClassMapping parse_mapping(std::string_view text) {
  std::vector<std::string> names;
  std::size_t line_no = 0;
  for (auto line : split_lines(text)) {
    ++line_no;
    if (line.empty()) continue;
    const auto space = line.find(' ');
    if (space == std::string_view::npos || space + 1 >= line.size()) {
      throw DataError(DataErrorCode::kMalformed, "mapping line " + std::to_string(line_no) + ": expected 'id name'");
    }
    const std::string id_text(line.substr(0, space));
    const std::string expected = std::to_string(names.size());
    if (id_text != expected) {
      throw DataError(DataErrorCode::kMalformed, "mapping line " + std::to_string(line_no) + ": id " + id_text +
                                                     " breaks the contiguous sequence (expected " + expected + ")");
    }
    names.emplace_back(line.substr(space + 1));
  }
  if (names.empty()) throw DataError(DataErrorCode::kEmpty, "mapping has no classes");
  return ClassMapping(std::move(names));
}

std::string format_mapping(const ClassMapping& mapping) {
  std::string out;
  for (std::size_t i = 0; i < mapping.size(); ++i) out += std::to_string(i) + " " + mapping.names()[i] + "\n";
  return out;
}

// --- features ---------------------------------------------------------------

std::vector<std::uint8_t> encode_features(const Matrix& features) {
  io::ByteWriter w;
  w.raw(kFeatureMagic);
  w.u32(kFeatureVersion);
  w.u32(static_cast<std::uint32_t>(features.rows()));
  w.u32(static_cast<std::uint32_t>(features.cols()));
  for (double v : features.data()) w.f32(static_cast<float>(v));
  return w.take();
}

Matrix decode_features(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  if (r.remaining() < 4 || r.raw(4) != kFeatureMagic) {
    throw DataError(DataErrorCode::kBadMagic, "feature file has bad magic");
  }
  if (r.u32() != kFeatureVersion) throw DataError(DataErrorCode::kBadVersion, "unsupported feature file version");
  const std::uint64_t T = r.u32();
  const std::uint64_t D = r.u32();
  if (T == 0 || D == 0) throw DataError(DataErrorCode::kEmpty, "feature file declares an empty sequence");
  if (T * D > kMaxFeatureValues) {
    throw DataError(DataErrorCode::kOverflow, "feature file declares " + std::to_string(T) + "x" +
                                                  std::to_string(D) + " values, above the reader limit");
  }
  if (r.remaining() < T * D * 4) throw DataError(DataErrorCode::kTruncated, "feature payload truncated");
  if (r.remaining() > T * D * 4) throw DataError(DataErrorCode::kTrailingBytes, "trailing bytes after features");
  Matrix m(static_cast<std::size_t>(T), static_cast<std::size_t>(D));
  for (double& v : m.data()) {
    const float f = r.f32();
    if (!std::isfinite(f)) throw DataError(DataErrorCode::kMalformed, "non-finite feature value");
    v = static_cast<double>(f);
  }
  return m;
}

void write_features(const fs::path& path, const Matrix& features) {
  io::write_file(path, encode_features(features));
}

Matrix read_features(const fs::path& path) {
  try {
    return decode_features(io::read_file(path));
  } catch (const DataError& e) {
    throw DataError(e.code(), path.string() + ": " + e.what());
  }
}

// --- labels -------------------------------------------------------------------

std::string format_labels(std::span<const int> labels, const ClassMapping& mapping) {
  std::string out;
  for (int id : labels) out += mapping.name(id) + "\n";
  return out;
}

std::vector<int> parse_labels(std::string_view text, const ClassMapping& mapping) {
  auto lines = split_lines(text);
  if (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty()) throw DataError(DataErrorCode::kEmpty, "label file has no frames");
  std::vector<int> labels;
  labels.reserve(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const int id = mapping.find(std::string(lines[i]));
    if (id < 0) {
      throw DataError(DataErrorCode::kUnknownLabel,
                      "unknown class '" + std::string(lines[i]) + "' at line " + std::to_string(i));
    }
    labels.push_back(id);
  }
  return labels;
}

void write_labels(const fs::path& path, std::span<const int> labels, const ClassMapping& mapping) {
  write_text(path, format_labels(labels, mapping));
}

std::vector<int> read_labels(const fs::path& path, const ClassMapping& mapping) {
  try {
    return parse_labels(read_text(path), mapping);
  } catch (const DataError& e) {
    throw DataError(e.code(), path.string() + ": " + e.what());
  }
}

// --- dataset ------------------------------------------------------------------

std::vector<const Video*> Dataset::split(const std::string& name) const {
  const auto it = splits.find(name);
  if (it == splits.end()) throw DataError(DataErrorCode::kMissing, "no split named '" + name + "'");
  std::vector<const Video*> out;
  for (const auto& id : it->second) {
    const auto v = videos.find(id);
    if (v == videos.end()) {
      throw DataError(DataErrorCode::kMissing, "split '" + name + "' references missing video '" + id + "'");
    }
    out.push_back(&v->second);
  }
  return out;
}

std::size_t Dataset::feature_dim() const {
  if (videos.empty()) throw DataError(DataErrorCode::kEmpty, "dataset has no videos");
  return videos.begin()->second.features.cols();
}

void Dataset::validate() const {
  std::size_t dim = 0;
  for (const auto& [id, v] : videos) {
    if (v.features.rows() != v.labels.size()) {
      throw DataError(DataErrorCode::kMismatch, "video '" + id + "': " + std::to_string(v.features.rows()) +
                                                    " feature frames vs " + std::to_string(v.labels.size()) +
                                                    " labels");
    }
    if (v.labels.empty()) throw DataError(DataErrorCode::kEmpty, "video '" + id + "' has no frames");
    if (dim == 0) dim = v.features.cols();
    if (v.features.cols() != dim) {
      throw DataError(DataErrorCode::kMismatch, "video '" + id + "' has feature dimension " +
                                                    std::to_string(v.features.cols()) + ", expected " +
                                                    std::to_string(dim));
    }
    for (int l : v.labels) {
      if (l < 0 || static_cast<std::size_t>(l) >= mapping.size()) {
        throw DataError(DataErrorCode::kUnknownLabel, "video '" + id + "' has a label outside the mapping");
      }
    }
  }
  for (const auto& [name, ids] : splits) {
    for (const auto& id : ids) {
      if (!videos.contains(id)) {
        throw DataError(DataErrorCode::kMissing, "split '" + name + "' references missing video '" + id + "'");
      }
    }
  }
}

Dataset load_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) throw DataError(DataErrorCode::kMissing, "dataset directory " + root.string() + " not found");
  const fs::path mapping_path = root / "mapping.txt";
  if (!fs::exists(mapping_path)) throw DataError(DataErrorCode::kMissing, "missing " + mapping_path.string());
  Dataset ds;
  ds.mapping = parse_mapping(read_text(mapping_path));

  const fs::path split_dir = root / "splits";
  if (!fs::is_directory(split_dir)) throw DataError(DataErrorCode::kMissing, "missing " + split_dir.string());
  std::vector<fs::path> bundles;
  for (const auto& entry : fs::directory_iterator(split_dir)) {
    if (entry.path().extension() == ".bundle") bundles.push_back(entry.path());
  }
  std::sort(bundles.begin(), bundles.end());
  std::set<std::string> wanted;
  for (const auto& b : bundles) {
    auto& ids = ds.splits[b.stem().string()];
    const std::string text = read_text(b);
    for (auto line : split_lines(text)) {
      if (line.empty()) continue;
      ids.emplace_back(line);
      wanted.emplace(line);
    }
  }

  for (const auto& id : wanted) {
    const fs::path fpath = root / "features" / (id + ".fseq");
    const fs::path lpath = root / "groundTruth" / (id + ".txt");
    if (!fs::exists(fpath)) throw DataError(DataErrorCode::kMissing, "video '" + id + "': missing " + fpath.string());
    if (!fs::exists(lpath)) throw DataError(DataErrorCode::kMissing, "video '" + id + "': missing " + lpath.string());
    Video v;
    v.id = id;
    v.features = read_features(fpath);
    v.labels = read_labels(lpath, ds.mapping);
    ds.videos.emplace(id, std::move(v));
  }
  ds.validate();
  return ds;
}

void write_dataset(const Dataset& dataset, const fs::path& root) {
  dataset.validate();
  fs::create_directories(root / "features");
  fs::create_directories(root / "groundTruth");
  fs::create_directories(root / "splits");
  write_text(root / "mapping.txt", format_mapping(dataset.mapping));
  for (const auto& [id, v] : dataset.videos) {
    write_features(root / "features" / (id + ".fseq"), v.features);
    write_labels(root / "groundTruth" / (id + ".txt"), v.labels, dataset.mapping);
  }
  for (const auto& [name, ids] : dataset.splits) {
    std::string text;
    for (const auto& id : ids) text += id + "\n";
    write_text(root / "splits" / (name + ".bundle"), text);
  }
}

// --- label masks ------------------------------------------------------------

LabelMask make_label_mask(std::size_t frames, double fraction, std::uint64_t seed, MaskMode mode) {
  if (!(fraction > 0.0) || fraction > 1.0) {
    throw ConfigError("labeled fraction must be in (0, 1], got " + std::to_string(fraction));
  }
  if (frames == 0) throw ConfigError("label mask over zero frames");
  // Absorb representation error such as 0.07 * 100 = 7.000000000000001.
  auto keep = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(frames) - 1e-9));
  keep = std::clamp<std::size_t>(keep, 1, frames);
  LabelMask mask(frames, 0);
  if (mode == MaskMode::kEvenStride) {
    for (std::size_t i = 0; i < keep; ++i) mask[i * frames / keep] = 1;
  } else {
    std::vector<std::size_t> order(frames);
    for (std::size_t i = 0; i < frames; ++i) order[i] = i;
    Rng rng(seed);
    for (std::size_t i = 0; i < keep; ++i) {
      const std::size_t j = i + rng.index(frames - i);
      std::swap(order[i], order[j]);
      mask[order[i]] = 1;
    }
  }
  return mask;
}

std::uint64_t mask_seed(const std::string& video_id, std::uint64_t seed) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : video_id) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return Rng::derive(seed, h);
}

// --- synthetic corpus ---------------------------------------------------------

void SynthConfig::validate() const {
  if (num_classes < 2) throw ConfigError("synthetic corpus needs at least 2 classes");
  if (feature_dim < 1) throw ConfigError("feature_dim must be >= 1");
  if (source_videos < 1 || target_videos < 1) throw ConfigError("each domain needs at least one video");
  if (script_length < 1) throw ConfigError("script_length must be >= 1");
  if (min_duration < 1 || max_duration < min_duration) throw ConfigError("duration range must be positive and ordered");
  if (!(duration_factor > 0.0)) throw ConfigError("duration_factor must be positive");
  if (noise < 0.0 || class_separation < 0.0) throw ConfigError("noise and class_separation must be nonnegative");
}

namespace {

const std::vector<std::string> kSynthKeys{"num_classes", "feature_dim", "source_videos", "target_videos",
                                          "script_length", "min_duration", "max_duration", "class_separation",
                                          "noise", "shift", "bias", "duration_factor"};

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

SynthConfig SynthConfig::from_text(const std::string& text) {
  const auto kv = KeyValueFile::parse(text);
  if (const auto unknown = kv.unknown_keys(kSynthKeys); !unknown.empty()) {
    throw ConfigError("unknown synthetic config key '" + unknown.front() + "'");
  }
  SynthConfig c;
  c.num_classes = static_cast<int>(kv.get_int("num_classes", c.num_classes));
  c.feature_dim = static_cast<int>(kv.get_int("feature_dim", c.feature_dim));
  c.source_videos = static_cast<int>(kv.get_int("source_videos", c.source_videos));
  c.target_videos = static_cast<int>(kv.get_int("target_videos", c.target_videos));
  c.script_length = static_cast<int>(kv.get_int("script_length", c.script_length));
  c.min_duration = static_cast<int>(kv.get_int("min_duration", c.min_duration));
  c.max_duration = static_cast<int>(kv.get_int("max_duration", c.max_duration));
  c.class_separation = kv.get_double("class_separation", c.class_separation);
  c.noise = kv.get_double("noise", c.noise);
  c.shift = kv.get_double("shift", c.shift);
  c.bias = kv.get_double("bias", c.bias);
  c.duration_factor = kv.get_double("duration_factor", c.duration_factor);
  c.validate();
  return c;
}

std::string SynthConfig::to_text() const {
  KeyValueFile kv;
  kv.set("num_classes", std::to_string(num_classes));
  kv.set("feature_dim", std::to_string(feature_dim));
  kv.set("source_videos", std::to_string(source_videos));
  kv.set("target_videos", std::to_string(target_videos));
  kv.set("script_length", std::to_string(script_length));
  kv.set("min_duration", std::to_string(min_duration));
  kv.set("max_duration", std::to_string(max_duration));
  kv.set("class_separation", fmt_double(class_separation));
  kv.set("noise", fmt_double(noise));
  kv.set("shift", fmt_double(shift));
  kv.set("bias", fmt_double(bias));
  kv.set("duration_factor", fmt_double(duration_factor));
  return kv.format();
}

Dataset SyntheticCorpus::merged() const {
  Dataset out;
  out.mapping = source.mapping;
  out.videos = source.videos;
  for (const auto& [id, v] : target.videos) out.videos.emplace(id, v);
  out.splits = source.splits;
  for (const auto& [name, ids] : target.splits) out.splits[name] = ids;
  return out;
}

namespace {

struct Script {
  std::vector<int> classes;
  std::vector<int> durations;
};

Script draw_script(Rng& rng, const SynthConfig& c, const Matrix& transitions) {
  Script s;
  const auto C = static_cast<std::size_t>(c.num_classes);
  int cur = static_cast<int>(rng.index(C));
  for (int a = 0; a < c.script_length; ++a) {
    if (a > 0) {
      const double u = rng.uniform();
      double acc = 0.0;
      int next = -1;
      for (std::size_t j = 0; j < C; ++j) {
        acc += transitions(static_cast<std::size_t>(cur), j);
        if (u < acc) {
          next = static_cast<int>(j);
          break;
        }
      }
      if (next < 0) {  // rounding slack: last reachable class
        for (std::size_t j = C; j-- > 0;) {
          if (transitions(static_cast<std::size_t>(cur), j) > 0.0) {
            next = static_cast<int>(j);
            break;
          }
        }
      }
      cur = next;
    }
    s.classes.push_back(cur);
    const auto span = static_cast<std::size_t>(c.max_duration - c.min_duration + 1);
    s.durations.push_back(c.min_duration + static_cast<int>(rng.index(span)));
  }
  return s;
}

Video render_video(const std::string& id, const Script& script, double duration_scale, const Matrix& means,
                   double noise, const Matrix* transform, const Matrix* bias, Rng& rng) {
  Video v;
  v.id = id;
  for (std::size_t a = 0; a < script.classes.size(); ++a) {
    const auto len = std::max(1L, std::lround(script.durations[a] * duration_scale));
    v.labels.insert(v.labels.end(), static_cast<std::size_t>(len), script.classes[a]);
  }
  const std::size_t D = means.cols();
  v.features = Matrix(v.labels.size(), D);
  std::vector<double> x(D);
  for (std::size_t t = 0; t < v.labels.size(); ++t) {
    const auto mean_row = means.row(static_cast<std::size_t>(v.labels[t]));
    for (std::size_t d = 0; d < D; ++d) x[d] = mean_row[d] + noise * rng.normal();
    auto out = v.features.row(t);
    for (std::size_t d = 0; d < D; ++d) {
      double y = x[d];
      if (transform != nullptr) {
        y = (*bias)(0, d);
        for (std::size_t e = 0; e < D; ++e) y += (*transform)(d, e) * x[e];
      }
      out[d] = static_cast<double>(static_cast<float>(y));
    }
  }
  return v;
}

}  // namespace

SyntheticCorpus generate_synthetic(const SynthConfig& c, std::uint64_t seed) {
  c.validate();
  const auto C = static_cast<std::size_t>(c.num_classes);
  const auto D = static_cast<std::size_t>(c.feature_dim);

  Rng structure(Rng::derive(seed, 1));
  Matrix means(C, D);
  for (double& v : means.data()) v = c.class_separation * structure.normal();
  Matrix transitions(C, C);
  for (std::size_t i = 0; i < C; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < C; ++j) {
      if (i == j) continue;
      transitions(i, j) = 0.05 + structure.uniform();
      total += transitions(i, j);
    }
    for (std::size_t j = 0; j < C; ++j) transitions(i, j) /= total;
  }

  Rng shift_rng(Rng::derive(seed, 2));
  Matrix transform(D, D);
  Matrix bias(1, D);
  const double scale = c.shift / std::sqrt(static_cast<double>(D));
  for (std::size_t i = 0; i < D; ++i) {
    for (std::size_t j = 0; j < D; ++j) transform(i, j) = (i == j ? 1.0 : 0.0) + scale * shift_rng.normal();
  }
  for (double& v : bias.data()) v = c.bias * shift_rng.normal();
  Eigen::MatrixXd eig(D, D);
  for (std::size_t i = 0; i < D; ++i) {
    for (std::size_t j = 0; j < D; ++j) eig(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = transform(i, j);
  }
  if (std::abs(eig.determinant()) < 1e-9) throw ConfigError("domain transform is singular; pick another seed or shift");

  std::vector<std::string> names;
  for (std::size_t i = 0; i < C; ++i) names.push_back("action" + std::to_string(i));

  SyntheticCorpus corpus;
  corpus.transform = transform;
  corpus.transform_bias = bias;
  corpus.source.mapping = ClassMapping(names);
  corpus.target.mapping = ClassMapping(names);
  char id[32];
  for (int i = 0; i < c.source_videos; ++i) {
    std::snprintf(id, sizeof id, "S%03d", i);
    Rng rng(Rng::derive(seed, 1000 + static_cast<std::uint64_t>(i)));
    const auto script = draw_script(rng, c, transitions);
    corpus.source.videos.emplace(id, render_video(id, script, 1.0, means, c.noise, nullptr, nullptr, rng));
    corpus.source.splits["source"].emplace_back(id);
  }
  for (int i = 0; i < c.target_videos; ++i) {
    std::snprintf(id, sizeof id, "T%03d", i);
    Rng rng(Rng::derive(seed, 1000000 + static_cast<std::uint64_t>(i)));
    const auto script = draw_script(rng, c, transitions);
    corpus.target.videos.emplace(id, render_video(id, script, c.duration_factor, means, c.noise, &transform, &bias, rng));
    corpus.target.splits["target"].emplace_back(id);
  }
  return corpus;
}

}  // namespace sstda
