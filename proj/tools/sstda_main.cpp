// sstda: generate synthetic corpora, train, evaluate and render timelines.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "sstda/error.hpp"
#include "sstda/harness.hpp"

namespace fs = std::filesystem;
using namespace sstda;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(DataErrorCode::kIo, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spill(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw DataError(DataErrorCode::kIo, "cannot write " + path.string());
}

struct GenerateArgs {
  std::string out, config;
  std::uint64_t seed = 0;
};

int run_generate(const GenerateArgs& a) {
  SynthConfig cfg;
  if (!a.config.empty()) cfg = SynthConfig::from_text(slurp(a.config));
  cfg.validate();
  const auto corpus = generate_synthetic(cfg, a.seed);
  write_dataset(corpus.merged(), a.out);
  std::cout << "wrote " << corpus.source.videos.size() << " source and " << corpus.target.videos.size()
            << " target videos to " << a.out << "\n";
  return kOk;
}

struct TrainArgs {
  std::string data, source_split, target_split, mode = "full", out, log, config;
  double labeled_fraction = 1.0;
  int epochs = 1;
  std::uint64_t seed = 0;
};

nlohmann::json step_json(const StepRecord& r) {
  return {{"step", r.step},
          {"epoch", r.epoch},
          {"source", r.source},
          {"target", r.target},
          {"total", r.losses.total},
          {"prediction", r.losses.prediction},
          {"local", r.losses.local},
          {"global", r.losses.global},
          {"entropy", r.losses.entropy},
          {"permutation", r.losses.permutation_classes},
          {"beta_l", r.losses.schedule.beta_l},
          {"beta_g", r.losses.schedule.beta_g},
          {"lambda", r.losses.schedule.grl_lambda}};
}

int run_train(const TrainArgs& a, const CLI::App& cmd) {
  TrainConfig cfg;
  if (!a.config.empty()) cfg.apply_text(slurp(a.config));
  // explicit flags win over the config file
  if (cmd.count("--mode") || a.config.empty()) cfg.mode = parse_train_mode(a.mode);
  if (cmd.count("--labeled-fraction") || a.config.empty()) cfg.labeled_fraction = a.labeled_fraction;
  if (cmd.count("--epochs") || a.config.empty()) cfg.epochs = a.epochs;
  if (cmd.count("--seed") || a.config.empty()) cfg.seed = a.seed;

  const Dataset ds = load_dataset(a.data);
  cfg.model.input_dim = static_cast<int>(ds.feature_dim());
  cfg.model.stage.num_classes = static_cast<int>(ds.mapping.size());
  cfg.validate();
  const auto source = ds.split(a.source_split);
  const auto target = ds.split(a.target_split);

  std::optional<std::ofstream> log;
  if (!a.log.empty()) {
    if (fs::path(a.log).has_parent_path()) fs::create_directories(fs::path(a.log).parent_path());
    log.emplace(a.log);
    if (!*log) throw DataError(DataErrorCode::kIo, "cannot write " + a.log);
  }
  const auto result = train(source, target, cfg, [&](const StepRecord& r, const Model&) {
    if (log) *log << step_json(r).dump() << "\n";
  });
  if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
  save_checkpoint(result.model, a.out);
  const auto& last = result.log.back();
  std::printf("trained %zu steps (%s), final loss %.6f -> %s\n", result.log.size(), to_string(cfg.mode),
              last.losses.total, a.out.c_str());
  return kOk;
}

struct EvalArgs {
  std::string data, split, model, report, predictions;
  unsigned threads = 1;
};

int run_eval(const EvalArgs& a) {
  const Dataset ds = load_dataset(a.data);
  const Model model = load_checkpoint(a.model);
  const auto videos = ds.split(a.split);
  const auto ev = evaluate(model, videos, {}, a.threads);
  spill(a.report, report_to_json(ev.report) + "\n");
  if (!a.predictions.empty()) {
    fs::create_directories(a.predictions);
    for (const auto& [id, labels] : ev.predictions) {
      write_labels(fs::path(a.predictions) / (id + ".txt"), labels, ds.mapping);
    }
  }
  std::printf("acc %.2f  edit %.2f  F1@{10,25,50} %.2f %.2f %.2f\n", ev.report.acc, ev.report.edit,
              ev.report.f1_10(), ev.report.f1_25(), ev.report.f1_50());
  return kOk;
}

struct RenderArgs {
  std::string gt, out, mapping;
  std::vector<std::string> preds;
  bool ascii = false;
};

// Without a mapping file, class ids follow first appearance across all tracks.
ClassMapping infer_mapping(const std::vector<std::string>& texts) {
  std::vector<std::string> names;
  for (const auto& text : texts) {
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      if (std::find(names.begin(), names.end(), line) == names.end()) names.push_back(line);
    }
  }
  return ClassMapping(std::move(names));
}

int run_render(const RenderArgs& a) {
  std::vector<std::string> texts{slurp(a.gt)};
  for (const auto& p : a.preds) texts.push_back(slurp(p));
  const ClassMapping mapping = a.mapping.empty() ? infer_mapping(texts) : parse_mapping(slurp(a.mapping));
  std::vector<TimelineTrack> tracks;
  tracks.push_back({"ground truth", parse_labels(texts[0], mapping)});
  for (std::size_t i = 0; i < a.preds.size(); ++i) {
    tracks.push_back({fs::path(a.preds[i]).stem().string(), parse_labels(texts[i + 1], mapping)});
  }
  for (const auto& t : tracks) {
    if (t.labels.size() != tracks[0].labels.size()) {
      throw DataError(DataErrorCode::kMismatch, "track '" + t.name + "' has " + std::to_string(t.labels.size()) +
                                                    " frames, ground truth has " +
                                                    std::to_string(tracks[0].labels.size()));
    }
  }
  spill(a.out, render_timeline_svg(tracks, &mapping));
  if (a.ascii) std::cout << render_timeline_ascii(tracks);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-supervised temporal domain adaptation for action segmentation"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "write a synthetic source/target corpus");
  g->add_option("--out", gen.out, "output dataset directory")->required();
  g->add_option("--config", gen.config, "generator key = value file")->check(CLI::ExistingFile);
  g->add_option("--seed", gen.seed, "generator seed");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train a model and write a checkpoint");
  t->add_option("--data", tr.data, "dataset directory")->required();
  t->add_option("--source-split", tr.source_split, "labeled split")->required();
  t->add_option("--target-split", tr.target_split, "unlabeled split")->required();
  t->add_option("--mode", tr.mode, "adaptation mode")
      ->check(CLI::IsMember({"source-only", "local", "full"}));
  t->add_option("--labeled-fraction", tr.labeled_fraction, "fraction of labeled source frames")
      ->check(CLI::Range(0.0, 1.0));
  t->add_option("--epochs", tr.epochs, "passes over the source split")->check(CLI::PositiveNumber);
  t->add_option("--seed", tr.seed, "run seed");
  t->add_option("--out", tr.out, "checkpoint path")->required();
  t->add_option("--log", tr.log, "per-step JSON lines");
  t->add_option("--config", tr.config, "TrainConfig key = value file")->check(CLI::ExistingFile);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "score a checkpoint on a split");
  e->add_option("--data", ev.data, "dataset directory")->required();
  e->add_option("--split", ev.split, "split to score")->required();
  e->add_option("--model", ev.model, "checkpoint")->required();
  e->add_option("--report", ev.report, "JSON report path")->required();
  e->add_option("--predictions", ev.predictions, "directory for per-video label files");
  e->add_option("--threads", ev.threads, "scoring threads")->check(CLI::PositiveNumber);

  RenderArgs rd;
  auto* r = app.add_subcommand("render", "draw ground truth and predictions as an SVG timeline");
  r->add_option("--gt", rd.gt, "ground-truth label file")->required();
  r->add_option("--pred", rd.preds, "prediction label files")->required();
  r->add_option("--out", rd.out, "SVG path")->required();
  r->add_option("--mapping", rd.mapping, "mapping.txt giving class ids");
  r->add_flag("--ascii", rd.ascii, "also print the timeline to stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*g) return run_generate(gen);
    if (*t) return run_train(tr, *t);
    if (*e) return run_eval(ev);
    if (*r) return run_render(rd);
  } catch (const DataError& err) {
    std::cerr << "data error (" << to_string(err.code()) << "): " << err.what() << "\n";
    return kData;
  } catch (const fs::filesystem_error& err) {
    std::cerr << "data error: " << err.what() << "\n";
    return kData;
  } catch (const NumericalError& err) {
    std::cerr << "numerical failure: " << err.what() << "\n";
    return kNumerical;
  } catch (const ConfigError& err) {
    std::cerr << "usage error: " << err.what() << "\n";
    return kUsage;
  }
  return kUsage;
}
