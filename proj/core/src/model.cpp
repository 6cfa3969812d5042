#include "sstda/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "binary_io.hpp"
#include "sstda/config_file.hpp"
#include "sstda/error.hpp"
#include "sstda/random.hpp"

namespace sstda {

namespace {

constexpr char kCheckpointMagic[] = "SCKP";
constexpr std::uint32_t kCheckpointVersion = 1;

Conv make_conv(Rng& rng, std::size_t fan_in, std::size_t weight_rows, std::size_t cout) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Matrix w(weight_rows, cout);
  for (double& v : w.data()) v = rng.uniform(-bound, bound);
  return {Tensor::parameter(std::move(w)), Tensor::parameter(Matrix(1, cout))};
}

StageParams make_stage(Rng& rng, const StageConfig& cfg, std::size_t input_dim) {
  const auto F = static_cast<std::size_t>(cfg.filters);
  const auto k = static_cast<std::size_t>(cfg.kernel);
  StageParams stage;
  stage.input = make_conv(rng, input_dim, input_dim, F);
  for (int l = 0; l < cfg.layers; ++l) {
    ResidualLayer layer;
    layer.dilation = std::size_t{1} << l;
    layer.dilated = make_conv(rng, F * k, F * k, F);
    layer.pointwise = make_conv(rng, F, F, F);
    stage.layers.push_back(std::move(layer));
  }
  stage.output = make_conv(rng, F, F, static_cast<std::size_t>(cfg.num_classes));
  return stage;
}

DomainHead make_head(Rng& rng, std::size_t in, std::size_t hidden, std::size_t out) {
  DomainHead head;
  head.hidden = make_conv(rng, in, in, hidden);
  head.output = make_conv(rng, hidden, hidden, out);
  return head;
}

void push_conv(std::vector<NamedParameter>& out, const std::string& prefix, const Conv& conv) {
  out.push_back({prefix + ".weight", conv.weight});
  out.push_back({prefix + ".bias", conv.bias});
}

}  // namespace

// --- configuration ------------------------------------------------------------

void ModelConfig::validate() const {
  if (num_stages < 1) throw ConfigError("num_stages must be >= 1");
  if (stage.layers < 1 || stage.layers > 30) throw ConfigError("layers must be in [1, 30]");
  if (stage.filters < 1) throw ConfigError("filters must be >= 1");
  if (stage.kernel < 1 || stage.kernel % 2 == 0) throw ConfigError("kernel size must be odd");
  if (stage.num_classes < 1) throw ConfigError("num_classes must be >= 1");
  if (input_dim < 1) throw ConfigError("input_dim must be >= 1");
  if (segment_count < 1 || segment_count > 16) throw ConfigError("segment_count must be in [1, 16]");
  if (head_hidden < 0) throw ConfigError("head_hidden must be >= 0");
  for (std::size_t i = 0; i < da_stages.size(); ++i) {
    if (da_stages[i] < 1 || da_stages[i] > num_stages) {
      throw ConfigError("da stage " + std::to_string(da_stages[i]) + " outside 1.." +
                        std::to_string(num_stages));
    }
    if (i > 0 && da_stages[i] <= da_stages[i - 1]) {
      throw ConfigError("da stages must be strictly increasing");
    }
  }
}

bool ModelConfig::is_da_stage(int stage_index) const {
  return std::find(da_stages.begin(), da_stages.end(), stage_index) != da_stages.end();
}

std::string ModelConfig::to_text() const {
  KeyValueFile kv;
  kv.set("num_stages", std::to_string(num_stages));
  std::string stages;
  for (std::size_t i = 0; i < da_stages.size(); ++i) {
    if (i) stages += ",";
    stages += std::to_string(da_stages[i]);
  }
  kv.set("da_stages", stages);
  kv.set("layers", std::to_string(stage.layers));
  kv.set("filters", std::to_string(stage.filters));
  kv.set("kernel", std::to_string(stage.kernel));
  kv.set("num_classes", std::to_string(stage.num_classes));
  kv.set("input_dim", std::to_string(input_dim));
  kv.set("segment_count", std::to_string(segment_count));
  kv.set("head_hidden", std::to_string(head_hidden));
  return kv.format();
}

ModelConfig ModelConfig::from_text(const std::string& text) {
  const auto kv = KeyValueFile::parse(text);
  ModelConfig c;
  c.num_stages = static_cast<int>(kv.get_int("num_stages", c.num_stages));
  c.da_stages = kv.get_int_list("da_stages", c.da_stages);
  c.stage.layers = static_cast<int>(kv.get_int("layers", c.stage.layers));
  c.stage.filters = static_cast<int>(kv.get_int("filters", c.stage.filters));
  c.stage.kernel = static_cast<int>(kv.get_int("kernel", c.stage.kernel));
  c.stage.num_classes = static_cast<int>(kv.get_int("num_classes", c.stage.num_classes));
  c.input_dim = static_cast<int>(kv.get_int("input_dim", c.input_dim));
  c.segment_count = static_cast<int>(kv.get_int("segment_count", c.segment_count));
  c.head_hidden = static_cast<int>(kv.get_int("head_hidden", c.head_hidden));
  c.validate();
  return c;
}

std::size_t permutation_class_count(int segment_count) {
  if (segment_count < 1) throw ConfigError("segment count must be >= 1");
  const auto m = static_cast<std::size_t>(segment_count);
  std::size_t result = 1;
  for (std::size_t i = 1; i <= m; ++i) result = result * (m + i) / i;
  return result;
}

std::size_t receptive_field(const StageConfig& config) {
  const auto span = (std::size_t{1} << config.layers) - 1;
  return 1 + static_cast<std::size_t>(config.kernel - 1) * span;
}

std::size_t parameter_count(const ModelConfig& c) {
  const auto F = static_cast<std::size_t>(c.stage.filters);
  const auto C = static_cast<std::size_t>(c.stage.num_classes);
  const auto L = static_cast<std::size_t>(c.stage.layers);
  const auto k = static_cast<std::size_t>(c.stage.kernel);
  const auto H = static_cast<std::size_t>(c.hidden_width());
  const auto m = static_cast<std::size_t>(c.segment_count);
  const auto P = permutation_class_count(c.segment_count);
  auto stage = [&](std::size_t din) {
    return din * F + F + L * (k * F * F + F + F * F + F) + F * C + C;
  };
  const std::size_t local = F * H + H + H * 2 + 2;
  const std::size_t global = 2 * m * F * H + H + H * P + P;
  return stage(static_cast<std::size_t>(c.input_dim)) +
         static_cast<std::size_t>(c.num_stages - 1) * stage(C) +
         c.da_stages.size() * (local + global);
}

// --- model --------------------------------------------------------------------

Model::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  const auto C = static_cast<std::size_t>(config_.stage.num_classes);
  const auto F = static_cast<std::size_t>(config_.stage.filters);
  const auto H = static_cast<std::size_t>(config_.hidden_width());
  const auto m = static_cast<std::size_t>(config_.segment_count);
  for (int s = 0; s < config_.num_stages; ++s) {
    const std::size_t din = s == 0 ? static_cast<std::size_t>(config_.input_dim) : C;
    stages_.push_back(make_stage(rng, config_.stage, din));
  }
  for (std::size_t i = 0; i < config_.da_stages.size(); ++i) {
    local_heads_.push_back(make_head(rng, F, H, 2));
    global_heads_.push_back(make_head(rng, 2 * m * F, H, permutation_class_count(config_.segment_count)));
  }
}

Model Model::clone() const {
  Model copy(config_, 0);
  auto dst = copy.parameters();
  const auto src = parameters();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i].tensor.mutable_value() = src[i].tensor.value();
  return copy;
}

const DomainHead& Model::local_head(int stage_index) const {
  for (std::size_t i = 0; i < config_.da_stages.size(); ++i) {
    if (config_.da_stages[i] == stage_index) return local_heads_[i];
  }
  throw ConfigError("stage " + std::to_string(stage_index) + " has no domain heads");
}

const DomainHead& Model::global_head(int stage_index) const {
  for (std::size_t i = 0; i < config_.da_stages.size(); ++i) {
    if (config_.da_stages[i] == stage_index) return global_heads_[i];
  }
  throw ConfigError("stage " + std::to_string(stage_index) + " has no domain heads");
}

std::vector<NamedParameter> Model::parameters() const {
  std::vector<NamedParameter> out;
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    const std::string prefix = "stage" + std::to_string(s + 1);
    push_conv(out, prefix + ".input", stages_[s].input);
    for (std::size_t l = 0; l < stages_[s].layers.size(); ++l) {
      const std::string lp = prefix + ".layer" + std::to_string(l);
      push_conv(out, lp + ".dilated", stages_[s].layers[l].dilated);
      push_conv(out, lp + ".pointwise", stages_[s].layers[l].pointwise);
    }
    push_conv(out, prefix + ".output", stages_[s].output);
  }
  for (std::size_t i = 0; i < config_.da_stages.size(); ++i) {
    const std::string prefix = "stage" + std::to_string(config_.da_stages[i]);
    push_conv(out, prefix + ".local.hidden", local_heads_[i].hidden);
    push_conv(out, prefix + ".local.output", local_heads_[i].output);
    push_conv(out, prefix + ".global.hidden", global_heads_[i].hidden);
    push_conv(out, prefix + ".global.output", global_heads_[i].output);
  }
  return out;
}

void Model::zero_grad() {
  for (auto& p : parameters()) p.tensor.zero_grad();
}

void Model::set_all_parameters(double value) {
  for (auto& p : parameters()) p.tensor.mutable_value().fill(value);
}

void Model::round_to_float() {
  for (auto& p : parameters()) {
    for (double& v : p.tensor.mutable_value().data()) v = static_cast<double>(static_cast<float>(v));
  }
}

// --- forward ------------------------------------------------------------------

StageOutput stage_forward(const Tensor& input, const StageParams& params, int kernel) {
  if (input.cols() != params.input.weight.rows()) {
    throw ConfigError("stage input has " + std::to_string(input.cols()) + " channels, expected " +
                      std::to_string(params.input.weight.rows()));
  }
  Tensor h = pointwise_conv(input, params.input.weight, params.input.bias);
  for (const auto& layer : params.layers) {
    Tensor z = dilated_conv1d(h, layer.dilated.weight, layer.dilated.bias,
                              static_cast<std::size_t>(kernel), layer.dilation);
    z = relu(z);
    z = pointwise_conv(z, layer.pointwise.weight, layer.pointwise.bias);
    h = add(h, z);
  }
  StageOutput out;
  out.features = h;
  out.logits = pointwise_conv(h, params.output.weight, params.output.bias);
  out.probs = softmax_rows(out.logits);
  return out;
}

std::vector<StageOutput> mstcn_forward(const Tensor& x, const Model& model) {
  const auto& cfg = model.config();
  if (x.cols() != static_cast<std::size_t>(cfg.input_dim)) {
    throw ConfigError("input has " + std::to_string(x.cols()) + " channels, model expects " +
                      std::to_string(cfg.input_dim));
  }
  std::vector<StageOutput> outputs;
  outputs.reserve(model.stages().size());
  for (const auto& stage : model.stages()) {
    const Tensor& in = outputs.empty() ? x : outputs.back().probs;
    outputs.push_back(stage_forward(in, stage, cfg.stage.kernel));
  }
  return outputs;
}

Tensor local_domain_classifier(const Tensor& features, const DomainHead& head) {
  if (features.cols() != head.hidden.weight.rows()) {
    throw ConfigError("local domain head expects " + std::to_string(head.hidden.weight.rows()) +
                      " channels, got " + std::to_string(features.cols()));
  }
  Tensor h = relu(pointwise_conv(features, head.hidden.weight, head.hidden.bias));
  return pointwise_conv(h, head.output.weight, head.output.bias);
}

Tensor sequential_domain_classifier(const Tensor& concat, const DomainHead& head,
                                    int segment_count) {
  const std::size_t P = permutation_class_count(segment_count);
  if (concat.rows() != 1 || concat.cols() != head.hidden.weight.rows()) {
    throw ConfigError("sequential domain head expects a 1x" +
                      std::to_string(head.hidden.weight.rows()) + " input");
  }
  if (head.output.weight.cols() != P) {
    throw ConfigError("sequential domain head has " + std::to_string(head.output.weight.cols()) +
                      " outputs, segment count implies " + std::to_string(P));
  }
  Tensor h = relu(pointwise_conv(concat, head.hidden.weight, head.hidden.bias));
  return pointwise_conv(h, head.output.weight, head.output.bias);
}

// --- checkpoint ---------------------------------------------------------------

std::vector<std::uint8_t> encode_checkpoint(const Model& model) {
  io::ByteWriter w;
  w.raw(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.str(model.config().to_text());
  const auto params = model.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.str(p.name);
    w.u32(static_cast<std::uint32_t>(p.tensor.rows()));
    w.u32(static_cast<std::uint32_t>(p.tensor.cols()));
    for (double v : p.tensor.value().data()) w.f32(static_cast<float>(v));
  }
  return w.take();
}

Model decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  io::ByteReader r(bytes);
  if (r.remaining() < 4 || r.raw(4) != kCheckpointMagic) {
    throw DataError(DataErrorCode::kBadMagic, "not a checkpoint (bad magic)");
  }
  if (r.u32() != kCheckpointVersion) {
    throw DataError(DataErrorCode::kBadVersion, "unsupported checkpoint version");
  }
  ModelConfig config;
  try {
    config = ModelConfig::from_text(r.str());
  } catch (const ConfigError& e) {
    throw DataError(DataErrorCode::kMalformed, std::string("checkpoint config: ") + e.what());
  }
  const bool bounded = config.num_stages <= 64 && config.stage.filters <= 65536 &&
                       config.stage.num_classes <= 65536 && config.input_dim <= 65536 &&
                       config.head_hidden <= 65536 && config.stage.kernel <= 65;
  if (!bounded || parameter_count(config) * 4 > bytes.size()) {
    throw DataError(DataErrorCode::kTruncated, "checkpoint too small for its config");
  }
  Model model(config, 0);
  auto params = model.parameters();
  if (r.u32() != params.size()) {
    throw DataError(DataErrorCode::kMismatch, "checkpoint parameter count does not match config");
  }
  for (auto& p : params) {
    const std::string name = r.str();
    if (name != p.name) {
      throw DataError(DataErrorCode::kMismatch, "checkpoint parameter '" + name + "', expected '" + p.name + "'");
    }
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    if (rows != p.tensor.rows() || cols != p.tensor.cols()) {
      throw DataError(DataErrorCode::kMismatch, "checkpoint shape mismatch for " + name);
    }
    for (double& v : p.tensor.mutable_value().data()) {
      const float f = r.f32();
      if (!std::isfinite(f)) throw DataError(DataErrorCode::kMalformed, "non-finite value in " + name);
      v = static_cast<double>(f);
    }
  }
  if (r.remaining() != 0) throw DataError(DataErrorCode::kTrailingBytes, "trailing bytes after checkpoint");
  return model;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  io::write_file(path, encode_checkpoint(model));
}

Model load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(io::read_file(path)); }

}  // namespace sstda
