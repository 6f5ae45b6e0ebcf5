#include "basnet/model.hpp"

#include <fstream>
#include <sstream>

namespace basnet::nn {

namespace F = torch::nn::functional;

namespace {

constexpr const char* kManifestMagic = "basnet-checkpoint 1";

torch::nn::Sequential double_conv(int in, int out) {
  return torch::nn::Sequential(ConvBnRelu(in, out), ConvBnRelu(out, out));
}

std::string shape_text(const std::vector<int64_t>& shape) {
  std::string out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    out += (i ? "x" : "") + std::to_string(shape[i]);
  }
  return out.empty() ? "scalar" : out;
}

std::vector<int64_t> parse_shape(const std::string& text) {
  std::vector<int64_t> shape;
  if (text == "scalar") {
    return shape;
  }
  std::istringstream in(text);
  std::string part;
  while (std::getline(in, part, 'x')) {
    shape.push_back(std::stoll(part));
  }
  return shape;
}

std::string entry_text(const ManifestEntry& e) { return e.kind + " " + e.name + " " + shape_text(e.shape); }

std::vector<ManifestEntry> entries_of(torch::nn::Module& module) {
  std::vector<ManifestEntry> out;
  for (const auto& p : module.named_parameters()) {
    out.push_back({"param", p.key(), p.value().sizes().vec()});
  }
  for (const auto& b : module.named_buffers()) {
    out.push_back({"buffer", b.key(), b.value().sizes().vec()});
  }
  return out;
}

}  // namespace

std::string_view name(Architecture arch) {
  switch (arch) {
    case Architecture::kUNetBaseline:
      return "UNET_BASELINE";
    case Architecture::kED:
      return "ED";
    case Architecture::kEDS:
      return "EDS";
    case Architecture::kEDS_RRM_LC:
      return "EDS_RRM_LC";
    case Architecture::kEDS_RRM_MS:
      return "EDS_RRM_MS";
    case Architecture::kEDS_RRM_Ours:
      return "EDS_RRM_OURS";
  }
  return "?";
}

Architecture parse_architecture(std::string_view text) {
  for (Architecture a : kAllArchitectures) {
    if (name(a) == text) {
      return a;
    }
  }
  std::string valid;
  for (Architecture a : kAllArchitectures) {
    valid += (valid.empty() ? "" : ", ") + std::string(name(a));
  }
  throw ConfigError("unknown architecture '" + std::string(text) + "' (expected one of " + valid + ")");
}

std::size_t output_count(Architecture arch) {
  switch (arch) {
    case Architecture::kUNetBaseline:
    case Architecture::kED:
      return 1;
    case Architecture::kEDS:
      return 7;
    default:
      return 8;
  }
}

std::optional<RefinerKind> refiner_of(Architecture arch) {
  switch (arch) {
    case Architecture::kEDS_RRM_LC:
      return RefinerKind::kLocalContext;
    case Architecture::kEDS_RRM_MS:
      return RefinerKind::kMultiScale;
    case Architecture::kEDS_RRM_Ours:
      return RefinerKind::kOurs;
    default:
      return std::nullopt;
  }
}

std::string ModelConfig::canonical() const {
  std::ostringstream out;
  out << "arch=" << name(architecture);
  if (architecture != Architecture::kUNetBaseline) {
    PredNetConfig p = prednet;
    p.deep_supervision = architecture != Architecture::kED;
    out << ';' << p.canonical();
  }
  if (refiner_of(architecture)) {
    out << ";refiner_width=" << refiner_width;
  }
  return out.str();
}

std::string ModelConfig::hash() const { return hex64(fnv1a64(canonical())); }

UNetImpl::UNetImpl() {
  constexpr int widths[] = {64, 128, 256, 512};
  int in = 3;
  for (int i = 0; i < 4; ++i) {
    down_.push_back(register_module("down" + std::to_string(i + 1), double_conv(in, widths[i])));
    in = widths[i];
  }
  bottom_ = register_module("bottom", double_conv(512, 1024));
  int previous = 1024;
  for (int i = 3; i >= 0; --i) {
    up_.push_back(register_module("up" + std::to_string(i + 1), double_conv(previous + widths[i], widths[i])));
    previous = widths[i];
  }
  head_ = register_module("head", torch::nn::Conv2d(torch::nn::Conv2dOptions(64, 1, 1)));
}

torch::Tensor UNetImpl::forward_logits(const torch::Tensor& x) {
  check_network_input(x);
  std::vector<torch::Tensor> skips;
  auto h = x;
  for (auto& d : down_) {
    h = d->forward(h);
    skips.push_back(h);
    h = F::max_pool2d(h, F::MaxPool2dFuncOptions(2).stride(2));
  }
  h = bottom_->forward(h);
  for (std::size_t i = 0; i < up_.size(); ++i) {
    const auto& skip = skips[skips.size() - 1 - i];
    h = F::interpolate(h, F::InterpolateFuncOptions()
                              .size(std::vector<int64_t>{skip.size(2), skip.size(3)})
                              .mode(torch::kBilinear)
                              .align_corners(false));
    h = up_[i]->forward(torch::cat({h, skip}, 1));
  }
  return head_->forward(h);
}

SegmentationNetImpl::SegmentationNetImpl(ModelConfig config) : config_(std::move(config)) {
  if (config_.architecture == Architecture::kUNetBaseline) {
    unet_ = register_module("unet", UNet());
    return;
  }
  PredNetConfig p = config_.prednet;
  p.deep_supervision = config_.architecture != Architecture::kED;
  prediction_ = register_module("prediction", PredictionModule(p));
  if (auto kind = refiner_of(config_.architecture)) {
    refinement_ = register_module("refinement", RefinementModule(RRMVariant{*kind, config_.refiner_width}));
  }
}

std::vector<torch::Tensor> SegmentationNetImpl::forward_logits(const torch::Tensor& x) {
  if (unet_) {
    return {unet_->forward_logits(x)};
  }
  auto side = prediction_->forward_logits(x);
  if (!refinement_) {
    return side;
  }
  std::vector<torch::Tensor> out;
  out.reserve(side.size() + 1);
  out.push_back(refinement_->forward_logits(side.front()));
  out.insert(out.end(), side.begin(), side.end());
  return out;
}

std::vector<torch::Tensor> SegmentationNetImpl::forward(const torch::Tensor& x) {
  auto logits = forward_logits(x);
  for (auto& t : logits) {
    t = torch::sigmoid(t);
  }
  return logits;
}

torch::Tensor SegmentationNetImpl::predict(const torch::Tensor& x) { return forward(x).front(); }

SegmentationNet build_model(const ModelConfig& config, std::uint64_t seed,
                            const std::map<std::string, torch::Tensor>* pretrained) {
  torch::manual_seed(seed);
  SegmentationNet model(config);
  xavier_init(*model);
  if (pretrained != nullptr) {
    if (!model->prediction()) {
      throw ConfigError("pretrained encoder weights do not apply to " + std::string(name(config.architecture)));
    }
    load_pretrained_encoder(*model->prediction(), *pretrained);
  }
  return model;
}

std::map<std::string, torch::Tensor> named_state(torch::nn::Module& module) {
  std::map<std::string, torch::Tensor> out;
  for (const auto& p : module.named_parameters()) {
    out.emplace(p.key(), p.value());
  }
  for (const auto& b : module.named_buffers()) {
    out.emplace(b.key(), b.value());
  }
  return out;
}

ManifestMismatchError::ManifestMismatchError(const std::string& what, std::vector<std::string> differences)
    : Error([&] {
        std::string message = what;
        for (const auto& d : differences) {
          message += "\n  " + d;
        }
        return message;
      }()),
      differences_(std::move(differences)) {}

std::filesystem::path manifest_path(const std::filesystem::path& checkpoint) {
  return checkpoint.string() + ".manifest";
}

std::filesystem::path optimizer_path(const std::filesystem::path& checkpoint) { return checkpoint.string() + ".optim"; }

std::string state_checksum(torch::nn::Module& module) {
  std::uint64_t h = fnv1a64(std::string_view{});
  for (const auto& [key, tensor] : named_state(module)) {
    h = fnv1a64(key, h);
    auto t = tensor.detach().to(torch::kCPU).contiguous();
    h = fnv1a64(std::span<const std::byte>(static_cast<const std::byte*>(t.data_ptr()), t.nbytes()), h);
  }
  return hex64(h);
}

Manifest make_manifest(SegmentationNetImpl& model, int64_t step) {
  Manifest m;
  m.architecture = std::string(name(model.config().architecture));
  m.config_hash = model.config().hash();
  m.checksum = state_checksum(model);
  m.step = step;
  m.entries = entries_of(model);
  return m;
}

void Manifest::write(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) {
    throw Error("cannot write manifest " + path.string());
  }
  out << kManifestMagic << '\n'
      << "architecture " << architecture << '\n'
      << "config_hash " << config_hash << '\n'
      << "checksum " << checksum << '\n'
      << "step " << step << '\n';
  for (const auto& e : entries) {
    out << entry_text(e) << '\n';
  }
}

Manifest Manifest::read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error("cannot read manifest " + path.string());
  }
  std::string line;
  std::getline(in, line);
  if (line != kManifestMagic) {
    throw CorruptDataError("not a checkpoint manifest: " + path.string());
  }
  Manifest m;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    std::istringstream fields(line);
    std::string key;
    fields >> key;
    if (key == "architecture") {
      fields >> m.architecture;
    } else if (key == "config_hash") {
      fields >> m.config_hash;
    } else if (key == "checksum") {
      fields >> m.checksum;
    } else if (key == "step") {
      fields >> m.step;
    } else if (key == "param" || key == "buffer") {
      ManifestEntry e;
      e.kind = key;
      std::string shape;
      fields >> e.name >> shape;
      e.shape = parse_shape(shape);
      m.entries.push_back(std::move(e));
    } else {
      throw CorruptDataError("unknown manifest line '" + line + "' in " + path.string());
    }
  }
  return m;
}

std::vector<std::string> diff_entries(const std::vector<ManifestEntry>& expected,
                                      const std::vector<ManifestEntry>& actual) {
  std::map<std::string, const ManifestEntry*> have;
  for (const auto& e : actual) {
    have[e.name] = &e;
  }
  std::vector<std::string> out;
  std::map<std::string, bool> seen;
  for (const auto& e : expected) {
    seen[e.name] = true;
    auto it = have.find(e.name);
    if (it == have.end()) {
      out.push_back("missing " + entry_text(e));
    } else if (!(*it->second == e)) {
      out.push_back("changed " + entry_text(e) + " -> " + entry_text(*it->second));
    }
  }
  for (const auto& e : actual) {
    if (!seen.count(e.name)) {
      out.push_back("unexpected " + entry_text(e));
    }
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, SegmentationNetImpl& model, int64_t step,
                     torch::optim::Optimizer* optimizer) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  torch::serialize::OutputArchive archive;
  model.save(archive);
  archive.save_to(path.string());
  make_manifest(model, step).write(manifest_path(path));
  if (optimizer != nullptr) {
    torch::save(*optimizer, optimizer_path(path).string());
  }
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  const auto manifest = Manifest::read(manifest_path(path));
  ModelConfig config;
  config.architecture = parse_architecture(manifest.architecture);
  if (config.hash() != manifest.config_hash) {
    throw ManifestMismatchError("checkpoint " + path.string() + " was written for a different configuration",
                                {"config_hash expected " + config.hash() + " got " + manifest.config_hash});
  }
  SegmentationNet model(config);
  auto differences = diff_entries(entries_of(*model), manifest.entries);
  if (!differences.empty()) {
    throw ManifestMismatchError("checkpoint " + path.string() + " does not match " + manifest.architecture,
                                std::move(differences));
  }
  try {
    torch::serialize::InputArchive archive;
    archive.load_from(path.string());
    model->load(archive);
  } catch (const c10::Error& e) {
    throw Error("failed to load checkpoint " + path.string() + ": " + e.what_without_backtrace());
  }
  return {model, manifest};
}

void load_optimizer(const std::filesystem::path& checkpoint, torch::optim::Optimizer& optimizer) {
  const auto path = optimizer_path(checkpoint);
  if (!std::filesystem::exists(path)) {
    throw Error("no optimizer state next to " + checkpoint.string());
  }
  torch::load(optimizer, path.string());
}

std::map<std::string, torch::Tensor> load_encoder_source(const std::filesystem::path& checkpoint) {
  auto loaded = load_checkpoint(checkpoint);
  std::map<std::string, torch::Tensor> out;
  const std::string prefix = "prediction.";
  for (auto& [key, tensor] : named_state(*loaded.model)) {
    if (key.rfind(prefix, 0) == 0) {
      out.emplace(key.substr(prefix.size()), tensor.detach().clone());
    }
  }
  return out;
}

}  // namespace basnet::nn
