#include "basnet/training.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <future>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

#include "basnet/image_ops.hpp"
#include "basnet/log.hpp"
#include "basnet/metrics.hpp"
#include "basnet/tensor.hpp"

namespace basnet::training {

namespace fs = std::filesystem;
using losses::LossVariant;
using nn::Architecture;

namespace {

struct AblationRow {
  const char* label;
  Architecture architecture;
  LossVariant loss;
};

constexpr AblationRow kRows[] = {
    {"U-Net + l_b", Architecture::kUNetBaseline, LossVariant::kB},
    {"ED + l_b", Architecture::kED, LossVariant::kB},
    {"EDS + l_b", Architecture::kEDS, LossVariant::kB},
    {"EDS+RRM_LC + l_b", Architecture::kEDS_RRM_LC, LossVariant::kB},
    {"EDS+RRM_MS + l_b", Architecture::kEDS_RRM_MS, LossVariant::kB},
    {"EDS+RRM_Ours + l_b", Architecture::kEDS_RRM_Ours, LossVariant::kB},
    {"EDS+RRM_Ours + l_s", Architecture::kEDS_RRM_Ours, LossVariant::kS},
    {"EDS+RRM_Ours + l_i", Architecture::kEDS_RRM_Ours, LossVariant::kI},
    {"EDS+RRM_Ours + l_bs", Architecture::kEDS_RRM_Ours, LossVariant::kBS},
    {"EDS+RRM_Ours + l_bi", Architecture::kEDS_RRM_Ours, LossVariant::kBI},
    {"EDS+RRM_Ours + l_si", Architecture::kEDS_RRM_Ours, LossVariant::kSI},
    {"EDS+RRM_Ours + l_bsi", Architecture::kEDS_RRM_Ours, LossVariant::kBSI},
};

std::string row_key(std::string_view text) {
  std::string s(text);
  for (std::size_t pos; (pos = s.find("\xE2\x84\x93")) != std::string::npos;) {  // U+2113 script l
    s.replace(pos, 3, "l");
  }
  std::string out;
  for (unsigned char ch : s) {
    if (!std::isspace(ch)) {
      out.push_back(static_cast<char>(std::tolower(ch)));
    }
  }
  return out;
}

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) {
    return {};
  }
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as a number");
  }
  return out;
}

template <>
double parse_number<double>(const std::string& key, const std::string& value) {
  char* end = nullptr;
  const double out = std::strtod(value.c_str(), &end);
  if (value.empty() || end != value.c_str() + value.size() || !std::isfinite(out)) {
    throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as a number");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + value + "'");
}

std::array<double, 3> parse_triple(const std::string& key, const std::string& value) {
  std::array<double, 3> out{};
  std::istringstream in(value);
  std::string part;
  std::size_t i = 0;
  while (std::getline(in, part, ',')) {
    if (i == 3) {
      throw ConfigError("config key '" + key + "': expected three comma-separated values");
    }
    out[i++] = parse_number<double>(key, trim(part));
  }
  if (i != 3) {
    throw ConfigError("config key '" + key + "': expected three comma-separated values");
  }
  return out;
}

fs::path resolve(const fs::path& base, const std::string& value) {
  fs::path p(value);
  return p.is_absolute() || base.empty() ? p : base / p;
}

std::string format_double(double v) {
  std::ostringstream out;
  out << std::setprecision(9) << v;
  return out.str();
}

torch::optim::Adam make_optimizer(nn::SegmentationNetImpl& model, const AdamParams& p) {
  return torch::optim::Adam(model.parameters(), torch::optim::AdamOptions(p.lr)
                                                    .betas(std::make_tuple(p.beta1, p.beta2))
                                                    .eps(p.eps)
                                                    .weight_decay(p.weight_decay));
}

StepRecord record_of(std::int64_t step, double lr, const losses::TotalLoss& loss, const losses::LossConfig& cfg) {
  StepRecord r;
  r.step = step;
  r.lr = lr;
  for (std::size_t k = 0; k < loss.breakdown.per_output.size(); ++k) {
    const auto& o = loss.breakdown.per_output[k];
    r.bce += cfg.alpha[k] * o.bce;
    r.ssim += cfg.alpha[k] * o.ssim;
    r.iou += cfg.alpha[k] * o.iou;
  }
  r.total = loss.breakdown.total;
  return r;
}

fs::path checkpoint_file(const fs::path& output_dir, std::int64_t step) {
  std::ostringstream name;
  name << "step_" << std::setw(8) << std::setfill('0') << step << ".pt";
  return output_dir / "checkpoints" / name.str();
}

struct Batch {
  torch::Tensor images;
  torch::Tensor masks;
  std::vector<std::string> identifiers;
};

Batch assemble_batch(const TrainConfig& config, const std::vector<Sample>& corpus, std::int64_t step) {
  const auto indices = batch_indices(config.seed, step, config.batch_size, corpus.size());
  std::vector<data::TrainItem> items(indices.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t slot = begin; slot < end; ++slot) {
      auto state = crop_stream(config.seed, step, static_cast<int>(slot));
      items[slot] = data::train_transform(corpus[indices[slot]], state, config.transform);
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(static_cast<std::size_t>(config.loader_threads), 1, items.size());
  if (workers == 1) {
    work(0, items.size());
  } else {
    std::vector<std::future<void>> jobs;
    const std::size_t chunk = (items.size() + workers - 1) / workers;
    for (std::size_t begin = 0; begin < items.size(); begin += chunk) {
      jobs.push_back(std::async(std::launch::async, work, begin, std::min(items.size(), begin + chunk)));
    }
    for (auto& j : jobs) {
      j.get();
    }
  }
  Batch batch;
  std::vector<torch::Tensor> images;
  std::vector<Mask> masks;
  for (std::size_t slot = 0; slot < items.size(); ++slot) {
    images.push_back(items[slot].image);
    masks.push_back(items[slot].mask);
    batch.identifiers.push_back(corpus[indices[slot]].identifier);
  }
  batch.images = torch::stack(images);
  batch.masks = to_batch(masks);
  return batch;
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) {
    throw ConfigError("batch_size must be at least 1");
  }
  if (max_iterations < 0) {
    throw ConfigError("max_iterations must be non-negative");
  }
  if (checkpoint_every < 0) {
    throw ConfigError("checkpoint_every must be non-negative");
  }
  if (!(adam.lr > 0.0) || adam.beta1 < 0.0 || adam.beta1 >= 1.0 || adam.beta2 < 0.0 || adam.beta2 >= 1.0 ||
      !(adam.eps > 0.0) || adam.weight_decay < 0.0) {
    throw ConfigError("invalid Adam hyperparameters");
  }
  if (loader_threads < 1) {
    throw ConfigError("loader_threads must be at least 1");
  }
  transform.validate();
}

nn::ModelConfig TrainConfig::model_config() const {
  nn::ModelConfig m;
  m.architecture = architecture;
  return m;
}

losses::LossConfig TrainConfig::loss_config() const {
  return losses::LossConfig::from_variant(loss, nn::output_count(architecture));
}

const std::vector<std::string>& ablation_rows() {
  static const std::vector<std::string> rows = [] {
    std::vector<std::string> out;
    for (const auto& r : kRows) {
      out.emplace_back(r.label);
    }
    return out;
  }();
  return rows;
}

TrainConfig build_ablation_config(std::string_view row) {
  const auto key = row_key(row);
  for (const auto& r : kRows) {
    if (row_key(r.label) == key) {
      TrainConfig c;
      c.architecture = r.architecture;
      c.loss = r.loss;
      return c;
    }
  }
  std::string valid;
  for (const auto& r : kRows) {
    valid += std::string(valid.empty() ? "" : "; ") + r.label;
  }
  throw ConfigError("unknown ablation row '" + std::string(row) + "'; valid rows: " + valid);
}

TrainConfig parse_run_config_text(std::string_view text, const fs::path& base_dir) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) {
      line.erase(hash);
    }
    line = trim(line);
    if (line.empty()) {
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    entries.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }

  TrainConfig c;
  for (const auto& [key, value] : entries) {
    if (key == "row") {
      c = build_ablation_config(value);
    }
  }
  for (const auto& [key, value] : entries) {
    if (key == "row") {
      continue;
    } else if (key == "architecture") {
      c.architecture = nn::parse_architecture(value);
    } else if (key == "loss") {
      c.loss = losses::parse_loss_variant(value);
    } else if (key == "lr") {
      c.adam.lr = parse_number<double>(key, value);
    } else if (key == "beta1") {
      c.adam.beta1 = parse_number<double>(key, value);
    } else if (key == "beta2") {
      c.adam.beta2 = parse_number<double>(key, value);
    } else if (key == "eps") {
      c.adam.eps = parse_number<double>(key, value);
    } else if (key == "weight_decay") {
      c.adam.weight_decay = parse_number<double>(key, value);
    } else if (key == "batch_size") {
      c.batch_size = parse_number<int>(key, value);
    } else if (key == "max_iterations") {
      c.max_iterations = parse_number<std::int64_t>(key, value);
    } else if (key == "seed") {
      c.seed = parse_number<std::uint64_t>(key, value);
    } else if (key == "checkpoint_every") {
      c.checkpoint_every = parse_number<std::int64_t>(key, value);
    } else if (key == "hflip") {
      c.hflip = parse_bool(key, value);
    } else if (key == "loader_threads") {
      c.loader_threads = parse_number<int>(key, value);
    } else if (key == "resize") {
      c.transform.resize = parse_number<int>(key, value);
    } else if (key == "crop") {
      c.transform.crop = parse_number<int>(key, value);
    } else if (key == "norm_mean") {
      c.transform.normalization.mean = parse_triple(key, value);
    } else if (key == "norm_std") {
      c.transform.normalization.stddev = parse_triple(key, value);
    } else if (key == "image_dir") {
      c.dataset.image_dir = resolve(base_dir, value);
    } else if (key == "mask_dir") {
      c.dataset.mask_dir = resolve(base_dir, value);
    } else if (key == "output_dir") {
      c.output_dir = resolve(base_dir, value);
    } else if (key == "pretrained") {
      c.pretrained = resolve(base_dir, value);
    } else if (key == "resume") {
      c.resume = resolve(base_dir, value);
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

TrainConfig parse_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw data::MissingPathError(path);
  }
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_run_config_text(buffer.str(), path.parent_path());
}

std::string StepRecord::line() const {
  return "step=" + std::to_string(step) + " lr=" + format_double(lr) + " bce=" + format_double(bce) +
         " ssim=" + format_double(ssim) + " iou=" + format_double(iou) + " total=" + format_double(total);
}

StepRecord StepRecord::parse(std::string_view line) {
  std::map<std::string, std::string> fields;
  std::istringstream in{std::string(line)};
  std::string token;
  while (in >> token) {
    const auto eq = token.find('=');
    if (eq == std::string::npos) {
      throw CorruptDataError("malformed log field '" + token + "'");
    }
    fields[token.substr(0, eq)] = token.substr(eq + 1);
  }
  auto get = [&](const std::string& k) {
    auto it = fields.find(k);
    if (it == fields.end()) {
      throw CorruptDataError("log line lacks '" + k + "'");
    }
    return it->second;
  };
  StepRecord r;
  r.step = parse_number<std::int64_t>("step", get("step"));
  r.lr = parse_number<double>("lr", get("lr"));
  r.bce = parse_number<double>("bce", get("bce"));
  r.ssim = parse_number<double>("ssim", get("ssim"));
  r.iou = parse_number<double>("iou", get("iou"));
  r.total = parse_number<double>("total", get("total"));
  return r;
}

NonFiniteLossError::NonFiniteLossError(std::int64_t step, std::vector<std::string> identifiers)
    : Error([&] {
        std::string message = "non-finite loss at step " + std::to_string(step) + "; batch:";
        for (const auto& id : identifiers) {
          message += " " + id;
        }
        return message;
      }()),
      step_(step),
      identifiers_(std::move(identifiers)) {}

std::vector<std::size_t> batch_indices(std::uint64_t seed, std::int64_t step, int batch_size, std::size_t corpus_size) {
  if (corpus_size == 0) {
    throw ConfigError("cannot draw a batch from an empty corpus");
  }
  std::vector<std::size_t> out;
  out.reserve(static_cast<std::size_t>(batch_size));
  std::int64_t cached_epoch = -1;
  std::vector<std::size_t> order;
  for (int slot = 0; slot < batch_size; ++slot) {
    const auto global = static_cast<std::uint64_t>(step) * static_cast<std::uint64_t>(batch_size) +
                        static_cast<std::uint64_t>(slot);
    const auto epoch = static_cast<std::int64_t>(global / corpus_size);
    if (epoch != cached_epoch) {
      order.resize(corpus_size);
      std::iota(order.begin(), order.end(), std::size_t{0});
      auto state = data::derive_seed(seed, static_cast<std::uint64_t>(epoch), 0x5348554646ULL);
      for (std::size_t i = corpus_size; i > 1; --i) {
        std::swap(order[i - 1], order[data::splitmix64(state) % i]);
      }
      cached_epoch = epoch;
    }
    out.push_back(order[global % corpus_size]);
  }
  return out;
}

std::uint64_t crop_stream(std::uint64_t seed, std::int64_t step, int slot) {
  return data::derive_seed(seed, static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(slot) + 1);
}

TrainResult train(const TrainConfig& config, const StepCallback& on_step) {
  config.validate();
  const auto pairs = data::scan_pairs(config.dataset);
  if (pairs.empty()) {
    throw ConfigError("dataset " + config.dataset.image_dir.string() + " contains no pairs");
  }
  return train(config, data::load_samples(pairs), on_step);
}

TrainResult train(const TrainConfig& config, const std::vector<Sample>& samples, const StepCallback& on_step) {
  config.validate();
  if (samples.empty()) {
    throw ConfigError("training needs at least one sample");
  }
  const auto corpus = config.hflip ? data::augment_hflip(samples) : samples;
  const auto loss_cfg = config.loss_config();

  nn::SegmentationNet model{nullptr};
  std::int64_t start = 0;
  if (config.resume) {
    auto loaded = nn::load_checkpoint(*config.resume);
    if (loaded.model->config().architecture != config.architecture) {
      throw ConfigError("resume checkpoint holds " + loaded.manifest.architecture + " but the run is configured for " +
                        std::string(nn::name(config.architecture)));
    }
    model = loaded.model;
    start = loaded.manifest.step;
  } else {
    std::optional<std::map<std::string, torch::Tensor>> encoder;
    if (config.pretrained) {
      encoder = nn::load_encoder_source(*config.pretrained);
    }
    model = nn::build_model(config.model_config(), config.seed, encoder ? &*encoder : nullptr);
  }
  model->train();
  auto optimizer = make_optimizer(*model, config.adam);
  if (config.resume && fs::exists(nn::optimizer_path(*config.resume))) {
    nn::load_optimizer(*config.resume, optimizer);
  }

  fs::create_directories(config.output_dir);
  std::ofstream log_file(config.output_dir / "metrics.log", config.resume ? std::ios::app : std::ios::trunc);
  if (!log_file) {
    throw Error("cannot open " + (config.output_dir / "metrics.log").string());
  }

  TrainResult result;
  result.final_step = start;
  for (std::int64_t step = start; step < config.max_iterations; ++step) {
    const auto batch = assemble_batch(config, corpus, step);
    optimizer.zero_grad();
    const auto logits = model->forward_logits(batch.images);
    auto loss = losses::total_loss_from_logits(logits, batch.masks, loss_cfg);
    if (!std::isfinite(loss.breakdown.total)) {
      const auto dump = config.output_dir / ("nonfinite_step_" + std::to_string(step) + ".txt");
      std::ofstream out(dump);
      for (const auto& id : batch.identifiers) {
        out << id << '\n';
      }
      log::error("non-finite loss at step " + std::to_string(step) + "; batch identifiers in " + dump.string());
      throw NonFiniteLossError(step, batch.identifiers);
    }
    loss.total.backward();
    optimizer.step();

    const auto record = record_of(step + 1, config.adam.lr, loss, loss_cfg);
    log_file << record.line() << '\n';
    log_file.flush();
    result.records.push_back(record);
    result.final_step = step + 1;
    if (on_step) {
      on_step(record);
    }

    const bool last = step + 1 == config.max_iterations;
    if (last || (config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0)) {
      const auto path = checkpoint_file(config.output_dir, step + 1);
      nn::save_checkpoint(path, *model, step + 1, &optimizer);
      result.checkpoints.push_back(path);
    }
  }
  if (result.checkpoints.empty()) {
    // Nothing left to run (e.g. resuming a finished run); persist the state as-is.
    const auto path = checkpoint_file(config.output_dir, result.final_step);
    nn::save_checkpoint(path, *model, result.final_step, &optimizer);
    result.checkpoints.push_back(path);
  }
  result.final_checkpoint = result.checkpoints.back();
  log::info("training finished at step " + std::to_string(result.final_step) + "; checkpoint " +
            result.final_checkpoint.string());
  return result;
}

OverfitResult overfit_single_pair(const Image& image, const Mask& mask, LossVariant loss, std::int64_t iterations,
                                  int resolution, const OverfitOptions& options, const StepCallback& on_step) {
  if (image.size() != mask.size()) {
    throw ShapeError("overfit pair: image " + to_string(image.size()) + " vs mask " + to_string(mask.size()));
  }
  if (iterations < 0 || resolution <= 0 || resolution % nn::kInputMultiple != 0) {
    throw ConfigError("overfit: need iterations >= 0 and a positive resolution divisible by " +
                      std::to_string(nn::kInputMultiple));
  }
  const Size size{resolution, resolution};
  const auto target = resize_bilinear(mask, size);
  const auto input = data::normalize(resize_bilinear(image, size), data::Normalization{}).unsqueeze(0);
  const auto target_tensor = to_batch(std::span<const Mask>(&target, 1));

  nn::ModelConfig model_cfg;
  model_cfg.architecture = options.architecture;
  auto model = nn::build_model(model_cfg, options.seed);
  model->train();
  auto optimizer = make_optimizer(*model, options.adam);
  const auto loss_cfg = losses::LossConfig::from_variant(loss, nn::output_count(options.architecture));
  const bool early_stop = options.stop_mae.has_value() || options.stop_fw.has_value();

  auto meets_targets = [&](const Mask& prediction) {
    if (options.stop_mae && !(metrics::mae(prediction, target) < *options.stop_mae)) {
      return false;
    }
    if (options.stop_fw) {
      const auto fw = metrics::weighted_fbeta(prediction, target);
      if (!fw || !(*fw > *options.stop_fw)) {
        return false;
      }
    }
    return true;
  };

  OverfitResult result;
  for (std::int64_t it = 0; it < iterations; ++it) {
    optimizer.zero_grad();
    const auto logits = model->forward_logits(input);
    auto total = losses::total_loss_from_logits(logits, target_tensor, loss_cfg);
    if (!std::isfinite(total.breakdown.total)) {
      throw NonFiniteLossError(it, {"overfit-pair"});
    }
    const bool want_snapshot =
        std::find(options.snapshot_at.begin(), options.snapshot_at.end(), it) != options.snapshot_at.end();
    const bool check = early_stop && options.check_every > 0 && it > 0 && it % options.check_every == 0;
    if (want_snapshot || check) {
      const auto prediction = to_mask(torch::sigmoid(logits.front().detach()).to(torch::kFloat64));
      if (want_snapshot) {
        result.snapshots.push_back({it, prediction});
      }
      if (check && meets_targets(prediction)) {
        log::info("overfit targets met at iteration " + std::to_string(it));
        break;
      }
    }
    total.total.backward();
    optimizer.step();
    const auto record = record_of(it + 1, options.adam.lr, total, loss_cfg);
    result.trace.push_back(record);
    result.iterations_run = it + 1;
    if (on_step) {
      on_step(record);
    }
  }

  {
    torch::NoGradGuard no_grad;
    const auto logits = model->forward_logits(input);
    result.final_prediction = to_mask(torch::sigmoid(logits.front()).to(torch::kFloat64));
  }
  const bool taken = !result.snapshots.empty() && result.snapshots.back().iteration == result.iterations_run;
  if (!taken && std::find(options.snapshot_at.begin(), options.snapshot_at.end(), result.iterations_run) !=
                    options.snapshot_at.end()) {
    result.snapshots.push_back({result.iterations_run, result.final_prediction});
  }
  result.final_metrics = metrics::evaluate_pair(result.final_prediction, target);
  return result;
}

std::vector<double> window_means(const std::vector<double>& values, std::size_t window) {
  if (window == 0) {
    throw ConfigError("window_means: window must be positive");
  }
  std::vector<double> out;
  for (std::size_t begin = 0; begin + window <= values.size(); begin += window) {
    out.push_back(std::accumulate(values.begin() + static_cast<std::ptrdiff_t>(begin),
                                  values.begin() + static_cast<std::ptrdiff_t>(begin + window), 0.0) /
                  static_cast<double>(window));
  }
  return out;
}

}  // namespace basnet::training
