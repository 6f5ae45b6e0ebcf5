#include "basnet/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "basnet/data.hpp"
#include "basnet/image_io.hpp"
#include "basnet/image_ops.hpp"
#include "basnet/log.hpp"
#include "basnet/metrics.hpp"
#include "basnet/model.hpp"
#include "basnet/npy.hpp"
#include "basnet/service.hpp"
#include "basnet/tensor.hpp"
#include "basnet/training.hpp"

namespace basnet::cli {

namespace fs = std::filesystem;

namespace {

constexpr int kSheetGap = 4;

void require_exists(const fs::path& p) {
  if (!fs::exists(p)) {
    throw data::MissingPathError(p);
  }
}

/// Tiles laid side by side in one strip, separated by white gaps.
Image contact_sheet(const std::vector<Image>& tiles) {
  int height = 0;
  int width = 0;
  for (const auto& t : tiles) {
    height = std::max(height, t.height());
    width += t.width();
  }
  width += kSheetGap * static_cast<int>(tiles.size() > 0 ? tiles.size() - 1 : 0);
  std::vector<double> rgb(static_cast<std::size_t>(height) * static_cast<std::size_t>(width) * 3, 1.0);
  int x0 = 0;
  for (const auto& t : tiles) {
    for (int r = 0; r < t.height(); ++r) {
      for (int c = 0; c < t.width(); ++c) {
        for (int ch = 0; ch < 3; ++ch) {
          rgb[(static_cast<std::size_t>(r) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x0 + c)) * 3 +
              static_cast<std::size_t>(ch)] = t(r, c, ch);
        }
      }
    }
    x0 += t.width() + kSheetGap;
  }
  return Image(height, width, std::move(rgb));
}

Image grey(const Mask& m) {
  std::vector<double> rgb;
  rgb.reserve(m.pixel_count() * 3);
  for (double v : m.values()) {
    rgb.insert(rgb.end(), {v, v, v});
  }
  return Image(m.height(), m.width(), std::move(rgb));
}

std::vector<fs::path> list_inputs(const fs::path& input) {
  require_exists(input);
  if (!fs::is_directory(input)) {
    return {input};
  }
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(input)) {
    if (e.is_regular_file() && io::is_image_file(e.path())) {
      out.push_back(e.path());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::string> split_list(const std::vector<std::string>& items) {
  std::vector<std::string> out;
  for (const auto& item : items) {
    std::istringstream in(item);
    std::string part;
    while (std::getline(in, part, ',')) {
      if (!part.empty()) {
        out.push_back(part);
      }
    }
  }
  return out;
}

metrics::Grouping read_attributes(const fs::path& path, const std::vector<data::PairEntry>& pairs) {
  require_exists(path);
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    index[pairs[i].identifier] = i;
  }
  metrics::Grouping grouping;
  std::ifstream in(path);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::string stem;
    if (!(fields >> stem) || stem[0] == '#') {
      continue;
    }
    auto it = index.find(stem);
    if (it == index.end()) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": unknown image '" + stem + "'");
    }
    std::string attribute;
    while (fields >> attribute) {
      grouping[attribute].push_back(it->second);
    }
  }
  return grouping;
}

// ---- commands -----------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string row;
  std::string arch;
  std::string loss;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> iterations;
};

int cmd_train(const TrainArgs& a) {
  training::TrainConfig config;
  if (!a.config.empty()) {
    config = training::parse_run_config(a.config);
  } else if (!a.row.empty()) {
    config = training::build_ablation_config(a.row);
  }
  if (!a.config.empty() && !a.row.empty()) {
    const auto row = training::build_ablation_config(a.row);
    config.architecture = row.architecture;
    config.loss = row.loss;
  }
  if (!a.arch.empty()) config.architecture = nn::parse_architecture(a.arch);
  if (!a.loss.empty()) config.loss = losses::parse_loss_variant(a.loss);
  if (!a.out.empty()) config.output_dir = a.out;
  if (a.seed) config.seed = *a.seed;
  if (a.iterations) config.max_iterations = *a.iterations;
  if (config.dataset.image_dir.empty() || config.dataset.mask_dir.empty()) {
    throw ConfigError("the run config must set image_dir and mask_dir");
  }
  require_exists(config.dataset.image_dir);
  require_exists(config.dataset.mask_dir);
  config.validate();

  const auto every = std::max<std::int64_t>(1, config.max_iterations / 20);
  const auto result = training::train(config, [&](const training::StepRecord& r) {
    if (r.step % every == 0) {
      log::info(r.line());
    }
  });
  std::cout << result.final_checkpoint.string() << '\n';
  return kExitOk;
}

struct PredictArgs {
  std::string checkpoint;
  std::string input;
  std::string out;
  std::vector<std::string> emit{"probmap"};
  bool float_sidecar = false;
};

int cmd_predict(const PredictArgs& a) {
  const auto checkpoint = resolve_checkpoint(a.checkpoint);
  const auto inputs = list_inputs(a.input);
  bool probmap = false;
  bool cutout = false;
  bool sides = false;
  for (const auto& e : split_list(a.emit)) {
    if (e == "probmap") probmap = true;
    else if (e == "cutout") cutout = true;
    else if (e == "side_outputs") sides = true;
    else throw ConfigError("unknown --emit value '" + e + "' (probmap, cutout, side_outputs)");
  }
  auto loaded = nn::load_checkpoint(checkpoint);
  auto& model = *loaded.model;
  model.eval();
  torch::NoGradGuard no_grad;
  fs::create_directories(a.out);

  for (const auto& path : inputs) {
    const auto image = io::read_image(path);
    const auto input = data::eval_transform(image);
    const auto outputs = model.forward(input.image.unsqueeze(0));
    const auto restored = input.restore(to_mask(outputs.front().to(torch::kFloat64)));
    const auto stem = path.stem().string();
    const fs::path out_dir(a.out);
    if (probmap) {
      io::write_mask_png(out_dir / (stem + ".png"), restored);
      if (a.float_sidecar) {
        io::write_mask_f64(out_dir / (stem + ".f64"), restored);
      }
    }
    if (cutout) {
      io::write_rgba_png(out_dir / (stem + "_cutout.png"), image, restored);
    }
    if (sides) {
      std::vector<Image> tiles;
      for (const auto& o : outputs) {
        tiles.push_back(grey(to_mask(o.to(torch::kFloat64))));
      }
      io::write_image_png(out_dir / (stem + "_sides.png"), contact_sheet(tiles));
    }
    log::info("predicted " + path.filename().string());
  }
  return kExitOk;
}

struct EvaluateArgs {
  std::string pred;
  std::string gt;
  std::string out;
  std::string attributes;
  std::string dataset = "dataset";
};

int cmd_evaluate(const EvaluateArgs& a) {
  require_exists(a.pred);
  require_exists(a.gt);
  const auto pairs = data::pair_directories(a.pred, a.gt);
  if (pairs.empty()) {
    throw ConfigError("no prediction/ground-truth pairs in " + a.pred + " and " + a.gt);
  }
  std::vector<std::pair<Mask, Mask>> maps;
  for (const auto& p : pairs) {
    const auto sidecar = fs::path(a.pred) / (p.identifier + ".f64");
    auto pred = fs::exists(sidecar) ? io::read_mask_f64(sidecar) : io::read_mask(p.image_path);
    auto gt = io::read_mask(p.mask_path);
    if (pred.size() != gt.size()) {
      throw ShapeError("prediction " + p.identifier + " is " + to_string(pred.size()) + " but its ground truth is " +
                       to_string(gt.size()));
    }
    maps.emplace_back(std::move(pred), std::move(gt));
  }
  const auto grouping = a.attributes.empty() ? metrics::Grouping{} : read_attributes(a.attributes, pairs);
  const auto report = metrics::evaluate_dataset(maps, grouping);

  std::ostringstream text;
  metrics::write_report_header(text);
  metrics::write_report_row(text, a.dataset, report.overall);
  for (const auto& [name, group] : report.groups) {
    metrics::write_report_row(text, a.dataset + "/" + name, group);
  }
  if (report.group_average) {
    metrics::write_report_row(text, a.dataset + "/Avg", report.groups.size(), *report.group_average);
  }
  if (!a.out.empty()) {
    if (fs::path(a.out).has_parent_path()) {
      fs::create_directories(fs::path(a.out).parent_path());
    }
    std::ofstream out(a.out);
    out << text.str();
    if (!out) {
      throw Error("cannot write " + a.out);
    }
  }
  std::cout << text.str();
  return kExitOk;
}

struct OverfitArgs {
  std::string image;
  std::string mask;
  std::string loss = "bsi";
  std::string out;
  std::string arch = "EDS_RRM_OURS";
  std::int64_t iterations = 2000;
  int resolution = 128;
  std::uint64_t seed = 0;
  bool early_stop = false;
};

int cmd_overfit_demo(const OverfitArgs& a) {
  require_exists(a.image);
  require_exists(a.mask);
  std::vector<losses::LossVariant> variants;
  if (a.loss == "all") {
    variants.assign(std::begin(losses::kAllLossVariants), std::end(losses::kAllLossVariants));
  } else {
    variants.push_back(losses::parse_loss_variant(a.loss));
  }
  const auto image = io::read_image(a.image);
  const auto mask = io::read_mask(a.mask);
  fs::create_directories(a.out);

  training::OverfitOptions options;
  options.architecture = nn::parse_architecture(a.arch);
  options.seed = a.seed;
  if (a.early_stop) {
    options.stop_mae = 0.02;
    options.stop_fw = 0.95;
  }
  const Size size{a.resolution, a.resolution};
  for (auto variant : variants) {
    const std::string tag(losses::name(variant));
    const auto result = training::overfit_single_pair(image, mask, variant, a.iterations, a.resolution, options);

    std::vector<Image> tiles{resize_bilinear(image, size), grey(resize_bilinear(mask, size))};
    for (const auto& s : result.snapshots) {
      tiles.push_back(grey(s.prediction));
    }
    tiles.push_back(grey(result.final_prediction));
    io::write_image_png(fs::path(a.out) / ("snapshots_" + tag + ".png"), contact_sheet(tiles));

    std::ofstream trace(fs::path(a.out) / ("trace_" + tag + ".log"));
    for (const auto& r : result.trace) {
      trace << r.line() << '\n';
    }
    std::ofstream summary(fs::path(a.out) / ("metrics_" + tag + ".csv"));
    metrics::write_report_header(summary);
    metrics::write_report_row(summary, "overfit_" + tag, 1, result.final_metrics);

    std::ostringstream columns;
    for (const auto& s : result.snapshots) {
      columns << ' ' << s.iteration;
    }
    log::info("l_" + tag + ": " + std::to_string(result.iterations_run) + " iterations, MAE " +
              std::to_string(result.final_metrics.mae) + ", snapshot columns: image gt" + columns.str() + " final");
  }
  return kExitOk;
}

int cmd_export(const std::string& checkpoint_arg, const std::string& out) {
  const auto checkpoint = resolve_checkpoint(checkpoint_arg);
  auto loaded = nn::load_checkpoint(checkpoint);
  fs::create_directories(out);
  for (const auto& [name, tensor] : nn::named_state(*loaded.model)) {
    npy::write(fs::path(out) / (name + ".npy"), tensor);
  }
  fs::copy_file(nn::manifest_path(checkpoint), fs::path(out) / "manifest.txt", fs::copy_options::overwrite_existing);
  std::cout << out << '\n';
  return kExitOk;
}

int cmd_import(const std::string& input, const std::string& arch, const std::string& out) {
  require_exists(input);
  nn::ModelConfig config;
  config.architecture = nn::parse_architecture(arch);
  auto model = nn::build_model(config, 0);
  std::vector<std::string> problems;
  std::vector<std::pair<torch::Tensor, torch::Tensor>> copies;
  for (auto& [name, target] : nn::named_state(*model)) {
    const auto file = fs::path(input) / (name + ".npy");
    if (!fs::exists(file)) {
      problems.push_back("missing " + file.filename().string());
      continue;
    }
    auto source = npy::read(file);
    if (source.sizes() != target.sizes()) {
      std::ostringstream line;
      line << name << " expected " << target.sizes() << " got " << source.sizes();
      problems.push_back(line.str());
      continue;
    }
    copies.emplace_back(target, source);
  }
  if (!problems.empty()) {
    throw nn::ManifestMismatchError("cannot import " + input + " as " + arch, problems);
  }
  {
    torch::NoGradGuard no_grad;
    for (auto& [target, source] : copies) {
      target.copy_(source.to(target.dtype()));
    }
  }
  nn::save_checkpoint(out, *model, 0);
  std::cout << out << '\n';
  return kExitOk;
}

int cmd_init(const std::string& arch, std::uint64_t seed, const std::string& out) {
  nn::ModelConfig config;
  config.architecture = nn::parse_architecture(arch);
  auto model = nn::build_model(config, seed);
  nn::save_checkpoint(out, *model, 0);
  std::cout << out << '\n';
  return kExitOk;
}

}  // namespace

fs::path resolve_checkpoint(const std::string& given) {
  const fs::path p(given);
  if (fs::exists(p)) {
    return p;
  }
  if (const char* home = std::getenv(kHomeVariable); home != nullptr && p.is_relative()) {
    const auto candidate = fs::path(home) / p;
    if (fs::exists(candidate)) {
      return candidate;
    }
  }
  throw data::MissingPathError(p);
}

int run(int argc, char** argv) {
  CLI::App app{"Boundary-aware salient object segmentation"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "debug, info, warn, error or off");

  std::function<int()> action;

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train a network from a run config");
  train_cmd->add_option("--config", train.config, "flat key = value run config");
  train_cmd->add_option("--row", train.row, "ablation row label, e.g. \"EDS+RRM_Ours + l_bsi\"");
  train_cmd->add_option("--arch", train.arch, "architecture override");
  train_cmd->add_option("--loss", train.loss, "loss variant override (b, s, i, bs, bi, si, bsi)");
  train_cmd->add_option("--out", train.out, "output directory override");
  train_cmd->add_option("--seed", train.seed, "seed override");
  train_cmd->add_option("--iterations", train.iterations, "max_iterations override");
  train_cmd->callback([&] { action = [&] { return cmd_train(train); }; });

  PredictArgs predict;
  auto* predict_cmd = app.add_subcommand("predict", "Predict probability maps for images");
  predict_cmd->add_option("--checkpoint", predict.checkpoint)->required();
  predict_cmd->add_option("--input", predict.input, "image file or directory")->required();
  predict_cmd->add_option("--out", predict.out, "output directory")->required();
  predict_cmd->add_option("--emit", predict.emit, "probmap, cutout, side_outputs (comma separated)");
  predict_cmd->add_flag("--float", predict.float_sidecar, "also write lossless .f64 maps");
  predict_cmd->callback([&] { action = [&] { return cmd_predict(predict); }; });

  EvaluateArgs evaluate;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Score prediction maps against ground truth");
  evaluate_cmd->add_option("--input,--pred", evaluate.pred, "directory of predicted maps")->required();
  evaluate_cmd->add_option("--gt", evaluate.gt, "directory of ground-truth masks")->required();
  evaluate_cmd->add_option("--out", evaluate.out, "report CSV path");
  evaluate_cmd->add_option("--attributes", evaluate.attributes, "lines of '<stem> <attribute>...'");
  evaluate_cmd->add_option("--dataset", evaluate.dataset, "dataset label for the report");
  evaluate_cmd->callback([&] { action = [&] { return cmd_evaluate(evaluate); }; });

  OverfitArgs overfit;
  auto* overfit_cmd = app.add_subcommand("overfit-demo", "Fit one image/mask pair and record snapshots");
  overfit_cmd->add_option("--input", overfit.image, "image")->required();
  overfit_cmd->add_option("--mask", overfit.mask, "ground-truth mask")->required();
  overfit_cmd->add_option("--loss", overfit.loss, "loss variant or 'all'");
  overfit_cmd->add_option("--out", overfit.out, "output directory")->required();
  overfit_cmd->add_option("--arch", overfit.arch, "architecture");
  overfit_cmd->add_option("--iterations", overfit.iterations);
  overfit_cmd->add_option("--resolution", overfit.resolution);
  overfit_cmd->add_option("--seed", overfit.seed);
  overfit_cmd->add_flag("--early-stop", overfit.early_stop, "stop once MAE < 0.02 and weighted F > 0.95");
  overfit_cmd->callback([&] { action = [&] { return cmd_overfit_demo(overfit); }; });

  std::string export_checkpoint;
  std::string export_out;
  auto* export_cmd = app.add_subcommand("export", "Write every tensor of a checkpoint as .npy");
  export_cmd->add_option("--checkpoint", export_checkpoint)->required();
  export_cmd->add_option("--out", export_out, "output directory")->required();
  export_cmd->callback([&] { action = [&] { return cmd_export(export_checkpoint, export_out); }; });

  std::string import_input;
  std::string import_arch = "EDS_RRM_OURS";
  std::string import_out;
  auto* import_cmd = app.add_subcommand("import", "Build a checkpoint from a directory of .npy tensors");
  import_cmd->add_option("--input", import_input, "directory written by export or a converter")->required();
  import_cmd->add_option("--arch", import_arch);
  import_cmd->add_option("--out", import_out, "checkpoint path")->required();
  import_cmd->callback([&] { action = [&] { return cmd_import(import_input, import_arch, import_out); }; });

  std::string init_arch = "EDS_RRM_OURS";
  std::uint64_t init_seed = 0;
  std::string init_out;
  auto* init_cmd = app.add_subcommand("init", "Write a freshly initialized checkpoint");
  init_cmd->add_option("--arch", init_arch);
  init_cmd->add_option("--seed", init_seed);
  init_cmd->add_option("--out", init_out, "checkpoint path")->required();
  init_cmd->callback([&] { action = [&] { return cmd_init(init_arch, init_seed, init_out); }; });

  service::ServiceConfig serve;
  std::string serve_checkpoint;
  auto* serve_cmd = app.add_subcommand("serve", "Run the background-removal HTTP service");
  serve_cmd->add_option("--checkpoint", serve_checkpoint);
  serve_cmd->add_option("--host", serve.host);
  serve_cmd->add_option("--port", serve.port);
  serve_cmd->add_option("--max-bytes", serve.max_bytes);
  serve_cmd->add_option("--pool-size", serve.pool_size);
  serve_cmd->add_option("--queue", serve.queue_capacity);
  serve_cmd->add_option("--storage", serve.storage_root);
  serve_cmd->add_option("--public-url", serve.public_url);
  serve_cmd->callback([&] {
    action = [&] {
      if (!serve_checkpoint.empty()) {
        serve.model_path = resolve_checkpoint(serve_checkpoint);
      }
      service::run_server(serve);
      return kExitOk;
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    log::set_level(log::parse_level(log_level));
    return action();
  } catch (const nn::ManifestMismatchError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace basnet::cli
