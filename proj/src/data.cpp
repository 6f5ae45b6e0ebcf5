#include "basnet/data.hpp"

#include <algorithm>
#include <map>

#include "basnet/image_io.hpp"
#include "basnet/image_ops.hpp"
#include "basnet/log.hpp"

namespace basnet::data {

namespace fs = std::filesystem;

namespace {

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& item : items) {
    out += (out.empty() ? "" : ", ") + item;
  }
  return out;
}

std::map<std::string, fs::path> files_by_stem(const fs::path& dir) {
  if (!fs::is_directory(dir)) {
    throw MissingPathError(dir);
  }
  std::map<std::string, fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file() || !io::is_image_file(entry.path())) {
      continue;
    }
    const auto stem = entry.path().stem().string();
    auto [it, inserted] = out.emplace(stem, entry.path());
    if (!inserted) {
      throw ConfigError("two files share the stem '" + stem + "' in " + dir.string() + ": " +
                        it->second.filename().string() + " and " + entry.path().filename().string());
    }
  }
  return out;
}

}  // namespace

MissingPathError::MissingPathError(const fs::path& path)
    : ConfigError("path does not exist: " + path.string()), path_(path) {}

PairingError::PairingError(std::vector<std::string> images_without_mask, std::vector<std::string> masks_without_image)
    : ConfigError([&] {
        std::string message = "unpaired files";
        if (!images_without_mask.empty()) {
          message += "; images without mask: " + join(images_without_mask);
        }
        if (!masks_without_image.empty()) {
          message += "; masks without image: " + join(masks_without_image);
        }
        return message;
      }()),
      images_(std::move(images_without_mask)),
      masks_(std::move(masks_without_image)) {}

std::vector<PairEntry> pair_directories(const fs::path& first, const fs::path& second) {
  const auto a = files_by_stem(first);
  const auto b = files_by_stem(second);
  std::vector<std::string> only_a;
  std::vector<std::string> only_b;
  std::vector<PairEntry> pairs;
  for (const auto& [stem, path] : a) {
    auto it = b.find(stem);
    if (it == b.end()) {
      only_a.push_back(stem);
    } else {
      pairs.push_back({stem, path, it->second});
    }
  }
  for (const auto& [stem, path] : b) {
    if (!a.count(stem)) {
      only_b.push_back(stem);
    }
  }
  if (!only_a.empty() || !only_b.empty()) {
    throw PairingError(std::move(only_a), std::move(only_b));
  }
  if (pairs.empty()) {
    log::warn("no image/mask pairs found in " + first.string() + " and " + second.string());
  }
  return pairs;
}

std::vector<PairEntry> scan_pairs(const DatasetSpec& dataset) {
  auto pairs = pair_directories(dataset.image_dir, dataset.mask_dir);
  log::info("found " + std::to_string(pairs.size()) + " pairs under " + dataset.image_dir.string());
  return pairs;
}

Sample load_sample(const PairEntry& entry) {
  Sample s;
  s.image = io::read_image(entry.image_path);
  s.mask = io::read_mask(entry.mask_path);
  s.identifier = entry.identifier;
  s.original_size = s.image.size();
  validate(s);
  return s;
}

std::vector<Sample> load_samples(const std::vector<PairEntry>& entries) {
  std::vector<Sample> out;
  out.reserve(entries.size());
  for (const auto& e : entries) {
    out.push_back(load_sample(e));
  }
  return out;
}

Sample hflip(const Sample& sample) {
  Sample s;
  s.image = basnet::hflip(sample.image);
  s.mask = basnet::hflip(sample.mask);
  s.identifier = sample.identifier + "#hflip";
  s.original_size = sample.original_size;
  return s;
}

std::vector<Sample> augment_hflip(const std::vector<Sample>& samples) {
  std::vector<Sample> out(samples);
  out.reserve(2 * samples.size());
  for (const auto& s : samples) {
    out.push_back(hflip(s));
  }
  return out;
}

void TransformParams::validate() const {
  if (resize <= 0 || crop <= 0 || crop > resize) {
    throw ConfigError("transform: need 0 < crop <= resize (got crop " + std::to_string(crop) + ", resize " +
                      std::to_string(resize) + ")");
  }
  for (double s : normalization.stddev) {
    if (!(s > 0.0)) {
      throw ConfigError("transform: normalization std must be positive");
    }
  }
}

torch::Tensor normalize(const Image& image, const Normalization& norm) {
  auto hwc = torch::from_blob(const_cast<double*>(image.values().data()), {image.height(), image.width(), 3},
                              torch::kFloat64);
  auto chw = hwc.permute({2, 0, 1}).to(torch::kFloat32).contiguous();
  auto mean = torch::tensor({norm.mean[0], norm.mean[1], norm.mean[2]}, torch::kFloat32).view({3, 1, 1});
  auto stddev = torch::tensor({norm.stddev[0], norm.stddev[1], norm.stddev[2]}, torch::kFloat32).view({3, 1, 1});
  return (chw - mean) / stddev;
}

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b) {
  std::uint64_t state = master;
  std::uint64_t h = splitmix64(state);
  state = h ^ a;
  h = splitmix64(state);
  state = h ^ b;
  return splitmix64(state);
}

CropOffset draw_crop_offset(std::uint64_t& rng_state, const TransformParams& params) {
  const auto range = static_cast<std::uint64_t>(params.resize - params.crop) + 1;
  CropOffset offset;
  offset.row = static_cast<int>(splitmix64(rng_state) % range);
  offset.col = static_cast<int>(splitmix64(rng_state) % range);
  return offset;
}

TrainItem train_transform(const Sample& sample, std::uint64_t& rng_state, const TransformParams& params) {
  params.validate();
  validate(sample);
  const Size resized{params.resize, params.resize};
  const Size cropped{params.crop, params.crop};
  TrainItem item;
  item.offset = draw_crop_offset(rng_state, params);
  const auto image = crop(resize_bilinear(sample.image, resized), item.offset.row, item.offset.col, cropped);
  item.mask = crop(resize_bilinear(sample.mask, resized), item.offset.row, item.offset.col, cropped);
  item.image = normalize(image, params.normalization);
  return item;
}

Mask InverseResize::operator()(const Mask& network_map) const { return resize_bilinear(network_map, original_); }

EvalInput eval_transform(const Image& image, const TransformParams& params) {
  params.validate();
  const auto resized = resize_bilinear(image, Size{params.resize, params.resize});
  return {normalize(resized, params.normalization), InverseResize(image.size())};
}

}  // namespace basnet::data
