#include "basnet/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <sstream>

namespace basnet::io {

namespace {

Image from_bgr(const cv::Mat& bgr) {
  cv::Mat rgb;
  if (bgr.channels() == 1) {
    cv::cvtColor(bgr, rgb, cv::COLOR_GRAY2RGB);
  } else if (bgr.channels() == 4) {
    cv::cvtColor(bgr, rgb, cv::COLOR_BGRA2RGB);
  } else {
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  }
  std::vector<double> values(static_cast<std::size_t>(rgb.rows) * rgb.cols * 3);
  for (int r = 0; r < rgb.rows; ++r) {
    const auto* row = rgb.ptr<std::uint8_t>(r);
    for (int i = 0; i < rgb.cols * 3; ++i) {
      values[static_cast<std::size_t>(r) * rgb.cols * 3 + i] = row[i] / 255.0;
    }
  }
  return Image(rgb.rows, rgb.cols, std::move(values));
}

Mask from_gray(const cv::Mat& gray) {
  std::vector<double> values(static_cast<std::size_t>(gray.rows) * gray.cols);
  for (int r = 0; r < gray.rows; ++r) {
    const auto* row = gray.ptr<std::uint8_t>(r);
    for (int c = 0; c < gray.cols; ++c) {
      values[static_cast<std::size_t>(r) * gray.cols + c] = row[c] / 255.0;
    }
  }
  return Mask(gray.rows, gray.cols, std::move(values));
}

cv::Mat to_gray(const Mask& map) {
  cv::Mat out(map.height(), map.width(), CV_8UC1);
  for (int r = 0; r < map.height(); ++r) {
    auto* row = out.ptr<std::uint8_t>(r);
    for (int c = 0; c < map.width(); ++c) {
      row[c] = quantize(map(r, c));
    }
  }
  return out;
}

cv::Mat to_bgra(const Image& rgb, const Mask& alpha) {
  if (rgb.size() != alpha.size()) {
    throw ShapeError("rgba: image " + to_string(rgb.size()) + " vs alpha " + to_string(alpha.size()));
  }
  cv::Mat out(rgb.height(), rgb.width(), CV_8UC4);
  for (int r = 0; r < rgb.height(); ++r) {
    auto* row = out.ptr<std::uint8_t>(r);
    for (int c = 0; c < rgb.width(); ++c) {
      row[4 * c + 0] = quantize(rgb(r, c, 2));
      row[4 * c + 1] = quantize(rgb(r, c, 1));
      row[4 * c + 2] = quantize(rgb(r, c, 0));
      row[4 * c + 3] = quantize(alpha(r, c));
    }
  }
  return out;
}

void write_or_throw(const std::filesystem::path& path, const cv::Mat& mat) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  if (!cv::imwrite(path.string(), mat)) {
    throw Error("failed to write " + path.string());
  }
}

std::vector<std::uint8_t> encode_png(const cv::Mat& mat) {
  std::vector<std::uint8_t> out;
  if (!cv::imencode(".png", mat, out)) {
    throw Error("PNG encoding failed");
  }
  return out;
}

}  // namespace

std::uint8_t quantize(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

Image read_image(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) {
    throw Error("cannot read image " + path.string());
  }
  return from_bgr(bgr);
}

Mask read_mask(const std::filesystem::path& path) {
  cv::Mat gray = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (gray.empty()) {
    throw Error("cannot read mask " + path.string());
  }
  return from_gray(gray);
}

Image decode_image(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) {
    throw CorruptDataError("empty image payload");
  }
  cv::Mat raw(1, static_cast<int>(bytes.size()), CV_8UC1, const_cast<std::uint8_t*>(bytes.data()));
  cv::Mat bgr;
  try {
    bgr = cv::imdecode(raw, cv::IMREAD_COLOR);
  } catch (const cv::Exception&) {
    bgr.release();
  }
  if (bgr.empty()) {
    throw CorruptDataError("payload is not a decodable image");
  }
  return from_bgr(bgr);
}

void write_mask_png(const std::filesystem::path& path, const Mask& map) { write_or_throw(path, to_gray(map)); }

void write_image_png(const std::filesystem::path& path, const Image& image) {
  cv::Mat out(image.height(), image.width(), CV_8UC3);
  for (int r = 0; r < image.height(); ++r) {
    auto* row = out.ptr<std::uint8_t>(r);
    for (int c = 0; c < image.width(); ++c) {
      for (int ch = 0; ch < 3; ++ch) {
        row[3 * c + ch] = quantize(image(r, c, 2 - ch));
      }
    }
  }
  write_or_throw(path, out);
}

void write_rgba_png(const std::filesystem::path& path, const Image& rgb, const Mask& alpha) {
  write_or_throw(path, to_bgra(rgb, alpha));
}

std::vector<std::uint8_t> encode_mask_png(const Mask& map) { return encode_png(to_gray(map)); }

std::vector<std::uint8_t> encode_rgba_png(const Image& rgb, const Mask& alpha) {
  return encode_png(to_bgra(rgb, alpha));
}

void write_mask_f64(const std::filesystem::path& path, const Mask& map) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw Error("failed to write " + path.string());
  }
  out << "basnet-f64 " << map.height() << ' ' << map.width() << '\n';
  const auto values = map.values();
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
}

Mask read_mask_f64(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error("cannot read " + path.string());
  }
  std::string header;
  std::getline(in, header);
  std::istringstream fields(header);
  std::string tag;
  int height = -1;
  int width = -1;
  fields >> tag >> height >> width;
  if (tag != "basnet-f64" || height < 0 || width < 0) {
    throw CorruptDataError("bad f64 mask header in " + path.string());
  }
  std::vector<double> values(static_cast<std::size_t>(height) * width);
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
  if (!in) {
    throw CorruptDataError("truncated f64 mask " + path.string());
  }
  return Mask(height, width, std::move(values));
}

bool is_image_file(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp";
}

}  // namespace basnet::io
