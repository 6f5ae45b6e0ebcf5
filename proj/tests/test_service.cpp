#include <gtest/gtest.h>

#include <httplib.h>

#include <filesystem>
#include <future>
#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <thread>

#include "basnet/image_io.hpp"
#include "basnet/service.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace basnet;
using namespace basnet::service;

namespace {

Image test_image(int h, int w) {
  std::vector<double> v;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const bool centre = std::abs(r - h / 2) < h / 4 && std::abs(c - w / 2) < w / 4;
      v.push_back(centre ? 0.9 : 0.2);
      v.push_back(static_cast<double>(c) / w);
      v.push_back(centre ? 0.1 : 0.6);
    }
  return Image(h, w, v);
}

std::vector<std::uint8_t> png_bytes(int h, int w) {
  const auto dir = fs::temp_directory_path() / "basnet_service_png";
  fs::create_directories(dir);
  const auto path = dir / ("in_" + std::to_string(h) + "x" + std::to_string(w) + ".png");
  io::write_image_png(path, test_image(h, w));
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

cv::Mat decode_unchanged(const std::vector<std::uint8_t>& bytes) {
  return cv::imdecode(cv::Mat(1, static_cast<int>(bytes.size()), CV_8U, const_cast<std::uint8_t*>(bytes.data())),
                      cv::IMREAD_UNCHANGED);
}

Mask rectangle(int h, int w, int r0, int r1, int c0, int c1, double on = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(h) * w, 0.0);
  for (int r = r0; r < r1; ++r)
    for (int c = c0; c < c1; ++c) v[static_cast<std::size_t>(r) * w + c] = on;
  return Mask(h, w, v);
}

double steepest_step(const Mask& m, int row) {
  double best = 0.0;
  for (int c = 0; c + 1 < m.width(); ++c) best = std::max(best, std::fabs(m(row, c + 1) - m(row, c)));
  return best;
}

// A small U-Net checkpoint shared by the service tests; inference runs at
// 64 x 64 to keep them quick.
class ServiceFixture : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / "basnet_service";
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    nn::ModelConfig config;
    config.architecture = nn::Architecture::kUNetBaseline;
    auto model = nn::build_model(config, 17);
    nn::save_checkpoint(dir_ / "unet.pt", *model, 0);
  }

  static ServiceConfig config(std::size_t pool = 1) {
    ServiceConfig c;
    c.model_path = dir_ / "unet.pt";
    c.pool_size = pool;
    c.max_bytes = 200 * 1024;
    c.transform.resize = 64;
    c.transform.crop = 64;
    c.storage_root = dir_ / "store";
    return c;
  }

  static std::unique_ptr<BackgroundRemovalService> make(std::size_t pool = 1, const std::string& url = "http://x/v1/files") {
    auto c = config(pool);
    return std::make_unique<BackgroundRemovalService>(c, std::make_unique<LocalStorage>(c.storage_root, url));
  }

  static inline fs::path dir_;
};

}  // namespace

TEST(Postprocess, ConstantMapUnchanged) {
  const Mask m(20, 24, 0.7);
  const auto out = postprocess_mask(m);
  for (double v : out.values()) ASSERT_NEAR(v, 0.7, 1e-12);
}

TEST(Postprocess, IsolatedPixelRemoved) {
  const auto m = rectangle(15, 15, 7, 8, 7, 8);
  const auto out = postprocess_mask(m);
  for (double v : out.values()) ASSERT_EQ(v, 0.0);
}

TEST(Postprocess, OpenBinaryShapeIsAFixedPoint) {
  // The 3x3 elliptical element is a cross, so opening clips rectangle
  // corners. A rectangle with its corners already cut is open and closed.
  const auto rect = rectangle(16, 16, 4, 10, 3, 11);
  std::vector<double> v(rect.values().begin(), rect.values().end());
  for (auto [r, c] : {std::pair{4, 3}, {4, 10}, {9, 3}, {9, 10}}) v[r * 16 + c] = 0.0;
  const Mask m(16, 16, v);
  EXPECT_EQ(postprocess_mask(m), m);
  EXPECT_NE(postprocess_mask(rect), rect);
}

TEST(Postprocess, SoftEdgeGetsSteeper) {
  std::vector<double> v;
  for (int r = 0; r < 9; ++r)
    for (int c = 0; c < 30; ++c) v.push_back(1.0 / (1.0 + std::exp(-(c - 14.5) / 3.0)));
  const Mask m(9, 30, v);
  const auto out = postprocess_mask(m);
  EXPECT_GT(steepest_step(out, 4), steepest_step(m, 4));
  // Background side is cleared, foreground side stays high.
  EXPECT_EQ(out(4, 0), 0.0);
  EXPECT_GT(out(4, 29), 0.95);
}

TEST(Postprocess, ClosingFillsOnePixelHole) {
  auto filled = rectangle(12, 12, 2, 10, 2, 10, 0.8);
  std::vector<double> v(filled.values().begin(), filled.values().end());
  v[6 * 12 + 6] = 0.0;
  const auto out = postprocess_mask(Mask(12, 12, v));
  EXPECT_GT(out(6, 6), 0.5);
}

TEST(Postprocess, RejectsEvenElement) {
  PostprocessParams p;
  p.element_size = 4;
  EXPECT_THROW(postprocess_mask(Mask(4, 4, 0.5), p), ConfigError);
}

TEST(Parsing, FormatAndModeNames) {
  EXPECT_EQ(parse_output_format("mask_png"), OutputFormat::kMaskPng);
  EXPECT_EQ(parse_response_mode("stored_url"), ResponseMode::kStoredUrl);
  try {
    parse_output_format("gif");
    FAIL();
  } catch (const ServiceError& e) {
    EXPECT_EQ(e.status(), 400);
  }
}

TEST(Storage, WritesAtomicallyAndRejectsTraversal) {
  const auto root = fs::temp_directory_path() / "basnet_storage";
  fs::remove_all(root);
  LocalStorage storage(root, "http://host/files/");
  const std::vector<std::uint8_t> bytes{1, 2, 3};
  EXPECT_EQ(storage.put("a.png", bytes), "http://host/files/a.png");
  EXPECT_EQ(fs::file_size(root / "a.png"), 3u);
  EXPECT_THROW(storage.put("../evil", bytes), Error);
  EXPECT_THROW(storage.put("sub/x", bytes), Error);
  for (const auto& entry : fs::directory_iterator(root)) EXPECT_EQ(entry.path().filename().string().rfind(".tmp", 0), std::string::npos);
}

TEST_F(ServiceFixture, PoolRefusesBeyondQueueCapacity) {
  nn::ModelConfig c;
  c.architecture = nn::Architecture::kUNetBaseline;
  ReplicaPool pool({nn::SegmentationNet(c)}, 1);
  auto held = pool.acquire();
  ASSERT_TRUE(held.has_value());
  EXPECT_EQ(pool.in_flight(), 1u);

  auto waiter = std::async(std::launch::async, [&] { return pool.acquire().has_value(); });
  while (pool.queue_depth() == 0) std::this_thread::yield();
  EXPECT_FALSE(pool.acquire().has_value());  // one replica busy, one request queued
  held.reset();
  EXPECT_TRUE(waiter.get());
  EXPECT_EQ(pool.in_flight(), 0u);
}

TEST_F(ServiceFixture, InlineRgbaMatchesInputSize) {
  auto service = make();
  RemovalRequest request;
  request.upload = png_bytes(50, 70);
  request.upload_content_type = "image/png";
  const auto response = service->handle_remove_background(request);
  EXPECT_EQ(response.content_type, "image/png");
  const auto decoded = decode_unchanged(response.body);
  EXPECT_EQ(decoded.channels(), 4);
  EXPECT_EQ(decoded.rows, 50);
  EXPECT_EQ(decoded.cols, 70);
  std::vector<std::string> stages;
  for (const auto& [stage, ms] : response.timings_ms) stages.push_back(stage);
  EXPECT_EQ(stages, (std::vector<std::string>{"validate", "decode", "preprocess", "inference", "restore",
                                               "postprocess", "compose", "total"}));
  EXPECT_EQ(service->health().inferences, 1u);
}

TEST_F(ServiceFixture, MaskOutputIsSingleChannel) {
  auto service = make();
  RemovalRequest request;
  request.upload = png_bytes(40, 33);
  request.output_format = OutputFormat::kMaskPng;
  const auto decoded = decode_unchanged(service->handle_remove_background(request).body);
  EXPECT_EQ(decoded.channels(), 1);
  EXPECT_EQ(decoded.rows, 40);
  EXPECT_EQ(decoded.cols, 33);
}

TEST_F(ServiceFixture, OversizedUploadRejectedBeforeInference) {
  auto service = make();
  RemovalRequest request;
  request.upload = std::vector<std::uint8_t>(service->config().max_bytes + 1, 0x89);
  try {
    service->handle_remove_background(request);
    FAIL() << "expected 413";
  } catch (const ServiceError& e) {
    EXPECT_EQ(e.status(), 413);
    EXPECT_FALSE(e.correlation_id.empty());
  }
  EXPECT_EQ(service->health().inferences, 0u);
}

TEST_F(ServiceFixture, BadInputsMapToClientErrors) {
  auto service = make();
  auto status_of = [&](const RemovalRequest& r) {
    try {
      service->handle_remove_background(r);
    } catch (const ServiceError& e) {
      return e.status();
    }
    return 200;
  };
  RemovalRequest neither;
  EXPECT_EQ(status_of(neither), 400);
  RemovalRequest gif;
  gif.upload = std::vector<std::uint8_t>{'G', 'I', 'F', '8', '9', 'a'};
  EXPECT_EQ(status_of(gif), 415);
  RemovalRequest declared;
  declared.upload = png_bytes(8, 8);
  declared.upload_content_type = "text/plain";
  EXPECT_EQ(status_of(declared), 415);
  RemovalRequest truncated;
  truncated.upload = png_bytes(8, 8);
  truncated.upload->resize(20);
  EXPECT_EQ(status_of(truncated), 422);
  RemovalRequest ftp;
  ftp.image_url = "ftp://example/x.png";
  EXPECT_EQ(status_of(ftp), 400);
  EXPECT_EQ(service->health().inferences, 0u);
}

TEST_F(ServiceFixture, ConcurrentDuplicatesAreByteIdentical) {
  auto service = make(2);
  RemovalRequest request;
  request.upload = png_bytes(45, 45);
  auto run = [&] { return service->handle_remove_background(request).body; };
  auto a = std::async(std::launch::async, run);
  auto b = std::async(std::launch::async, run);
  const auto first = a.get();
  const auto second = b.get();
  EXPECT_EQ(first, second);
  EXPECT_EQ(run(), first);
}

TEST_F(ServiceFixture, HealthReportsVerifiedChecksum) {
  auto service = make();
  const auto h = service->health();
  EXPECT_TRUE(h.ready);
  EXPECT_EQ(h.status, "ok");
  EXPECT_EQ(h.model_checksum, h.manifest_checksum);
  EXPECT_EQ(h.architecture, "UNET_BASELINE");
  EXPECT_EQ(h.replicas, 1u);
}

TEST(ServiceDegraded, NoModelMeans503) {
  ServiceConfig c;
  c.storage_root = fs::temp_directory_path() / "basnet_degraded";
  BackgroundRemovalService service(c, std::make_unique<LocalStorage>(c.storage_root, "http://x"));
  EXPECT_EQ(service.health().status, "degraded");
  RemovalRequest request;
  request.upload = png_bytes(8, 8);
  try {
    service.handle_remove_background(request);
    FAIL();
  } catch (const ServiceError& e) {
    EXPECT_EQ(e.status(), 503);
    EXPECT_EQ(e.code(), "model_unavailable");
  }
}

TEST_F(ServiceFixture, HttpRoundTripAndStoredUrl) {
  httplib::Server server;
  const int port = server.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  const std::string base = "http://127.0.0.1:" + std::to_string(port);
  auto c = config();
  auto service = std::make_unique<BackgroundRemovalService>(
      c, std::make_unique<LocalStorage>(c.storage_root, base + "/v1/files"));
  register_routes(server, *service);
  const auto source = png_bytes(36, 52);
  server.Get("/fixtures/source.png", [&](const httplib::Request&, httplib::Response& res) {
    res.set_content(std::string(source.begin(), source.end()), "image/png");
  });
  std::thread worker([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  httplib::Client client(base);
  client.set_read_timeout(120);

  auto health = client.Get("/v1/health");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  const auto h = json::parse(health->body);
  EXPECT_EQ(h["model_checksum"], h["manifest_checksum"]);

  httplib::MultipartFormDataItems upload{{"image", std::string(source.begin(), source.end()), "in.png", "image/png"}};
  auto inline_res = client.Post("/v1/remove", upload);
  ASSERT_TRUE(inline_res);
  EXPECT_EQ(inline_res->status, 200);
  EXPECT_EQ(inline_res->get_header_value("Content-Type"), "image/png");
  EXPECT_FALSE(inline_res->get_header_value("X-Correlation-Id").empty());
  EXPECT_NE(inline_res->get_header_value("Server-Timing").find("inference;dur="), std::string::npos);
  const auto rgba = decode_unchanged(std::vector<std::uint8_t>(inline_res->body.begin(), inline_res->body.end()));
  EXPECT_EQ(rgba.channels(), 4);
  EXPECT_EQ(rgba.rows, 36);
  EXPECT_EQ(rgba.cols, 52);

  const json by_url = {{"image_url", base + "/fixtures/source.png"}};
  auto stored = client.Post("/v1/remove?response_mode=stored_url", by_url.dump(), "application/json");
  ASSERT_TRUE(stored);
  ASSERT_EQ(stored->status, 200) << stored->body;
  const auto body = json::parse(stored->body);
  EXPECT_EQ(body["width"], 52);
  EXPECT_EQ(body["height"], 36);
  const std::string url = body["output_url"];
  ASSERT_EQ(url.rfind(base, 0), 0u);
  auto file = client.Get(url.substr(base.size()));
  ASSERT_TRUE(file);
  EXPECT_EQ(file->status, 200);
  EXPECT_EQ(file->body, inline_res->body);

  const std::string big(c.max_bytes + 128 * 1024, 'x');
  auto too_big = client.Post("/v1/remove", httplib::MultipartFormDataItems{{"image", big, "big.png", "image/png"}});
  ASSERT_TRUE(too_big);
  EXPECT_EQ(too_big->status, 413);

  auto missing = client.Post("/v1/remove", json{{"image_url", base + "/fixtures/none.png"}}.dump(), "application/json");
  ASSERT_TRUE(missing);
  EXPECT_EQ(missing->status, 400);
  EXPECT_EQ(json::parse(missing->body)["error"]["code"], "url_fetch_failed");

  server.stop();
  worker.join();
  EXPECT_EQ(service->health().inferences, 2u);
}
