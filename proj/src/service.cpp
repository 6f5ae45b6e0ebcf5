#include "basnet/service.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>
#include <opencv2/imgproc.hpp>

#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include "basnet/image_io.hpp"
#include "basnet/log.hpp"
#include "basnet/tensor.hpp"

namespace basnet::service {

namespace fs = std::filesystem;
using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

cv::Mat to_mat(const Mask& m) {
  cv::Mat out(m.height(), m.width(), CV_64F);
  std::copy(m.values().begin(), m.values().end(), out.ptr<double>());
  return out;
}

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

/// Runs `fn`, appending its wall time under `stage`.
template <typename Fn>
auto timed(Timings& timings, const char* stage, Fn&& fn) {
  const auto start = Clock::now();
  if constexpr (std::is_void_v<decltype(fn())>) {
    fn();
    timings.emplace_back(stage, elapsed_ms(start));
  } else {
    auto out = fn();
    timings.emplace_back(stage, elapsed_ms(start));
    return out;
  }
}

std::string new_correlation_id() {
  static std::atomic<std::uint64_t> counter{0};
  static const std::uint64_t salt = std::random_device{}();
  const auto n = counter.fetch_add(1);
  return hex64(fnv1a64(std::to_string(n), salt ^ 0x9e3779b97f4a7c15ULL));
}

bool looks_like_png(std::span<const std::uint8_t> b) {
  static constexpr std::uint8_t kSig[] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  return b.size() >= sizeof(kSig) && std::equal(std::begin(kSig), std::end(kSig), b.begin());
}

bool looks_like_jpeg(std::span<const std::uint8_t> b) {
  return b.size() >= 3 && b[0] == 0xff && b[1] == 0xd8 && b[2] == 0xff;
}

void check_content_type(const std::string& declared) {
  std::string base = declared.substr(0, declared.find(';'));
  if (base.empty() || base == "image/png" || base == "image/jpeg" || base == "image/jpg" ||
      base == "application/octet-stream") {
    return;
  }
  throw ServiceError(415, "unsupported_media_type", "content type '" + base + "' is not PNG or JPEG");
}

json timings_json(const Timings& timings) {
  json out = json::object();
  for (const auto& [stage, ms] : timings) {
    out[stage] = ms;
  }
  return out;
}

std::string server_timing(const Timings& timings) {
  std::ostringstream out;
  for (std::size_t i = 0; i < timings.size(); ++i) {
    out << (i ? ", " : "") << timings[i].first << ";dur=" << timings[i].second;
  }
  return out.str();
}

void send_error(httplib::Response& res, const ServiceError& e) {
  json body = {{"error", {{"code", e.code()}, {"message", e.what()}}}};
  if (!e.correlation_id.empty()) {
    body["error"]["correlation_id"] = e.correlation_id;
    res.set_header("X-Correlation-Id", e.correlation_id);
  }
  if (e.retry_after_s) {
    res.set_header("Retry-After", std::to_string(*e.retry_after_s));
  }
  res.status = e.status();
  res.set_content(body.dump(), "application/json");
}

}  // namespace

// ---- post-processing ------------------------------------------------------------

void PostprocessParams::validate() const {
  if (!(unsharp_sigma > 0.0)) {
    throw ConfigError("unsharp sigma must be positive");
  }
  if (!(unsharp_amount >= 0.0)) {
    throw ConfigError("unsharp amount must be non-negative");
  }
  if (element_size < 1 || element_size % 2 == 0) {
    throw ConfigError("structuring element size must be odd and positive");
  }
  if (!(support_threshold > 0.0 && support_threshold <= 1.0)) {
    throw ConfigError("support threshold must lie in (0, 1]");
  }
}

Mask postprocess_mask(const Mask& mask, const PostprocessParams& params) {
  params.validate();
  if (mask.empty()) {
    return mask;
  }
  const cv::Mat m = to_mat(mask);
  cv::Mat blurred;
  cv::GaussianBlur(m, blurred, cv::Size(0, 0), params.unsharp_sigma, params.unsharp_sigma, cv::BORDER_REPLICATE);
  cv::Mat sharp = m + params.unsharp_amount * (m - blurred);
  cv::min(cv::max(sharp, 0.0), 1.0, sharp);

  const cv::Mat element =
      cv::getStructuringElement(cv::MORPH_ELLIPSE, cv::Size(params.element_size, params.element_size));
  cv::Mat support = sharp >= params.support_threshold;
  cv::Mat cleaned;
  cv::morphologyEx(support, cleaned, cv::MORPH_OPEN, element);
  cv::morphologyEx(cleaned, cleaned, cv::MORPH_CLOSE, element);
  cv::Mat grey_closed;
  cv::morphologyEx(sharp, grey_closed, cv::MORPH_CLOSE, element);

  std::vector<double> out(mask.pixel_count(), 0.0);
  for (int r = 0; r < mask.height(); ++r) {
    const auto* keep = cleaned.ptr<std::uint8_t>(r);
    const auto* original = support.ptr<std::uint8_t>(r);
    const auto* s = sharp.ptr<double>(r);
    const auto* g = grey_closed.ptr<double>(r);
    for (int c = 0; c < mask.width(); ++c) {
      if (keep[c]) {
        out[static_cast<std::size_t>(r) * static_cast<std::size_t>(mask.width()) + static_cast<std::size_t>(c)] =
            original[c] ? s[c] : g[c];
      }
    }
  }
  return Mask(mask.height(), mask.width(), std::move(out));
}

OutputFormat parse_output_format(std::string_view text) {
  if (text == "rgba_png") return OutputFormat::kRgbaPng;
  if (text == "mask_png") return OutputFormat::kMaskPng;
  throw ServiceError(400, "invalid_output_format", "output_format must be rgba_png or mask_png");
}

ResponseMode parse_response_mode(std::string_view text) {
  if (text == "inline") return ResponseMode::kInline;
  if (text == "stored_url") return ResponseMode::kStoredUrl;
  throw ServiceError(400, "invalid_response_mode", "response_mode must be inline or stored_url");
}

ServiceError::ServiceError(int status, std::string code, const std::string& message)
    : Error(message), status_(status), code_(std::move(code)) {}

// ---- storage / fetching ----------------------------------------------------------

LocalStorage::LocalStorage(fs::path root, std::string url_prefix) : root_(std::move(root)), url_prefix_(std::move(url_prefix)) {
  fs::create_directories(root_);
  while (!url_prefix_.empty() && url_prefix_.back() == '/') {
    url_prefix_.pop_back();
  }
}

std::string LocalStorage::put(const std::string& name, std::span<const std::uint8_t> bytes) {
  if (name.empty() || name.find('/') != std::string::npos || name.find("..") != std::string::npos) {
    throw Error("invalid storage object name '" + name + "'");
  }
  const auto target = root_ / name;
  const auto temp = root_ / (".tmp-" + std::to_string(counter_.fetch_add(1)) + "-" + name);
  {
    std::ofstream out(temp, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
      throw Error("failed writing " + temp.string());
    }
  }
  fs::rename(temp, target);
  return url_prefix_ + "/" + name;
}

std::vector<std::uint8_t> HttpFetcher::fetch(const std::string& url, std::size_t max_bytes) {
  const std::string scheme = "http://";
  if (url.rfind(scheme, 0) != 0) {
    throw ServiceError(400, "unsupported_url", "only http:// image URLs are supported");
  }
  const auto slash = url.find('/', scheme.size());
  const std::string origin = url.substr(0, slash);
  const std::string path = slash == std::string::npos ? "/" : url.substr(slash);

  httplib::Client client(origin);
  client.set_connection_timeout(timeout_s_);
  client.set_read_timeout(timeout_s_);
  std::vector<std::uint8_t> body;
  bool too_large = false;
  auto result = client.Get(path, [&](const char* data, std::size_t n) {
    if (body.size() + n > max_bytes) {
      too_large = true;
      return false;
    }
    body.insert(body.end(), data, data + n);
    return true;
  });
  if (too_large) {
    throw ServiceError(413, "payload_too_large",
                       "image at " + url + " exceeds the " + std::to_string(max_bytes) + "-byte limit");
  }
  if (!result) {
    throw ServiceError(400, "url_unreachable", "could not fetch " + url + ": " + httplib::to_string(result.error()));
  }
  if (result->status != 200) {
    throw ServiceError(400, "url_fetch_failed", "fetching " + url + " returned HTTP " + std::to_string(result->status));
  }
  return body;
}

// ---- replica pool ----------------------------------------------------------------

ReplicaPool::ReplicaPool(std::vector<nn::SegmentationNet> replicas, std::size_t queue_capacity)
    : replicas_(std::move(replicas)), busy_(replicas_.size(), false), queue_capacity_(queue_capacity) {
  if (replicas_.empty()) {
    throw ConfigError("replica pool needs at least one model");
  }
}

ReplicaPool::Lease::~Lease() {
  if (pool_ != nullptr) {
    pool_->release(index_);
  }
}

nn::SegmentationNetImpl& ReplicaPool::Lease::model() const { return *pool_->replicas_[index_]; }

std::optional<ReplicaPool::Lease> ReplicaPool::acquire() {
  std::unique_lock lock(mutex_);
  auto free_slot = [&]() -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < busy_.size(); ++i) {
      if (!busy_[i]) return i;
    }
    return std::nullopt;
  };
  auto slot = free_slot();
  if (!slot) {
    if (waiting_ >= queue_capacity_) {
      return std::nullopt;
    }
    ++waiting_;
    available_.wait(lock, [&] { return (slot = free_slot()).has_value(); });
    --waiting_;
  }
  busy_[*slot] = true;
  return Lease(this, *slot);
}

void ReplicaPool::release(std::size_t index) {
  {
    std::lock_guard lock(mutex_);
    busy_[index] = false;
  }
  available_.notify_one();
}

std::size_t ReplicaPool::queue_depth() const {
  std::lock_guard lock(mutex_);
  return waiting_;
}

std::size_t ReplicaPool::in_flight() const {
  std::lock_guard lock(mutex_);
  return static_cast<std::size_t>(std::count(busy_.begin(), busy_.end(), true));
}

// ---- service ---------------------------------------------------------------------

void ServiceConfig::validate() const {
  if (port < 0 || port > 65535) {
    throw ConfigError("port out of range");
  }
  if (max_bytes == 0 || pool_size == 0) {
    throw ConfigError("byte limit and pool size must be positive");
  }
  postprocess.validate();
  transform.validate();
}

BackgroundRemovalService::BackgroundRemovalService(ServiceConfig config, std::unique_ptr<Storage> storage,
                                                   std::unique_ptr<Fetcher> fetcher)
    : config_(std::move(config)), storage_(std::move(storage)), fetcher_(std::move(fetcher)), started_(Clock::now()) {
  config_.validate();
  if (!config_.model_path) {
    log::warn("service started without a model; inference requests will be refused");
    return;
  }
  std::vector<nn::SegmentationNet> replicas;
  for (std::size_t i = 0; i < config_.pool_size; ++i) {
    auto loaded = nn::load_checkpoint(*config_.model_path);
    loaded.model->eval();
    for (auto& p : loaded.model->parameters()) {
      p.set_requires_grad(false);
    }
    if (i == 0) {
      manifest_checksum_ = loaded.manifest.checksum;
      model_checksum_ = nn::state_checksum(*loaded.model);
      architecture_ = loaded.manifest.architecture;
      if (model_checksum_ != manifest_checksum_) {
        throw CorruptDataError("checkpoint " + config_.model_path->string() + " does not match its manifest checksum");
      }
    }
    replicas.push_back(loaded.model);
  }
  pool_ = std::make_unique<ReplicaPool>(std::move(replicas), config_.queue_capacity);
  log::info("loaded " + architecture_ + " x" + std::to_string(config_.pool_size) + " from " +
            config_.model_path->string());
}

Mask BackgroundRemovalService::infer(const Image& image, Timings& timings) {
  auto input = timed(timings, "preprocess", [&] { return data::eval_transform(image, config_.transform); });
  auto lease = pool_->acquire();
  if (!lease) {
    ServiceError e(503, "overloaded", "all model replicas are busy");
    e.retry_after_s = config_.retry_after_s;
    throw e;
  }
  auto network_map = timed(timings, "inference", [&] {
    torch::NoGradGuard no_grad;
    inferences_.fetch_add(1);
    return to_mask(lease->model().predict(input.image.unsqueeze(0)).to(torch::kFloat64));
  });
  return timed(timings, "restore", [&] { return input.restore(network_map); });
}

RemovalResponse BackgroundRemovalService::handle_remove_background(const RemovalRequest& request) {
  requests_.fetch_add(1);
  RemovalResponse response;
  response.correlation_id = new_correlation_id();
  auto& timings = response.timings_ms;
  const auto total_start = Clock::now();

  try {
    timed(timings, "validate", [&] {
      if (request.upload.has_value() == request.image_url.has_value()) {
        throw ServiceError(400, "invalid_source", "provide exactly one of an uploaded image or an image_url");
      }
      if (request.upload) {
        if (request.upload->size() > config_.max_bytes) {
          throw ServiceError(413, "payload_too_large",
                             "upload of " + std::to_string(request.upload->size()) + " bytes exceeds the " +
                                 std::to_string(config_.max_bytes) + "-byte limit");
        }
        check_content_type(request.upload_content_type);
      }
      if (!pool_) {
        throw ServiceError(503, "model_unavailable", "no model is loaded");
      }
    });

    std::vector<std::uint8_t> fetched;
    if (request.image_url) {
      fetched = timed(timings, "fetch", [&] { return fetcher_->fetch(*request.image_url, config_.max_bytes); });
    }
    const auto bytes = request.upload ? std::span<const std::uint8_t>(*request.upload) : std::span<const std::uint8_t>(fetched);

    const Image image = timed(timings, "decode", [&] {
      if (!looks_like_png(bytes) && !looks_like_jpeg(bytes)) {
        throw ServiceError(415, "unsupported_media_type", "payload is neither PNG nor JPEG");
      }
      try {
        return io::decode_image(bytes);
      } catch (const CorruptDataError& e) {
        throw ServiceError(422, "invalid_image", e.what());
      }
    });

    Mask matte;
    try {
      matte = infer(image, timings);
    } catch (const ServiceError&) {
      throw;
    } catch (const std::exception& e) {
      log::error("inference failed [" + response.correlation_id + "]: " + e.what());
      ServiceError err(500, "inference_failed", "inference failed");
      err.correlation_id = response.correlation_id;
      throw err;
    }
    matte = timed(timings, "postprocess", [&] { return postprocess_mask(matte, config_.postprocess); });

    response.size = image.size();
    const bool rgba = request.output_format == OutputFormat::kRgbaPng;
    auto encoded = timed(timings, "compose", [&] {
      return rgba ? io::encode_rgba_png(image, matte) : io::encode_mask_png(matte);
    });

    if (request.response_mode == ResponseMode::kStoredUrl) {
      const std::string name = response.correlation_id + (rgba ? "_rgba.png" : "_mask.png");
      response.output_url = timed(timings, "store", [&] { return storage_->put(name, encoded); });
      timings.emplace_back("total", elapsed_ms(total_start));
      const json body = {{"output_url", *response.output_url},
                         {"width", image.width()},
                         {"height", image.height()},
                         {"timings_ms", timings_json(timings)},
                         {"correlation_id", response.correlation_id}};
      const auto text = body.dump();
      response.body.assign(text.begin(), text.end());
      response.content_type = "application/json";
    } else {
      timings.emplace_back("total", elapsed_ms(total_start));
      response.body = std::move(encoded);
      response.content_type = "image/png";
    }
    return response;
  } catch (ServiceError& e) {
    if (e.correlation_id.empty()) {
      e.correlation_id = response.correlation_id;
    }
    throw;
  }
}

HealthStatus BackgroundRemovalService::health() const {
  HealthStatus h;
  h.ready = pool_ != nullptr;
  h.status = h.ready ? "ok" : "degraded";
  h.model_checksum = model_checksum_;
  h.manifest_checksum = manifest_checksum_;
  h.architecture = architecture_;
  h.queue_depth = pool_ ? pool_->queue_depth() : 0;
  h.in_flight = pool_ ? pool_->in_flight() : 0;
  h.replicas = pool_ ? pool_->size() : 0;
  h.uptime_s = std::chrono::duration<double>(Clock::now() - started_).count();
  h.requests = requests_.load();
  h.inferences = inferences_.load();
  return h;
}

// ---- HTTP --------------------------------------------------------------------------

void register_routes(httplib::Server& server, BackgroundRemovalService& service) {
  // Multipart framing adds a little on top of the image itself; the exact
  // limit is enforced on the decoded part.
  server.set_payload_max_length(service.config().max_bytes + 64 * 1024);

  server.Post("/v1/remove", [&service](const httplib::Request& req, httplib::Response& res) {
    try {
      RemovalRequest request;
      if (req.has_param("output_format")) {
        request.output_format = parse_output_format(req.get_param_value("output_format"));
      }
      if (req.has_param("response_mode")) {
        request.response_mode = parse_response_mode(req.get_param_value("response_mode"));
      }
      if (req.is_multipart_form_data()) {
        if (!req.has_file("image")) {
          throw ServiceError(400, "invalid_source", "multipart body lacks an 'image' field");
        }
        const auto part = req.get_file_value("image");
        request.upload = std::vector<std::uint8_t>(part.content.begin(), part.content.end());
        request.upload_content_type = part.content_type;
      } else if (req.get_header_value("Content-Type").rfind("application/json", 0) == 0) {
        const auto body = json::parse(req.body, nullptr, false);
        if (body.is_discarded() || !body.is_object() || !body.contains("image_url") || !body["image_url"].is_string()) {
          throw ServiceError(400, "invalid_json", "expected a JSON object with a string 'image_url'");
        }
        request.image_url = body["image_url"].get<std::string>();
      } else {
        throw ServiceError(415, "unsupported_media_type", "send multipart/form-data or application/json");
      }

      auto out = service.handle_remove_background(request);
      res.set_header("X-Correlation-Id", out.correlation_id);
      res.set_header("Server-Timing", server_timing(out.timings_ms));
      res.set_content(std::string(out.body.begin(), out.body.end()), out.content_type);
    } catch (const ServiceError& e) {
      send_error(res, e);
    }
  });

  server.Get("/v1/health", [&service](const httplib::Request&, httplib::Response& res) {
    const auto h = service.health();
    const json body = {{"status", h.status},          {"model_checksum", h.model_checksum},
                       {"manifest_checksum", h.manifest_checksum}, {"architecture", h.architecture},
                       {"queue_depth", h.queue_depth}, {"in_flight", h.in_flight},
                       {"replicas", h.replicas},       {"uptime_s", h.uptime_s},
                       {"requests", h.requests},       {"inferences", h.inferences}};
    res.status = h.ready ? 200 : 503;
    res.set_content(body.dump(), "application/json");
  });

  server.Get(R"(/v1/files/([A-Za-z0-9_.\-]+))", [&service](const httplib::Request& req, httplib::Response& res) {
    auto* local = dynamic_cast<LocalStorage*>(&service.storage());
    const auto path = local ? local->root() / req.matches[1].str() : fs::path();
    std::ifstream in(path, std::ios::binary);
    if (!local || !in) {
      send_error(res, ServiceError(404, "not_found", "no stored object named " + req.matches[1].str()));
      return;
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    res.set_content(buffer.str(), "image/png");
  });

  server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) {
      return httplib::Server::HandlerResponse::Unhandled;
    }
    const std::string code = res.status == 413 ? "payload_too_large" : res.status == 404 ? "not_found" : "http_error";
    send_error(res, ServiceError(res.status, code, "request rejected with HTTP " + std::to_string(res.status)));
    return httplib::Server::HandlerResponse::Handled;
  });
}

void run_server(const ServiceConfig& config) {
  const std::string prefix = config.public_url.empty()
                                 ? "http://" + (config.host == "0.0.0.0" ? std::string("127.0.0.1") : config.host) +
                                       ":" + std::to_string(config.port) + "/v1/files"
                                 : config.public_url;
  BackgroundRemovalService service(config, std::make_unique<LocalStorage>(config.storage_root, prefix));
  httplib::Server server;
  register_routes(server, service);
  log::info("listening on " + config.host + ":" + std::to_string(config.port));
  if (!server.listen(config.host, config.port)) {
    throw Error("cannot listen on " + config.host + ":" + std::to_string(config.port));
  }
}

}  // namespace basnet::service
