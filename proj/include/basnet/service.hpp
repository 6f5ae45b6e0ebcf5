#pragma once

// Background-removal HTTP service: validate, ingest, infer, post-process,
// then return the image or store it and return its URL.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "basnet/core.hpp"
#include "basnet/data.hpp"
#include "basnet/model.hpp"

namespace httplib {
class Server;
}

namespace basnet::service {

struct PostprocessParams {
  double unsharp_sigma = 2.0;
  double unsharp_amount = 0.5;
  int element_size = 3;            ///< elliptical structuring element, odd
  double support_threshold = 0.5;  ///< binarization level for the morphology

  void validate() const;
};

/// Unsharp masking, m' = clamp(m + amount * (m - blur(m)), 0, 1), then
/// opening followed by closing of the support {m' >= threshold}. Pixels that
/// stay in the support keep m'; pixels added by the closing take the grey
/// closing of m'; everything else becomes 0.
Mask postprocess_mask(const Mask& mask, const PostprocessParams& params = {});

enum class OutputFormat { kRgbaPng, kMaskPng };
enum class ResponseMode { kInline, kStoredUrl };

OutputFormat parse_output_format(std::string_view text);  ///< "rgba_png" | "mask_png"
ResponseMode parse_response_mode(std::string_view text);  ///< "inline" | "stored_url"

struct RemovalRequest {
  std::optional<std::vector<std::uint8_t>> upload;
  std::string upload_content_type;  ///< as declared by the client
  std::optional<std::string> image_url;
  OutputFormat output_format = OutputFormat::kRgbaPng;
  ResponseMode response_mode = ResponseMode::kInline;
};

/// Client-visible failure: HTTP status plus a machine-readable code.
class ServiceError : public Error {
 public:
  ServiceError(int status, std::string code, const std::string& message);
  int status() const { return status_; }
  const std::string& code() const { return code_; }
  std::optional<int> retry_after_s;
  std::string correlation_id;

 private:
  int status_;
  std::string code_;
};

using Timings = std::vector<std::pair<std::string, double>>;  ///< stage -> milliseconds, in order

struct RemovalResponse {
  std::string content_type;
  std::vector<std::uint8_t> body;
  Size size;
  Timings timings_ms;
  std::optional<std::string> output_url;
  std::string correlation_id;
};

// ---- storage and fetching ---------------------------------------------------

class Storage {
 public:
  virtual ~Storage() = default;
  /// Stores `bytes` under `name` and returns a URL a client can fetch.
  virtual std::string put(const std::string& name, std::span<const std::uint8_t> bytes) = 0;
};

/// Files under `root`, published as `<url_prefix>/<name>`. Writes go to a
/// temporary file that is renamed into place.
class LocalStorage : public Storage {
 public:
  LocalStorage(std::filesystem::path root, std::string url_prefix);
  std::string put(const std::string& name, std::span<const std::uint8_t> bytes) override;
  const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path root_;
  std::string url_prefix_;
  std::atomic<std::uint64_t> counter_{0};
};

class Fetcher {
 public:
  virtual ~Fetcher() = default;
  /// Downloads at most `max_bytes`; throws ServiceError on failure.
  virtual std::vector<std::uint8_t> fetch(const std::string& url, std::size_t max_bytes) = 0;
};

/// Plain http:// downloads.
class HttpFetcher : public Fetcher {
 public:
  explicit HttpFetcher(int timeout_s = 10) : timeout_s_(timeout_s) {}
  std::vector<std::uint8_t> fetch(const std::string& url, std::size_t max_bytes) override;

 private:
  int timeout_s_;
};

// ---- replicas -----------------------------------------------------------------

/// Fixed set of model replicas, each used by one request at a time. When all
/// are busy, up to `queue_capacity` requests wait; further ones are refused.
class ReplicaPool {
 public:
  ReplicaPool(std::vector<nn::SegmentationNet> replicas, std::size_t queue_capacity);

  class Lease {
   public:
    Lease(ReplicaPool* pool, std::size_t index) : pool_(pool), index_(index) {}
    Lease(Lease&& other) noexcept : pool_(std::exchange(other.pool_, nullptr)), index_(other.index_) {}
    Lease& operator=(Lease&&) = delete;
    ~Lease();
    nn::SegmentationNetImpl& model() const;

   private:
    ReplicaPool* pool_;
    std::size_t index_;
  };

  /// Empty when the wait queue is full.
  std::optional<Lease> acquire();

  std::size_t size() const { return replicas_.size(); }
  std::size_t queue_depth() const;
  std::size_t in_flight() const;

 private:
  void release(std::size_t index);

  std::vector<nn::SegmentationNet> replicas_;
  std::vector<bool> busy_;
  std::size_t queue_capacity_;
  std::size_t waiting_ = 0;
  mutable std::mutex mutex_;
  std::condition_variable available_;
};

// ---- service -------------------------------------------------------------------

struct ServiceConfig {
  std::string host = "0.0.0.0";
  int port = 8080;
  std::optional<std::filesystem::path> model_path;
  std::size_t max_bytes = 10 * 1024 * 1024;
  std::size_t pool_size = 1;
  std::size_t queue_capacity = 8;
  int retry_after_s = 1;
  std::filesystem::path storage_root = "service_storage";
  std::string public_url;  ///< defaults to http://<host>:<port>/v1/files
  PostprocessParams postprocess;
  data::TransformParams transform;

  void validate() const;
};

struct HealthStatus {
  bool ready = false;
  std::string status;  ///< "ok" or "degraded"
  std::string model_checksum;
  std::string manifest_checksum;
  std::string architecture;
  std::size_t queue_depth = 0;
  std::size_t in_flight = 0;
  std::size_t replicas = 0;
  double uptime_s = 0.0;
  std::uint64_t requests = 0;
  std::uint64_t inferences = 0;
};

class BackgroundRemovalService {
 public:
  /// Loads `config.pool_size` replicas from `config.model_path`. Without a
  /// model path the service starts degraded and refuses inference.
  BackgroundRemovalService(ServiceConfig config, std::unique_ptr<Storage> storage,
                           std::unique_ptr<Fetcher> fetcher = std::make_unique<HttpFetcher>());

  RemovalResponse handle_remove_background(const RemovalRequest& request);
  HealthStatus health() const;

  const ServiceConfig& config() const { return config_; }
  Storage& storage() { return *storage_; }

 private:
  Mask infer(const Image& image, Timings& timings);

  ServiceConfig config_;
  std::unique_ptr<Storage> storage_;
  std::unique_ptr<Fetcher> fetcher_;
  std::unique_ptr<ReplicaPool> pool_;
  std::string model_checksum_;
  std::string manifest_checksum_;
  std::string architecture_;
  std::chrono::steady_clock::time_point started_;
  std::atomic<std::uint64_t> requests_{0};
  std::atomic<std::uint64_t> inferences_{0};
};

/// POST /v1/remove, GET /v1/health and GET /v1/files/<name> (stored results).
void register_routes(httplib::Server& server, BackgroundRemovalService& service);

/// Blocks serving until the process is stopped.
void run_server(const ServiceConfig& config);

}  // namespace basnet::service
