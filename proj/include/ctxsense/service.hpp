#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctxsense/engine.hpp"
#include "ctxsense/error.hpp"
#include "ctxsense/harness.hpp"

namespace ctxsense {

/// A request the service refuses; `status()` is the HTTP status to return.
class ServiceError : public Error {
 public:
  ServiceError(int status, const std::string& what) : Error(what), status_(status) {}
  int status() const noexcept { return status_; }

 private:
  int status_;
};

/// Two principal axes of a label set's sense vectors, used to draw particle
/// contexts in the plane.
struct Projection {
  Vec origin;
  Vec axis_x;
  Vec axis_y;

  static Projection of_senses(const SenseInventory& inventory, const std::vector<std::string>& labels);
  std::pair<double, double> apply(const Vec& v) const;
};

/// Session registry and request handling, independent of any transport.
/// Every method returns the JSON response body or throws ServiceError.
class ServiceCore {
 public:
  ServiceCore();
  ~ServiceCore();
  ServiceCore(const ServiceCore&) = delete;
  ServiceCore& operator=(const ServiceCore&) = delete;

  void add_inventory(const std::string& name, std::shared_ptr<const SenseInventory> inventory);

  /// Body: {"inventory": name, "config": {...}, "targets": [...],
  ///        "withheld": [[label, sense], ...], "snapshot": {...}}.
  /// "inventory" may be replaced by {"embeddings": path, "senses": path}.
  /// With "snapshot", the session resumes from it and "config"/"targets"
  /// are taken from the snapshot.
  nlohmann::json create_session(const nlohmann::json& body);

  /// Body: {"role": "own"|"other", "text": "..."} or "tokens": [...];
  /// optional "t" (defaults to the number of turns so far) and
  /// "expected_turn" (409 unless it equals the number of turns so far when
  /// this request reaches the head of the session's queue).
  nlohmann::json post_utterance(std::string_view id, const nlohmann::json& body);

  nlohmann::json state(std::string_view id) const;
  nlohmann::json confidences(std::string_view id, std::string_view label) const;
  nlohmann::json remove(std::string_view id);

  std::size_t session_count() const;

 private:
  struct Entry;
  std::shared_ptr<Entry> find(std::string_view id) const;
  std::shared_ptr<const SenseInventory> resolve_inventory(const nlohmann::json& body);

  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<const SenseInventory>, std::less<>> inventories_;
  std::map<std::string, std::shared_ptr<Entry>, std::less<>> sessions_;
  std::uint64_t next_id_ = 1;
  std::uint64_t id_salt_ = 0;
};

/// HTTP/JSON front end for a ServiceCore.
class HttpService {
 public:
  explicit HttpService(ServiceCore& core);
  ~HttpService();
  HttpService(const HttpService&) = delete;
  HttpService& operator=(const HttpService&) = delete;

  /// Binds to `host:port`; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves until stop(); blocks the caller.
  void listen();
  /// Serves on a background thread.
  void start();
  void stop();
  int port() const noexcept { return port_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int port_ = 0;
};

/// Replays sessions through a running service, so the harness can compare
/// over-the-wire results with in-process ones.
class HttpDriver : public SessionDriver {
 public:
  HttpDriver(std::string host, int port, std::string inventory = "default");
  ~HttpDriver() override;

  void open(const SessionConfig& cfg, const std::vector<std::string>& targets,
            const std::vector<std::pair<std::string, std::string>>& removed) override;
  void post(const Utterance& utt) override;
  ConfidenceReport confidence(const std::string& label) override;
  std::map<std::string, SenseGaussian> representatives(const std::string& label) override;
  void close() override;

  /// Raw requests for callers that need the full response.
  nlohmann::json request(const std::string& method, const std::string& path,
                         const nlohmann::json& body = nullptr, int* status = nullptr);
  const std::string& session_id() const noexcept { return id_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::string inventory_;
  std::string id_;
};

std::vector<std::string> split_whitespace(std::string_view text);

}  // namespace ctxsense
