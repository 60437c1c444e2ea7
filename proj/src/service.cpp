#include "ctxsense/service.hpp"

#include <condition_variable>
#include <ctime>
#include <iomanip>
#include <random>
#include <sstream>
#include <thread>

#include <Eigen/Dense>
#include <httplib.h>

namespace ctxsense {

namespace {

using json = nlohmann::json;

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t secs = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&secs, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

/// Mutual exclusion that admits waiters in arrival order.
class FifoLock {
 public:
  void lock() {
    std::unique_lock guard(mutex_);
    const std::uint64_t ticket = next_++;
    cv_.wait(guard, [&] { return serving_ == ticket; });
  }
  void unlock() {
    {
      std::lock_guard guard(mutex_);
      ++serving_;
    }
    cv_.notify_all();
  }

 private:
  std::mutex mutex_;
  std::condition_variable cv_;
  std::uint64_t next_ = 0;
  std::uint64_t serving_ = 0;
};

json landmark_summary(const SenseGaussian& s) {
  json j{{"mean", s.dist.mean.values}, {"variance", s.dist.variance}, {"is_new", s.is_new}};
  j["last_update"] = s.last_update == kNeverUpdated ? json(nullptr) : json(s.last_update);
  return j;
}

template <typename T>
T field_or_400(const json& body, const char* key) {
  try {
    return body.at(key).get<T>();
  } catch (const json::exception&) {
    throw ServiceError(400, std::string("field '") + key + "' is missing or has the wrong type");
  }
}

}  // namespace

std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  std::string tok;
  while (in >> tok) out.push_back(std::move(tok));
  return out;
}

// ---------------------------------------------------------------- projection

Projection Projection::of_senses(const SenseInventory& inventory, const std::vector<std::string>& labels) {
  const std::size_t d = inventory.dim();
  std::vector<const Vec*> points;
  for (const auto& label : labels) {
    for (const auto& s : inventory.senses(label)) points.push_back(&s.vector);
  }
  Projection p;
  p.origin.assign(d, 0.0);
  for (const Vec* v : points) {
    for (std::size_t i = 0; i < d; ++i) p.origin[i] += (*v)[i] / static_cast<double>(points.size());
  }
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  for (const Vec* v : points) {
    Eigen::VectorXd c(static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < d; ++i) c(static_cast<Eigen::Index>(i)) = (*v)[i] - p.origin[i];
    cov += c * c.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  auto axis = [&](Eigen::Index col) {
    Eigen::VectorXd e = solver.eigenvectors().col(col);
    Eigen::Index arg = 0;
    e.cwiseAbs().maxCoeff(&arg);
    if (e(arg) < 0.0) e = -e;  // fixed sign so the picture does not flip
    return Vec(e.data(), e.data() + e.size());
  };
  const auto n = static_cast<Eigen::Index>(d);
  p.axis_x = axis(n - 1);
  p.axis_y = axis(n - 2);
  return p;
}

std::pair<double, double> Projection::apply(const Vec& v) const {
  double x = 0.0, y = 0.0;
  for (std::size_t i = 0; i < origin.size(); ++i) {
    x += (v[i] - origin[i]) * axis_x[i];
    y += (v[i] - origin[i]) * axis_y[i];
  }
  return {x, y};
}

// ---------------------------------------------------------------- core

struct ServiceCore::Entry {
  std::string id;
  std::string created_at;
  std::string inventory_name;
  Projection projection;
  FifoLock turn_lock;
  std::unique_ptr<Session> session;  // guarded by turn_lock

  mutable std::mutex published_mutex;
  std::shared_ptr<const Session> published;  // state after the last completed turn

  std::shared_ptr<const Session> view() const {
    std::lock_guard guard(published_mutex);
    return published;
  }
  void publish() {
    auto copy = std::make_shared<const Session>(*session);
    std::lock_guard guard(published_mutex);
    published = std::move(copy);
  }
};

namespace {

json handle_json(const std::string& id, const std::string& created_at, const std::string& inventory,
                 const Session& s) {
  return {{"id", id},
          {"created_at", created_at},
          {"inventory", inventory},
          {"config", s.config()},
          {"targets", s.targets()},
          {"turn", s.turns()},
          {"particle_count", s.target_count()}};
}

json turn_json(const std::string& id, const Session& s) {
  json confidences = json::object();
  json best = json::object();
  const Estimate estimate = s.best_estimate();
  for (const auto& label : s.targets()) {
    confidences[label] = s.confidence(label);
    auto it = estimate.assignments.find(label);
    best[label] = it == estimate.assignments.end() ? json(nullptr) : json(it->second);
  }
  return {{"id", id},
          {"turn", s.turns()},
          {"time", s.time()},
          {"confidences", std::move(confidences)},
          {"best_estimate", std::move(best)}};
}

}  // namespace

ServiceCore::ServiceCore() : id_salt_(std::random_device{}()) {}
ServiceCore::~ServiceCore() = default;

void ServiceCore::add_inventory(const std::string& name, std::shared_ptr<const SenseInventory> inventory) {
  std::lock_guard guard(mutex_);
  inventories_[name] = std::move(inventory);
}

std::shared_ptr<const SenseInventory> ServiceCore::resolve_inventory(const json& body) {
  if (body.contains("embeddings") || body.contains("senses")) {
    const auto embeddings = field_or_400<std::string>(body, "embeddings");
    const std::string key = "file:" + embeddings + "|" + body.value("senses", std::string());
    {
      std::lock_guard guard(mutex_);
      if (auto it = inventories_.find(key); it != inventories_.end()) return it->second;
    }
    std::shared_ptr<const SenseInventory> inv;
    try {
      const VectorStore store = load_vectors(embeddings);
      inv = std::make_shared<const SenseInventory>(
          body.contains("senses") ? load_sense_inventory(body.at("senses").get<std::string>(), store)
                                  : build_inventory(store));
    } catch (const LoadError& e) {
      throw ServiceError(404, std::string("cannot load inventory: ") + e.what());
    }
    std::lock_guard guard(mutex_);
    return inventories_.emplace(key, inv).first->second;
  }
  const std::string name = body.contains("inventory") ? field_or_400<std::string>(body, "inventory")
                                                      : std::string("default");
  std::lock_guard guard(mutex_);
  auto it = inventories_.find(name);
  if (it == inventories_.end()) throw ServiceError(404, "unknown inventory '" + name + "'");
  return it->second;
}

json ServiceCore::create_session(const json& body) {
  if (!body.is_object()) throw ServiceError(400, "request body must be a JSON object");
  auto inventory = resolve_inventory(body);
  const std::string inventory_name = body.value("inventory", std::string("default"));
  if (body.contains("withheld")) {
    if (!body.at("withheld").is_array()) throw ServiceError(400, "'withheld' must be a list of [label, sense]");
    for (const auto& pair : body.at("withheld")) {
      if (!pair.is_array() || pair.size() != 2 || !pair[0].is_string() || !pair[1].is_string()) {
        throw ServiceError(400, "'withheld' entries are [label, sense] pairs");
      }
      const auto label = pair[0].get<std::string>();
      const auto sense = pair[1].get<std::string>();
      if (!inventory->find_sense(label, sense)) {
        throw ServiceError(400, "cannot withhold unknown sense '" + label + "#" + sense + "'");
      }
      try {
        inventory = std::make_shared<const SenseInventory>(inventory->without_sense(label, sense));
      } catch (const Error& e) {
        throw ServiceError(400, e.what());
      }
    }
  }

  auto entry = std::make_shared<Entry>();
  entry->created_at = utc_timestamp();
  entry->inventory_name = inventory_name;
  try {
    if (body.contains("snapshot")) {
      entry->session = std::make_unique<Session>(Session::restore(body.at("snapshot"), inventory));
    } else {
      SessionConfig cfg;
      if (body.contains("config")) cfg = body.at("config").get<SessionConfig>();
      if (!body.contains("targets") || !body.at("targets").is_array()) {
        throw ServiceError(400, "'targets' must be a list of labels");
      }
      std::vector<std::string> targets;
      for (const auto& t : body.at("targets")) {
        if (!t.is_string()) throw ServiceError(400, "'targets' must be a list of labels");
        targets.push_back(t.get<std::string>());
      }
      entry->session = std::make_unique<Session>(cfg, inventory, std::move(targets));
    }
  } catch (const ServiceError&) {
    throw;
  } catch (const Error& e) {
    throw ServiceError(400, e.what());
  } catch (const json::exception& e) {
    throw ServiceError(400, e.what());
  }
  entry->projection = Projection::of_senses(*inventory, entry->session->targets());
  entry->publish();

  std::lock_guard guard(mutex_);
  std::ostringstream id;
  id << std::hex << std::setw(8) << std::setfill('0') << (id_salt_ & 0xffffffffu) << '-' << std::dec
     << next_id_++;
  entry->id = id.str();
  sessions_.emplace(entry->id, entry);
  return handle_json(entry->id, entry->created_at, entry->inventory_name, *entry->session);
}

std::shared_ptr<ServiceCore::Entry> ServiceCore::find(std::string_view id) const {
  std::lock_guard guard(mutex_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw ServiceError(404, "unknown session '" + std::string(id) + "'");
  return it->second;
}

json ServiceCore::post_utterance(std::string_view id, const json& body) {
  auto entry = find(id);
  if (!body.is_object()) throw ServiceError(400, "request body must be a JSON object");
  Utterance utt;
  try {
    utt.role = parse_role(field_or_400<std::string>(body, "role"));
  } catch (const ServiceError&) {
    throw;
  } catch (const Error& e) {
    throw ServiceError(400, e.what());
  }
  if (body.contains("tokens")) {
    utt.tokens = field_or_400<std::vector<std::string>>(body, "tokens");
  } else {
    utt.tokens = split_whitespace(field_or_400<std::string>(body, "text"));
  }
  if (utt.tokens.empty()) throw ServiceError(422, "utterance has no tokens");

  std::lock_guard turn(entry->turn_lock);
  Session& s = *entry->session;
  if (body.contains("expected_turn") &&
      field_or_400<std::size_t>(body, "expected_turn") != s.turns()) {
    throw ServiceError(409, "expected turn " + body.at("expected_turn").dump() + " but session is at turn " +
                                std::to_string(s.turns()));
  }
  utt.t = body.contains("t") ? field_or_400<TimeIndex>(body, "t") : static_cast<TimeIndex>(s.turns());
  if (s.turns() > 0 && utt.t < s.time()) {
    throw ServiceError(409, "turn time " + std::to_string(utt.t) + " is before " + std::to_string(s.time()));
  }
  try {
    s.process_turn(utt);
  } catch (const EmptyUtteranceError& e) {
    throw ServiceError(422, e.what());
  } catch (const Error& e) {
    throw ServiceError(400, e.what());
  }
  entry->publish();
  return turn_json(entry->id, s);
}

json ServiceCore::state(std::string_view id) const {
  auto entry = find(id);
  auto s = entry->view();
  json points = json::array();
  for (const auto& p : s->particles()) {
    const auto [x, y] = entry->projection.apply(p.context);
    points.push_back({{"x", x}, {"y", y}, {"weight", p.weight}, {"assignments", p.assignments}});
  }
  return {{"id", entry->id},
          {"turn", s->turns()},
          {"snapshot", s->snapshot()},
          {"projection",
           {{"origin", entry->projection.origin},
            {"axes", {entry->projection.axis_x, entry->projection.axis_y}},
            {"points", std::move(points)}}}};
}

json ServiceCore::confidences(std::string_view id, std::string_view label) const {
  auto entry = find(id);
  auto s = entry->view();
  if (label.empty()) throw ServiceError(400, "query parameter 'label' is required");
  const auto& targets = s->targets();
  if (std::find(targets.begin(), targets.end(), label) == targets.end()) {
    throw ServiceError(400, "'" + std::string(label) + "' is not a target label of this session");
  }
  json groups = json::object();
  for (const auto& [sense, land] : s->group_representatives(label)) groups[sense] = landmark_summary(land);
  return {{"id", entry->id}, {"turn", s->turns()}, {"report", s->confidence(label)}, {"groups", std::move(groups)}};
}

json ServiceCore::remove(std::string_view id) {
  std::lock_guard guard(mutex_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw ServiceError(404, "unknown session '" + std::string(id) + "'");
  sessions_.erase(it);
  return {{"id", std::string(id)}, {"deleted", true}};
}

std::size_t ServiceCore::session_count() const {
  std::lock_guard guard(mutex_);
  return sessions_.size();
}

// ---------------------------------------------------------------- http

struct HttpService::Impl {
  ServiceCore& core;
  httplib::Server server;
  std::thread thread;

  explicit Impl(ServiceCore& c) : core(c) {
    server.set_tcp_nodelay(true);
    server.set_keep_alive_max_count(100000);
  }

  template <typename F>
  httplib::Server::Handler wrap(int ok_status, F f) {
    return [this, ok_status, f](const httplib::Request& req, httplib::Response& res) {
      try {
        const json out = f(req);
        res.status = ok_status;
        res.set_content(out.dump(), "application/json");
      } catch (const ServiceError& e) {
        res.status = e.status();
        res.set_content(json{{"error", e.what()}, {"status", e.status()}}.dump(), "application/json");
      } catch (const std::exception& e) {
        res.status = 500;
        res.set_content(json{{"error", e.what()}, {"status", 500}}.dump(), "application/json");
      }
    };
  }

  static json parse_body(const httplib::Request& req) {
    try {
      return json::parse(req.body.empty() ? std::string("{}") : req.body);
    } catch (const json::exception& e) {
      throw ServiceError(400, std::string("request body is not valid JSON: ") + e.what());
    }
  }

  void mount() {
    server.Post("/sessions", wrap(201, [this](const httplib::Request& req) {
                  return core.create_session(parse_body(req));
                }));
    server.Post(R"(/sessions/([^/]+)/utterances)", wrap(200, [this](const httplib::Request& req) {
                  return core.post_utterance(req.matches[1].str(), parse_body(req));
                }));
    server.Get(R"(/sessions/([^/]+)/state)", wrap(200, [this](const httplib::Request& req) {
                 return core.state(req.matches[1].str());
               }));
    server.Get(R"(/sessions/([^/]+)/confidences)", wrap(200, [this](const httplib::Request& req) {
                 return core.confidences(req.matches[1].str(), req.get_param_value("label"));
               }));
    server.Delete(R"(/sessions/([^/]+))", wrap(200, [this](const httplib::Request& req) {
                    return core.remove(req.matches[1].str());
                  }));
    server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (!res.body.empty()) return httplib::Server::HandlerResponse::Unhandled;
      const std::string msg = res.status == 404 ? "no such endpoint" : "request failed";
      res.set_content(json{{"error", msg}, {"status", res.status}}.dump(), "application/json");
      return httplib::Server::HandlerResponse::Handled;
    });
  }
};

HttpService::HttpService(ServiceCore& core) : impl_(std::make_unique<Impl>(core)) { impl_->mount(); }

HttpService::~HttpService() { stop(); }

int HttpService::bind(const std::string& host, int port) {
  if (port == 0) {
    port_ = impl_->server.bind_to_any_port(host);
  } else {
    port_ = impl_->server.bind_to_port(host, port) ? port : -1;
  }
  if (port_ <= 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
  return port_;
}

void HttpService::listen() { impl_->server.listen_after_bind(); }

void HttpService::start() {
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

void HttpService::stop() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

// ---------------------------------------------------------------- driver

struct HttpDriver::Impl {
  httplib::Client client;
  Impl(const std::string& host, int port) : client(host, port) {
    client.set_read_timeout(300, 0);
    client.set_keep_alive(true);
    client.set_tcp_nodelay(true);
  }
};

HttpDriver::HttpDriver(std::string host, int port, std::string inventory)
    : impl_(std::make_unique<Impl>(host, port)), inventory_(std::move(inventory)) {}

HttpDriver::~HttpDriver() = default;

json HttpDriver::request(const std::string& method, const std::string& path, const json& body, int* status) {
  httplib::Result res{nullptr, httplib::Error::Unknown};
  const std::string payload = body.is_null() ? std::string() : body.dump();
  if (method == "GET") {
    res = impl_->client.Get(path);
  } else if (method == "POST") {
    res = impl_->client.Post(path, payload, "application/json");
  } else if (method == "DELETE") {
    res = impl_->client.Delete(path);
  } else {
    throw Error("unsupported method " + method);
  }
  if (!res) throw Error(method + " " + path + " failed: " + httplib::to_string(res.error()));
  json out = res->body.empty() ? json(nullptr) : json::parse(res->body);
  if (status) {
    *status = res->status;
  } else if (res->status >= 300) {
    throw Error(method + " " + path + " returned " + std::to_string(res->status) + ": " + res->body);
  }
  return out;
}

void HttpDriver::open(const SessionConfig& cfg, const std::vector<std::string>& targets,
                      const std::vector<std::pair<std::string, std::string>>& removed) {
  json withheld = json::array();
  for (const auto& [label, sense] : removed) withheld.push_back({label, sense});
  const json handle = request(
      "POST", "/sessions",
      {{"inventory", inventory_}, {"config", cfg}, {"targets", targets}, {"withheld", withheld}});
  id_ = handle.at("id").get<std::string>();
}

void HttpDriver::post(const Utterance& utt) {
  std::string text;
  for (const auto& tok : utt.tokens) {
    if (!text.empty()) text += ' ';
    text += tok;
  }
  request("POST", "/sessions/" + id_ + "/utterances", {{"role", to_string(utt.role)}, {"text", text}, {"t", utt.t}});
}

ConfidenceReport HttpDriver::confidence(const std::string& label) {
  return request("GET", "/sessions/" + id_ + "/confidences?label=" + httplib::detail::encode_query_param(label))
      .at("report")
      .get<ConfidenceReport>();
}

std::map<std::string, SenseGaussian> HttpDriver::representatives(const std::string& label) {
  const json groups =
      request("GET", "/sessions/" + id_ + "/confidences?label=" + httplib::detail::encode_query_param(label))
          .at("groups");
  std::map<std::string, SenseGaussian> out;
  for (const auto& [sense, g] : groups.items()) {
    SenseGaussian s;
    s.sense_id = sense;
    g.at("mean").get_to(s.dist.mean.values);
    g.at("variance").get_to(s.dist.variance);
    g.at("is_new").get_to(s.is_new);
    s.last_update = g.at("last_update").is_null() ? kNeverUpdated : g.at("last_update").get<TimeIndex>();
    out.emplace(sense, std::move(s));
  }
  return out;
}

void HttpDriver::close() {
  if (id_.empty()) return;
  request("DELETE", "/sessions/" + id_);
  id_.clear();
}

}  // namespace ctxsense
