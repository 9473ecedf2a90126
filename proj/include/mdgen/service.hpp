#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "mdgen/adapter.hpp"
#include "mdgen/music_db.hpp"
#include "mdgen/retrieval.hpp"

namespace mdgen {

enum class RetrieverKind : std::uint8_t { bm25, dense };

std::string_view retriever_name(RetrieverKind k);
std::optional<RetrieverKind> retriever_from_name(std::string_view name);

/// Read-only state shared by all sessions. `provider` and `items` must both
/// be set for dense sessions; `adapters` is optional.
struct ServiceResources {
    const MusicDatabase* db = nullptr;
    const Bm25Index* bm25 = nullptr;
    const EmbeddingProvider* provider = nullptr;
    const EmbeddingTable* items = nullptr;
    const AdapterPair<double>* adapters = nullptr;

    bool dense_available() const { return provider != nullptr && items != nullptr; }
};

struct ServiceConfig {
    std::chrono::seconds ttl{3600};  // idle time before a session is evicted
    std::size_t default_k = 10;
    std::size_t max_k = 1000;
    RetrieverKind default_retriever = RetrieverKind::bm25;  // when the request names none
};

struct FeedbackEntry {
    std::string track_id;
    bool liked = false;
    int turn_index = 0;  // number of turns the session had when feedback arrived
};

/// Copy of a session's observable state, for inspection and tests.
struct SessionSnapshot {
    std::string session_id;
    RetrieverKind retriever = RetrieverKind::bm25;
    std::vector<std::string> queries;
    std::vector<std::vector<std::string>> returned;  // per turn
    std::vector<FeedbackEntry> feedback;
    std::set<std::string> disliked;
};

struct ApiResponse {
    int status = 200;
    nlohmann::ordered_json body;
};

/// Transport-independent session API. Every public call is thread-safe;
/// calls on one session are serialized by that session's mutex.
class SessionService {
public:
    using Clock = std::chrono::steady_clock;

    SessionService(ServiceResources resources, ServiceConfig config = {},
                   std::function<Clock::time_point()> now = Clock::now);
    ~SessionService();

    ApiResponse create_session(const nlohmann::json& body);
    ApiResponse post_turn(const std::string& session_id, const nlohmann::json& body);
    ApiResponse post_feedback(const std::string& session_id, const nlohmann::json& body);
    ApiResponse get_track(const std::string& track_id) const;
    ApiResponse health() const;

    /// Routes a request by method and path; the body is raw request text.
    ApiResponse handle(const std::string& method, const std::string& path, const std::string& body);

    /// Drops sessions idle for longer than the TTL; returns how many were dropped.
    std::size_t evict_expired();
    std::size_t session_count() const;
    std::optional<SessionSnapshot> snapshot(const std::string& session_id) const;

    /// Pooled chat vector a dense session would use for `text` as its next turn.
    Eigen::VectorXd pooled_query(const std::string& session_id, const std::string& text) const;

private:
    struct Session;
    std::shared_ptr<Session> find_session(const std::string& id);
    std::shared_ptr<const Session> find_session(const std::string& id) const;
    Eigen::VectorXd pool(const Session& s, const std::string& text) const;
    nlohmann::ordered_json run_bm25(Session& s, const std::string& text, std::size_t k) const;
    nlohmann::ordered_json run_dense(Session& s, const std::string& text, std::size_t k) const;

    ServiceResources res_;
    ServiceConfig cfg_;
    std::function<Clock::time_point()> now_;
    std::optional<EmbeddingTable> projected_;  // item table through the music adapter
    mutable std::shared_mutex mu_;
    std::unordered_map<std::string, std::shared_ptr<Session>> sessions_;
};

/// 32 lowercase hex characters from the OS entropy source.
std::string random_session_id();

struct ServerOptions {
    std::string host = "127.0.0.1";
    int port = 8080;  // 0 = any free port
    std::optional<std::filesystem::path> static_dir;
    std::size_t threads = 8;
};

/// httplib binding of SessionService. API routes live under /api; GET
/// requests outside /api are served from `static_dir` when set.
class HttpServer {
public:
    HttpServer(SessionService& service, ServerOptions options);
    ~HttpServer();
    HttpServer(const HttpServer&) = delete;
    HttpServer& operator=(const HttpServer&) = delete;

    /// Binds the socket; returns the bound port. Throws TransportError.
    int bind();
    /// Serves until stop(); call bind() first.
    void serve();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace mdgen
