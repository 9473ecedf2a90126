#include "mdgen/service.hpp"

#include <cstdio>
#include <random>
#include <sstream>

#include <httplib.h>

#include "mdgen/error.hpp"

namespace mdgen {

std::string_view retriever_name(RetrieverKind k) { return k == RetrieverKind::dense ? "dense" : "bm25"; }

std::optional<RetrieverKind> retriever_from_name(std::string_view name) {
    if (name == "bm25") return RetrieverKind::bm25;
    if (name == "dense") return RetrieverKind::dense;
    return std::nullopt;
}

std::string random_session_id() {
    std::random_device rd;
    std::string id;
    id.reserve(32);
    for (int i = 0; i < 4; ++i) {
        char buf[9];
        std::snprintf(buf, sizeof buf, "%08x", static_cast<unsigned>(rd()));
        id += buf;
    }
    return id;
}

struct SessionService::Session {
    std::string id;
    RetrieverKind kind = RetrieverKind::bm25;
    mutable std::mutex mu;
    Clock::time_point last_access;
    std::vector<std::string> queries;
    std::vector<Eigen::VectorXd> query_vectors;  // dense mode only
    std::vector<std::vector<std::string>> returned;
    std::vector<FeedbackEntry> feedback;
    std::set<std::string> disliked;
};

namespace {

ApiResponse error(int status, std::string message) {
    ApiResponse r;
    r.status = status;
    r.body["error"] = std::move(message);
    return r;
}

std::vector<std::string> split_path(const std::string& path) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : path) {
        if (c == '/') {
            if (!cur.empty()) parts.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) parts.push_back(std::move(cur));
    return parts;
}

}  // namespace

SessionService::SessionService(ServiceResources resources, ServiceConfig config,
                               std::function<Clock::time_point()> now)
    : res_(resources), cfg_(config), now_(std::move(now)) {
    if (!res_.db || !res_.bm25) throw InvalidArgument("service needs a database and a BM25 index");
    if (res_.provider && res_.items && res_.provider->dim() != res_.items->dim()) {
        throw InvalidArgument("embedding provider and item table dimensions differ");
    }
    if (res_.adapters && res_.dense_available()) {
        const auto& music = res_.adapters->music_side();
        if (res_.adapters->text.in_dim() != res_.provider->dim() || music.in_dim() != res_.items->dim()) {
            throw InvalidArgument("adapter input dims do not match the embeddings");
        }
        projected_ = res_.items->transformed([&](const Eigen::VectorXd& v) { return forward(music, v); });
    }
}

SessionService::~SessionService() = default;

std::shared_ptr<SessionService::Session> SessionService::find_session(const std::string& id) {
    std::shared_lock lock(mu_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) return nullptr;
    return it->second;
}

std::shared_ptr<const SessionService::Session> SessionService::find_session(const std::string& id) const {
    std::shared_lock lock(mu_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) return nullptr;
    return it->second;
}

std::size_t SessionService::evict_expired() {
    const auto now = now_();
    std::unique_lock lock(mu_);
    std::size_t dropped = 0;
    for (auto it = sessions_.begin(); it != sessions_.end();) {
        bool expired;
        {
            std::lock_guard slock(it->second->mu);
            expired = now - it->second->last_access > cfg_.ttl;
        }
        if (expired) {
            it = sessions_.erase(it);
            ++dropped;
        } else {
            ++it;
        }
    }
    return dropped;
}

std::size_t SessionService::session_count() const {
    std::shared_lock lock(mu_);
    return sessions_.size();
}

std::optional<SessionSnapshot> SessionService::snapshot(const std::string& session_id) const {
    auto s = find_session(session_id);
    if (!s) return std::nullopt;
    std::lock_guard lock(s->mu);
    return SessionSnapshot{s->id, s->kind, s->queries, s->returned, s->feedback, s->disliked};
}

ApiResponse SessionService::create_session(const nlohmann::json& body) {
    evict_expired();
    std::string name(retriever_name(cfg_.default_retriever));
    if (body.is_object() && body.contains("retriever")) {
        if (!body["retriever"].is_string()) return error(400, "retriever must be a string");
        name = body["retriever"].get<std::string>();
    } else if (!body.is_null() && !body.is_object()) {
        return error(400, "request body must be a JSON object");
    }
    const auto kind = retriever_from_name(name);
    if (!kind) return error(400, "unknown retriever: " + name);
    if (*kind == RetrieverKind::dense && !res_.dense_available()) {
        return error(400, "dense retrieval is unavailable: no embeddings loaded");
    }
    auto s = std::make_shared<Session>();
    s->kind = *kind;
    s->last_access = now_();
    {
        std::unique_lock lock(mu_);
        do {
            s->id = random_session_id();
        } while (sessions_.count(s->id));
        sessions_.emplace(s->id, s);
    }
    ApiResponse r;
    r.status = 201;
    r.body["session_id"] = s->id;
    r.body["retriever"] = std::string(retriever_name(*kind));
    return r;
}

Eigen::VectorXd SessionService::pool(const Session& s, const std::string& text) const {
    ChatState state;
    const auto& items = *res_.items;
    for (std::size_t t = 0; t < s.query_vectors.size(); ++t) {
        state.history.emplace_back(HistoryKind::query, s.query_vectors[t]);
        Eigen::VectorXd music = Eigen::VectorXd::Zero(items.dim());
        std::size_t used = 0;
        for (const auto& id : s.returned[t]) {
            if (s.disliked.count(id)) continue;
            if (auto i = items.find(id)) {
                music += items.row(*i);
                ++used;
            }
        }
        if (used > 0 && music.norm() > 1e-12) state.history.emplace_back(HistoryKind::music, music.normalized());
    }
    state.current = res_.provider->embed_text(text);
    return chat_embedding(state);
}

Eigen::VectorXd SessionService::pooled_query(const std::string& session_id, const std::string& text) const {
    auto s = find_session(session_id);
    if (!s) throw InvalidArgument("unknown session");
    if (!res_.dense_available()) throw InvalidArgument("dense retrieval is unavailable");
    std::lock_guard lock(s->mu);
    return pool(*s, text);
}

nlohmann::ordered_json SessionService::run_dense(Session& s, const std::string& text, std::size_t k) const {
    Eigen::VectorXd q = pool(s, text);
    if (res_.adapters) q = forward(res_.adapters->text, q);
    const auto ranked = knn_search(q, projected_ ? *projected_ : *res_.items, k);
    s.query_vectors.push_back(res_.provider->embed_text(text));
    auto results = nlohmann::ordered_json::array();
    std::vector<std::string> ids;
    for (const auto& [id, score] : ranked) {
        nlohmann::ordered_json row;
        row["track_id"] = id;
        if (auto t = res_.db->find(id)) {
            row["title"] = res_.db->track(*t).title;
            row["artist_name"] = res_.db->track(*t).artist_name;
        } else {
            row["title"] = "";
            row["artist_name"] = "";
        }
        row["score"] = score;
        results.push_back(std::move(row));
        ids.push_back(id);
    }
    s.returned.push_back(std::move(ids));
    return results;
}

nlohmann::ordered_json SessionService::run_bm25(Session& s, const std::string& text, std::size_t k) const {
    std::string query;
    for (const auto& q : s.queries) {
        query += q;
        query += ' ';
    }
    query += text;
    auto results = nlohmann::ordered_json::array();
    std::vector<std::string> ids;
    for (const auto& [id, score] : res_.bm25->search(query, k)) {
        const auto& t = res_.db->track(res_.db->index_of(id));
        nlohmann::ordered_json row;
        row["track_id"] = id;
        row["title"] = t.title;
        row["artist_name"] = t.artist_name;
        row["score"] = score;
        results.push_back(std::move(row));
        ids.push_back(id);
    }
    s.returned.push_back(std::move(ids));
    return results;
}

ApiResponse SessionService::post_turn(const std::string& session_id, const nlohmann::json& body) {
    auto s = find_session(session_id);
    if (!s) return error(404, "unknown session: " + session_id);
    if (!body.is_object()) return error(400, "request body must be a JSON object");
    if (!body.contains("text") || !body["text"].is_string()) return error(400, "text must be a string");
    const auto text = body["text"].get<std::string>();
    if (text.find_first_not_of(" \t\r\n") == std::string::npos) return error(400, "text must be nonempty");
    std::size_t k = cfg_.default_k;
    if (body.contains("k")) {
        if (!body["k"].is_number_integer()) return error(400, "k must be an integer");
        const auto kk = body["k"].get<long long>();
        if (kk < 1 || static_cast<std::size_t>(kk) > cfg_.max_k) {
            return error(400, "k must be in [1, " + std::to_string(cfg_.max_k) + "]");
        }
        k = static_cast<std::size_t>(kk);
    }

    std::lock_guard lock(s->mu);
    if (now_() - s->last_access > cfg_.ttl) return error(404, "session expired: " + session_id);
    s->last_access = now_();
    nlohmann::ordered_json results;
    try {
        results = s->kind == RetrieverKind::dense ? run_dense(*s, text, k) : run_bm25(*s, text, k);
    } catch (const NumericError& e) {
        return error(422, e.what());
    }
    s->queries.push_back(text);
    ApiResponse r;
    r.body["turn_index"] = s->queries.size();
    r.body["results"] = std::move(results);
    return r;
}

ApiResponse SessionService::post_feedback(const std::string& session_id, const nlohmann::json& body) {
    auto s = find_session(session_id);
    if (!s) return error(404, "unknown session: " + session_id);
    if (!body.is_object()) return error(400, "request body must be a JSON object");
    if (!body.contains("track_id") || !body["track_id"].is_string()) return error(400, "track_id must be a string");
    if (!body.contains("liked") || !body["liked"].is_boolean()) return error(400, "liked must be a boolean");
    const auto track_id = body["track_id"].get<std::string>();
    if (!res_.db->find(track_id)) return error(404, "unknown track: " + track_id);
    const bool liked = body["liked"].get<bool>();

    std::lock_guard lock(s->mu);
    if (now_() - s->last_access > cfg_.ttl) return error(404, "session expired: " + session_id);
    s->last_access = now_();
    s->feedback.push_back({track_id, liked, static_cast<int>(s->queries.size())});
    if (liked) {
        s->disliked.erase(track_id);
    } else {
        s->disliked.insert(track_id);
    }
    ApiResponse r;
    r.body["ok"] = true;
    r.body["feedback_count"] = s->feedback.size();
    return r;
}

ApiResponse SessionService::get_track(const std::string& track_id) const {
    auto t = res_.db->find(track_id);
    if (!t) return error(404, "unknown track: " + track_id);
    ApiResponse r;
    r.body = nlohmann::ordered_json::parse(to_json(res_.db->track(*t)).dump());
    return r;
}

ApiResponse SessionService::health() const {
    ApiResponse r;
    r.body["status"] = "ok";
    return r;
}

ApiResponse SessionService::handle(const std::string& method, const std::string& path, const std::string& body) {
    const auto parts = split_path(path);
    auto parse_body = [&](nlohmann::json& out) -> std::optional<ApiResponse> {
        if (body.find_first_not_of(" \t\r\n") == std::string::npos) {
            out = nullptr;
            return std::nullopt;
        }
        try {
            out = nlohmann::json::parse(body);
        } catch (const nlohmann::json::exception&) {
            return error(400, "request body is not valid JSON");
        }
        return std::nullopt;
    };
    auto expect = [&](const char* m) { return method == m; };

    if (parts.size() < 2 || parts[0] != "api") return error(404, "not found: " + path);
    nlohmann::json j;
    if (parts.size() == 2 && parts[1] == "health") {
        return expect("GET") ? health() : error(405, "method not allowed");
    }
    if (parts.size() == 3 && parts[1] == "tracks") {
        return expect("GET") ? get_track(parts[2]) : error(405, "method not allowed");
    }
    if (parts[1] == "sessions") {
        if (parts.size() == 2) {
            if (!expect("POST")) return error(405, "method not allowed");
            if (auto e = parse_body(j)) return *e;
            return create_session(j);
        }
        if (parts.size() == 4 && (parts[3] == "turns" || parts[3] == "feedback")) {
            if (!expect("POST")) return error(405, "method not allowed");
            if (auto e = parse_body(j)) return *e;
            return parts[3] == "turns" ? post_turn(parts[2], j) : post_feedback(parts[2], j);
        }
    }
    return error(404, "not found: " + path);
}

// ---------------------------------------------------------------------------
// HTTP binding
// ---------------------------------------------------------------------------

struct HttpServer::Impl {
    SessionService& service;
    ServerOptions options;
    httplib::Server server;
    int port = -1;

    Impl(SessionService& s, ServerOptions o) : service(s), options(std::move(o)) {}
};

HttpServer::HttpServer(SessionService& service, ServerOptions options)
    : impl_(std::make_unique<Impl>(service, std::move(options))) {
    auto& srv = impl_->server;
    const std::size_t threads = std::max<std::size_t>(1, impl_->options.threads);
    srv.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
    if (impl_->options.static_dir) {
        if (!srv.set_mount_point("/", impl_->options.static_dir->string())) {
            throw DataError("static directory not found: " + impl_->options.static_dir->string());
        }
    }
    auto dispatch = [this](const char* method) {
        return [this, method](const httplib::Request& req, httplib::Response& res) {
            ApiResponse r;
            try {
                r = impl_->service.handle(method, req.path, req.body);
            } catch (const std::exception& e) {
                r.status = 500;
                r.body = {{"error", e.what()}};
            }
            res.status = r.status;
            res.set_content(r.body.dump(), "application/json");
        };
    };
    srv.Get(".*", dispatch("GET"));
    srv.Post(".*", dispatch("POST"));
    srv.Put(".*", dispatch("PUT"));
    srv.Delete(".*", dispatch("DELETE"));
    srv.Patch(".*", dispatch("PATCH"));
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind() {
    auto& o = impl_->options;
    if (o.port == 0) {
        impl_->port = impl_->server.bind_to_any_port(o.host);
    } else {
        impl_->port = impl_->server.bind_to_port(o.host, o.port) ? o.port : -1;
    }
    if (impl_->port < 0) throw TransportError("cannot bind " + o.host + ":" + std::to_string(o.port));
    return impl_->port;
}

void HttpServer::serve() {
    if (impl_->port < 0) throw TransportError("serve() called before bind()");
    impl_->server.listen_after_bind();
}

void HttpServer::stop() {
    if (impl_) impl_->server.stop();
}

}  // namespace mdgen
