#include "mdgen/retrieval.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <unordered_set>

#include "mdgen/error.hpp"
#include "mdgen/http.hpp"
#include "mdgen/parallel.hpp"

namespace mdgen {

namespace {

bool by_score_then_id(const ScoredId& a, const ScoredId& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
}

std::vector<ScoredId> take_top(std::vector<ScoredId> scored, std::size_t k) {
    const std::size_t take = std::min(k, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(),
                      by_score_then_id);
    scored.resize(take);
    return scored;
}

std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

Eigen::VectorXd normalized(Eigen::VectorXd v, const char* what) {
    const double n = v.norm();
    if (!(n > 1e-12) || !std::isfinite(n)) throw NumericError(std::string(what) + " has zero norm");
    return v / n;
}

}  // namespace

// ---------------------------------------------------------------------------
// BM25
// ---------------------------------------------------------------------------

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : text) {
        const auto u = static_cast<unsigned char>(c);
        if (std::isalnum(u)) {
            cur.push_back(static_cast<char>(std::tolower(u)));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

Bm25Index Bm25Index::build(const std::vector<std::pair<std::string, std::string>>& docs, Bm25Params params) {
    if (!(params.k1 >= 0.0) || !(params.b >= 0.0 && params.b <= 1.0)) throw InvalidArgument("invalid BM25 parameters");
    Bm25Index index;
    index.params_ = params;
    std::unordered_set<std::string> seen;
    std::uint64_t total = 0;
    for (std::uint32_t d = 0; d < docs.size(); ++d) {
        const auto& [id, text] = docs[d];
        if (!seen.insert(id).second) throw InvalidArgument("duplicate document id: " + id);
        index.ids_.push_back(id);
        const auto toks = tokenize(text);
        index.lengths_.push_back(static_cast<std::uint32_t>(toks.size()));
        total += toks.size();
        std::map<std::string, std::uint32_t> tf;
        for (const auto& t : toks) ++tf[t];
        for (const auto& [term, count] : tf) index.postings_[term].push_back({d, count});
    }
    index.avg_len_ = docs.empty() ? 0.0 : static_cast<double>(total) / static_cast<double>(docs.size());
    return index;
}

std::size_t Bm25Index::document_frequency(const std::string& term) const {
    auto it = postings_.find(term);
    return it == postings_.end() ? 0 : it->second.size();
}

double Bm25Index::idf(const std::string& term) const {
    const double n = static_cast<double>(ids_.size());
    const double df = static_cast<double>(document_frequency(term));
    return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
}

std::vector<ScoredId> Bm25Index::search(std::string_view query, std::size_t k) const {
    if (ids_.empty()) throw InvalidArgument("BM25 index is empty");
    auto terms = tokenize(query);
    std::sort(terms.begin(), terms.end());
    terms.erase(std::unique(terms.begin(), terms.end()), terms.end());

    std::vector<double> scores(ids_.size(), 0.0);
    const double avg = avg_len_ > 0.0 ? avg_len_ : 1.0;
    for (const auto& term : terms) {
        auto it = postings_.find(term);
        if (it == postings_.end()) continue;
        const double w = idf(term);
        for (const auto& p : it->second) {
            const double tf = p.tf;
            const double norm = params_.k1 * (1.0 - params_.b + params_.b * lengths_[p.doc] / avg);
            scores[p.doc] += w * tf * (params_.k1 + 1.0) / (tf + norm);
        }
    }
    std::vector<ScoredId> hits;
    for (std::size_t d = 0; d < scores.size(); ++d) {
        if (scores[d] > 0.0) hits.emplace_back(ids_[d], scores[d]);
    }
    return take_top(std::move(hits), k);
}

std::string track_document(const TrackRecord& track, bool with_tags) {
    std::string doc = track.title + " by " + track.artist_name;
    if (with_tags) {
        for (const auto& t : track.tags) {
            if (t.category == AttributeCategory::track || t.category == AttributeCategory::artist) continue;
            doc += " ";
            doc += t.value;
        }
    }
    return doc;
}

Bm25Index build_track_index(const MusicDatabase& db, bool with_tags, Bm25Params params) {
    std::vector<std::pair<std::string, std::string>> docs;
    docs.reserve(db.size());
    for (const auto& t : db.tracks()) docs.emplace_back(t.track_id, track_document(t, with_tags));
    return Bm25Index::build(docs, params);
}

// ---------------------------------------------------------------------------
// Embedding tables and files
// ---------------------------------------------------------------------------

EmbeddingTable::EmbeddingTable(std::vector<std::string> ids, Eigen::MatrixXd vectors)
    : ids_(std::move(ids)), vectors_(std::move(vectors)) {
    if (static_cast<Eigen::Index>(ids_.size()) != vectors_.rows()) {
        throw InvalidArgument("embedding table: id count does not match rows");
    }
    index_.reserve(ids_.size());
    for (std::size_t i = 0; i < ids_.size(); ++i) {
        if (!index_.emplace(ids_[i], static_cast<Eigen::Index>(i)).second) {
            throw DataError("duplicate embedding id: " + ids_[i]);
        }
    }
}

std::optional<Eigen::Index> EmbeddingTable::find(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

void EmbeddingTable::normalize_rows() {
    for (Eigen::Index i = 0; i < vectors_.rows(); ++i) {
        const double n = vectors_.row(i).norm();
        if (!(n > 0.0) || !std::isfinite(n)) throw NumericError("embedding " + ids_[static_cast<std::size_t>(i)] + " has zero norm");
        vectors_.row(i) /= n;
    }
}

namespace {

constexpr std::array<char, 4> kEmbMagic = {'E', 'M', 'B', '1'};

std::uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw DataError("truncated embedding file");
    return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
}

void write_u32(std::ostream& out, std::uint32_t v) {
    const char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff), char((v >> 24) & 0xff)};
    out.write(b, 4);
}

}  // namespace

EmbeddingTable read_embeddings(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path.string());
    std::array<char, 4> magic{};
    if (!in.read(magic.data(), 4) || magic != kEmbMagic) throw DataError(path.string() + ": bad magic (expected EMB1)");
    const std::uint32_t dim = read_u32(in);
    if (dim == 0) throw DataError(path.string() + ": zero dimension");

    std::vector<std::string> ids;
    std::vector<float> values;
    for (;;) {
        unsigned char lb[2];
        in.read(reinterpret_cast<char*>(lb), 2);
        if (in.gcount() == 0 && in.eof()) break;
        if (in.gcount() != 2) throw DataError(path.string() + ": truncated record header");
        const std::size_t len = std::size_t(lb[0]) | std::size_t(lb[1]) << 8;
        std::string id(len, '\0');
        if (!in.read(id.data(), static_cast<std::streamsize>(len))) throw DataError(path.string() + ": truncated id");
        for (std::uint32_t d = 0; d < dim; ++d) {
            const std::uint32_t bits = read_u32(in);
            float f;
            static_assert(sizeof f == sizeof bits);
            std::memcpy(&f, &bits, sizeof f);
            values.push_back(f);
        }
        ids.push_back(std::move(id));
    }
    Eigen::MatrixXd m(static_cast<Eigen::Index>(ids.size()), static_cast<Eigen::Index>(dim));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = values[static_cast<std::size_t>(r * dim + c)];
    return EmbeddingTable(std::move(ids), std::move(m));
}

void write_embeddings(const EmbeddingTable& table, const std::filesystem::path& path) {
    if (table.dim() < 1) throw InvalidArgument("embedding table has no dimension");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(kEmbMagic.data(), 4);
    write_u32(out, static_cast<std::uint32_t>(table.dim()));
    for (std::size_t i = 0; i < table.size(); ++i) {
        const auto& id = table.ids()[i];
        if (id.size() > 0xffff) throw InvalidArgument("embedding id longer than 65535 bytes");
        const char lb[2] = {char(id.size() & 0xff), char((id.size() >> 8) & 0xff)};
        out.write(lb, 2);
        out.write(id.data(), static_cast<std::streamsize>(id.size()));
        for (Eigen::Index c = 0; c < table.dim(); ++c) {
            const float f = static_cast<float>(table.vectors()(static_cast<Eigen::Index>(i), c));
            std::uint32_t bits;
            std::memcpy(&bits, &f, sizeof bits);
            write_u32(out, bits);
        }
    }
    if (!out) throw DataError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Providers
// ---------------------------------------------------------------------------

HashEmbeddingProvider::HashEmbeddingProvider(Eigen::Index dim, std::uint64_t salt) : dim_(dim), salt_(salt) {
    if (dim < 1) throw InvalidArgument("embedding dim must be >= 1");
}

std::vector<std::string> HashEmbeddingProvider::tokens(std::string_view text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        std::size_t j = i;
        while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
        std::string_view tok = text.substr(i, j - i);
        while (!tok.empty() && std::ispunct(static_cast<unsigned char>(tok.front()))) tok.remove_prefix(1);
        while (!tok.empty() && std::ispunct(static_cast<unsigned char>(tok.back()))) tok.remove_suffix(1);
        if (!tok.empty()) {
            std::string t(tok);
            for (auto& c : t) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
            out.push_back(std::move(t));
        }
        i = j;
    }
    return out;
}

Eigen::VectorXd HashEmbeddingProvider::embed_text(std::string_view text) const {
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(dim_);
    for (const auto& tok : tokens(text)) {
        std::mt19937_64 rng(fnv1a64(tok) ^ salt_);
        std::normal_distribution<double> gauss(0.0, 1.0);
        for (Eigen::Index d = 0; d < dim_; ++d) sum(d) += gauss(rng);
    }
    return normalized(std::move(sum), "text embedding");
}

Eigen::VectorXd HashEmbeddingProvider::embed_track(const TrackRecord& track) const {
    return embed_text(track_document(track, /*with_tags=*/true));
}

FileEmbeddingProvider::FileEmbeddingProvider(EmbeddingTable tracks, std::optional<EmbeddingTable> texts)
    : tracks_(std::move(tracks)), texts_(std::move(texts)) {
    tracks_.normalize_rows();
    if (texts_) {
        if (texts_->dim() != tracks_.dim()) throw DataError("text and track embedding dims differ");
        texts_->normalize_rows();
    }
}

Eigen::VectorXd FileEmbeddingProvider::embed_text(std::string_view text) const {
    if (texts_) {
        if (auto i = texts_->find(text)) return texts_->row(*i);
    }
    throw DataError("no stored embedding for text: " + std::string(text.substr(0, 80)));
}

Eigen::VectorXd FileEmbeddingProvider::embed_track(const TrackRecord& track) const {
    if (auto i = tracks_.find(track.track_id)) return tracks_.row(*i);
    throw DataError("no stored embedding for track " + track.track_id);
}

RemoteEmbeddingProvider::RemoteEmbeddingProvider(std::string url, Eigen::Index dim, double timeout_seconds)
    : url_(std::move(url)), dim_(dim), timeout_(timeout_seconds) {
    if (dim < 1) throw InvalidArgument("embedding dim must be >= 1");
}

Eigen::VectorXd RemoteEmbeddingProvider::embed_text(std::string_view text) const {
    const nlohmann::json body = {{"text", std::string(text)}};
    const std::string response = http_post_json(url_, body.dump(), {}, timeout_);
    std::vector<double> v;
    try {
        auto j = nlohmann::json::parse(response);
        if (j.is_object()) j = j.at("embedding");
        v = j.get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed embedding response: ") + e.what());
    }
    if (static_cast<Eigen::Index>(v.size()) != dim_) {
        throw DataError("embedding service returned dim " + std::to_string(v.size()));
    }
    return normalized(Eigen::Map<Eigen::VectorXd>(v.data(), dim_), "remote embedding");
}

Eigen::VectorXd RemoteEmbeddingProvider::embed_track(const TrackRecord& track) const {
    return embed_text(track_document(track, /*with_tags=*/true));
}

EmbeddingTable embed_tracks(const MusicDatabase& db, const EmbeddingProvider& provider) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(db.size()), provider.dim());
    std::vector<std::string> ids;
    ids.reserve(db.size());
    for (TrackIndex i = 0; i < db.size(); ++i) {
        const auto& t = db.track(i);
        m.row(i) = provider.embed_track(t).transpose();
        ids.push_back(t.track_id);
    }
    return EmbeddingTable(std::move(ids), std::move(m));
}

// ---------------------------------------------------------------------------
// Pooling, kNN, metrics
// ---------------------------------------------------------------------------

Eigen::VectorXd chat_embedding(const ChatState& state) {
    if (!state.current) throw InvalidArgument("chat state has no current query");
    Eigen::VectorXd sum = *state.current;
    for (const auto& [kind, v] : state.history) {
        if (v.size() != sum.size()) throw InvalidArgument("chat history vector dimension mismatch");
        sum += v;
    }
    sum /= static_cast<double>(state.history.size() + 1);
    const double n = sum.norm();
    if (!(n >= 1e-12)) throw NumericError("degenerate chat state: pooled vector has zero norm");
    return sum / n;
}

std::vector<ScoredId> knn_search(const Eigen::VectorXd& query, const EmbeddingTable& items, std::size_t k) {
    if (items.empty()) throw InvalidArgument("knn_search over an empty item set");
    if (k < 1) throw InvalidArgument("k must be >= 1");
    if (query.size() != items.dim()) throw InvalidArgument("query dimension does not match items");
    const Eigen::VectorXd scores = items.vectors() * query;
    std::vector<ScoredId> scored;
    scored.reserve(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) scored.emplace_back(items.ids()[i], scores(static_cast<Eigen::Index>(i)));
    return take_top(std::move(scored), k);
}

HitResult hit_at_k(std::span<const std::string> ranked, const std::set<std::string>& relevant, std::size_t k) {
    if (relevant.empty()) throw InvalidArgument("hit_at_k: empty relevant set");
    if (k < 1) throw InvalidArgument("hit_at_k: k must be >= 1");
    std::set<std::string> seen;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i) {
        if (relevant.count(ranked[i]) && seen.insert(ranked[i]).second) ++hits;
    }
    return HitResult{hits > 0 ? 1 : 0, static_cast<double>(hits) / static_cast<double>(relevant.size())};
}

double random_any_hit_rate(std::size_t catalog, std::size_t relevant, std::size_t k) {
    if (relevant > catalog) throw InvalidArgument("more relevant items than the catalog");
    if (k >= catalog) return relevant > 0 ? 1.0 : 0.0;
    // C(N-r, k) / C(N, k) = prod_{i<k} (N-r-i) / (N-i)
    double miss = 1.0;
    for (std::size_t i = 0; i < k; ++i) {
        if (catalog - relevant <= i) return 1.0;
        miss *= static_cast<double>(catalog - relevant - i) / static_cast<double>(catalog - i);
    }
    return 1.0 - miss;
}

// ---------------------------------------------------------------------------
// Retrievers
// ---------------------------------------------------------------------------

std::vector<std::string> Bm25Retriever::retrieve(const RetrievalRequest& request, std::size_t k) const {
    std::string query;
    for (std::size_t t = 0; t <= request.turn; ++t) {
        query += request.dialogue->utterances[t].user_query;
        query += ' ';
    }
    std::vector<std::string> out;
    for (auto& [id, score] : index_.search(query, k)) out.push_back(std::move(id));
    return out;
}

DenseRetriever::DenseRetriever(const EmbeddingProvider& provider, const EmbeddingTable& items,
                               const AdapterPair<double>* adapters)
    : provider_(provider), raw_items_(items), adapters_(adapters) {
    if (provider.dim() != items.dim()) {
        throw InvalidArgument("provider dim " + std::to_string(provider.dim()) + " does not match item dim " +
                              std::to_string(items.dim()));
    }
    if (adapters_) {
        if (adapters_->text.in_dim() != provider.dim() || adapters_->music_side().in_dim() != items.dim()) {
            throw InvalidArgument("adapter input dims do not match the embeddings");
        }
        projected_items_ = items.transformed([&](const Eigen::VectorXd& v) { return forward(adapters_->music_side(), v); });
    }
}

ChatState DenseRetriever::chat_state(const RetrievalRequest& request) const {
    const auto& d = *request.dialogue;
    ChatState state;
    for (std::size_t t = 0; t < request.turn; ++t) {
        state.history.emplace_back(HistoryKind::query, provider_.embed_text(d.utterances[t].user_query));
        state.history.emplace_back(HistoryKind::response, provider_.embed_text(d.utterances[t].system_response));
        Eigen::VectorXd music = Eigen::VectorXd::Zero(raw_items_.dim());
        std::size_t found = 0;
        for (const auto& id : d.plan.turns[t].track_ids) {
            if (auto i = raw_items_.find(id)) {
                music += raw_items_.row(*i);
                ++found;
            }
        }
        if (found > 0 && music.norm() > 1e-12) state.history.emplace_back(HistoryKind::music, music.normalized());
    }
    state.current = provider_.embed_text(request.current_query());
    return state;
}

std::vector<std::string> DenseRetriever::retrieve(const RetrievalRequest& request, std::size_t k) const {
    Eigen::VectorXd q = chat_embedding(chat_state(request));
    if (adapters_) q = forward(adapters_->text, q);
    std::vector<std::string> out;
    for (auto& [id, score] : knn_search(q, adapters_ ? projected_items_ : raw_items_, k)) out.push_back(std::move(id));
    return out;
}

std::vector<std::string> OracleRetriever::retrieve(const RetrievalRequest& request, std::size_t k) const {
    const auto& ids = request.dialogue->plan.turns[request.turn].track_ids;
    return {ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(std::min(k, ids.size()))};
}

TrainingPairs build_training_pairs(const std::vector<DialogueRecord>& dialogues, const EmbeddingProvider& provider,
                                   const EmbeddingTable& items) {
    const DenseRetriever pooling(provider, items);
    std::vector<Eigen::VectorXd> chat, music;
    TrainingPairs out;
    for (const auto& d : dialogues) {
        if (d.utterances.size() != d.plan.turns.size()) throw DataError(d.plan.dialogue_id + ": utterance count mismatch");
        for (std::size_t t = 0; t < d.plan.turns.size(); ++t) {
            Eigen::VectorXd target = Eigen::VectorXd::Zero(items.dim());
            std::size_t found = 0;
            for (const auto& id : d.plan.turns[t].track_ids) {
                if (auto i = items.find(id)) {
                    target += items.row(*i);
                    ++found;
                }
            }
            if (found == 0 || target.norm() < 1e-12) {
                ++out.skipped;
                continue;
            }
            chat.push_back(chat_embedding(pooling.chat_state({&d, t})));
            music.push_back(target.normalized());
        }
    }
    out.chat.resize(static_cast<Eigen::Index>(chat.size()), items.dim());
    out.music.resize(static_cast<Eigen::Index>(music.size()), items.dim());
    for (std::size_t i = 0; i < chat.size(); ++i) {
        out.chat.row(static_cast<Eigen::Index>(i)) = chat[i].transpose();
        out.music.row(static_cast<Eigen::Index>(i)) = music[i].transpose();
    }
    return out;
}

EvalReport evaluate_dataset(const std::vector<DialogueRecord>& dialogues, const Retriever& retriever,
                            std::vector<std::size_t> ks, std::size_t threads) {
    std::sort(ks.begin(), ks.end());
    ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
    if (ks.empty() || ks.front() < 1) throw InvalidArgument("ks must be nonempty and >= 1");
    const std::size_t kmax = ks.back();

    std::vector<RetrievalRequest> requests;
    for (const auto& d : dialogues) {
        if (d.utterances.size() != d.plan.turns.size()) throw DataError(d.plan.dialogue_id + ": utterance count mismatch");
        for (std::size_t t = 0; t < d.plan.turns.size(); ++t) {
            if (d.plan.turns[t].track_ids.empty()) {
                throw DataError(d.plan.dialogue_id + " turn " + std::to_string(t + 1) + " has no ground-truth tracks");
            }
            requests.push_back({&d, t});
        }
    }

    std::vector<std::vector<HitResult>> per_turn(requests.size());
    parallel_for(requests.size(), threads, [&](std::size_t i) {
        const auto& req = requests[i];
        const auto ranked = retriever.retrieve(req, kmax);
        const auto& gt = req.dialogue->plan.turns[req.turn].track_ids;
        const std::set<std::string> relevant(gt.begin(), gt.end());
        auto& row = per_turn[i];
        for (std::size_t k : ks) row.push_back(hit_at_k(ranked, relevant, k));
    });

    EvalReport report;
    report.ks = ks;
    report.n_turns = requests.size();
    report.n_dialogues = dialogues.size();
    for (std::size_t j = 0; j < ks.size(); ++j) {
        double hit = 0.0, rec = 0.0;
        for (const auto& row : per_turn) {
            hit += row[j].any_hit;
            rec += row[j].recall;
        }
        const double n = requests.empty() ? 1.0 : static_cast<double>(requests.size());
        report.any_hit[ks[j]] = hit / n;
        report.recall[ks[j]] = rec / n;
    }
    return report;
}

nlohmann::ordered_json to_json(const EvalReport& report) {
    nlohmann::ordered_json j;
    j["ks"] = report.ks;
    nlohmann::ordered_json hit = nlohmann::ordered_json::object();
    nlohmann::ordered_json rec = nlohmann::ordered_json::object();
    for (std::size_t k : report.ks) {
        hit[std::to_string(k)] = report.any_hit.at(k);
        rec[std::to_string(k)] = report.recall.at(k);
    }
    j["any_hit"] = std::move(hit);
    j["recall"] = std::move(rec);
    j["n_turns"] = report.n_turns;
    j["n_dialogues"] = report.n_dialogues;
    return j;
}

}  // namespace mdgen
