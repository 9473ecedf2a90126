#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mdgen/adapter.hpp"
#include "mdgen/music_db.hpp"
#include "mdgen/utterance.hpp"

namespace mdgen {

using ScoredId = std::pair<std::string, double>;

// ---------------------------------------------------------------------------
// BM25
// ---------------------------------------------------------------------------

/// Lowercase ASCII, split on every non-alphanumeric byte. No stemming or stopwords.
std::vector<std::string> tokenize(std::string_view text);

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;
};

/// Okapi BM25 over a fixed document collection.
class Bm25Index {
public:
    Bm25Index() = default;
    /// `docs` are (doc id, text) pairs; ids must be unique.
    static Bm25Index build(const std::vector<std::pair<std::string, std::string>>& docs, Bm25Params params = {});

    std::size_t size() const noexcept { return ids_.size(); }
    bool empty() const noexcept { return ids_.empty(); }
    double average_length() const noexcept { return avg_len_; }
    std::size_t document_frequency(const std::string& term) const;
    std::size_t vocabulary_size() const noexcept { return postings_.size(); }
    const Bm25Params& params() const noexcept { return params_; }

    /// ln(1 + (N - df + 0.5) / (df + 0.5))
    double idf(const std::string& term) const;

    /// Documents with positive score, descending, ties by ascending id; at most k.
    /// Repeated query terms count once. Throws InvalidArgument on an empty index.
    std::vector<ScoredId> search(std::string_view query, std::size_t k) const;

private:
    struct Posting {
        std::uint32_t doc;
        std::uint32_t tf;
    };
    Bm25Params params_;
    std::vector<std::string> ids_;
    std::vector<std::uint32_t> lengths_;
    double avg_len_ = 0.0;
    std::unordered_map<std::string, std::vector<Posting>> postings_;
};

inline std::vector<ScoredId> bm25_search(const Bm25Index& index, std::string_view query, std::size_t k) {
    return index.search(query, k);
}

/// "{title} by {artist}" (the schema has no album field); with `with_tags`,
/// the track's tag values are appended.
std::string track_document(const TrackRecord& track, bool with_tags = false);
Bm25Index build_track_index(const MusicDatabase& db, bool with_tags = false, Bm25Params params = {});

// ---------------------------------------------------------------------------
// Embeddings
// ---------------------------------------------------------------------------

/// Row-per-id vector table; the in-memory form of an EMB1 file.
class EmbeddingTable {
public:
    EmbeddingTable() = default;
    EmbeddingTable(std::vector<std::string> ids, Eigen::MatrixXd vectors);

    Eigen::Index dim() const noexcept { return vectors_.cols(); }
    std::size_t size() const noexcept { return ids_.size(); }
    bool empty() const noexcept { return ids_.empty(); }
    const std::vector<std::string>& ids() const noexcept { return ids_; }
    const Eigen::MatrixXd& vectors() const noexcept { return vectors_; }
    std::optional<Eigen::Index> find(std::string_view id) const;
    Eigen::VectorXd row(Eigen::Index i) const { return vectors_.row(i).transpose(); }

    /// Rescales every row to unit L2 norm; throws NumericError on zero rows.
    void normalize_rows();
    /// Returns a table whose rows are `fn(row)` (e.g. an adapter projection).
    template <typename Fn>
    EmbeddingTable transformed(Fn&& fn) const;

private:
    std::vector<std::string> ids_;
    Eigen::MatrixXd vectors_;
    std::unordered_map<std::string, Eigen::Index> index_;
};

/// Binary format: "EMB1", u32 dim, then per record u16 id length, id bytes,
/// dim x float32; all little-endian.
EmbeddingTable read_embeddings(const std::filesystem::path& path);
void write_embeddings(const EmbeddingTable& table, const std::filesystem::path& path);

/// Source of unit-norm text and track vectors of a fixed dimension.
class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual Eigen::Index dim() const = 0;
    virtual Eigen::VectorXd embed_text(std::string_view text) const = 0;
    virtual Eigen::VectorXd embed_track(const TrackRecord& track) const = 0;
};

/// Deterministic bag-of-tokens embedding: each lowercase whitespace token
/// (surrounding punctuation stripped) seeds a Gaussian vector from its 64-bit
/// FNV-1a hash; the token vectors are summed and normalized. Tracks embed the
/// text of track_document(track, with_tags=true).
class HashEmbeddingProvider final : public EmbeddingProvider {
public:
    explicit HashEmbeddingProvider(Eigen::Index dim, std::uint64_t salt = 0);
    Eigen::Index dim() const override { return dim_; }
    Eigen::VectorXd embed_text(std::string_view text) const override;
    Eigen::VectorXd embed_track(const TrackRecord& track) const override;

    static std::vector<std::string> tokens(std::string_view text);

private:
    Eigen::Index dim_;
    std::uint64_t salt_;
};

/// Precomputed vectors: tracks by track_id, texts by exact string.
class FileEmbeddingProvider final : public EmbeddingProvider {
public:
    explicit FileEmbeddingProvider(EmbeddingTable tracks, std::optional<EmbeddingTable> texts = std::nullopt);
    Eigen::Index dim() const override { return tracks_.dim(); }
    /// Throws DataError for text without a stored vector.
    Eigen::VectorXd embed_text(std::string_view text) const override;
    /// Throws DataError for tracks without a stored vector.
    Eigen::VectorXd embed_track(const TrackRecord& track) const override;

private:
    EmbeddingTable tracks_;
    std::optional<EmbeddingTable> texts_;
};

/// POSTs {"text": ...} and accepts a JSON float array or {"embedding": [...]}.
class RemoteEmbeddingProvider final : public EmbeddingProvider {
public:
    RemoteEmbeddingProvider(std::string url, Eigen::Index dim, double timeout_seconds = 30.0);
    Eigen::Index dim() const override { return dim_; }
    Eigen::VectorXd embed_text(std::string_view text) const override;
    Eigen::VectorXd embed_track(const TrackRecord& track) const override;

private:
    std::string url_;
    Eigen::Index dim_;
    double timeout_;
};

/// Unit-norm track vectors in database order.
EmbeddingTable embed_tracks(const MusicDatabase& db, const EmbeddingProvider& provider);

// ---------------------------------------------------------------------------
// Chat pooling, nearest neighbors, metrics
// ---------------------------------------------------------------------------

enum class HistoryKind : std::uint8_t { query, response, music };

struct ChatState {
    std::vector<std::pair<HistoryKind, Eigen::VectorXd>> history;
    std::optional<Eigen::VectorXd> current;
};

/// normalize(mean(current, history...)). Throws InvalidArgument without a
/// current query, NumericError when the mean has norm < 1e-12.
Eigen::VectorXd chat_embedding(const ChatState& state);

/// Exact top-k by dot product, descending, ties by ascending id.
/// Throws InvalidArgument on an empty table or dimension mismatch.
std::vector<ScoredId> knn_search(const Eigen::VectorXd& query, const EmbeddingTable& items, std::size_t k);

struct HitResult {
    int any_hit = 0;
    double recall = 0.0;
};

/// Throws InvalidArgument for an empty relevant set or k < 1.
HitResult hit_at_k(std::span<const std::string> ranked, const std::set<std::string>& relevant, std::size_t k);

/// Probability that k uniformly random distinct items out of `catalog`
/// contain at least one of `relevant` items: 1 - C(catalog-relevant, k) / C(catalog, k).
double random_any_hit_rate(std::size_t catalog, std::size_t relevant, std::size_t k);

// ---------------------------------------------------------------------------
// Dataset evaluation
// ---------------------------------------------------------------------------

/// What a retriever sees for one evaluated turn.
struct RetrievalRequest {
    const DialogueRecord* dialogue = nullptr;
    std::size_t turn = 0;  // index into dialogue->plan.turns; earlier turns are history

    std::string_view current_query() const { return dialogue->utterances[turn].user_query; }
};

class Retriever {
public:
    virtual ~Retriever() = default;
    /// Ranked track ids, at most k. Must be safe to call concurrently.
    virtual std::vector<std::string> retrieve(const RetrievalRequest& request, std::size_t k) const = 0;
};

/// Lexical baseline: the query is all previous user queries plus the current one.
class Bm25Retriever final : public Retriever {
public:
    explicit Bm25Retriever(const Bm25Index& index) : index_(index) {}
    std::vector<std::string> retrieve(const RetrievalRequest& request, std::size_t k) const override;

private:
    const Bm25Index& index_;
};

/// Dense retrieval over pooled chat history. History per earlier turn: query,
/// response, and the normalized mean of that turn's ground-truth track vectors.
/// With adapters, the pooled chat vector goes through the text adapter and the
/// item table through the music adapter.
class DenseRetriever final : public Retriever {
public:
    /// Throws InvalidArgument when provider and item dimensions differ.
    DenseRetriever(const EmbeddingProvider& provider, const EmbeddingTable& items,
                   const AdapterPair<double>* adapters = nullptr);
    std::vector<std::string> retrieve(const RetrievalRequest& request, std::size_t k) const override;

    ChatState chat_state(const RetrievalRequest& request) const;

private:
    const EmbeddingProvider& provider_;
    const EmbeddingTable& raw_items_;
    const AdapterPair<double>* adapters_;
    EmbeddingTable projected_items_;
};

/// Returns each turn's ground truth first; a sanity fixture.
class OracleRetriever final : public Retriever {
public:
    std::vector<std::string> retrieve(const RetrievalRequest& request, std::size_t k) const override;
};

struct TrainingPairs {
    Eigen::MatrixXd chat;   // pooled chat vectors, one row per turn
    Eigen::MatrixXd music;  // normalized mean of the turn's ground-truth track vectors
    std::size_t skipped = 0;  // turns with no ground-truth track in the item table
};

/// Adapter training rows built with the same chat pooling as evaluation.
TrainingPairs build_training_pairs(const std::vector<DialogueRecord>& dialogues, const EmbeddingProvider& provider,
                                   const EmbeddingTable& items);

struct EvalReport {
    std::vector<std::size_t> ks;
    std::map<std::size_t, double> any_hit;
    std::map<std::size_t, double> recall;
    std::size_t n_turns = 0;
    std::size_t n_dialogues = 0;

    bool operator==(const EvalReport&) const = default;
};

/// Per-turn Hit@K averaged over every turn. Turns are retrieved in parallel on
/// `threads` workers (0 = hardware); sums run in turn order, so the report does
/// not depend on the thread count. Throws DataError for a turn without tracks.
EvalReport evaluate_dataset(const std::vector<DialogueRecord>& dialogues, const Retriever& retriever,
                            std::vector<std::size_t> ks, std::size_t threads = 0);

nlohmann::ordered_json to_json(const EvalReport& report);

// ---------------------------------------------------------------------------

template <typename Fn>
EmbeddingTable EmbeddingTable::transformed(Fn&& fn) const {
    Eigen::MatrixXd out;
    for (Eigen::Index i = 0; i < vectors_.rows(); ++i) {
        const Eigen::VectorXd v = fn(row(i));
        if (i == 0) out.resize(vectors_.rows(), v.size());
        out.row(i) = v.transpose();
    }
    return EmbeddingTable(ids_, std::move(out));
}

}  // namespace mdgen
