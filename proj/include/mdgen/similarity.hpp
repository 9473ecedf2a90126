#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mdgen/music_db.hpp"

namespace mdgen {

/// Sparse implicit-feedback counts. Indices in range, counts > 0, no
/// duplicate (user, item) pairs.
class InteractionMatrix {
public:
    struct Entry {
        Eigen::Index user;
        Eigen::Index item;
        double count;
    };

    InteractionMatrix() = default;
    /// Throws InvalidArgument when an invariant is violated.
    InteractionMatrix(Eigen::Index n_users, Eigen::Index n_items, std::vector<Entry> entries);

    Eigen::Index n_users() const noexcept { return n_users_; }
    Eigen::Index n_items() const noexcept { return n_items_; }
    const std::vector<Entry>& entries() const noexcept { return entries_; }

    /// (item, count) pairs of one user / (user, count) pairs of one item.
    const std::vector<std::pair<Eigen::Index, double>>& user_row(Eigen::Index u) const { return by_user_.at(u); }
    const std::vector<std::pair<Eigen::Index, double>>& item_column(Eigen::Index i) const { return by_item_.at(i); }

    /// Dense count matrix (zeros where unobserved).
    Eigen::MatrixXd dense() const;

private:
    Eigen::Index n_users_ = 0;
    Eigen::Index n_items_ = 0;
    std::vector<Entry> entries_;
    std::vector<std::vector<std::pair<Eigen::Index, double>>> by_user_;
    std::vector<std::vector<std::pair<Eigen::Index, double>>> by_item_;
};

struct AlsConfig {
    Eigen::Index dim = 32;
    double reg = 0.1;
    double alpha = 40.0;
    int iters = 15;
    std::uint64_t seed = 42;
    /// Treat every observed count as 1 in the confidence weight.
    bool binary_confidence = false;

    void validate() const;
};

/// User and item factors of an implicit-feedback factorization.
struct FactorModel {
    Eigen::MatrixXd user_factors;  // n_users x dim
    Eigen::MatrixXd item_factors;  // n_items x dim
    double reg = 0.0;
    double alpha = 1.0;
    bool binary_confidence = false;

    Eigen::Index dim() const noexcept { return item_factors.cols(); }
    double confidence(double count) const { return 1.0 + alpha * (binary_confidence ? 1.0 : count); }
};

/// Alternating least squares with preference p = [count > 0] and confidence
/// c = 1 + alpha * count. Each sweep solves the exact ridge systems for all
/// users, then all items. If `loss_trace` is given, the weighted loss after
/// every sweep is appended. Throws NumericError naming the sweep on non-finite values.
FactorModel als_fit(const InteractionMatrix& m, const AlsConfig& cfg, std::vector<double>* loss_trace = nullptr);

/// One user half-sweep followed by one item half-sweep, in place, then each
/// latent column of U and V is rescaled to equal norms (predictions unchanged).
void als_sweep(FactorModel& model, const InteractionMatrix& m);

/// sum_ui c_ui (p_ui - u_u . v_i)^2 + reg (|U|_F^2 + |V|_F^2), evaluated over
/// every cell. Throws InvalidArgument on dimension mismatch.
double weighted_loss(const FactorModel& model, const InteractionMatrix& m);

using ScoredIndex = std::pair<Eigen::Index, double>;

/// The k items with highest cosine to `item` (itself excluded), ties by
/// ascending index. Items with zero-norm vectors are skipped; a zero-norm
/// query throws NumericError. `allowed`, when non-empty, masks candidates.
std::vector<ScoredIndex> topk_similar_items(const FactorModel& model, Eigen::Index item, std::size_t k,
                                            const std::vector<bool>& allowed = {});

/// Interactions with string ids, as read from JSONL.
struct LabeledInteractions {
    InteractionMatrix matrix;
    std::vector<std::string> users;
    std::vector<std::string> items;
};

/// Reads {"user": str, "item": str, "count": number} lines. Repeated
/// (user, item) pairs are summed. Throws DataError on malformed lines.
LabeledInteractions read_interactions(const std::filesystem::path& path);
LabeledInteractions read_interactions(std::istream& in);

struct NeighborList {
    std::string track_id;
    std::vector<std::pair<std::string, double>> neighbors;
};

/// Top-k neighbors for each interaction item that is also a database track;
/// neighbors are restricted to database tracks. Output follows database order.
std::vector<NeighborList> similar_tracks(const MusicDatabase& db, const LabeledInteractions& data,
                                         const FactorModel& model, std::size_t k);

/// Copy of `db` where each track gains (similar_track, <neighbor id>) tags.
MusicDatabase annotate_similar_tracks(const MusicDatabase& db, const std::vector<NeighborList>& neighbors);

void write_neighbors(const std::vector<NeighborList>& neighbors, const std::filesystem::path& path);

}  // namespace mdgen
