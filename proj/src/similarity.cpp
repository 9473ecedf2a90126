#include "mdgen/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <unordered_map>

#include "mdgen/error.hpp"

namespace mdgen {

InteractionMatrix::InteractionMatrix(Eigen::Index n_users, Eigen::Index n_items, std::vector<Entry> entries)
    : n_users_(n_users), n_items_(n_items), entries_(std::move(entries)) {
    if (n_users < 1 || n_items < 1) throw InvalidArgument("interaction matrix needs positive dimensions");
    by_user_.resize(static_cast<std::size_t>(n_users));
    by_item_.resize(static_cast<std::size_t>(n_items));
    std::sort(entries_.begin(), entries_.end(),
              [](const Entry& a, const Entry& b) { return std::tie(a.user, a.item) < std::tie(b.user, b.item); });
    for (std::size_t k = 0; k < entries_.size(); ++k) {
        const auto& e = entries_[k];
        if (e.user < 0 || e.user >= n_users || e.item < 0 || e.item >= n_items) {
            throw InvalidArgument("interaction index out of range");
        }
        if (!(e.count > 0.0) || !std::isfinite(e.count)) throw InvalidArgument("interaction count must be > 0");
        if (k > 0 && entries_[k - 1].user == e.user && entries_[k - 1].item == e.item) {
            throw InvalidArgument("duplicate (user, item) interaction");
        }
        by_user_[static_cast<std::size_t>(e.user)].emplace_back(e.item, e.count);
        by_item_[static_cast<std::size_t>(e.item)].emplace_back(e.user, e.count);
    }
}

Eigen::MatrixXd InteractionMatrix::dense() const {
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n_users_, n_items_);
    for (const auto& e : entries_) d(e.user, e.item) = e.count;
    return d;
}

void AlsConfig::validate() const {
    if (dim < 1) throw InvalidArgument("dim must be >= 1");
    if (!(reg >= 0.0)) throw InvalidArgument("reg must be >= 0");
    if (!(alpha > 0.0)) throw InvalidArgument("alpha must be > 0");
    if (iters < 1) throw InvalidArgument("iters must be >= 1");
}

namespace {

// Solves every row of `target` given the fixed factors `other`:
// (F^T F + sum_obs (c-1) f f^T + reg I) x = sum_obs c f
template <typename RowAccess>
void solve_half(Eigen::MatrixXd& target, const Eigen::MatrixXd& other, const FactorModel& model,
                RowAccess&& observed) {
    const Eigen::Index d = other.cols();
    const Eigen::MatrixXd gram = other.transpose() * other;
    Eigen::MatrixXd a(d, d);
    Eigen::VectorXd b(d);
    for (Eigen::Index r = 0; r < target.rows(); ++r) {
        a = gram;
        a.diagonal().array() += model.reg;
        b.setZero();
        for (const auto& [j, count] : observed(r)) {
            const double c = model.confidence(count);
            const auto f = other.row(j).transpose();
            a.noalias() += (c - 1.0) * f * f.transpose();
            b.noalias() += c * f;
        }
        target.row(r) = a.ldlt().solve(b).transpose();
    }
}

// Rescales each latent column pair to equal norms. U V^T is unchanged and
// ||u||^2 + ||v||^2 can only drop to 2 ||u|| ||v||; without this, a small
// ridge leaves the scale set by the initialization for many sweeps.
void balance_columns(FactorModel& model) {
    if (model.reg == 0.0) return;
    for (Eigen::Index c = 0; c < model.user_factors.cols(); ++c) {
        const double nu = model.user_factors.col(c).norm();
        const double nv = model.item_factors.col(c).norm();
        if (nu == 0.0 || nv == 0.0) continue;
        const double s = std::sqrt(nv / nu);
        model.user_factors.col(c) *= s;
        model.item_factors.col(c) /= s;
    }
}

}  // namespace

void als_sweep(FactorModel& model, const InteractionMatrix& m) {
    solve_half(model.user_factors, model.item_factors, model,
               [&](Eigen::Index u) -> const auto& { return m.user_row(u); });
    solve_half(model.item_factors, model.user_factors, model,
               [&](Eigen::Index i) -> const auto& { return m.item_column(i); });
    balance_columns(model);
}

FactorModel als_fit(const InteractionMatrix& m, const AlsConfig& cfg, std::vector<double>* loss_trace) {
    cfg.validate();
    FactorModel model;
    model.reg = cfg.reg;
    model.alpha = cfg.alpha;
    model.binary_confidence = cfg.binary_confidence;

    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> init(-0.01, 0.01);
    model.user_factors.resize(m.n_users(), cfg.dim);
    model.item_factors.resize(m.n_items(), cfg.dim);
    for (Eigen::Index r = 0; r < model.user_factors.rows(); ++r)
        for (Eigen::Index c = 0; c < cfg.dim; ++c) model.user_factors(r, c) = init(rng);
    for (Eigen::Index r = 0; r < model.item_factors.rows(); ++r)
        for (Eigen::Index c = 0; c < cfg.dim; ++c) model.item_factors(r, c) = init(rng);

    for (int it = 0; it < cfg.iters; ++it) {
        als_sweep(model, m);
        if (!model.user_factors.allFinite() || !model.item_factors.allFinite()) {
            throw NumericError("ALS produced non-finite factors in sweep " + std::to_string(it + 1));
        }
        if (loss_trace) loss_trace->push_back(weighted_loss(model, m));
    }
    return model;
}

double weighted_loss(const FactorModel& model, const InteractionMatrix& m) {
    const auto& u = model.user_factors;
    const auto& v = model.item_factors;
    if (u.rows() != m.n_users() || v.rows() != m.n_items() || u.cols() != v.cols()) {
        throw InvalidArgument("factor model dimensions do not match the interaction matrix");
    }
    const Eigen::MatrixXd pred = u * v.transpose();
    Eigen::MatrixXd conf = Eigen::MatrixXd::Ones(m.n_users(), m.n_items());
    Eigen::MatrixXd pref = Eigen::MatrixXd::Zero(m.n_users(), m.n_items());
    for (const auto& e : m.entries()) {
        conf(e.user, e.item) = model.confidence(e.count);
        pref(e.user, e.item) = 1.0;
    }
    const double fit = (conf.array() * (pref - pred).array().square()).sum();
    return fit + model.reg * (u.squaredNorm() + v.squaredNorm());
}

std::vector<ScoredIndex> topk_similar_items(const FactorModel& model, Eigen::Index item, std::size_t k,
                                            const std::vector<bool>& allowed) {
    const auto& v = model.item_factors;
    if (item < 0 || item >= v.rows()) throw InvalidArgument("item index out of range: " + std::to_string(item));
    if (k < 1) throw InvalidArgument("k must be >= 1");
    const double qn = v.row(item).norm();
    if (qn == 0.0) throw NumericError("item " + std::to_string(item) + " has a zero-norm factor vector");

    std::vector<ScoredIndex> scored;
    scored.reserve(static_cast<std::size_t>(v.rows()));
    for (Eigen::Index j = 0; j < v.rows(); ++j) {
        if (j == item) continue;
        if (!allowed.empty() && !allowed[static_cast<std::size_t>(j)]) continue;
        const double n = v.row(j).norm();
        if (n == 0.0) continue;
        const double cos = std::clamp(v.row(item).dot(v.row(j)) / (qn * n), -1.0, 1.0);
        scored.emplace_back(j, cos);
    }
    const std::size_t take = std::min(k, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(),
                      [](const ScoredIndex& a, const ScoredIndex& b) {
                          return a.second != b.second ? a.second > b.second : a.first < b.first;
                      });
    scored.resize(take);
    return scored;
}

// ---------------------------------------------------------------------------
// I/O and annotation
// ---------------------------------------------------------------------------

LabeledInteractions read_interactions(std::istream& in) {
    std::unordered_map<std::string, Eigen::Index> users, items;
    LabeledInteractions out;
    std::map<std::pair<Eigen::Index, Eigen::Index>, double> cells;
    auto intern = [](std::unordered_map<std::string, Eigen::Index>& ids, std::vector<std::string>& names,
                     const std::string& key) {
        auto [it, inserted] = ids.emplace(key, static_cast<Eigen::Index>(names.size()));
        if (inserted) names.push_back(key);
        return it->second;
    };

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            const auto user = j.at("user").get<std::string>();
            const auto item = j.at("item").get<std::string>();
            const double count = j.at("count").get<double>();
            if (!(count > 0.0) || !std::isfinite(count)) throw DataError("count must be > 0");
            const auto u = intern(users, out.users, user);
            const auto i = intern(items, out.items, item);
            cells[{u, i}] += count;
        } catch (const nlohmann::json::exception& e) {
            throw DataError("interactions line " + std::to_string(line_no) + ": " + e.what());
        } catch (const DataError& e) {
            throw DataError("interactions line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (cells.empty()) throw DataError("no interactions");
    std::vector<InteractionMatrix::Entry> entries;
    entries.reserve(cells.size());
    for (const auto& [key, count] : cells) entries.push_back({key.first, key.second, count});
    out.matrix = InteractionMatrix(static_cast<Eigen::Index>(out.users.size()),
                                   static_cast<Eigen::Index>(out.items.size()), std::move(entries));
    return out;
}

LabeledInteractions read_interactions(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path.string());
    return read_interactions(in);
}

std::vector<NeighborList> similar_tracks(const MusicDatabase& db, const LabeledInteractions& data,
                                         const FactorModel& model, std::size_t k) {
    std::vector<bool> in_db(data.items.size(), false);
    std::vector<std::pair<TrackIndex, Eigen::Index>> queries;
    for (std::size_t i = 0; i < data.items.size(); ++i) {
        if (auto t = db.find(data.items[i])) {
            in_db[i] = true;
            queries.emplace_back(*t, static_cast<Eigen::Index>(i));
        }
    }
    std::sort(queries.begin(), queries.end());

    std::vector<NeighborList> out;
    out.reserve(queries.size());
    for (const auto& [track, item] : queries) {
        if (model.item_factors.row(item).norm() == 0.0) continue;
        NeighborList list{db.track(track).track_id, {}};
        for (const auto& [j, score] : topk_similar_items(model, item, k, in_db)) {
            list.neighbors.emplace_back(data.items[static_cast<std::size_t>(j)], score);
        }
        out.push_back(std::move(list));
    }
    return out;
}

MusicDatabase annotate_similar_tracks(const MusicDatabase& db, const std::vector<NeighborList>& neighbors) {
    std::vector<TrackRecord> tracks(db.tracks().begin(), db.tracks().end());
    for (const auto& list : neighbors) {
        auto& t = tracks.at(db.index_of(list.track_id));
        for (const auto& [id, score] : list.neighbors) {
            t.add_tag(AttributeTag::make(AttributeCategory::similar_track, id));
        }
    }
    return MusicDatabase::build(std::move(tracks));
}

void write_neighbors(const std::vector<NeighborList>& neighbors, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    for (const auto& list : neighbors) {
        nlohmann::ordered_json j;
        j["track_id"] = list.track_id;
        auto arr = nlohmann::ordered_json::array();
        for (const auto& [id, score] : list.neighbors) {
            nlohmann::ordered_json n;
            n["track_id"] = id;
            n["score"] = score;
            arr.push_back(std::move(n));
        }
        j["neighbors"] = std::move(arr);
        out << j.dump() << '\n';
    }
    if (!out) throw DataError("write failed: " + path.string());
}

}  // namespace mdgen
