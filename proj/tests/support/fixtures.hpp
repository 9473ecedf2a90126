#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "mdgen/adapter.hpp"
#include "mdgen/filter.hpp"
#include "mdgen/music_db.hpp"
#include "mdgen/planner.hpp"
#include "mdgen/similarity.hpp"
#include "mdgen/utterance.hpp"

namespace mdgen::testing {

/// The six-track database used throughout the examples:
/// t1 edm/party/fast, t2 edm/party/moderate, t3 edm/happy/fast, t4 rock/party,
/// t5 rock/sad/slow, t6 edm/workout/fast.
MusicDatabase d0();

AttributeTag tag(AttributeCategory c, std::string value);

/// Random database with at most `max_tracks` tracks drawing from at most
/// `max_tags` distinct tags.
MusicDatabase random_db(std::uint64_t seed, std::size_t max_tracks = 1000, std::size_t max_tags = 50);

/// Random program over the database vocabulary plus a few unknown tags.
FilterProgram random_program(const MusicDatabase& db, std::mt19937_64& rng, std::size_t max_steps = 6);

/// Per-track predicate evaluation, independent of the posting lists.
std::set<std::string> brute_force_eval(const MusicDatabase& db, const FilterProgram& program);

/// Tags ranked by (count desc, category name asc, value asc) over a scan of
/// the candidate tracks' tag sets; first k.
std::vector<AttributeTag> brute_force_top_k(const MusicDatabase& db, const std::set<std::string>& candidates,
                                            const std::set<AttributeTag>& used, std::size_t k);

/// Catalog with correlated genres, moods, themes, instruments and raw
/// year/familiarity/bpm/key fields, passed through quantization.
MusicDatabase synthetic_catalog(std::size_t n_tracks, std::uint64_t seed);

/// Problems found in a plan (empty when it satisfies every invariant).
std::vector<std::string> plan_violations(const MusicDatabase& db, const DialoguePlan& plan, const PlanConfig& cfg);

/// Random sparse counts in [1, 5] with roughly `density` of the cells filled;
/// every user and item gets at least one interaction.
InteractionMatrix random_interactions(std::uint64_t seed, Eigen::Index users, Eigen::Index items,
                                      double density = 0.2);

/// Direct cell-by-cell evaluation of the implicit-feedback objective.
double direct_weighted_loss(const FactorModel& model, const InteractionMatrix& m);

struct PairData {
    Eigen::MatrixXd chat;
    Eigen::MatrixXd music;
};

/// Paired inputs drawn around two cluster centers. Each music row is a fixed
/// linear map of its chat row plus noise, so pairs are individually matchable.
PairData two_cluster_pairs(std::uint64_t seed, Eigen::Index n, Eigen::Index dim);

/// Largest |analytic - numeric| / max(|analytic|, |numeric|, 1e-6) over every
/// parameter of a random adapter pair (d_in=5, d_h=4, d_out=3, n=4), using
/// central differences with step `eps`.
double max_gradient_error(std::uint64_t seed, bool shared = false, double eps = 1e-5);

class TempDir {
public:
    TempDir();
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& text);

}  // namespace mdgen::testing
