#include "fixtures.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace mdgen::testing {

namespace {

TrackRecord make_track(std::string id, std::string title, std::string artist_id, std::string artist,
                       std::vector<AttributeTag> tags) {
    TrackRecord t;
    t.track_id = std::move(id);
    t.title = std::move(title);
    t.artist_id = std::move(artist_id);
    t.artist_name = std::move(artist);
    for (auto& tg : tags) t.add_tag(std::move(tg));
    return t;
}

bool record_has(const TrackRecord& t, const AttributeTag& tag) {
    return std::find(t.tags.begin(), t.tags.end(), tag) != t.tags.end();
}

}  // namespace

AttributeTag tag(AttributeCategory c, std::string value) { return AttributeTag::make(c, value); }

MusicDatabase d0() {
    using C = AttributeCategory;
    std::vector<TrackRecord> tracks;
    tracks.push_back(make_track("t1", "Neon Rush", "a1", "Volt Theory",
                                {tag(C::genre, "edm"), tag(C::theme, "party"), tag(C::tempo, "fast")}));
    tracks.push_back(make_track("t2", "Slow Burn Lights", "a1", "Volt Theory",
                                {tag(C::genre, "edm"), tag(C::theme, "party"), tag(C::tempo, "moderate")}));
    tracks.push_back(make_track("t3", "Sunny Circuit", "a2", "Pixel Bloom",
                                {tag(C::genre, "edm"), tag(C::mood, "happy"), tag(C::tempo, "fast")}));
    tracks.push_back(make_track("t4", "Garage Night", "a3", "The Loud Hours", {tag(C::genre, "rock"), tag(C::theme, "party")}));
    tracks.push_back(make_track("t5", "Grey Harbor", "a4", "Paper Lanterns",
                                {tag(C::genre, "rock"), tag(C::mood, "sad"), tag(C::tempo, "slow")}));
    tracks.push_back(make_track("t6", "Iron Sprint", "a2", "Pixel Bloom",
                                {tag(C::genre, "edm"), tag(C::theme, "workout"), tag(C::tempo, "fast")}));
    return MusicDatabase::build(std::move(tracks));
}

MusicDatabase random_db(std::uint64_t seed, std::size_t max_tracks, std::size_t max_tags) {
    std::mt19937_64 rng(seed);
    const std::size_t n_tracks = std::uniform_int_distribution<std::size_t>(1, max_tracks)(rng);
    const std::size_t n_tags = std::uniform_int_distribution<std::size_t>(1, max_tags)(rng);
    std::vector<AttributeTag> pool;
    std::set<AttributeTag> seen;
    while (pool.size() < n_tags) {
        const auto c = kAllCategories[std::uniform_int_distribution<std::size_t>(0, kAllCategories.size() - 1)(rng)];
        auto t = tag(c, "v" + std::to_string(std::uniform_int_distribution<int>(0, 30)(rng)));
        if (seen.insert(t).second) pool.push_back(t);
    }
    // Skewed tag popularity so that posting lists range from tiny to dense.
    std::vector<double> p(pool.size());
    for (auto& x : p) x = std::uniform_real_distribution<double>(0.01, 0.6)(rng);
    std::vector<TrackRecord> tracks;
    for (std::size_t i = 0; i < n_tracks; ++i) {
        std::vector<AttributeTag> tags;
        for (std::size_t j = 0; j < pool.size(); ++j) {
            if (std::bernoulli_distribution(p[j])(rng)) tags.push_back(pool[j]);
        }
        char id[16];
        std::snprintf(id, sizeof id, "r%05zu", i);
        tracks.push_back(make_track(id, "song " + std::to_string(i), "a", "artist", std::move(tags)));
    }
    return MusicDatabase::build(std::move(tracks));
}

FilterProgram random_program(const MusicDatabase& db, std::mt19937_64& rng, std::size_t max_steps) {
    std::vector<AttributeTag> pool;
    for (TagId t = 0; t < db.vocabulary_size(); ++t) pool.push_back(db.tag(t));
    pool.push_back(tag(AttributeCategory::mood, "zzz"));
    pool.push_back(tag(AttributeCategory::genre, "not in db"));
    const std::size_t steps = std::uniform_int_distribution<std::size_t>(0, max_steps)(rng);
    FilterProgram program;
    for (std::size_t s = 0; s < steps; ++s) {
        const int mode = std::uniform_int_distribution<int>(0, 9)(rng);
        const auto& t = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
        FilterStep step = mode < 6 ? FilterStep::include(t) : mode < 9 ? FilterStep::exclude(t) : FilterStep::keep();
        if (program.can_extend(step)) program = extend(program, step);
    }
    return program;
}

std::set<std::string> brute_force_eval(const MusicDatabase& db, const FilterProgram& program) {
    std::set<std::string> out;
    for (const auto& track : db.tracks()) {
        bool alive = true;
        for (const auto& step : program.steps()) {
            if (step.mode == FilterMode::include) alive = alive && record_has(track, *step.tag);
            if (step.mode == FilterMode::exclude) alive = alive && !record_has(track, *step.tag);
        }
        if (alive) out.insert(track.track_id);
    }
    return out;
}

std::vector<AttributeTag> brute_force_top_k(const MusicDatabase& db, const std::set<std::string>& candidates,
                                            const std::set<AttributeTag>& used, std::size_t k) {
    std::map<AttributeTag, std::size_t> counts;
    for (const auto& track : db.tracks()) {
        if (!candidates.count(track.track_id)) continue;
        for (const auto& t : track.tags) {
            if (!used.count(t)) ++counts[t];
        }
    }
    std::vector<std::pair<AttributeTag, std::size_t>> ranked(counts.begin(), counts.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        const auto ca = category_name(a.first.category);
        const auto cb = category_name(b.first.category);
        if (ca != cb) return ca < cb;
        return a.first.value < b.first.value;
    });
    std::vector<AttributeTag> out;
    for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i) out.push_back(ranked[i].first);
    return out;
}

MusicDatabase synthetic_catalog(std::size_t n_tracks, std::uint64_t seed) {
    using C = AttributeCategory;
    std::mt19937_64 rng(seed);
    auto pick = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
    auto coin = [&](double p) { return std::bernoulli_distribution(p)(rng); };

    const std::vector<std::string> genres = {"edm",  "rock", "pop",    "jazz",   "classical", "hip hop",
                                             "folk", "metal", "country", "reggae", "blues",     "soul"};
    const std::vector<std::string> moods = {"happy", "sad",      "energetic", "calm",    "dark",
                                            "romantic", "dreamy", "angry",     "uplifting", "melancholic"};
    const std::vector<std::string> themes = {"party", "workout", "study", "sleep", "driving", "summer", "love", "rainy day"};
    const std::vector<std::string> instruments = {"piano", "guitar", "synth", "drums", "violin",
                                                  "saxophone", "bass", "trumpet", "cello", "organ"};
    const std::vector<std::string> vocals = {"female vocalists", "male vocalists", "instrumental"};
    const std::vector<std::string> cultures = {"american", "british", "korean", "french", "brazilian", "german", "japanese", "swedish"};
    const std::vector<std::string> keys = {"c major", "g major", "d major", "a major", "e major", "f major",
                                           "a minor", "e minor", "d minor", "b minor", "c minor", "g minor"};
    const std::array<double, 12> genre_bpm = {128, 120, 115, 100, 80, 95, 90, 140, 105, 85, 88, 98};

    struct Artist {
        std::string id, name, culture;
        std::size_t genre;
        double familiarity;
        int base_year;
    };
    const std::size_t n_artists = std::max<std::size_t>(1, n_tracks / 20);
    std::vector<Artist> artists;
    for (std::size_t a = 0; a < n_artists; ++a) {
        Artist ar;
        ar.id = "ar" + std::to_string(a);
        ar.name = "artist " + std::to_string(a);
        ar.genre = pick(genres.size());
        ar.culture = cultures[pick(cultures.size())];
        ar.familiarity = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        ar.base_year = 1960 + static_cast<int>(pick(60));
        artists.push_back(ar);
    }

    std::vector<TrackRecord> tracks;
    tracks.reserve(n_tracks);
    for (std::size_t i = 0; i < n_tracks; ++i) {
        const auto& ar = artists[pick(artists.size())];
        const std::size_t g = coin(0.85) ? ar.genre : pick(genres.size());
        TrackRecord t;
        char id[16];
        std::snprintf(id, sizeof id, "s%06zu", i);
        t.track_id = id;
        t.title = "song " + std::to_string(i);
        t.artist_id = ar.id;
        t.artist_name = ar.name;
        t.year = std::clamp(ar.base_year + static_cast<int>(pick(11)) - 5, 1950, 2024);
        t.familiarity_percentile = ar.familiarity;
        t.bpm = std::max(40.0, std::normal_distribution<double>(genre_bpm[g], 18.0)(rng));
        t.key_mode = keys[pick(keys.size())];

        t.add_tag(tag(C::genre, genres[g]));
        t.add_tag(tag(C::artist, ar.name));
        t.add_tag(tag(C::culture, ar.culture));
        // Moods, themes and instruments lean on a genre-specific window.
        auto correlated = [&](const std::vector<std::string>& values, std::size_t offset) {
            return coin(0.7) ? values[(g * offset + pick(3)) % values.size()] : values[pick(values.size())];
        };
        t.add_tag(tag(C::mood, correlated(moods, 3)));
        if (coin(0.4)) t.add_tag(tag(C::mood, correlated(moods, 3)));
        t.add_tag(tag(C::theme, correlated(themes, 2)));
        if (coin(0.3)) t.add_tag(tag(C::theme, correlated(themes, 2)));
        t.add_tag(tag(C::instrument, correlated(instruments, 3)));
        t.add_tag(tag(C::instrument, correlated(instruments, 3)));
        t.add_tag(tag(C::vocal, vocals[pick(vocals.size())]));
        apply_quantization(t);
        tracks.push_back(std::move(t));
    }
    return MusicDatabase::build(std::move(tracks));
}

std::vector<std::string> plan_violations(const MusicDatabase& db, const DialoguePlan& plan, const PlanConfig& cfg) {
    std::vector<std::string> v;
    auto fail = [&](std::size_t turn, const std::string& what) {
        v.push_back(plan.dialogue_id + " turn " + std::to_string(turn + 1) + ": " + what);
    };
    if (plan.turns.empty()) {
        v.push_back(plan.dialogue_id + ": no turns");
        return v;
    }
    if (!plan.turns.front().has_intent(UserIntent::initial_query)) fail(0, "missing initial_query");

    std::set<std::string> prev_candidates;
    std::vector<FilterStep> prev_steps;
    std::set<AttributeTag> used;
    for (std::size_t i = 0; i < plan.turns.size(); ++i) {
        const auto& turn = plan.turns[i];
        if (turn.turn_index != static_cast<int>(i + 1)) fail(i, "turn_index out of sequence");
        if (turn.user_intents.empty() || turn.system_actions.empty()) fail(i, "empty intents or actions");

        const bool pos = turn.has_intent(UserIntent::positive_filter);
        const bool neg = turn.has_intent(UserIntent::negative_filter);
        const bool cont = turn.has_intent(UserIntent::continue_);
        const bool question = turn.has_intent(UserIntent::item_attribute_question);
        const auto mode = turn.step ? std::optional<FilterMode>(turn.step->mode) : std::nullopt;
        if (pos != (mode == FilterMode::include)) fail(i, "positive_filter does not match an include step");
        if (neg != (mode == FilterMode::exclude)) fail(i, "negative_filter does not match an exclude step");
        if (cont != (mode == FilterMode::continue_)) fail(i, "continue does not match a continue step");
        if (question != turn.question.has_value()) fail(i, "item question without question payload");
        if (question && turn.step) fail(i, "item question with a filter step");
        if (turn.has_action(SystemAction::item_attribute_answer) != question) fail(i, "item_attribute_answer mismatch");
        if (turn.has_action(SystemAction::passive_recommendation) == question) fail(i, "passive/active mismatch");

        // Prefix consistency.
        auto expected = prev_steps;
        if (turn.step) expected.push_back(*turn.step);
        if (turn.program_after.steps() != expected) fail(i, "program is not an extension of the previous one");

        const auto candidates = brute_force_eval(db, turn.program_after);
        if (candidates.size() != turn.candidate_count) fail(i, "candidate_count differs from brute force");
        if (candidates.size() < cfg.min_candidates) fail(i, "candidates below threshold");
        std::set<std::string> ids(turn.track_ids.begin(), turn.track_ids.end());
        if (ids.size() != turn.track_ids.size()) fail(i, "duplicate track ids");
        if (turn.track_ids.size() != std::min(cfg.tracks_per_turn, candidates.size())) fail(i, "wrong track count");
        for (const auto& id : turn.track_ids) {
            if (!candidates.count(id)) fail(i, "track " + id + " is not a candidate");
        }

        if (i > 0) {
            if (candidates.size() > prev_candidates.size()) fail(i, "candidate set grew");
            if ((cont || question) && candidates != prev_candidates) fail(i, "candidates changed without a filter");
            if (pos || neg) {
                const auto top = brute_force_top_k(db, prev_candidates, used, cfg.top_k);
                if (std::find(top.begin(), top.end(), *turn.step->tag) == top.end()) {
                    fail(i, turn.step->tag->to_string() + " is not in the top-k of the previous candidates");
                }
            }
            if (question) {
                const auto& shown = plan.turns[i - 1].track_ids;
                if (std::find(shown.begin(), shown.end(), turn.question->track_id) == shown.end()) {
                    fail(i, "question about a track that was not shown");
                } else if (!db.track(db.index_of(turn.question->track_id)).has_tag(turn.question->attribute)) {
                    fail(i, "question attribute is not a tag of the track");
                }
            }
        }
        if (turn.step && turn.step->tag) used.insert(*turn.step->tag);
        prev_candidates = candidates;
        prev_steps = expected;
    }
    return v;
}

InteractionMatrix random_interactions(std::uint64_t seed, Eigen::Index users, Eigen::Index items, double density) {
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution fill(density);
    std::uniform_int_distribution<int> count(1, 5);
    std::set<std::pair<Eigen::Index, Eigen::Index>> cells;
    for (Eigen::Index u = 0; u < users; ++u) {
        for (Eigen::Index i = 0; i < items; ++i) {
            if (fill(rng)) cells.insert({u, i});
        }
    }
    for (Eigen::Index u = 0; u < users; ++u) cells.insert({u, std::uniform_int_distribution<Eigen::Index>(0, items - 1)(rng)});
    for (Eigen::Index i = 0; i < items; ++i) cells.insert({std::uniform_int_distribution<Eigen::Index>(0, users - 1)(rng), i});
    std::vector<InteractionMatrix::Entry> entries;
    for (const auto& [u, i] : cells) entries.push_back({u, i, static_cast<double>(count(rng))});
    return InteractionMatrix(users, items, std::move(entries));
}

double direct_weighted_loss(const FactorModel& model, const InteractionMatrix& m) {
    std::map<std::pair<Eigen::Index, Eigen::Index>, double> observed;
    for (const auto& e : m.entries()) observed[{e.user, e.item}] = e.count;
    double loss = 0.0;
    for (Eigen::Index u = 0; u < m.n_users(); ++u) {
        for (Eigen::Index i = 0; i < m.n_items(); ++i) {
            const auto it = observed.find({u, i});
            const double p = it == observed.end() ? 0.0 : 1.0;
            const double c = it == observed.end() ? 1.0 : model.confidence(it->second);
            double dot = 0.0;
            for (Eigen::Index f = 0; f < model.user_factors.cols(); ++f) {
                dot += model.user_factors(u, f) * model.item_factors(i, f);
            }
            loss += c * (p - dot) * (p - dot);
        }
    }
    double sq = 0.0;
    for (Eigen::Index r = 0; r < model.user_factors.rows(); ++r)
        for (Eigen::Index f = 0; f < model.user_factors.cols(); ++f) sq += model.user_factors(r, f) * model.user_factors(r, f);
    for (Eigen::Index r = 0; r < model.item_factors.rows(); ++r)
        for (Eigen::Index f = 0; f < model.item_factors.cols(); ++f) sq += model.item_factors(r, f) * model.item_factors(r, f);
    return loss + model.reg * sq;
}

PairData two_cluster_pairs(std::uint64_t seed, Eigen::Index n, Eigen::Index dim) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    auto gaussian = [&](Eigen::Index r, Eigen::Index c) {
        Eigen::MatrixXd m(r, c);
        for (Eigen::Index i = 0; i < r; ++i)
            for (Eigen::Index j = 0; j < c; ++j) m(i, j) = g(rng);
        return m;
    };
    const Eigen::MatrixXd centers = 2.0 * gaussian(2, dim);
    const Eigen::MatrixXd map = gaussian(dim, dim) / std::sqrt(static_cast<double>(dim));
    PairData out;
    out.chat.resize(n, dim);
    for (Eigen::Index i = 0; i < n; ++i) out.chat.row(i) = centers.row(i % 2) + gaussian(1, dim);
    out.music = out.chat * map + 0.05 * gaussian(n, dim);
    return out;
}

namespace {

double pair_loss(const AdapterPair<double>& p, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, double tau) {
    return infonce_loss(forward_batch(p.text, x).output, forward_batch(p.music_side(), y).output, tau);
}

}  // namespace

double max_gradient_error(std::uint64_t seed, bool shared, double eps) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    AdapterPair<double> p;
    p.shared = shared;
    p.text = MlpAdapter<double>::glorot(5, 4, 3, rng);
    p.text.b1 = Eigen::VectorXd::NullaryExpr(4, [&] { return 0.1 * g(rng); });
    p.text.b2 = Eigen::VectorXd::NullaryExpr(3, [&] { return 0.1 * g(rng); });
    if (!shared) {
        p.music = MlpAdapter<double>::glorot(5, 4, 3, rng);
        p.music.b2 = Eigen::VectorXd::NullaryExpr(3, [&] { return 0.1 * g(rng); });
    }
    const Eigen::MatrixXd x = Eigen::MatrixXd::NullaryExpr(4, 5, [&] { return g(rng); });
    const Eigen::MatrixXd y = Eigen::MatrixXd::NullaryExpr(4, 5, [&] { return g(rng); });
    const double tau = 0.5;
    const auto grads = infonce_gradients(p, x, y, tau);

    double worst = 0.0;
    auto check = [&](auto& param, const auto& analytic) {
        for (Eigen::Index i = 0; i < param.size(); ++i) {
            const double keep = param.data()[i];
            param.data()[i] = keep + eps;
            const double up = pair_loss(p, x, y, tau);
            param.data()[i] = keep - eps;
            const double down = pair_loss(p, x, y, tau);
            param.data()[i] = keep;
            const double numeric = (up - down) / (2.0 * eps);
            const double a = analytic.data()[i];
            worst = std::max(worst, std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6}));
        }
    };
    check(p.text.w1, grads.text.w1);
    check(p.text.b1, grads.text.b1);
    check(p.text.w2, grads.text.w2);
    check(p.text.b2, grads.text.b2);
    if (!shared) {
        check(p.music.w1, grads.music.w1);
        check(p.music.b1, grads.music.b1);
        check(p.music.w2, grads.music.w2);
        check(p.music.b2, grads.music.b2);
    }
    return worst;
}

TempDir::TempDir() {
    static std::mt19937_64 rng(std::random_device{}());
    path_ = std::filesystem::temp_directory_path() / ("mdgen-test-" + std::to_string(rng()));
    std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

}  // namespace mdgen::testing
