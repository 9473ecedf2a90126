#include "mdgen/planner.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <span>

#include "mdgen/error.hpp"
#include "mdgen/parallel.hpp"

namespace mdgen {

namespace {

constexpr std::array<std::string_view, 8> kIntentNames = {
    "initial_query", "greeting",        "positive_filter", "negative_filter",
    "continue",      "item_attribute_question", "accept_response", "reject_response",
};

constexpr std::array<std::string_view, 7> kActionNames = {
    "feedback_request",     "detail_attribute_request", "passive_recommendation", "active_recommendation",
    "item_attribute_answer", "parroting_response",      "sympathetic_response",
};

double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

bool draw(double p, Rng& rng) { return uniform01(rng) < p; }

std::size_t draw_categorical(std::span<const double> weights, Rng& rng) {
    const double u = uniform01(rng);
    double acc = 0.0;
    std::size_t last_positive = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (weights[i] <= 0.0) continue;
        acc += weights[i];
        last_positive = i;
        if (u < acc) return i;
    }
    return last_positive;  // rounding slack
}

std::size_t draw_index(std::size_t n, Rng& rng) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

void check_rate(double r, const char* name) {
    if (!(r >= 0.0 && r <= 1.0)) throw InvalidArgument(std::string("rate outside [0,1]: ") + name);
}

// Category names in alphabetical order differ from enum order; rank once.
const std::array<std::uint8_t, 15>& category_name_rank() {
    static const std::array<std::uint8_t, 15> rank = [] {
        std::array<AttributeCategory, 15> sorted = kAllCategories;
        std::sort(sorted.begin(), sorted.end(),
                  [](AttributeCategory a, AttributeCategory b) { return category_name(a) < category_name(b); });
        std::array<std::uint8_t, 15> r{};
        for (std::uint8_t i = 0; i < sorted.size(); ++i) r[static_cast<std::size_t>(sorted[i])] = i;
        return r;
    }();
    return rank;
}

void mark(std::vector<bool>& used, TagId id) {
    if (used.size() <= id) used.resize(id + 1, false);
    used[id] = true;
}

std::vector<std::string> to_ids(const MusicDatabase& db, std::span<const TrackIndex> picks) {
    std::vector<std::string> out;
    out.reserve(picks.size());
    for (TrackIndex i : picks) out.push_back(db.track(i).track_id);
    return out;
}

void add_system_actions(TurnPlan& turn, const IntentModel& model, bool explicit_query, bool detail_eligible,
                        Rng& rng) {
    const auto general = model.general_response_weights();
    const std::size_t g = draw_categorical(general, rng);
    const bool feedback_request = draw(model.feedback_request, rng);
    const bool detail_request = draw(model.detail_attribute_request, rng) && detail_eligible;

    if (g == 0) turn.system_actions.push_back(SystemAction::sympathetic_response);
    if (g == 1) turn.system_actions.push_back(SystemAction::parroting_response);
    turn.system_actions.push_back(explicit_query ? SystemAction::passive_recommendation
                                                 : SystemAction::active_recommendation);
    if (turn.has_intent(UserIntent::item_attribute_question)) {
        turn.system_actions.push_back(SystemAction::item_attribute_answer);
    }
    if (detail_request) turn.system_actions.push_back(SystemAction::detail_attribute_request);
    if (feedback_request) turn.system_actions.push_back(SystemAction::feedback_request);
}

}  // namespace

std::string_view intent_name(UserIntent i) { return kIntentNames.at(static_cast<std::size_t>(i)); }

std::optional<UserIntent> intent_from_name(std::string_view name) {
    for (std::size_t i = 0; i < kIntentNames.size(); ++i) {
        if (kIntentNames[i] == name) return static_cast<UserIntent>(i);
    }
    return std::nullopt;
}

std::string_view action_name(SystemAction a) { return kActionNames.at(static_cast<std::size_t>(a)); }

std::optional<SystemAction> action_from_name(std::string_view name) {
    for (std::size_t i = 0; i < kActionNames.size(); ++i) {
        if (kActionNames[i] == name) return static_cast<SystemAction>(i);
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// IntentModel / PlanConfig
// ---------------------------------------------------------------------------

void IntentModel::validate() const {
    check_rate(greeting, "greeting");
    check_rate(accept_response, "accept_response");
    check_rate(reject_response, "reject_response");
    check_rate(positive_filter, "positive_filter");
    check_rate(negative_filter, "negative_filter");
    check_rate(continue_, "continue");
    check_rate(item_attribute_question, "item_attribute_question");
    check_rate(sympathetic_response, "sympathetic_response");
    check_rate(parroting_response, "parroting_response");
    check_rate(feedback_request, "feedback_request");
    check_rate(detail_attribute_request, "detail_attribute_request");
    if (accept_response + reject_response > 1.0 + 1e-12) {
        throw InvalidArgument("accept_response + reject_response exceeds 1");
    }
    if (positive_filter + negative_filter + continue_ + item_attribute_question <= 0.0) {
        throw InvalidArgument("discovery slot has zero total weight");
    }
}

std::array<double, 4> IntentModel::discovery_weights() const {
    std::array<double, 4> w = {positive_filter, negative_filter, continue_, item_attribute_question};
    const double total = w[0] + w[1] + w[2] + w[3];
    if (total <= 0.0) throw InvalidArgument("discovery slot has zero total weight");
    for (auto& x : w) x /= total;
    return w;
}

std::array<double, 3> IntentModel::feedback_weights() const {
    return {accept_response, reject_response, std::max(0.0, 1.0 - accept_response - reject_response)};
}

std::array<double, 3> IntentModel::general_response_weights() const {
    const double total = sympathetic_response + parroting_response;
    if (total > 1.0) return {sympathetic_response / total, parroting_response / total, 0.0};
    return {sympathetic_response, parroting_response, 1.0 - total};
}

IntentModel IntentModel::zeros() {
    IntentModel m;
    m.greeting = m.accept_response = m.reject_response = 0.0;
    m.positive_filter = m.negative_filter = m.continue_ = m.item_attribute_question = 0.0;
    m.sympathetic_response = m.parroting_response = 0.0;
    m.feedback_request = m.detail_attribute_request = 0.0;
    return m;
}

void PlanConfig::validate() const {
    if (min_turns < 1 || max_turns < min_turns) throw InvalidArgument("invalid turn range");
    if (tracks_per_turn < 1) throw InvalidArgument("tracks_per_turn must be >= 1");
    if (top_k < 1) throw InvalidArgument("top_k must be >= 1");
    if (min_candidates < 1) throw InvalidArgument("min_candidates must be >= 1");
    if (max_resample < 1) throw InvalidArgument("max_resample must be >= 1");
}

bool TurnPlan::has_intent(UserIntent i) const {
    return std::find(user_intents.begin(), user_intents.end(), i) != user_intents.end();
}

bool TurnPlan::has_action(SystemAction a) const {
    return std::find(system_actions.begin(), system_actions.end(), a) != system_actions.end();
}

// ---------------------------------------------------------------------------
// Sampling primitives
// ---------------------------------------------------------------------------

std::uint64_t dialogue_seed(std::uint64_t master_seed, std::uint64_t index) {
    std::uint64_t z = master_seed + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::vector<TagId> top_k_attributes(const MusicDatabase& db, const IdSet& candidates,
                                    const std::vector<bool>& used, std::size_t k) {
    auto counts = tag_counts(db, candidates, used);
    const auto& rank = category_name_rank();
    auto before = [&](const std::pair<TagId, std::size_t>& a, const std::pair<TagId, std::size_t>& b) {
        if (a.second != b.second) return a.second > b.second;
        const auto& ta = db.tag(a.first);
        const auto& tb = db.tag(b.first);
        const auto ra = rank[static_cast<std::size_t>(ta.category)];
        const auto rb = rank[static_cast<std::size_t>(tb.category)];
        if (ra != rb) return ra < rb;
        return ta.value < tb.value;
    };
    const std::size_t take = std::min(k, counts.size());
    std::partial_sort(counts.begin(), counts.begin() + static_cast<std::ptrdiff_t>(take), counts.end(), before);
    std::vector<TagId> out;
    out.reserve(take);
    for (std::size_t i = 0; i < take; ++i) out.push_back(counts[i].first);
    return out;
}

std::optional<AttributeTag> sample_next_attribute(const MusicDatabase& db, const IdSet& candidates,
                                                  const std::set<AttributeTag>& used, std::size_t k,
                                                  Rng& rng) {
    if (candidates.empty()) throw InvalidArgument("sample_next_attribute: empty candidate set");
    if (k < 1) throw InvalidArgument("sample_next_attribute: k must be >= 1");
    std::vector<bool> used_ids(db.vocabulary_size(), false);
    for (const auto& tag : used) {
        if (auto id = db.find_tag(tag)) used_ids[*id] = true;
    }
    const auto pool = top_k_attributes(db, candidates, used_ids, k);
    if (pool.empty()) return std::nullopt;
    return db.tag(pool[draw_index(pool.size(), rng)]);
}

std::vector<TrackIndex> sample_turn_tracks(const IdSet& candidates, std::size_t n, Rng& rng) {
    if (n < 1) throw InvalidArgument("sample_turn_tracks: n must be >= 1");
    if (candidates.empty()) throw InvalidArgument("sample_turn_tracks: empty candidate set");
    std::vector<TrackIndex> out;
    out.reserve(std::min(n, candidates.size()));
    std::sample(candidates.begin(), candidates.end(), std::back_inserter(out), n, rng);
    return out;
}

// ---------------------------------------------------------------------------
// Plans
// ---------------------------------------------------------------------------

DialoguePlan sample_plan(const MusicDatabase& db, const IntentModel& model, const PlanConfig& cfg,
                         std::uint64_t seed, std::string dialogue_id) {
    model.validate();
    cfg.validate();
    if (db.empty()) throw DataError("empty database");

    const std::size_t min_support = std::max(cfg.min_initial_support, cfg.min_candidates);
    std::vector<TagId> eligible;
    for (TagId t = 0; t < db.vocabulary_size(); ++t) {
        if (db.document_count(t) >= min_support) eligible.push_back(t);
    }
    if (eligible.empty()) {
        throw DataError("no attribute has support >= " + std::to_string(min_support));
    }

    Rng rng(seed);
    DialoguePlan plan;
    plan.dialogue_id = std::move(dialogue_id);
    plan.seed = seed;

    const int n_turns = std::uniform_int_distribution<int>(cfg.min_turns, cfg.max_turns)(rng);

    // Turn 1: uniform over supported attributes.
    const TagId first = eligible[draw_index(eligible.size(), rng)];
    std::vector<bool> used(db.vocabulary_size(), false);
    mark(used, first);
    FilterProgram program = extend(FilterProgram{}, FilterStep::include(db.tag(first)));
    auto postings = db.postings(first);
    IdSet candidates(postings.begin(), postings.end());

    {
        TurnPlan turn;
        turn.turn_index = 1;
        if (draw(model.greeting, rng)) turn.user_intents.push_back(UserIntent::greeting);
        turn.user_intents.push_back(UserIntent::initial_query);
        turn.user_intents.push_back(UserIntent::positive_filter);
        turn.step = program.steps().back();
        turn.program_after = program;
        turn.candidate_count = candidates.size();
        add_system_actions(turn, model, /*explicit_query=*/true, /*detail_eligible=*/false, rng);
        turn.track_ids = to_ids(db, sample_turn_tracks(candidates, cfg.tracks_per_turn, rng));
        plan.turns.push_back(std::move(turn));
    }

    const auto discovery = model.discovery_weights();
    const auto feedback = model.feedback_weights();

    for (int t = 2; t <= n_turns; ++t) {
        TurnPlan turn;
        turn.turn_index = t;

        const std::size_t fb = draw_categorical(feedback, rng);
        if (fb == 0) turn.user_intents.push_back(UserIntent::accept_response);
        if (fb == 1) turn.user_intents.push_back(UserIntent::reject_response);

        std::size_t slot = draw_categorical(discovery, rng);
        std::optional<FilterStep> step;
        IdSet next = candidates;

        if (slot == 0 || slot == 1) {
            const bool include = slot == 0;
            auto pool = top_k_attributes(db, candidates, used, cfg.top_k);
            bool accepted = false;
            for (std::size_t attempt = 0; attempt < cfg.max_resample && !pool.empty(); ++attempt) {
                const std::size_t pick = draw_index(pool.size(), rng);
                const TagId tag = pool[pick];
                IdSet trial = include ? intersect(candidates, db.postings(tag)) : subtract(candidates, db.postings(tag));
                if (trial.size() >= cfg.min_candidates) {
                    step = include ? FilterStep::include(db.tag(tag)) : FilterStep::exclude(db.tag(tag));
                    mark(used, tag);
                    next = std::move(trial);
                    accepted = true;
                    break;
                }
                pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
            }
            if (!accepted) {
                if (include) break;  // cannot narrow while keeping enough candidates
                slot = 2;            // infeasible exclusion degrades to continue
            }
        }
        if (slot == 2) step = FilterStep::keep();

        if (slot == 3) {
            const auto& shown = plan.turns.back().track_ids;
            const TrackRecord& tr = db.track(db.index_of(shown[draw_index(shown.size(), rng)]));
            if (!tr.tags.empty()) {
                turn.question = ItemQuestion{tr.track_id, tr.tags[draw_index(tr.tags.size(), rng)]};
            } else {
                slot = 2;
                step = FilterStep::keep();
            }
        }

        constexpr std::array<UserIntent, 4> kSlotIntent = {UserIntent::positive_filter, UserIntent::negative_filter,
                                                           UserIntent::continue_,
                                                           UserIntent::item_attribute_question};
        turn.user_intents.push_back(kSlotIntent[slot]);

        if (step) program = extend(program, *step);
        candidates = std::move(next);
        turn.step = step;
        turn.program_after = program;
        turn.candidate_count = candidates.size();

        const bool explicit_query = slot != 3;
        const bool detail_eligible = slot == 2 || !explicit_query;
        add_system_actions(turn, model, explicit_query, detail_eligible, rng);
        turn.track_ids = to_ids(db, sample_turn_tracks(candidates, cfg.tracks_per_turn, rng));
        plan.turns.push_back(std::move(turn));
    }
    return plan;
}

std::string format_dialogue_id(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "dlg-%06zu", index);
    return buf;
}

std::vector<DialoguePlan> sample_plans(const MusicDatabase& db, const IntentModel& model,
                                       const PlanConfig& cfg, std::uint64_t master_seed,
                                       std::size_t count, std::size_t threads) {
    std::vector<DialoguePlan> plans(count);
    parallel_for(count, threads, [&](std::size_t i) {
        plans[i] = sample_plan(db, model, cfg, dialogue_seed(master_seed, i), format_dialogue_id(i));
    });
    return plans;
}

}  // namespace mdgen
