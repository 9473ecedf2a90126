#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "mdgen/filter.hpp"
#include "mdgen/music_db.hpp"

namespace mdgen {

using Rng = std::mt19937_64;

enum class UserIntent : std::uint8_t {
    initial_query,
    greeting,
    positive_filter,
    negative_filter,
    continue_,
    item_attribute_question,
    accept_response,
    reject_response,
};

enum class SystemAction : std::uint8_t {
    feedback_request,
    detail_attribute_request,
    passive_recommendation,
    active_recommendation,
    item_attribute_answer,
    parroting_response,
    sympathetic_response,
};

inline constexpr std::array<UserIntent, 8> kAllUserIntents = {
    UserIntent::initial_query,   UserIntent::greeting,
    UserIntent::positive_filter, UserIntent::negative_filter,
    UserIntent::continue_,       UserIntent::item_attribute_question,
    UserIntent::accept_response, UserIntent::reject_response,
};

inline constexpr std::array<SystemAction, 7> kAllSystemActions = {
    SystemAction::feedback_request,       SystemAction::detail_attribute_request,
    SystemAction::passive_recommendation, SystemAction::active_recommendation,
    SystemAction::item_attribute_answer,  SystemAction::parroting_response,
    SystemAction::sympathetic_response,
};

std::string_view intent_name(UserIntent i);
std::optional<UserIntent> intent_from_name(std::string_view name);
std::string_view action_name(SystemAction a);
std::optional<SystemAction> action_from_name(std::string_view name);

/// Per-slot occurrence rates for intent and action sampling.
///
/// A user turn is assembled from independent slots: a start slot (first turn
/// only), a feedback slot (accept / reject / none) and a discovery slot
/// (positive / negative / continue / item question, renormalized). System
/// turns use a general-response slot plus two independent request flags.
struct IntentModel {
    double greeting = 0.65;
    double accept_response = 0.555;
    double reject_response = 0.060;
    double positive_filter = 0.767;
    double negative_filter = 0.037;
    double continue_ = 0.068;
    double item_attribute_question = 0.002;
    double sympathetic_response = 0.572;
    double parroting_response = 0.254;
    double feedback_request = 0.128;
    double detail_attribute_request = 0.208;
    std::string scheme = "slots-v1";

    /// Throws InvalidArgument if a rate is outside [0,1] or a slot cannot be normalized.
    void validate() const;

    /// {positive, negative, continue, item_attribute_question}, summing to 1.
    std::array<double, 4> discovery_weights() const;
    /// {accept, reject, none}, summing to 1.
    std::array<double, 3> feedback_weights() const;
    /// {sympathetic, parroting, none}, summing to 1.
    std::array<double, 3> general_response_weights() const;

    /// Every rate set to zero.
    static IntentModel zeros();
};

struct PlanConfig {
    int min_turns = 3;
    int max_turns = 7;
    std::size_t tracks_per_turn = 10;
    std::size_t top_k = 20;
    std::size_t min_candidates = 3;
    std::size_t max_resample = 10;
    std::size_t min_initial_support = 20;

    void validate() const;
};

/// Track attribute a user asks about on an item_attribute_question turn.
struct ItemQuestion {
    std::string track_id;
    AttributeTag attribute;

    bool operator==(const ItemQuestion&) const = default;
};

struct TurnPlan {
    int turn_index = 1;
    std::vector<UserIntent> user_intents;
    std::vector<SystemAction> system_actions;
    std::optional<FilterStep> step;
    FilterProgram program_after;
    std::size_t candidate_count = 0;
    std::vector<std::string> track_ids;
    std::optional<ItemQuestion> question;

    bool has_intent(UserIntent i) const;
    bool has_action(SystemAction a) const;

    bool operator==(const TurnPlan&) const = default;
};

struct DialoguePlan {
    std::string dialogue_id;
    std::uint64_t seed = 0;
    std::vector<TurnPlan> turns;

    bool operator==(const DialoguePlan&) const = default;
};

/// Stream seed for dialogue `index` under `master_seed` (splitmix64 mix).
std::uint64_t dialogue_seed(std::uint64_t master_seed, std::uint64_t index);

/// Up to k unused tags present in `candidates`, ranked by
/// (count desc, category name asc, value asc).
std::vector<TagId> top_k_attributes(const MusicDatabase& db, const IdSet& candidates,
                                    const std::vector<bool>& used, std::size_t k);

/// Uniform draw from the top-k unused attributes of `candidates`;
/// std::nullopt signals exhaustion. Throws InvalidArgument on empty candidates.
std::optional<AttributeTag> sample_next_attribute(const MusicDatabase& db, const IdSet& candidates,
                                                  const std::set<AttributeTag>& used, std::size_t k,
                                                  Rng& rng);

/// min(n, |candidates|) distinct positions drawn uniformly without replacement.
std::vector<TrackIndex> sample_turn_tracks(const IdSet& candidates, std::size_t n, Rng& rng);

/// Samples a full symbolic dialogue. Deterministic given `seed`.
/// Throws DataError if no tag reaches the initial support threshold.
DialoguePlan sample_plan(const MusicDatabase& db, const IntentModel& model, const PlanConfig& cfg,
                         std::uint64_t seed, std::string dialogue_id = {});

/// `count` plans with ids "dlg-<index>" and seeds dialogue_seed(master_seed, index),
/// generated on `threads` workers; output order is by index.
std::vector<DialoguePlan> sample_plans(const MusicDatabase& db, const IntentModel& model,
                                       const PlanConfig& cfg, std::uint64_t master_seed,
                                       std::size_t count, std::size_t threads = 0);

std::string format_dialogue_id(std::size_t index);

}  // namespace mdgen
