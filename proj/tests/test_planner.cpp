#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "mdgen/error.hpp"
#include "mdgen/planner.hpp"
#include "support/fixtures.hpp"

namespace mdgen {
namespace {

using testing::d0;
using testing::tag;
using C = AttributeCategory;

PlanConfig small_config() {
    PlanConfig cfg;
    cfg.min_turns = 2;
    cfg.max_turns = 2;
    cfg.tracks_per_turn = 2;
    cfg.min_candidates = 1;
    cfg.min_initial_support = 1;
    return cfg;
}

TEST(Names, IntentAndActionNamesRoundTrip) {
    for (auto i : kAllUserIntents) EXPECT_EQ(intent_from_name(intent_name(i)), i);
    for (auto a : kAllSystemActions) EXPECT_EQ(action_from_name(action_name(a)), a);
    EXPECT_EQ(intent_name(UserIntent::continue_), "continue");
    EXPECT_FALSE(intent_from_name("hello").has_value());
}

TEST(IntentModel, SlotWeightsAreNormalized) {
    const IntentModel m;
    const auto d = m.discovery_weights();
    EXPECT_NEAR(d[0] + d[1] + d[2] + d[3], 1.0, 1e-12);
    EXPECT_NEAR(d[0], 0.767 / (0.767 + 0.037 + 0.068 + 0.002), 1e-12);
    const auto f = m.feedback_weights();
    EXPECT_NEAR(f[2], 1.0 - 0.555 - 0.060, 1e-12);
    const auto g = m.general_response_weights();
    EXPECT_NEAR(g[0] + g[1] + g[2], 1.0, 1e-12);
}

TEST(IntentModel, RejectsInvalidRates) {
    IntentModel m;
    m.greeting = 1.5;
    EXPECT_THROW(m.validate(), InvalidArgument);
    m = IntentModel{};
    m.accept_response = 0.7;
    m.reject_response = 0.5;
    EXPECT_THROW(m.validate(), InvalidArgument);
    EXPECT_THROW(IntentModel::zeros().validate(), InvalidArgument);
}

TEST(PlanConfig, RejectsInvalidSettings) {
    PlanConfig cfg;
    cfg.min_turns = 5;
    cfg.max_turns = 4;
    EXPECT_THROW(cfg.validate(), InvalidArgument);
    cfg = PlanConfig{};
    cfg.top_k = 0;
    EXPECT_THROW(cfg.validate(), InvalidArgument);
}

// ---------------------------------------------------------------------------
// Sampling primitives
// ---------------------------------------------------------------------------

TEST(SampleNextAttribute, TopKOnEdmCandidates) {
    const auto db = d0();
    const IdSet edm = db.to_index_set(std::vector<std::string>{"t1", "t2", "t3", "t6"});
    Rng rng(1);
    // Unused counts inside edm: tempo:fast 3, theme:party 2, then singletons.
    for (int i = 0; i < 20; ++i) {
        EXPECT_EQ(sample_next_attribute(db, edm, {tag(C::genre, "edm")}, 1, rng), tag(C::tempo, "fast"));
    }
    std::set<AttributeTag> seen;
    for (int i = 0; i < 200; ++i) seen.insert(*sample_next_attribute(db, edm, {tag(C::genre, "edm")}, 2, rng));
    EXPECT_EQ(seen, (std::set<AttributeTag>{tag(C::tempo, "fast"), tag(C::theme, "party")}));
}

TEST(SampleNextAttribute, ExhaustionAndErrors) {
    const auto db = d0();
    Rng rng(2);
    const IdSet t5 = db.to_index_set(std::vector<std::string>{"t5"});
    const std::set<AttributeTag> all_of_t5{tag(C::genre, "rock"), tag(C::mood, "sad"), tag(C::tempo, "slow")};
    EXPECT_FALSE(sample_next_attribute(db, t5, all_of_t5, 5, rng).has_value());
    EXPECT_THROW(sample_next_attribute(db, IdSet{}, {}, 5, rng), InvalidArgument);
}

TEST(TopKAttributes, MatchesScanOracle) {
    Rng rng(4);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto db = testing::random_db(seed, 300, 40);
        for (int i = 0; i < 20; ++i) {
            const auto p = testing::random_program(db, rng, 3);
            const IdSet cands = evaluate(db, p);
            if (cands.empty()) continue;
            std::vector<bool> used(db.vocabulary_size(), false);
            std::set<AttributeTag> used_tags;
            for (const auto& t : p.tags()) {
                if (auto id = db.find_tag(t)) {
                    used[*id] = true;
                    used_tags.insert(t);
                }
            }
            const auto ids = db.ids(cands);
            const auto want =
                testing::brute_force_top_k(db, std::set<std::string>(ids.begin(), ids.end()), used_tags, 7);
            std::vector<AttributeTag> got;
            for (TagId t : top_k_attributes(db, cands, used, 7)) got.push_back(db.tag(t));
            ASSERT_EQ(got, want);
        }
    }
}

TEST(SampleTurnTracks, DistinctSubsetOfCandidates) {
    const IdSet cands{2, 4, 6, 8, 10};
    Rng rng(3);
    const auto all = sample_turn_tracks(cands, 10, rng);
    EXPECT_EQ(std::set<TrackIndex>(all.begin(), all.end()), std::set<TrackIndex>(cands.begin(), cands.end()));
    for (int i = 0; i < 50; ++i) {
        const auto some = sample_turn_tracks(cands, 3, rng);
        ASSERT_EQ(some.size(), 3u);
        const std::set<TrackIndex> uniq(some.begin(), some.end());
        ASSERT_EQ(uniq.size(), 3u);
        for (auto t : some) ASSERT_TRUE(std::binary_search(cands.begin(), cands.end(), t));
    }
    EXPECT_THROW(sample_turn_tracks({}, 3, rng), InvalidArgument);
    EXPECT_THROW(sample_turn_tracks(cands, 0, rng), InvalidArgument);
}

// ---------------------------------------------------------------------------
// Whole plans
// ---------------------------------------------------------------------------

TEST(SamplePlan, TwoTurnPlansOnSixTracks) {
    const auto db = d0();
    const auto cfg = small_config();
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto plan = sample_plan(db, IntentModel{}, cfg, seed, "d");
        ASSERT_GE(plan.turns.size(), 1u);
        ASSERT_LE(plan.turns.size(), 2u);
        const auto problems = testing::plan_violations(db, plan, cfg);
        ASSERT_TRUE(problems.empty()) << problems.front();
        const auto& first = plan.turns.front();
        EXPECT_TRUE(first.has_intent(UserIntent::initial_query));
        EXPECT_TRUE(first.has_intent(UserIntent::positive_filter));
        EXPECT_EQ(first.program_after.size(), 1u);
        EXPECT_LE(first.track_ids.size(), 2u);
    }
}

TEST(SamplePlan, SingleTurnPlan) {
    const auto db = d0();
    auto cfg = small_config();
    cfg.min_turns = cfg.max_turns = 1;
    const auto plan = sample_plan(db, IntentModel{}, cfg, 9);
    ASSERT_EQ(plan.turns.size(), 1u);
    EXPECT_TRUE(plan.turns[0].step.has_value());
    EXPECT_EQ(plan.turns[0].step->mode, FilterMode::include);
}

TEST(SamplePlan, PositiveOnlyModelNarrowsEveryTurn) {
    const auto db = testing::synthetic_catalog(2000, 5);
    auto model = IntentModel::zeros();
    model.positive_filter = 1.0;
    PlanConfig cfg;
    cfg.min_turns = cfg.max_turns = 4;
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const auto plan = sample_plan(db, model, cfg, seed);
        ASSERT_TRUE(testing::plan_violations(db, plan, cfg).empty());
        for (const auto& turn : plan.turns) {
            EXPECT_FALSE(turn.has_intent(UserIntent::greeting));
            EXPECT_FALSE(turn.has_intent(UserIntent::accept_response));
            EXPECT_TRUE(turn.has_intent(UserIntent::positive_filter));
            EXPECT_EQ(turn.system_actions, std::vector<SystemAction>{SystemAction::passive_recommendation});
            ASSERT_TRUE(turn.step.has_value());
            EXPECT_EQ(turn.step->mode, FilterMode::include);
        }
    }
}

TEST(SamplePlan, FailsWithoutSupportedAttribute) {
    const auto db = d0();
    PlanConfig cfg;  // default support threshold exceeds every posting list
    EXPECT_THROW(sample_plan(db, IntentModel{}, cfg, 1), DataError);
}

TEST(SamplePlan, DeterministicPerSeed) {
    const auto db = testing::synthetic_catalog(1000, 8);
    const PlanConfig cfg;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        EXPECT_EQ(sample_plan(db, IntentModel{}, cfg, seed), sample_plan(db, IntentModel{}, cfg, seed));
    }
    EXPECT_NE(sample_plan(db, IntentModel{}, cfg, 1), sample_plan(db, IntentModel{}, cfg, 2));
}

TEST(SamplePlans, IndependentOfThreadCount) {
    const auto db = testing::synthetic_catalog(1000, 8);
    const PlanConfig cfg;
    const auto one = sample_plans(db, IntentModel{}, cfg, 42, 40, 1);
    const auto many = sample_plans(db, IntentModel{}, cfg, 42, 40, 6);
    EXPECT_EQ(one, many);
    EXPECT_EQ(one[3].dialogue_id, "dlg-000003");
    EXPECT_EQ(one[3].seed, dialogue_seed(42, 3));
    // A prefix of a larger batch is the smaller batch.
    const auto more = sample_plans(db, IntentModel{}, cfg, 42, 50, 3);
    EXPECT_TRUE(std::equal(one.begin(), one.end(), more.begin()));
}

TEST(SamplePlans, SatisfyInvariantsOnSyntheticCatalog) {
    const auto db = testing::synthetic_catalog(3000, 21);
    const PlanConfig cfg;
    for (const auto& plan : sample_plans(db, IntentModel{}, cfg, 7, 150)) {
        const auto problems = testing::plan_violations(db, plan, cfg);
        ASSERT_TRUE(problems.empty()) << plan.dialogue_id << ": " << problems.front();
    }
}

}  // namespace
}  // namespace mdgen
