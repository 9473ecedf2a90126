// Acceptance gate: one [PASS]/[FAIL] line per criterion, non-zero exit on any failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>

#include "mdgen/adapter.hpp"
#include "mdgen/analysis.hpp"
#include "mdgen/cli.hpp"
#include "mdgen/filter.hpp"
#include "mdgen/planner.hpp"
#include "mdgen/retrieval.hpp"
#include "mdgen/similarity.hpp"
#include "mdgen/utterance.hpp"
#include "support/fixtures.hpp"

namespace mdgen {
namespace {

using Clock = std::chrono::steady_clock;

constexpr double kFilterBudgetSeconds = 10.0;
constexpr double kGenerationBudgetSeconds = 60.0;
constexpr double kMeanTurnsLow = 4.5;
constexpr double kMeanTurnsHigh = 5.5;
constexpr double kDiscoveryTolerance = 0.03;
constexpr double kBm25Tolerance = 1e-9;
constexpr double kInfoNceTolerance = 1e-9;
constexpr double kGradientTolerance = 1e-4;
constexpr double kGradientEps = 1e-5;
constexpr double kLossReduction = 0.30;
constexpr double kRandomBaselineFactor = 5.0;
constexpr double kAlsRelativeTolerance = 1e-9;
constexpr double kRankOneLoss = 1e-3;
constexpr double kAlphaTolerance = 1e-12;

struct Outcome {
    bool pass = true;
    std::string detail;
};

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double v, int precision = 4) {
    std::ostringstream s;
    s.precision(precision);
    s << v;
    return s.str();
}

// ---------------------------------------------------------------------------

Outcome filter_oracle() {
    const auto start = Clock::now();
    std::size_t mismatches = 0, programs = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto db = testing::random_db(seed, 1000, 50);
        std::mt19937_64 rng(seed * 7919 + 1);
        for (int p = 0; p < 200; ++p) {
            const auto program = testing::random_program(db, rng);
            std::set<std::string> got;
            for (auto i : evaluate(db, program)) got.insert(db.track(i).track_id);
            if (got != testing::brute_force_eval(db, program)) ++mismatches;
            ++programs;
        }
    }
    const double secs = seconds_since(start);
    return {mismatches == 0 && secs < kFilterBudgetSeconds,
            std::to_string(programs) + " programs, " + std::to_string(mismatches) + " mismatches, " + fmt(secs) + " s"};
}

Outcome fig2_fixture() {
    using C = AttributeCategory;
    const auto db = testing::d0();
    FilterProgram p;
    p = extend(p, FilterStep::include(testing::tag(C::genre, "edm")));
    p = extend(p, FilterStep::include(testing::tag(C::theme, "party")));
    p = extend(p, FilterStep::include(testing::tag(C::tempo, "fast")));
    std::vector<std::string> ids;
    for (auto i : evaluate(db, p)) ids.push_back(db.track(i).track_id);
    const std::string rendered = render(p);
    const bool ok = ids == std::vector<std::string>{"t1"} &&
                    rendered == "filter(tempo:fast, filter(theme:party, filter(genre:edm, database)))";
    return {ok, std::to_string(ids.size()) + " result(s), " + rendered};
}

Outcome generation_validity() {
    const auto db = testing::synthetic_catalog(10000, 2024);
    const IntentModel model;
    const PlanConfig cfg;
    const auto start = Clock::now();
    const auto plans = sample_plans(db, model, cfg, 7, 1000);
    TemplateBackend backend;
    const auto summary = generate_all(backend, plans, db);
    const double secs = seconds_since(start);

    std::size_t bad_plans = 0, turns = 0;
    std::string first_problem;
    std::array<double, 4> discovery{};
    double later_turns = 0.0;
    for (const auto& plan : plans) {
        const auto v = testing::plan_violations(db, plan, cfg);
        if (!v.empty()) {
            ++bad_plans;
            if (first_problem.empty()) first_problem = v.front();
        }
        turns += plan.turns.size();
        for (std::size_t i = 1; i < plan.turns.size(); ++i) {
            const auto& t = plan.turns[i];
            later_turns += 1.0;
            if (t.has_intent(UserIntent::positive_filter)) discovery[0] += 1.0;
            if (t.has_intent(UserIntent::negative_filter)) discovery[1] += 1.0;
            if (t.has_intent(UserIntent::continue_)) discovery[2] += 1.0;
            if (t.has_intent(UserIntent::item_attribute_question)) discovery[3] += 1.0;
        }
    }
    const double mean_turns = static_cast<double>(turns) / static_cast<double>(plans.size());
    const auto want = model.discovery_weights();
    double worst = 0.0;
    for (std::size_t i = 0; i < 4; ++i) worst = std::max(worst, std::abs(discovery[i] / later_turns - want[i]));

    const bool ok = bad_plans == 0 && summary.generated == plans.size() && mean_turns >= kMeanTurnsLow &&
                    mean_turns <= kMeanTurnsHigh && worst <= kDiscoveryTolerance && secs < kGenerationBudgetSeconds;
    std::string detail = std::to_string(summary.generated) + " dialogues, " + std::to_string(bad_plans) +
                         " invalid, mean turns " + fmt(mean_turns) + ", discovery mix " +
                         fmt(discovery[0] / later_turns, 3) + "/" + fmt(discovery[1] / later_turns, 3) + "/" +
                         fmt(discovery[2] / later_turns, 3) + "/" + fmt(discovery[3] / later_turns, 3) +
                         " (max deviation " + fmt(worst, 3) + "), " + fmt(secs) + " s";
    if (!first_problem.empty()) detail += "; " + first_problem;
    return {ok, detail};
}

Outcome quantizer_table() {
    struct Case {
        std::function<std::optional<AttributeTag>()> run;
        std::optional<std::string> want;
    };
    const std::vector<Case> cases{
        {[] { return quantize_tempo(70); }, "tempo:moderate"},
        {[] { return quantize_tempo(130); }, "tempo:moderate"},
        {[] { return quantize_tempo(131); }, "tempo:fast"},
        {[] { return quantize_popularity(0.05); }, "popularity:high"},
        {[] { return quantize_popularity(0.20); }, "popularity:mid"},
        {[] { return quantize_popularity(0.50); }, std::nullopt},
        {[] { return quantize_year(1994); }, "year:1990s"},
        {[] { return quantize_year(2000); }, "year:2000s"},
        {[] { return quantize_year(1969); }, "year:1960s"},
    };
    int passed = 0;
    for (const auto& c : cases) {
        const auto got = c.run();
        const std::optional<std::string> s = got ? std::optional<std::string>(got->to_string()) : std::nullopt;
        if (s == c.want) ++passed;
    }
    return {passed == static_cast<int>(cases.size()), std::to_string(passed) + "/" + std::to_string(cases.size())};
}

bool monotone(const EvalReport& r) {
    double prev_any = 0.0, prev_recall = 0.0;
    for (auto k : r.ks) {
        if (r.any_hit.at(k) < prev_any || r.recall.at(k) < prev_recall) return false;
        if (r.recall.at(k) > r.any_hit.at(k)) return false;
        prev_any = r.any_hit.at(k);
        prev_recall = r.recall.at(k);
    }
    return true;
}

Outcome bm25_fixture() {
    const auto index = Bm25Index::build({{"d1", "fast edm party"}, {"d2", "slow sad piano"}, {"d3", "edm workout"}});
    const double k1 = 1.2, b = 0.75, n = 3, df = 2, avg = 8.0 / 3.0;
    const double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
    auto term = [&](double tf, double len) { return idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len / avg)); };
    const auto hits = index.search("edm", 3);
    bool ok = hits.size() == 2 && hits[0].first == "d3" && hits[1].first == "d1" &&
              std::abs(hits[0].second - term(1, 2)) <= kBm25Tolerance &&
              std::abs(hits[1].second - term(1, 3)) <= kBm25Tolerance;

    const auto db = testing::synthetic_catalog(2000, 17);
    TemplateBackend backend;
    const auto summary = generate_all(backend, sample_plans(db, IntentModel{}, PlanConfig{}, 3, 80), db);
    const auto docs = build_track_index(db, true);
    const HashEmbeddingProvider provider(64);
    const auto items = embed_tracks(db, provider);
    const std::vector<std::size_t> ks{1, 5, 10, 20, 50, 100};
    int runs = 0, monotone_runs = 0;
    for (const Retriever* r : std::initializer_list<const Retriever*>{
             new Bm25Retriever(docs), new DenseRetriever(provider, items), new OracleRetriever()}) {
        const std::unique_ptr<const Retriever> owned(r);
        ++runs;
        if (monotone(evaluate_dataset(summary.records, *r, ks, 4))) ++monotone_runs;
    }
    ok = ok && monotone_runs == runs;
    return {ok, "scores " + (hits.size() == 2 ? fmt(hits[0].second, 10) + ", " + fmt(hits[1].second, 10) : "missing") +
                    "; monotone on " + std::to_string(monotone_runs) + "/" + std::to_string(runs) + " eval runs"};
}

Outcome infonce() {
    bool uniform = true;
    for (int n : {2, 4, 8}) {
        const Eigen::MatrixXd c = Eigen::MatrixXd::Constant(n, 3, 1.0 / std::sqrt(3.0));
        if (std::abs(infonce_loss(c, c, 0.07) - std::log(static_cast<double>(n))) > kInfoNceTolerance) uniform = false;
    }
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(2, 2);
    const bool hand = std::abs(infonce_loss(eye, eye, 1.0) - std::log(1.0 + std::exp(-1.0))) <= kInfoNceTolerance;

    double worst_grad = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        worst_grad = std::max(worst_grad, testing::max_gradient_error(seed, false, kGradientEps));
    }

    const auto data = testing::two_cluster_pairs(1, 128, 8);
    TrainConfig cfg;
    cfg.learning_rate = 0.5;
    cfg.tau = 0.1;
    cfg.batch_size = 16;
    cfg.epochs = 50;
    cfg.seed = 3;
    const auto a = train(data.chat, data.music, cfg);
    const auto b = train(data.chat, data.music, cfg);
    const double reduction = 1.0 - a.epoch_loss.back() / a.epoch_loss.front();
    const bool deterministic = a.epoch_loss == b.epoch_loss && a.adapters.text == b.adapters.text &&
                               a.adapters.music == b.adapters.music;

    const bool ok = uniform && hand && worst_grad < kGradientTolerance && reduction >= kLossReduction && deterministic;
    return {ok, std::string("ln n ") + (uniform ? "ok" : "off") + ", 2x2 " + (hand ? "ok" : "off") +
                    ", max gradient error " + fmt(worst_grad, 3) + ", loss " + fmt(a.epoch_loss.front()) + " -> " +
                    fmt(a.epoch_loss.back()) + " (" + fmt(100 * reduction, 3) + "% drop), " +
                    (deterministic ? "deterministic" : "not deterministic")};
}

Outcome retrieval_end_to_end() {
    const auto db = testing::synthetic_catalog(5000, 99);
    TemplateBackend backend;
    const auto summary = generate_all(backend, sample_plans(db, IntentModel{}, PlanConfig{}, 21, 200), db);
    const HashEmbeddingProvider provider(256);
    const auto items = embed_tracks(db, provider);
    const DenseRetriever dense(provider, items);
    const auto report = evaluate_dataset(summary.records, dense, {10});

    double baseline = 0.0;
    std::size_t turns = 0;
    for (const auto& r : summary.records) {
        for (const auto& t : r.plan.turns) {
            baseline += random_any_hit_rate(db.size(), t.track_ids.size(), 10);
            ++turns;
        }
    }
    baseline /= static_cast<double>(turns);
    const double hit = report.any_hit.at(10);
    return {summary.records.size() == 200 && hit >= kRandomBaselineFactor * baseline,
            "any_hit@10 " + fmt(hit) + " vs random " + fmt(baseline) + " (" + fmt(hit / baseline, 3) + "x) over " +
                std::to_string(turns) + " turns"};
}

Outcome als() {
    std::size_t increases = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto m = testing::random_interactions(seed, 20, 30);
        AlsConfig cfg;
        cfg.dim = 5;
        cfg.iters = 8;
        cfg.seed = seed;
        std::vector<double> trace;
        als_fit(m, cfg, &trace);
        for (std::size_t i = 1; i < trace.size(); ++i) {
            if (trace[i] > trace[i - 1] * (1.0 + kAlsRelativeTolerance)) ++increases;
        }
    }

    int clone_found = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto base = testing::random_interactions(seed + 40, 20, 29);
        auto entries = base.entries();
        for (const auto& e : base.entries()) {
            if (e.item == 7) entries.push_back({e.user, 29, e.count});
        }
        const InteractionMatrix m(20, 30, entries);
        AlsConfig cfg;
        cfg.dim = 6;
        cfg.iters = 10;
        const auto top = topk_similar_items(als_fit(m, cfg), 7, 5);
        if (std::any_of(top.begin(), top.end(), [](const ScoredIndex& s) { return s.first == 29; })) ++clone_found;
    }

    std::vector<InteractionMatrix::Entry> block;
    for (Eigen::Index u : {0, 2, 3, 7, 9})
        for (Eigen::Index i : {1, 4, 5, 6, 10, 13}) block.push_back({u, i, 1.0});
    const InteractionMatrix rank_one(10, 15, block);
    AlsConfig cfg;
    cfg.dim = 1;
    cfg.reg = 1e-6;
    cfg.iters = 10;
    const double loss = weighted_loss(als_fit(rank_one, cfg), rank_one);

    return {increases == 0 && clone_found == 5 && loss < kRankOneLoss,
            std::to_string(increases) + " loss increases, clone found " + std::to_string(clone_found) +
                "/5, rank-1 loss " + fmt(loss, 3)};
}

Outcome krippendorff() {
    using Table = std::vector<std::vector<AgreementData::Cell>>;
    const Table perfect{{"a", "a", "a"}, {"b", "b", std::nullopt}, {"c", "c", "c"}};
    const bool exact_one = krippendorff_alpha(AgreementData(perfect)) == 1.0;

    // Four raters, five units, with missing values.
    const Table t{{"1", "1", std::nullopt, "1"},
                  {"2", "2", "3", "2"},
                  {"3", "3", "3", "3"},
                  {"3", "3", "3", "3"},
                  {"2", "2", "2", "2"},
                  {"1", "2", "3", "4"},
                  {"4", "4", "4", "4"},
                  {"1", "1", "2", "1"},
                  {"2", "2", "2", "2"},
                  {std::nullopt, "5", "5", "5"},
                  {std::nullopt, std::nullopt, "1", "1"},
                  {std::nullopt, std::nullopt, "3", std::nullopt}};
    // Pairwise oracle: within-unit disagreement over pooled pairable values.
    std::vector<std::string> pooled;
    double observed = 0.0;
    for (const auto& row : t) {
        std::vector<std::string> labels;
        for (const auto& c : row)
            if (c) labels.push_back(*c);
        if (labels.size() < 2) continue;
        double d = 0.0;
        for (std::size_t i = 0; i < labels.size(); ++i)
            for (std::size_t j = 0; j < labels.size(); ++j)
                if (i != j && labels[i] != labels[j]) d += 1.0;
        observed += d / static_cast<double>(labels.size() - 1);
        pooled.insert(pooled.end(), labels.begin(), labels.end());
    }
    const double n = static_cast<double>(pooled.size());
    double expected = 0.0;
    for (std::size_t i = 0; i < pooled.size(); ++i)
        for (std::size_t j = 0; j < pooled.size(); ++j)
            if (i != j && pooled[i] != pooled[j]) expected += 1.0;
    const double oracle = 1.0 - (observed / n) / (expected / (n * (n - 1.0)));
    const double got = krippendorff_alpha(AgreementData(t));

    Table renamed = t;
    for (auto& row : renamed)
        for (auto& c : row)
            if (c) c = "label-" + *c + "-x";
    const bool invariant = krippendorff_alpha(AgreementData(renamed)) == got;

    return {exact_one && std::abs(got - oracle) <= kAlphaTolerance && invariant,
            "perfect " + std::string(exact_one ? "1.0" : "not 1") + ", fixture " + fmt(got, 12) + " vs oracle " +
                fmt(oracle, 12) + ", relabel " + (invariant ? "invariant" : "changed")};
}

Outcome determinism() {
    testing::TempDir dir;
    const auto db = testing::synthetic_catalog(3000, 5);
    write_tracks(db, dir / "db.jsonl");
    auto run_generate = [&](const std::string& out, const std::string& threads) {
        const std::string db_path = (dir / "db.jsonl").string();
        const std::string out_path = (dir / out).string();
        const std::vector<const char*> argv{"mdgen",    "generate",  "--db",    db_path.c_str(),  "--n",
                                            "120",      "--seed",    "77",      "--threads",      threads.c_str(),
                                            "--out",    out_path.c_str()};
        std::ostringstream o, e;
        return run(static_cast<int>(argv.size()), argv.data(), o, e);
    };
    const int c1 = run_generate("a.jsonl", "1");
    const int c2 = run_generate("b.jsonl", "8");
    const auto a = testing::read_file(dir / "a.jsonl");
    const bool identical = c1 == 0 && c2 == 0 && !a.empty() && a == testing::read_file(dir / "b.jsonl");

    const auto records = read_dialogues(dir / "a.jsonl");
    const auto index = build_track_index(db);
    const HashEmbeddingProvider provider(64);
    const auto items = embed_tracks(db, provider);
    const Bm25Retriever bm25(index);
    const DenseRetriever dense(provider, items);
    const std::vector<std::size_t> ks{1, 10, 20, 100};
    bool same_eval = true;
    for (const Retriever* r : {static_cast<const Retriever*>(&bm25), static_cast<const Retriever*>(&dense)}) {
        const auto one = evaluate_dataset(records, *r, ks, 1);
        for (std::size_t threads : {2, 3, 8}) {
            const auto many = evaluate_dataset(records, *r, ks, threads);
            if (!(many == one) || to_json(many).dump() != to_json(one).dump()) same_eval = false;
        }
    }
    return {identical && same_eval, std::string("generate ") + (identical ? "byte-identical" : "differs") +
                                        " (" + std::to_string(a.size()) + " bytes), eval " +
                                        (same_eval ? "identical across 1/2/3/8 threads" : "differs across threads")};
}

}  // namespace
}  // namespace mdgen

int main() {
    using namespace mdgen;
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"filter oracle", filter_oracle},
        {"cascade fixture", fig2_fixture},
        {"generation validity", generation_validity},
        {"quantizer table", quantizer_table},
        {"bm25 fixture", bm25_fixture},
        {"infonce", infonce},
        {"retrieval end-to-end", retrieval_end_to_end},
        {"als", als},
        {"krippendorff", krippendorff},
        {"determinism", determinism},
    };
    int failures = 0;
    for (const auto& [name, check] : criteria) {
        Outcome o;
        try {
            o = check();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        if (!o.pass) ++failures;
        std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << name << " (" << o.detail << ")" << std::endl;
    }
    std::cout << (criteria.size() - failures) << "/" << criteria.size() << " criteria passed" << std::endl;
    return failures == 0 ? 0 : 1;
}
