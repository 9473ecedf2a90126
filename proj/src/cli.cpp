#include "mdgen/cli.hpp"

#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mdgen/adapter.hpp"
#include "mdgen/analysis.hpp"
#include "mdgen/error.hpp"
#include "mdgen/music_db.hpp"
#include "mdgen/planner.hpp"
#include "mdgen/retrieval.hpp"
#include "mdgen/service.hpp"
#include "mdgen/similarity.hpp"
#include "mdgen/utterance.hpp"

namespace mdgen {

namespace {

std::string one_line(std::string s) {
    for (auto& c : s) {
        if (c == '\n' || c == '\r') c = ' ';
    }
    while (!s.empty() && s.back() == ' ') s.pop_back();
    return s;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    out << text;
    if (!out) throw DataError("write failed: " + path);
}

/// Writes a JSON report to `path`, or to `out` when the path is empty.
void emit_report(const nlohmann::ordered_json& j, const std::string& path, std::ostream& out) {
    if (path.empty()) {
        out << j.dump(2) << '\n';
    } else {
        write_text(path, j.dump(2) + "\n");
    }
}

MusicDatabase load_db(const std::string& path, std::ostream& err) {
    auto result = ingest_tracks(path);
    if (result.report.skipped() > 0) {
        err << "mdgen: warning: " << path << ": skipped " << result.report.skipped() << " invalid or duplicate lines\n";
    }
    return std::move(result.db);
}

std::pair<int, int> parse_turn_range(const std::string& s) {
    const auto colon = s.find(':');
    try {
        if (colon == std::string::npos) {
            const int n = std::stoi(s);
            return {n, n};
        }
        return {std::stoi(s.substr(0, colon)), std::stoi(s.substr(colon + 1))};
    } catch (const std::exception&) {
        throw InvalidArgument("--turns must look like MIN:MAX, got " + s);
    }
}

const CLI::Validator kParentExists(
    [](std::string& path) -> std::string {
        const auto parent = std::filesystem::path(path).parent_path();
        if (!parent.empty() && !std::filesystem::is_directory(parent)) {
            return "directory does not exist: " + parent.string();
        }
        return {};
    },
    "OUTPUT", "");

const CLI::Validator kAtLeastOne(
    [](std::string& value) -> std::string {
        try {
            if (std::stod(value) >= 1.0) return {};
        } catch (const std::exception&) {
        }
        return "must be a number >= 1, got " + value;
    },
    "N>=1", "");

struct EmbeddingFlags {
    std::string embeddings;
    std::string text_embeddings;
    std::string embed_url;
    long hash_dim = 64;
    std::uint64_t hash_salt = 0;

    void add_to(CLI::App* cmd, bool items_from_file_option = true) {
        if (items_from_file_option) {
            cmd->add_option("--embeddings", embeddings, "EMB1 file of track vectors")->check(CLI::ExistingFile);
        }
        cmd->add_option("--text-embeddings", text_embeddings, "EMB1 file of text vectors keyed by exact text")
            ->check(CLI::ExistingFile);
        cmd->add_option("--embed-url", embed_url, "remote embedding endpoint (POST {\"text\": ...})");
        cmd->add_option("--hash-dim", hash_dim, "dimension of the hash embedding provider")
            ->check(kAtLeastOne)
            ->capture_default_str();
        cmd->add_option("--hash-salt", hash_salt, "salt of the hash embedding provider")->capture_default_str();
    }
};

struct DenseResources {
    std::unique_ptr<EmbeddingProvider> provider;
    EmbeddingTable items;
};

/// Item vectors come from --embeddings, or are computed for `db` with the
/// provider. The text provider is --text-embeddings, --embed-url, or the hash
/// provider, in that order of preference.
DenseResources load_dense(const EmbeddingFlags& f, const MusicDatabase* db) {
    DenseResources r;
    std::optional<EmbeddingTable> file_items;
    Eigen::Index dim = f.hash_dim;
    if (!f.embeddings.empty()) {
        file_items = read_embeddings(f.embeddings);
        file_items->normalize_rows();
        dim = file_items->dim();
    }
    if (!f.text_embeddings.empty()) {
        if (!file_items) throw InvalidArgument("--text-embeddings needs --embeddings");
        r.provider = std::make_unique<FileEmbeddingProvider>(*file_items, read_embeddings(f.text_embeddings));
    } else if (!f.embed_url.empty()) {
        r.provider = std::make_unique<RemoteEmbeddingProvider>(f.embed_url, dim);
    } else {
        r.provider = std::make_unique<HashEmbeddingProvider>(dim, f.hash_salt);
    }
    if (file_items) {
        r.items = std::move(*file_items);
    } else {
        if (!db) throw InvalidArgument("dense retrieval needs --embeddings or --db");
        r.items = embed_tracks(*db, *r.provider);
    }
    return r;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Music discovery dialogue generation and conversational retrieval", "mdgen"};
    app.require_subcommand(1);
    app.set_config("--config", "", "TOML/INI file of flag defaults; command-line flags win");

    // ingest
    std::string tracks_path, db_out;
    bool gap_as_mid = false;
    auto* ingest = app.add_subcommand("ingest", "validate and quantize raw track records into a DB file");
    ingest->add_option("--tracks", tracks_path, "raw Track DB JSONL")->required()->check(CLI::ExistingFile);
    ingest->add_option("--out", db_out, "output DB JSONL")->required()->check(kParentExists);
    ingest->add_flag("--popularity-gap-mid", gap_as_mid, "tag familiarity in [0.30, 0.70) as popularity:mid");

    // similar
    std::string interactions_path, db_path, out_path, annotate_out;
    AlsConfig als;
    std::size_t neighbors_k = 128;
    auto* similar = app.add_subcommand("similar", "fit implicit ALS and emit similar-track lists");
    similar->add_option("--interactions", interactions_path, "JSONL of {user, item, count}")
        ->required()
        ->check(CLI::ExistingFile);
    similar->add_option("--db", db_path, "DB JSONL")->required()->check(CLI::ExistingFile);
    similar->add_option("--dim", als.dim, "latent dimension")->check(kAtLeastOne)->capture_default_str();
    similar->add_option("--alpha", als.alpha, "confidence scale")->capture_default_str();
    similar->add_option("--reg", als.reg, "L2 regularization")->capture_default_str();
    similar->add_option("--iters", als.iters, "ALS sweeps")->check(kAtLeastOne)->capture_default_str();
    similar->add_option("--seed", als.seed, "initialization seed")->capture_default_str();
    similar->add_flag("--binary", als.binary_confidence, "use confidence 1 + alpha for every observation");
    similar->add_option("--k", neighbors_k, "neighbors per track")->check(kAtLeastOne)->capture_default_str();
    similar->add_option("--out", out_path, "neighbor lists JSONL")->required()->check(kParentExists);
    similar->add_option("--annotate-out", annotate_out, "also write the DB with similar_track tags")
        ->check(kParentExists);

    // generate
    std::size_t n_dialogues = 0, threads = 0, max_in_flight = 8, retries = kDefaultGenerationRetries;
    std::uint64_t seed = 42;
    std::string backend_name = "template", turns = "3:7";
    PlanConfig plan_cfg;
    ChatCompletionConfig llm;
    auto* generate_cmd = app.add_subcommand("generate", "sample dialogue plans and realize them as utterances");
    generate_cmd->add_option("--db", db_path, "DB JSONL")->required()->check(CLI::ExistingFile);
    generate_cmd->add_option("--n", n_dialogues, "number of dialogues")->required()->check(kAtLeastOne);
    generate_cmd->add_option("--seed", seed, "master seed")->capture_default_str();
    generate_cmd->add_option("--backend", backend_name, "template or llm")
        ->check(CLI::IsMember({"template", "llm"}))
        ->capture_default_str();
    generate_cmd->add_option("--turns", turns, "turn count range MIN:MAX")->capture_default_str();
    generate_cmd->add_option("--topk", plan_cfg.top_k, "attribute sampling pool size")
        ->check(kAtLeastOne)
        ->capture_default_str();
    generate_cmd->add_option("--tracks-per-turn", plan_cfg.tracks_per_turn, "tracks linked to each turn")
        ->check(kAtLeastOne)
        ->capture_default_str();
    generate_cmd->add_option("--min-support", plan_cfg.min_initial_support, "initial attribute support")
        ->capture_default_str();
    generate_cmd->add_option("--min-candidates", plan_cfg.min_candidates, "candidates a filter must leave")
        ->capture_default_str();
    generate_cmd->add_option("--max-resample", plan_cfg.max_resample, "attribute redraws per turn")
        ->capture_default_str();
    generate_cmd->add_option("--threads", threads, "planning threads (0 = all cores)")->capture_default_str();
    generate_cmd->add_option("--out", out_path, "dialogue JSONL")->required()->check(kParentExists);
    generate_cmd->add_option("--llm-endpoint", llm.endpoint, "chat-completion URL (llm backend)");
    generate_cmd->add_option("--llm-model", llm.model, "model name (llm backend)");
    generate_cmd->add_option("--llm-temperature", llm.temperature, "sampling temperature")->capture_default_str();
    generate_cmd->add_option("--llm-timeout", llm.timeout_seconds, "request timeout in seconds")
        ->capture_default_str();
    generate_cmd->add_option("--max-in-flight", max_in_flight, "concurrent llm requests")
        ->check(kAtLeastOne)
        ->capture_default_str();
    generate_cmd->add_option("--retries", retries, "retries per dialogue before dropping")->capture_default_str();

    // index
    EmbeddingFlags emb;
    bool doc_tags = false;
    std::string report_path;
    auto* index_cmd = app.add_subcommand("index", "build the BM25 index and optionally write track embeddings");
    index_cmd->add_option("--db", db_path, "DB JSONL")->required()->check(CLI::ExistingFile);
    index_cmd->add_option("--embeddings", out_path, "write track vectors to this EMB1 file")->check(kParentExists);
    index_cmd->add_flag("--doc-tags", doc_tags, "append tag values to BM25 documents");
    index_cmd->add_option("--report", report_path, "JSON summary (default stdout)")->check(kParentExists);
    emb.add_to(index_cmd, false);

    // train
    std::string dialogues_path, checkpoint_path;
    TrainConfig train_cfg;
    auto* train_cmd = app.add_subcommand("train", "train chat/music adapters with InfoNCE");
    train_cmd->add_option("--dialogues", dialogues_path, "dialogue JSONL")->required()->check(CLI::ExistingFile);
    train_cmd->add_option("--db", db_path, "DB JSONL, when track vectors come from a provider")
        ->check(CLI::ExistingFile);
    train_cmd->add_option("--tau", train_cfg.tau, "InfoNCE temperature")->capture_default_str();
    train_cmd->add_option("--lr", train_cfg.learning_rate, "SGD learning rate")->capture_default_str();
    train_cmd->add_option("--epochs", train_cfg.epochs, "epochs")->check(kAtLeastOne)->capture_default_str();
    train_cmd->add_option("--batch", train_cfg.batch_size, "batch size")->capture_default_str();
    train_cmd->add_option("--seed", train_cfg.seed, "seed")->capture_default_str();
    train_cmd->add_option("--hidden", train_cfg.hidden_dim, "hidden width (0 = input dim)")->capture_default_str();
    train_cmd->add_option("--out-dim", train_cfg.out_dim, "output dim (0 = input dim)")->capture_default_str();
    train_cmd->add_flag("--shared", train_cfg.shared, "one adapter for both sides");
    train_cmd->add_option("--out", checkpoint_path, "checkpoint JSON")->required()->check(kParentExists);
    train_cmd->add_option("--report", report_path, "loss trace JSON (default stdout)")->check(kParentExists);
    emb.add_to(train_cmd);

    // eval
    std::string retriever = "bm25";
    std::vector<std::size_t> ks{10, 20, 100};
    auto* eval_cmd = app.add_subcommand("eval", "Hit@K of a retriever over generated dialogues");
    eval_cmd->add_option("--dialogues", dialogues_path, "dialogue JSONL")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--retriever", retriever, "bm25, dense or oracle")
        ->check(CLI::IsMember({"bm25", "dense", "oracle"}))
        ->capture_default_str();
    eval_cmd->add_option("--ks", ks, "comma-separated cutoffs")->delimiter(',')->capture_default_str();
    eval_cmd->add_option("--report", report_path, "report JSON (default stdout)")->check(kParentExists);
    eval_cmd->add_option("--db", db_path, "DB JSONL (bm25, or dense without --embeddings)")
        ->check(CLI::ExistingFile);
    eval_cmd->add_option("--checkpoint", checkpoint_path, "adapter checkpoint for dense retrieval")
        ->check(CLI::ExistingFile);
    eval_cmd->add_flag("--doc-tags", doc_tags, "append tag values to BM25 documents");
    eval_cmd->add_option("--threads", threads, "evaluation threads (0 = all cores)")->capture_default_str();
    emb.add_to(eval_cmd);

    // stats
    auto* stats_cmd = app.add_subcommand("stats", "dataset statistics and attribute ratios");
    stats_cmd->add_option("--dialogues", dialogues_path, "dialogue JSONL")->required()->check(CLI::ExistingFile);
    stats_cmd->add_option("--report", report_path, "report JSON (default stdout)")->check(kParentExists);

    // alpha
    std::string labels_path;
    auto* alpha_cmd = app.add_subcommand("alpha", "Krippendorff's alpha over nominal labels");
    alpha_cmd->add_option("--labels", labels_path, "CSV of unit,rater,label")->required()->check(CLI::ExistingFile);

    // serve
    ServerOptions server_opts;
    std::string static_dir;
    long ttl_seconds = 3600;
    auto* serve_cmd = app.add_subcommand("serve", "HTTP conversational retrieval service");
    serve_cmd->add_option("--db", db_path, "DB JSONL")->required()->check(CLI::ExistingFile);
    serve_cmd->add_option("--host", server_opts.host, "bind address")->capture_default_str();
    serve_cmd->add_option("--port", server_opts.port, "port (0 = any free port)")
        ->check(CLI::Range(0, 65535))
        ->capture_default_str();
    serve_cmd->add_option("--retriever", retriever, "default retriever for new sessions: bm25 or dense")
        ->check(CLI::IsMember({"bm25", "dense"}))
        ->capture_default_str();
    serve_cmd->add_option("--checkpoint", checkpoint_path, "adapter checkpoint for dense sessions")
        ->check(CLI::ExistingFile);
    serve_cmd->add_option("--static", static_dir, "directory served at /")->check(CLI::ExistingDirectory);
    serve_cmd->add_option("--ttl", ttl_seconds, "session idle timeout in seconds")
        ->check(kAtLeastOne)
        ->capture_default_str();
    serve_cmd->add_option("--threads", server_opts.threads, "worker threads")->capture_default_str();
    serve_cmd->add_flag("--doc-tags", doc_tags, "append tag values to BM25 documents");
    bool no_dense = false;
    serve_cmd->add_flag("--no-dense", no_dense, "do not load embeddings; dense sessions are refused");
    emb.add_to(serve_cmd);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "mdgen: usage error: " << one_line(e.what()) << " (see --help)\n";
        return 1;
    }

    try {
        if (ingest->parsed()) {
            auto result = ingest_tracks(tracks_path, QuantizationConfig{gap_as_mid});
            write_tracks(result.db, db_out);
            const auto& r = result.report;
            err << "ingest: " << r.accepted << " accepted, " << r.skipped_invalid << " invalid, "
                << r.skipped_duplicate << " duplicate\n";
            for (const auto& m : r.messages) err << "ingest: skipped " << m << '\n';
        } else if (similar->parsed()) {
            als.validate();
            const auto db = load_db(db_path, err);
            const auto data = read_interactions(interactions_path);
            std::vector<double> trace;
            const auto model = als_fit(data.matrix, als, &trace);
            const auto lists = similar_tracks(db, data, model, neighbors_k);
            write_neighbors(lists, out_path);
            if (!annotate_out.empty()) write_tracks(annotate_similar_tracks(db, lists), annotate_out);
            err << "similar: " << data.users.size() << " users, " << data.items.size() << " items, "
                << lists.size() << " tracks with neighbors, final loss " << trace.back() << '\n';
        } else if (generate_cmd->parsed()) {
            std::tie(plan_cfg.min_turns, plan_cfg.max_turns) = parse_turn_range(turns);
            plan_cfg.validate();
            std::unique_ptr<GenerationBackend> backend;
            if (backend_name == "llm") {
                if (llm.endpoint.empty() || llm.model.empty()) {
                    throw InvalidArgument("the llm backend needs --llm-endpoint and --llm-model");
                }
                llm.token = ChatCompletionConfig::token_from_env();
                backend = std::make_unique<ChatCompletionBackend>(llm);
            } else {
                backend = std::make_unique<TemplateBackend>();
            }
            const auto db = load_db(db_path, err);
            const auto plans = sample_plans(db, IntentModel{}, plan_cfg, seed, n_dialogues, threads);
            const auto summary = generate_all(*backend, plans, db, max_in_flight, retries);
            emit_jsonl(summary.records, out_path);
            err << "generate: " << summary.requested << " requested, " << summary.generated << " generated, "
                << summary.dropped << " dropped\n";
        } else if (index_cmd->parsed()) {
            const auto db = load_db(db_path, err);
            const auto index = build_track_index(db, doc_tags);
            nlohmann::ordered_json j;
            j["documents"] = index.size();
            j["vocabulary_size"] = index.vocabulary_size();
            j["average_length"] = index.average_length();
            if (!out_path.empty()) {
                const auto dense = load_dense(emb, &db);
                write_embeddings(dense.items, out_path);
                j["embeddings"] = out_path;
                j["embedding_dim"] = dense.items.dim();
            }
            emit_report(j, report_path, out);
        } else if (train_cmd->parsed()) {
            train_cfg.validate();
            std::optional<MusicDatabase> db;
            if (!db_path.empty()) db = load_db(db_path, err);
            const auto dense = load_dense(emb, db ? &*db : nullptr);
            const auto dialogues = read_dialogues(dialogues_path);
            const auto pairs = build_training_pairs(dialogues, *dense.provider, dense.items);
            const auto result = train(pairs.chat, pairs.music, train_cfg);
            save_checkpoint(result.adapters, train_cfg.tau, checkpoint_path);
            nlohmann::ordered_json j;
            j["pairs"] = pairs.chat.rows();
            j["skipped_turns"] = pairs.skipped;
            j["epoch_loss"] = result.epoch_loss;
            emit_report(j, report_path, out);
        } else if (eval_cmd->parsed()) {
            const auto dialogues = read_dialogues(dialogues_path);
            std::optional<MusicDatabase> db;
            if (!db_path.empty()) db = load_db(db_path, err);
            EvalReport report;
            if (retriever == "oracle") {
                report = evaluate_dataset(dialogues, OracleRetriever{}, ks, threads);
            } else if (retriever == "bm25") {
                if (!db) throw InvalidArgument("--retriever bm25 needs --db");
                const auto index = build_track_index(*db, doc_tags);
                report = evaluate_dataset(dialogues, Bm25Retriever(index), ks, threads);
            } else {
                const auto dense = load_dense(emb, db ? &*db : nullptr);
                std::optional<AdapterPair<double>> adapters;
                if (!checkpoint_path.empty()) adapters = load_checkpoint(checkpoint_path);
                const DenseRetriever r(*dense.provider, dense.items, adapters ? &*adapters : nullptr);
                report = evaluate_dataset(dialogues, r, ks, threads);
            }
            auto j = to_json(report);
            j["retriever"] = retriever;
            emit_report(j, report_path, out);
        } else if (stats_cmd->parsed()) {
            emit_report(to_json(stats_report(read_dialogues(dialogues_path))), report_path, out);
        } else if (alpha_cmd->parsed()) {
            const auto data = read_agreement_csv(labels_path);
            nlohmann::ordered_json j;
            j["alpha"] = krippendorff_alpha(data);
            j["units"] = data.units();
            j["pairable_units"] = data.pairable_units();
            j["raters"] = data.raters();
            out << j.dump(2) << '\n';
        } else if (serve_cmd->parsed()) {
            const auto db = load_db(db_path, err);
            const auto index = build_track_index(db, doc_tags);
            std::optional<DenseResources> dense;
            std::optional<AdapterPair<double>> adapters;
            if (!no_dense) dense = load_dense(emb, &db);
            if (!checkpoint_path.empty()) adapters = load_checkpoint(checkpoint_path);
            ServiceResources res{&db, &index, dense ? dense->provider.get() : nullptr, dense ? &dense->items : nullptr,
                                 adapters ? &*adapters : nullptr};
            ServiceConfig cfg;
            cfg.ttl = std::chrono::seconds(ttl_seconds);
            cfg.default_retriever = *retriever_from_name(retriever);
            if (cfg.default_retriever == RetrieverKind::dense && !res.dense_available()) {
                throw InvalidArgument("--retriever dense needs embeddings (drop --no-dense)");
            }
            SessionService service(res, cfg);
            if (!static_dir.empty()) server_opts.static_dir = static_dir;
            HttpServer server(service, server_opts);
            const int port = server.bind();
            err << "serve: listening on http://" << server_opts.host << ':' << port << '\n';
            server.serve();
        }
    } catch (const InvalidArgument& e) {
        err << "mdgen: usage error: " << one_line(e.what()) << '\n';
        return 1;
    } catch (const Error& e) {
        err << "mdgen: error: " << one_line(e.what()) << '\n';
        return 2;
    } catch (const nlohmann::json::exception& e) {
        err << "mdgen: error: " << one_line(e.what()) << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "mdgen: error: " << one_line(e.what()) << '\n';
        return 2;
    }
    return 0;
}

}  // namespace mdgen
