#include "mdgen/utterance.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "mdgen/error.hpp"
#include "mdgen/filter.hpp"
#include "mdgen/http.hpp"
#include "mdgen/parallel.hpp"

namespace mdgen {

namespace {

#include "dialogue_system_prompt.inc"

std::string category_words(AttributeCategory c) {
    std::string s(category_name(c));
    for (auto& ch : s) {
        if (ch == '_') ch = ' ';
    }
    return s;
}

std::string tag_words(const AttributeTag& t) { return t.value + " " + category_words(t.category); }

std::string join_names(const std::vector<UserIntent>& v) {
    std::string out;
    for (auto i : v) {
        if (!out.empty()) out += ", ";
        out += intent_name(i);
    }
    return out;
}

std::string join_names(const std::vector<SystemAction>& v) {
    std::string out;
    for (auto a : v) {
        if (!out.empty()) out += ", ";
        out += action_name(a);
    }
    return out;
}

const TrackRecord& lookup(const MusicDatabase& db, const std::string& id) {
    auto i = db.find(id);
    if (!i) throw InvalidArgument("track " + id + " is not in the database");
    return db.track(*i);
}

void append_sentence(std::string& out, std::string_view sentence) {
    if (!out.empty()) out.push_back(' ');
    out += sentence;
}

std::string strip_code_fence(std::string_view s) {
    auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    s.remove_prefix(first);
    if (s.substr(0, 3) != "```") return std::string(s);
    auto nl = s.find('\n');
    if (nl == std::string_view::npos) return {};
    s.remove_prefix(nl + 1);
    auto close = s.rfind("```");
    if (close != std::string_view::npos) s = s.substr(0, close);
    return std::string(s);
}

Utterance utterance_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw DataError("turn output must be an object");
    auto q = j.find("user_query");
    auto r = j.find("system_response");
    if (q == j.end() || !q->is_string() || r == j.end() || !r->is_string()) {
        throw DataError("turn output needs string user_query and system_response");
    }
    Utterance u{q->get<std::string>(), r->get<std::string>()};
    if (u.user_query.empty() || u.system_response.empty()) throw DataError("empty utterance");
    return u;
}

}  // namespace

std::string_view default_system_prompt() { return kDialogueSystemPrompt; }

std::string PromptBundle::user_message() const { return payload + "\n" + format_instructions; }

PromptBundle build_prompt(const DialoguePlan& plan, const MusicDatabase& db, std::string_view system_prompt) {
    PromptBundle bundle;
    bundle.system_prompt = std::string(system_prompt);

    std::ostringstream p;
    p << "Dialogue " << plan.dialogue_id << " (" << plan.turns.size() << " turns)\n";
    for (const auto& turn : plan.turns) {
        p << "\nTurn " << turn.turn_index << "\n";
        p << "  user intents: " << join_names(turn.user_intents) << "\n";
        p << "  system actions: " << join_names(turn.system_actions) << "\n";
        if (!turn.step) {
            p << "  step: none\n";
        } else if (turn.step->mode == FilterMode::include) {
            p << "  step: include " << turn.step->tag->to_string() << "\n";
        } else if (turn.step->mode == FilterMode::exclude) {
            p << "  step: exclude " << turn.step->tag->to_string()
              << " (exclusion: the user no longer wants this attribute)\n";
        } else {
            p << "  step: continue with the current criteria\n";
        }
        if (turn.question) {
            const auto& tr = lookup(db, turn.question->track_id);
            p << "  question: the user asks about the " << category_words(turn.question->attribute.category)
              << " of \"" << tr.title << "\" by " << tr.artist_name << " (answer: "
              << turn.question->attribute.to_string() << ")\n";
        }
        p << "  program: " << render(turn.program_after) << "\n";
        p << "  matching tracks: " << turn.candidate_count << "\n";
        p << "  recommended tracks:\n";
        for (const auto& id : turn.track_ids) {
            const auto& tr = lookup(db, id);
            p << "    - \"" << tr.title << "\" by " << tr.artist_name << "\n";
        }
    }
    bundle.payload = p.str();

    bundle.format_instructions =
        "Return only a JSON array with exactly " + std::to_string(plan.turns.size()) +
        " objects, one per turn in order. Each object has two string fields: \"user_query\" and "
        "\"system_response\".";
    return bundle;
}

// ---------------------------------------------------------------------------
// Template backend
// ---------------------------------------------------------------------------

std::string TemplateBackend::user_query(const TurnPlan& turn, const MusicDatabase& db) {
    std::string q;
    if (turn.has_intent(UserIntent::greeting)) append_sentence(q, "Hello!");
    if (turn.has_intent(UserIntent::accept_response)) append_sentence(q, "Thanks, these are great.");
    if (turn.has_intent(UserIntent::reject_response)) append_sentence(q, "Hmm, these are not quite what I wanted.");
    if (turn.has_intent(UserIntent::initial_query)) append_sentence(q, "Hi, I want to make a playlist.");
    if (turn.step) {
        switch (turn.step->mode) {
            case FilterMode::include:
                append_sentence(q, "Could you add some " + tag_words(*turn.step->tag) + " to the playlist?");
                break;
            case FilterMode::exclude:
                append_sentence(q, "Could you leave out any " + tag_words(*turn.step->tag) + "?");
                break;
            case FilterMode::continue_:
                append_sentence(q, "Could you give me more songs like these?");
                break;
        }
    }
    if (turn.question) {
        const auto& tr = lookup(db, turn.question->track_id);
        append_sentence(q, "What is the " + category_words(turn.question->attribute.category) + " of " + tr.title + "?");
    }
    if (q.empty()) q = "Could you recommend something?";
    return q;
}

std::string TemplateBackend::system_response(const TurnPlan& turn, const MusicDatabase& db) {
    std::string r;
    if (turn.has_action(SystemAction::sympathetic_response)) r += "Great choice! ";
    if (turn.has_action(SystemAction::parroting_response)) {
        if (turn.step && turn.step->mode == FilterMode::include) {
            r += "Here are some " + tag_words(*turn.step->tag) + " picks. ";
        } else if (turn.step && turn.step->mode == FilterMode::exclude) {
            r += "Here are picks without " + tag_words(*turn.step->tag) + ". ";
        } else if (turn.question) {
            r += "You asked about " + category_words(turn.question->attribute.category) + ". ";
        } else {
            r += "Here are more picks like these. ";
        }
    }
    if (turn.has_action(SystemAction::item_attribute_answer) && turn.question) {
        const auto& tr = lookup(db, turn.question->track_id);
        r += tr.title + " has " + category_words(turn.question->attribute.category) + " " +
             turn.question->attribute.value + ". ";
    }
    if (!turn.track_ids.empty()) {
        const auto& tr = lookup(db, turn.track_ids.front());
        if (turn.has_action(SystemAction::active_recommendation)) {
            r += "I also added " + tr.title + " by " + tr.artist_name + ". ";
        } else {
            r += "I found " + std::to_string(turn.candidate_count) + " tracks, including " + tr.title + " by " +
                 tr.artist_name + ". ";
        }
    }
    if (turn.has_action(SystemAction::detail_attribute_request)) {
        r += "Is there a particular artist or mood you would like to hear? ";
    }
    if (turn.has_action(SystemAction::feedback_request)) r += "What about these ones? ";
    while (!r.empty() && r.back() == ' ') r.pop_back();
    if (r.empty()) r = "Here you go.";
    return r;
}

std::vector<Utterance> TemplateBackend::complete(const DialoguePlan& plan, const MusicDatabase& db) {
    std::vector<Utterance> out;
    out.reserve(plan.turns.size());
    for (const auto& turn : plan.turns) out.push_back({user_query(turn, db), system_response(turn, db)});
    return out;
}

// ---------------------------------------------------------------------------
// Chat-completion backend
// ---------------------------------------------------------------------------

std::string ChatCompletionConfig::token_from_env() {
    const char* v = std::getenv("MDGEN_LLM_TOKEN");
    return v ? std::string(v) : std::string();
}

ChatCompletionBackend::ChatCompletionBackend(ChatCompletionConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.endpoint.empty()) throw InvalidArgument("chat-completion endpoint is required");
    if (!(cfg_.timeout_seconds > 0.0)) throw InvalidArgument("timeout must be positive");
}

nlohmann::json ChatCompletionBackend::request_body(const DialoguePlan& plan, const MusicDatabase& db) const {
    const PromptBundle prompt = build_prompt(plan, db, cfg_.system_prompt);
    nlohmann::json body;
    body["model"] = cfg_.model;
    body["temperature"] = cfg_.temperature;
    body["messages"] = nlohmann::json::array({
        {{"role", "system"}, {"content", prompt.system_prompt}},
        {{"role", "user"}, {"content", prompt.user_message()}},
    });
    return body;
}

std::vector<Utterance> ChatCompletionBackend::complete(const DialoguePlan& plan, const MusicDatabase& db) {
    HttpHeaders headers;
    if (!cfg_.token.empty()) headers.emplace_back("Authorization", "Bearer " + cfg_.token);
    const std::string response =
        http_post_json(cfg_.endpoint, request_body(plan, db).dump(), headers, cfg_.timeout_seconds);

    nlohmann::json j;
    try {
        j = nlohmann::json::parse(response);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("response is not JSON: ") + e.what());
    }
    const auto content = [&]() -> std::optional<std::string> {
        auto choices = j.find("choices");
        if (choices == j.end() || !choices->is_array() || choices->empty()) return std::nullopt;
        const auto& first = (*choices)[0];
        if (!first.is_object()) return std::nullopt;
        auto msg = first.find("message");
        if (msg == first.end() || !msg->is_object()) return std::nullopt;
        auto c = msg->find("content");
        if (c == msg->end() || !c->is_string()) return std::nullopt;
        return c->get<std::string>();
    }();
    if (!content) throw DataError("response lacks choices[0].message.content");
    return parse_model_output(*content, plan.turns.size());
}

std::vector<Utterance> parse_model_output(std::string_view content, std::size_t expected_turns) {
    const std::string text = strip_code_fence(content);
    std::vector<Utterance> out;
    try {
        nlohmann::json j = nlohmann::json::parse(text);
        if (j.is_object() && j.contains("turns")) j = j["turns"];
        if (j.is_object()) j = nlohmann::json::array({j});
        if (!j.is_array()) throw DataError("model output is not a JSON array");
        for (const auto& t : j) out.push_back(utterance_from_json(t));
    } catch (const nlohmann::json::parse_error&) {
        // One object per line.
        std::istringstream lines(text);
        std::string line;
        while (std::getline(lines, line)) {
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            try {
                out.push_back(utterance_from_json(nlohmann::json::parse(line)));
            } catch (const nlohmann::json::exception& e) {
                throw DataError(std::string("unparseable model output: ") + e.what());
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("unparseable model output: ") + e.what());
    }
    if (out.size() != expected_turns) {
        throw DataError("model returned " + std::to_string(out.size()) + " turns, expected " +
                        std::to_string(expected_turns));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Generation driver
// ---------------------------------------------------------------------------

std::optional<DialogueRecord> generate(GenerationBackend& backend, const DialoguePlan& plan,
                                       const MusicDatabase& db, std::size_t retries) {
    for (std::size_t attempt = 0; attempt <= retries; ++attempt) {
        try {
            auto utterances = backend.complete(plan, db);
            if (utterances.size() != plan.turns.size()) continue;
            bool ok = true;
            for (const auto& u : utterances) ok = ok && !u.user_query.empty() && !u.system_response.empty();
            if (!ok) continue;
            return DialogueRecord{plan, backend.name(), std::move(utterances)};
        } catch (const TransportError&) {
        } catch (const DataError&) {
        }
    }
    return std::nullopt;
}

GenerationSummary generate_all(GenerationBackend& backend, const std::vector<DialoguePlan>& plans,
                               const MusicDatabase& db, std::size_t max_in_flight, std::size_t retries) {
    std::vector<std::optional<DialogueRecord>> slots(plans.size());
    parallel_for(plans.size(), std::max<std::size_t>(1, max_in_flight),
                 [&](std::size_t i) { slots[i] = generate(backend, plans[i], db, retries); });

    GenerationSummary summary;
    summary.requested = plans.size();
    for (auto& s : slots) {
        if (s) {
            summary.records.push_back(std::move(*s));
            ++summary.generated;
        } else {
            ++summary.dropped;
        }
    }
    return summary;
}

// ---------------------------------------------------------------------------
// Dialogue JSONL
// ---------------------------------------------------------------------------

nlohmann::ordered_json to_json(const DialogueRecord& record) {
    const auto& plan = record.plan;
    if (record.utterances.size() != plan.turns.size()) {
        throw InvalidArgument("record " + plan.dialogue_id + " has mismatched utterance count");
    }
    nlohmann::ordered_json j;
    j["dialogue_id"] = plan.dialogue_id;
    j["seed"] = plan.seed;
    j["backend"] = record.backend;
    auto turns = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < plan.turns.size(); ++i) {
        const auto& turn = plan.turns[i];
        nlohmann::ordered_json t;
        t["turn_index"] = turn.turn_index;
        auto intents = nlohmann::ordered_json::array();
        for (auto x : turn.user_intents) intents.push_back(intent_name(x));
        t["user_intents"] = std::move(intents);
        auto actions = nlohmann::ordered_json::array();
        for (auto x : turn.system_actions) actions.push_back(action_name(x));
        t["system_actions"] = std::move(actions);
        if (turn.step) {
            nlohmann::ordered_json s;
            s["mode"] = mode_name(turn.step->mode);
            if (turn.step->tag) {
                s["category"] = category_name(turn.step->tag->category);
                s["value"] = turn.step->tag->value;
            }
            t["step"] = std::move(s);
        } else {
            t["step"] = nullptr;
        }
        t["program"] = render(turn.program_after);
        t["user_query"] = record.utterances[i].user_query;
        t["system_response"] = record.utterances[i].system_response;
        t["track_ids"] = turn.track_ids;
        t["candidate_count"] = turn.candidate_count;
        if (turn.question) {
            nlohmann::ordered_json q;
            q["track_id"] = turn.question->track_id;
            q["category"] = category_name(turn.question->attribute.category);
            q["value"] = turn.question->attribute.value;
            t["question"] = std::move(q);
        }
        turns.push_back(std::move(t));
    }
    j["turns"] = std::move(turns);
    return j;
}

DialogueRecord record_from_json(const nlohmann::json& j) {
    try {
        DialogueRecord rec;
        rec.plan.dialogue_id = j.at("dialogue_id").get<std::string>();
        rec.plan.seed = j.at("seed").get<std::uint64_t>();
        rec.backend = j.at("backend").get<std::string>();
        for (const auto& t : j.at("turns")) {
            TurnPlan turn;
            turn.turn_index = t.at("turn_index").get<int>();
            for (const auto& x : t.at("user_intents")) {
                auto i = intent_from_name(x.get<std::string>());
                if (!i) throw DataError("unknown user intent: " + x.get<std::string>());
                turn.user_intents.push_back(*i);
            }
            for (const auto& x : t.at("system_actions")) {
                auto a = action_from_name(x.get<std::string>());
                if (!a) throw DataError("unknown system action: " + x.get<std::string>());
                turn.system_actions.push_back(*a);
            }
            if (!t.at("step").is_null()) turn.step = step_from_json(t.at("step"));
            turn.program_after = parse_program(t.at("program").get<std::string>());
            turn.track_ids = t.at("track_ids").get<std::vector<std::string>>();
            turn.candidate_count = t.value("candidate_count", turn.track_ids.size());
            if (auto q = t.find("question"); q != t.end() && !q->is_null()) {
                turn.question = ItemQuestion{q->at("track_id").get<std::string>(), tag_from_json(*q)};
            }
            rec.utterances.push_back({t.at("user_query").get<std::string>(), t.at("system_response").get<std::string>()});
            rec.plan.turns.push_back(std::move(turn));
        }
        return rec;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed dialogue record: ") + e.what());
    } catch (const ParseError& e) {
        throw DataError(std::string("malformed program: ") + e.what());
    }
}

void write_jsonl(const std::vector<DialogueRecord>& records, std::ostream& out) {
    for (const auto& r : records) out << to_json(r).dump() << '\n';
}

std::size_t emit_jsonl(const std::vector<DialogueRecord>& records, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    write_jsonl(records, out);
    out.flush();
    if (!out) throw DataError("write failed: " + path.string());
    return records.size();
}

std::vector<DialogueRecord> read_dialogues(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path.string());
    std::vector<DialogueRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(record_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        } catch (const DataError& e) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace mdgen
