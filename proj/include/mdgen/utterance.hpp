#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mdgen/music_db.hpp"
#include "mdgen/planner.hpp"

namespace mdgen {

/// Conditioning text for one dialogue: a fixed system prompt, a per-dialogue
/// payload describing every planned turn, and output-format instructions.
struct PromptBundle {
    std::string system_prompt;
    std::string payload;
    std::string format_instructions;

    /// payload + blank line + format instructions; the user message sent to a model.
    std::string user_message() const;
};

/// Built-in system prompt (data/prompts/dialogue_system_prompt.txt).
std::string_view default_system_prompt();

/// Throws InvalidArgument if a planned track is missing from `db`.
PromptBundle build_prompt(const DialoguePlan& plan, const MusicDatabase& db,
                          std::string_view system_prompt = default_system_prompt());

struct Utterance {
    std::string user_query;
    std::string system_response;

    bool operator==(const Utterance&) const = default;
};

/// A plan plus one generated utterance pair per turn.
struct DialogueRecord {
    DialoguePlan plan;
    std::string backend;
    std::vector<Utterance> utterances;  // parallel to plan.turns

    bool operator==(const DialogueRecord&) const = default;
};

class GenerationBackend {
public:
    virtual ~GenerationBackend() = default;
    virtual std::string name() const = 0;
    /// One utterance pair per planned turn. May throw TransportError (retryable)
    /// or DataError (malformed output).
    virtual std::vector<Utterance> complete(const DialoguePlan& plan, const MusicDatabase& db) = 0;
};

/// Deterministic slot-filled utterances. Intended for tests and offline runs.
class TemplateBackend final : public GenerationBackend {
public:
    std::string name() const override { return "template"; }
    std::vector<Utterance> complete(const DialoguePlan& plan, const MusicDatabase& db) override;

    static std::string user_query(const TurnPlan& turn, const MusicDatabase& db);
    static std::string system_response(const TurnPlan& turn, const MusicDatabase& db);
};

struct ChatCompletionConfig {
    std::string endpoint;  // full URL, e.g. https://host/v1/chat/completions
    std::string model;
    double temperature = 1.0;
    double timeout_seconds = 120.0;
    std::string token;  // bearer token; empty = no Authorization header
    std::string system_prompt = std::string(default_system_prompt());

    /// Reads the bearer token from MDGEN_LLM_TOKEN (empty if unset).
    static std::string token_from_env();
};

/// Any chat-completion-compatible HTTP endpoint; one request per dialogue.
class ChatCompletionBackend final : public GenerationBackend {
public:
    explicit ChatCompletionBackend(ChatCompletionConfig cfg);
    std::string name() const override { return "llm:" + cfg_.model; }
    std::vector<Utterance> complete(const DialoguePlan& plan, const MusicDatabase& db) override;

    /// Request body for `plan` (exposed for tests).
    nlohmann::json request_body(const DialoguePlan& plan, const MusicDatabase& db) const;

private:
    ChatCompletionConfig cfg_;
};

/// Parses model output into exactly `expected_turns` utterance pairs. Accepts a
/// JSON array, an object with a "turns" array, or one JSON object per line,
/// optionally wrapped in a markdown code fence. Throws DataError otherwise.
std::vector<Utterance> parse_model_output(std::string_view content, std::size_t expected_turns);

inline constexpr std::size_t kDefaultGenerationRetries = 3;

/// Runs the backend with up to `retries` retries after the first attempt.
/// Returns std::nullopt when every attempt failed (the dialogue is dropped).
std::optional<DialogueRecord> generate(GenerationBackend& backend, const DialoguePlan& plan,
                                       const MusicDatabase& db,
                                       std::size_t retries = kDefaultGenerationRetries);

struct GenerationSummary {
    std::vector<DialogueRecord> records;  // in plan order, dropped ones omitted
    std::size_t requested = 0;
    std::size_t generated = 0;
    std::size_t dropped = 0;
};

/// Generates every plan with at most `max_in_flight` concurrent backend calls.
/// The backend must be safe to call concurrently.
GenerationSummary generate_all(GenerationBackend& backend, const std::vector<DialoguePlan>& plans,
                               const MusicDatabase& db, std::size_t max_in_flight = 8,
                               std::size_t retries = kDefaultGenerationRetries);

/// Keys in schema order: dialogue_id, seed, backend, turns.
nlohmann::ordered_json to_json(const DialogueRecord& record);
DialogueRecord record_from_json(const nlohmann::json& j);

/// One record per line with a stable key order. Returns the number written.
std::size_t emit_jsonl(const std::vector<DialogueRecord>& records, const std::filesystem::path& path);
void write_jsonl(const std::vector<DialogueRecord>& records, std::ostream& out);
std::vector<DialogueRecord> read_dialogues(const std::filesystem::path& path);

}  // namespace mdgen
