#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace mdgen {

// ---------------------------------------------------------------------------
// Attribute taxonomy
// ---------------------------------------------------------------------------

enum class AttributeCategory : std::uint8_t {
    track,
    artist,
    year,
    popularity,
    culture,
    similar_track,
    similar_artist,
    user,
    theme,
    mood,
    genre,
    instrument,
    vocal,
    tempo,
    key_mode,
};

inline constexpr std::array<AttributeCategory, 15> kAllCategories = {
    AttributeCategory::track,         AttributeCategory::artist,
    AttributeCategory::year,          AttributeCategory::popularity,
    AttributeCategory::culture,       AttributeCategory::similar_track,
    AttributeCategory::similar_artist, AttributeCategory::user,
    AttributeCategory::theme,         AttributeCategory::mood,
    AttributeCategory::genre,         AttributeCategory::instrument,
    AttributeCategory::vocal,         AttributeCategory::tempo,
    AttributeCategory::key_mode,
};

enum class CategoryGroup : std::uint8_t {
    metadata,
    similar_entity,
    user_context,
    content,
};

std::string_view category_name(AttributeCategory c);
std::optional<AttributeCategory> category_from_name(std::string_view name);
CategoryGroup category_group(AttributeCategory c);
std::string_view group_name(CategoryGroup g);

/// Lowercase, trim, and collapse internal whitespace runs to a single space.
std::string normalize_tag_value(std::string_view raw);

/// A (category, normalized value) pair. Ordered by category then value.
struct AttributeTag {
    AttributeCategory category{};
    std::string value;

    /// Normalizes `raw`; throws InvalidArgument if the result is empty.
    static AttributeTag make(AttributeCategory category, std::string_view raw);

    /// "category:value"
    std::string to_string() const;

    auto operator<=>(const AttributeTag&) const = default;
};

struct AttributeTagHash {
    std::size_t operator()(const AttributeTag& t) const noexcept;
};

// ---------------------------------------------------------------------------
// Tracks and quantization
// ---------------------------------------------------------------------------

struct TrackRecord {
    std::string track_id;
    std::string title;
    std::string artist_id;
    std::string artist_name;
    std::optional<int> year;
    std::optional<double> familiarity_percentile;  // 0 = most familiar artist
    std::optional<double> bpm;
    std::optional<std::string> key_mode;
    std::vector<AttributeTag> tags;  // sorted, unique

    bool has_tag(const AttributeTag& tag) const;
    void add_tag(AttributeTag tag);

    bool operator==(const TrackRecord&) const = default;
};

struct QuantizationConfig {
    /// Map familiarity percentiles in [0.30, 0.70) to "mid" instead of no tag.
    bool popularity_gap_as_mid = false;
};

AttributeTag quantize_year(int year);
std::optional<AttributeTag> quantize_popularity(double percentile,
                                                const QuantizationConfig& cfg = {});
AttributeTag quantize_tempo(double bpm);

/// Adds year/popularity/tempo/key_mode tags derived from the raw fields.
void apply_quantization(TrackRecord& track, const QuantizationConfig& cfg = {});

// ---------------------------------------------------------------------------
// Database
// ---------------------------------------------------------------------------

/// Dense position of a track in the database; positions follow ascending
/// track_id order, so sorted index lists are also sorted by id.
using TrackIndex = std::uint32_t;
using TagId = std::uint32_t;

/// Sorted, duplicate-free list of track positions.
using IdSet = std::vector<TrackIndex>;

/// Immutable multi-label track store with forward and inverted indexes.
class MusicDatabase {
public:
    MusicDatabase() = default;

    /// Builds both indexes. Throws DataError on duplicate track ids.
    static MusicDatabase build(std::vector<TrackRecord> tracks);

    std::size_t size() const noexcept { return tracks_.size(); }
    bool empty() const noexcept { return tracks_.empty(); }

    std::span<const TrackRecord> tracks() const noexcept { return tracks_; }
    const TrackRecord& track(TrackIndex i) const { return tracks_.at(i); }

    std::optional<TrackIndex> find(std::string_view track_id) const;
    /// Throws InvalidArgument for unknown ids.
    TrackIndex index_of(std::string_view track_id) const;

    std::size_t vocabulary_size() const noexcept { return vocabulary_.size(); }
    const AttributeTag& tag(TagId id) const { return vocabulary_.at(id); }
    std::optional<TagId> find_tag(const AttributeTag& tag) const;

    std::span<const TrackIndex> postings(TagId id) const { return inverted_.at(id); }
    std::span<const TagId> track_tags(TrackIndex i) const { return forward_.at(i); }

    /// Document count of a tag (length of its posting list).
    std::size_t document_count(TagId id) const { return inverted_.at(id).size(); }

    IdSet all() const;
    std::vector<std::string> ids(const IdSet& set) const;
    IdSet to_index_set(std::span<const std::string> ids) const;

private:
    std::vector<TrackRecord> tracks_;
    std::unordered_map<std::string, TrackIndex> id_index_;
    std::vector<AttributeTag> vocabulary_;
    std::unordered_map<AttributeTag, TagId, AttributeTagHash> tag_index_;
    std::vector<std::vector<TrackIndex>> inverted_;
    std::vector<std::vector<TagId>> forward_;
};

struct IngestReport {
    std::size_t lines = 0;
    std::size_t accepted = 0;
    std::size_t skipped_invalid = 0;
    std::size_t skipped_duplicate = 0;
    /// Diagnostics for the first few skipped lines ("line N: reason").
    std::vector<std::string> messages;

    std::size_t skipped() const noexcept { return skipped_invalid + skipped_duplicate; }
};

struct IngestResult {
    MusicDatabase db;
    IngestReport report;
};

/// Reads Track DB JSONL. Invalid and duplicate lines are skipped and counted.
/// Throws DataError when the file is unreadable or yields no valid record.
IngestResult ingest_tracks(const std::filesystem::path& path, const QuantizationConfig& cfg = {});
IngestResult ingest_tracks(std::istream& in, const QuantizationConfig& cfg = {});

/// Sorted ids of the tracks carrying `tag`; empty for unknown tags.
std::vector<std::string> posting_list(const MusicDatabase& db, const AttributeTag& tag);

/// Per-tag counts over `track_set`, skipping excluded tags and zero counts.
/// Throws InvalidArgument for ids not in the database.
std::map<AttributeTag, std::size_t> attribute_frequencies(const MusicDatabase& db,
                                                          std::span<const std::string> track_set,
                                                          const std::set<AttributeTag>& exclude);

/// Index-space variant used by the planner: (tag, count) pairs with count > 0,
/// ordered by tag id. `excluded` is indexed by TagId and may be shorter than
/// the vocabulary.
std::vector<std::pair<TagId, std::size_t>> tag_counts(const MusicDatabase& db, const IdSet& set,
                                                      const std::vector<bool>& excluded);

nlohmann::json to_json(const AttributeTag& tag);
AttributeTag tag_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrackRecord& track);
/// Validates and parses one Track DB object (no quantization applied).
TrackRecord track_from_json(const nlohmann::json& j);

/// Writes the database as Track DB JSONL in id order; tags include quantized ones.
void write_tracks(const MusicDatabase& db, const std::filesystem::path& path);

}  // namespace mdgen
