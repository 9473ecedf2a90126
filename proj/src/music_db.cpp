#include "mdgen/music_db.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <functional>
#include <istream>
#include <limits>

#include "mdgen/error.hpp"

namespace mdgen {

namespace {

constexpr std::array<std::string_view, 15> kCategoryNames = {
    "track", "artist", "year",  "popularity", "culture",    "similar_track", "similar_artist", "user",
    "theme", "mood",   "genre", "instrument", "vocal",      "tempo",         "key_mode",
};

constexpr std::size_t kMaxIngestMessages = 20;

bool is_space(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

}  // namespace

std::string_view category_name(AttributeCategory c) {
    return kCategoryNames.at(static_cast<std::size_t>(c));
}

std::optional<AttributeCategory> category_from_name(std::string_view name) {
    for (std::size_t i = 0; i < kCategoryNames.size(); ++i) {
        if (kCategoryNames[i] == name) return static_cast<AttributeCategory>(i);
    }
    return std::nullopt;
}

CategoryGroup category_group(AttributeCategory c) {
    switch (c) {
        case AttributeCategory::track:
        case AttributeCategory::artist:
        case AttributeCategory::year:
        case AttributeCategory::popularity:
        case AttributeCategory::culture:
            return CategoryGroup::metadata;
        case AttributeCategory::similar_track:
        case AttributeCategory::similar_artist:
            return CategoryGroup::similar_entity;
        case AttributeCategory::user:
        case AttributeCategory::theme:
        case AttributeCategory::mood:
            return CategoryGroup::user_context;
        case AttributeCategory::genre:
        case AttributeCategory::instrument:
        case AttributeCategory::vocal:
        case AttributeCategory::tempo:
        case AttributeCategory::key_mode:
            return CategoryGroup::content;
    }
    throw InvalidArgument("invalid attribute category");
}

std::string_view group_name(CategoryGroup g) {
    switch (g) {
        case CategoryGroup::metadata: return "metadata";
        case CategoryGroup::similar_entity: return "similar_entity";
        case CategoryGroup::user_context: return "user_context";
        case CategoryGroup::content: return "content";
    }
    throw InvalidArgument("invalid category group");
}

std::string normalize_tag_value(std::string_view raw) {
    std::string out;
    out.reserve(raw.size());
    bool pending_space = false;
    for (char c : raw) {
        if (is_space(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    return out;
}

AttributeTag AttributeTag::make(AttributeCategory category, std::string_view raw) {
    std::string value = normalize_tag_value(raw);
    if (value.empty()) {
        throw InvalidArgument("empty value for " + std::string(category_name(category)) + " tag");
    }
    return AttributeTag{category, std::move(value)};
}

std::string AttributeTag::to_string() const {
    std::string s(category_name(category));
    s.push_back(':');
    s += value;
    return s;
}

std::size_t AttributeTagHash::operator()(const AttributeTag& t) const noexcept {
    std::size_t h = std::hash<std::string>{}(t.value);
    return h ^ (static_cast<std::size_t>(t.category) * 0x9e3779b97f4a7c15ULL);
}

bool TrackRecord::has_tag(const AttributeTag& tag) const {
    return std::binary_search(tags.begin(), tags.end(), tag);
}

void TrackRecord::add_tag(AttributeTag tag) {
    auto it = std::lower_bound(tags.begin(), tags.end(), tag);
    if (it == tags.end() || *it != tag) tags.insert(it, std::move(tag));
}

// ---------------------------------------------------------------------------
// Quantizers
// ---------------------------------------------------------------------------

AttributeTag quantize_year(int year) {
    if (year < 1000 || year > 2999) {
        throw InvalidArgument("year out of range [1000, 2999]: " + std::to_string(year));
    }
    const int decade = year / 10 * 10;
    return AttributeTag{AttributeCategory::year, std::to_string(decade) + "s"};
}

std::optional<AttributeTag> quantize_popularity(double percentile, const QuantizationConfig& cfg) {
    if (!(percentile >= 0.0 && percentile <= 1.0)) {
        throw InvalidArgument("familiarity percentile outside [0, 1]");
    }
    if (percentile < 0.10) return AttributeTag{AttributeCategory::popularity, "high"};
    if (percentile < 0.30) return AttributeTag{AttributeCategory::popularity, "mid"};
    if (percentile >= 0.70) return AttributeTag{AttributeCategory::popularity, "low"};
    if (cfg.popularity_gap_as_mid) return AttributeTag{AttributeCategory::popularity, "mid"};
    return std::nullopt;
}

AttributeTag quantize_tempo(double bpm) {
    if (!(bpm > 0.0) || !std::isfinite(bpm)) {
        throw InvalidArgument("bpm must be positive and finite");
    }
    if (bpm < 70.0) return AttributeTag{AttributeCategory::tempo, "slow"};
    if (bpm <= 130.0) return AttributeTag{AttributeCategory::tempo, "moderate"};
    return AttributeTag{AttributeCategory::tempo, "fast"};
}

void apply_quantization(TrackRecord& track, const QuantizationConfig& cfg) {
    if (track.year) track.add_tag(quantize_year(*track.year));
    if (track.familiarity_percentile) {
        if (auto t = quantize_popularity(*track.familiarity_percentile, cfg)) track.add_tag(std::move(*t));
    }
    if (track.bpm) track.add_tag(quantize_tempo(*track.bpm));
    if (track.key_mode && !normalize_tag_value(*track.key_mode).empty()) {
        track.add_tag(AttributeTag::make(AttributeCategory::key_mode, *track.key_mode));
    }
}

// ---------------------------------------------------------------------------
// MusicDatabase
// ---------------------------------------------------------------------------

MusicDatabase MusicDatabase::build(std::vector<TrackRecord> tracks) {
    std::sort(tracks.begin(), tracks.end(),
              [](const TrackRecord& a, const TrackRecord& b) { return a.track_id < b.track_id; });
    for (std::size_t i = 1; i < tracks.size(); ++i) {
        if (tracks[i].track_id == tracks[i - 1].track_id) {
            throw DataError("duplicate track_id: " + tracks[i].track_id);
        }
    }
    if (tracks.size() > std::numeric_limits<TrackIndex>::max()) {
        throw DataError("too many tracks");
    }

    MusicDatabase db;
    std::set<AttributeTag> vocab;
    for (auto& t : tracks) {
        std::sort(t.tags.begin(), t.tags.end());
        t.tags.erase(std::unique(t.tags.begin(), t.tags.end()), t.tags.end());
        vocab.insert(t.tags.begin(), t.tags.end());
    }
    db.vocabulary_.assign(vocab.begin(), vocab.end());
    db.tag_index_.reserve(db.vocabulary_.size());
    for (TagId id = 0; id < db.vocabulary_.size(); ++id) db.tag_index_.emplace(db.vocabulary_[id], id);

    db.inverted_.resize(db.vocabulary_.size());
    db.forward_.resize(tracks.size());
    db.id_index_.reserve(tracks.size());
    for (TrackIndex i = 0; i < tracks.size(); ++i) {
        db.id_index_.emplace(tracks[i].track_id, i);
        auto& fwd = db.forward_[i];
        fwd.reserve(tracks[i].tags.size());
        for (const auto& tag : tracks[i].tags) {
            const TagId id = db.tag_index_.at(tag);
            fwd.push_back(id);
            db.inverted_[id].push_back(i);  // i ascends, so postings stay sorted
        }
    }
    db.tracks_ = std::move(tracks);
    return db;
}

std::optional<TrackIndex> MusicDatabase::find(std::string_view track_id) const {
    auto it = id_index_.find(std::string(track_id));
    if (it == id_index_.end()) return std::nullopt;
    return it->second;
}

TrackIndex MusicDatabase::index_of(std::string_view track_id) const {
    if (auto i = find(track_id)) return *i;
    throw InvalidArgument("unknown track id: " + std::string(track_id));
}

std::optional<TagId> MusicDatabase::find_tag(const AttributeTag& tag) const {
    auto it = tag_index_.find(tag);
    if (it == tag_index_.end()) return std::nullopt;
    return it->second;
}

IdSet MusicDatabase::all() const {
    IdSet s(tracks_.size());
    for (TrackIndex i = 0; i < s.size(); ++i) s[i] = i;
    return s;
}

std::vector<std::string> MusicDatabase::ids(const IdSet& set) const {
    std::vector<std::string> out;
    out.reserve(set.size());
    for (TrackIndex i : set) out.push_back(tracks_.at(i).track_id);
    return out;
}

IdSet MusicDatabase::to_index_set(std::span<const std::string> ids) const {
    IdSet out;
    out.reserve(ids.size());
    for (const auto& id : ids) out.push_back(index_of(id));
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

// ---------------------------------------------------------------------------
// Queries
// ---------------------------------------------------------------------------

std::vector<std::string> posting_list(const MusicDatabase& db, const AttributeTag& tag) {
    std::vector<std::string> out;
    if (auto id = db.find_tag(tag)) {
        for (TrackIndex i : db.postings(*id)) out.push_back(db.track(i).track_id);
    }
    return out;
}

std::vector<std::pair<TagId, std::size_t>> tag_counts(const MusicDatabase& db, const IdSet& set,
                                                      const std::vector<bool>& excluded) {
    std::vector<std::size_t> counts(db.vocabulary_size(), 0);
    for (TrackIndex i : set) {
        for (TagId t : db.track_tags(i)) ++counts[t];
    }
    std::vector<std::pair<TagId, std::size_t>> out;
    for (TagId t = 0; t < counts.size(); ++t) {
        if (counts[t] == 0) continue;
        if (t < excluded.size() && excluded[t]) continue;
        out.emplace_back(t, counts[t]);
    }
    return out;
}

std::map<AttributeTag, std::size_t> attribute_frequencies(const MusicDatabase& db,
                                                          std::span<const std::string> track_set,
                                                          const std::set<AttributeTag>& exclude) {
    const IdSet set = db.to_index_set(track_set);
    std::vector<bool> excluded(db.vocabulary_size(), false);
    for (const auto& tag : exclude) {
        if (auto id = db.find_tag(tag)) excluded[*id] = true;
    }
    std::map<AttributeTag, std::size_t> out;
    for (auto [id, count] : tag_counts(db, set, excluded)) out.emplace(db.tag(id), count);
    return out;
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

nlohmann::json to_json(const AttributeTag& tag) {
    return nlohmann::json{{"category", category_name(tag.category)}, {"value", tag.value}};
}

AttributeTag tag_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw DataError("tag must be an object");
    const auto cat_it = j.find("category");
    const auto val_it = j.find("value");
    if (cat_it == j.end() || !cat_it->is_string()) throw DataError("tag.category must be a string");
    if (val_it == j.end() || !val_it->is_string()) throw DataError("tag.value must be a string");
    auto category = category_from_name(cat_it->get<std::string>());
    if (!category) throw DataError("unknown category: " + cat_it->get<std::string>());
    const std::string value = normalize_tag_value(val_it->get<std::string>());
    if (value.empty()) throw DataError("empty tag value");
    return AttributeTag{*category, value};
}

nlohmann::json to_json(const TrackRecord& t) {
    nlohmann::json j = nlohmann::json::object();
    j["track_id"] = t.track_id;
    j["title"] = t.title;
    j["artist_id"] = t.artist_id;
    j["artist_name"] = t.artist_name;
    if (t.year) j["year"] = *t.year;
    if (t.familiarity_percentile) j["familiarity_percentile"] = *t.familiarity_percentile;
    if (t.bpm) j["bpm"] = *t.bpm;
    if (t.key_mode) j["key_mode"] = *t.key_mode;
    auto tags = nlohmann::json::array();
    for (const auto& tag : t.tags) tags.push_back(to_json(tag));
    j["tags"] = std::move(tags);
    return j;
}

namespace {

std::string required_string(const nlohmann::json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end() || !it->is_string()) throw DataError(std::string(key) + " must be a string");
    return it->get<std::string>();
}

const nlohmann::json* optional_field(const nlohmann::json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return nullptr;
    return &*it;
}

}  // namespace

TrackRecord track_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw DataError("record must be a JSON object");
    TrackRecord t;
    t.track_id = required_string(j, "track_id");
    if (t.track_id.empty()) throw DataError("track_id must be nonempty");
    t.title = required_string(j, "title");
    t.artist_id = required_string(j, "artist_id");
    t.artist_name = required_string(j, "artist_name");

    if (const auto* y = optional_field(j, "year")) {
        if (!y->is_number_integer()) throw DataError("year must be an integer");
        const auto year = y->get<long long>();
        if (year < 1000 || year > 2999) throw DataError("year out of range");
        t.year = static_cast<int>(year);
    }
    if (const auto* f = optional_field(j, "familiarity_percentile")) {
        if (!f->is_number()) throw DataError("familiarity_percentile must be a number");
        const double p = f->get<double>();
        if (!(p >= 0.0 && p <= 1.0)) throw DataError("familiarity_percentile outside [0, 1]");
        t.familiarity_percentile = p;
    }
    if (const auto* b = optional_field(j, "bpm")) {
        if (!b->is_number()) throw DataError("bpm must be a number");
        const double bpm = b->get<double>();
        if (!(bpm > 0.0) || !std::isfinite(bpm)) throw DataError("bpm must be positive");
        t.bpm = bpm;
    }
    if (const auto* k = optional_field(j, "key_mode")) {
        if (!k->is_string()) throw DataError("key_mode must be a string");
        t.key_mode = k->get<std::string>();
    }
    if (const auto* tags = optional_field(j, "tags")) {
        if (!tags->is_array()) throw DataError("tags must be an array");
        for (const auto& tj : *tags) t.add_tag(tag_from_json(tj));
    }
    return t;
}

// ---------------------------------------------------------------------------
// Ingest
// ---------------------------------------------------------------------------

IngestResult ingest_tracks(std::istream& in, const QuantizationConfig& cfg) {
    IngestReport report;
    std::vector<TrackRecord> tracks;
    std::unordered_map<std::string, bool> seen;

    auto skip = [&](std::size_t line_no, const std::string& why) {
        if (report.messages.size() < kMaxIngestMessages) {
            report.messages.push_back("line " + std::to_string(line_no) + ": " + why);
        }
    };

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        ++report.lines;
        try {
            auto j = nlohmann::json::parse(line);
            TrackRecord t = track_from_json(j);
            if (!seen.emplace(t.track_id, true).second) {
                ++report.skipped_duplicate;
                skip(line_no, "duplicate track_id " + t.track_id);
                continue;
            }
            apply_quantization(t, cfg);
            tracks.push_back(std::move(t));
            ++report.accepted;
        } catch (const nlohmann::json::exception& e) {
            ++report.skipped_invalid;
            skip(line_no, std::string("invalid JSON: ") + e.what());
        } catch (const Error& e) {
            ++report.skipped_invalid;
            skip(line_no, e.what());
        }
    }
    if (tracks.empty()) throw DataError("no valid track records");
    return IngestResult{MusicDatabase::build(std::move(tracks)), std::move(report)};
}

IngestResult ingest_tracks(const std::filesystem::path& path, const QuantizationConfig& cfg) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path.string());
    return ingest_tracks(in, cfg);
}

void write_tracks(const MusicDatabase& db, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    for (const auto& t : db.tracks()) out << to_json(t).dump() << '\n';
    if (!out) throw DataError("write failed: " + path.string());
}

}  // namespace mdgen
