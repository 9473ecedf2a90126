#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mdgen/music_db.hpp"

namespace mdgen {

enum class FilterMode : std::uint8_t { include, exclude, continue_ };

std::string_view mode_name(FilterMode m);
std::optional<FilterMode> mode_from_name(std::string_view name);

/// One cascade step. `tag` is present exactly when mode != continue_.
struct FilterStep {
    FilterMode mode = FilterMode::continue_;
    std::optional<AttributeTag> tag;

    static FilterStep include(AttributeTag t) { return {FilterMode::include, std::move(t)}; }
    static FilterStep exclude(AttributeTag t) { return {FilterMode::exclude, std::move(t)}; }
    static FilterStep keep() { return {FilterMode::continue_, std::nullopt}; }

    bool operator==(const FilterStep&) const = default;
};

/// Ordered cascade of filter steps. Value type; `extend` returns a new program.
class FilterProgram {
public:
    FilterProgram() = default;
    /// Throws InvalidArgument if the steps violate the duplicate-tag rule.
    explicit FilterProgram(std::vector<FilterStep> steps);

    const std::vector<FilterStep>& steps() const noexcept { return steps_; }
    std::size_t size() const noexcept { return steps_.size(); }
    bool empty() const noexcept { return steps_.empty(); }

    /// True if `step` could be appended without a duplicate include/exclude tag.
    bool can_extend(const FilterStep& step) const;

    /// Tags referenced by include or exclude steps, in step order.
    std::vector<AttributeTag> tags() const;

    bool operator==(const FilterProgram&) const = default;

private:
    std::vector<FilterStep> steps_;
};

/// Appends `step`; throws InvalidArgument on a duplicate include/exclude tag.
FilterProgram extend(const FilterProgram& program, const FilterStep& step);

/// Cascading evaluation starting from every track in the database.
IdSet evaluate(const MusicDatabase& db, const FilterProgram& program);

/// Applies one step to `current` (sorted). Unknown tags have empty postings.
IdSet apply_step(const MusicDatabase& db, const IdSet& current, const FilterStep& step);

IdSet intersect(const IdSet& a, std::span<const TrackIndex> b);
IdSet subtract(const IdSet& a, std::span<const TrackIndex> b);

/// Nested canonical form, e.g. "filter(theme:party, filter(genre:edm, database))".
/// Exclude steps use "exclude(tag, ...)", continue steps "continue(...)".
/// ',', '(', ')' and '\' inside values are backslash-escaped.
std::string render(const FilterProgram& program);

/// Inverse of render. Throws ParseError with the failing byte offset.
FilterProgram parse_program(std::string_view text);

nlohmann::json to_json(const FilterStep& step);
FilterStep step_from_json(const nlohmann::json& j);
nlohmann::json to_json(const FilterProgram& program);
FilterProgram program_from_json(const nlohmann::json& j);

}  // namespace mdgen
