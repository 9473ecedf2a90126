#include "mdgen/filter.hpp"

#include <algorithm>
#include <iterator>
#include <set>

#include "mdgen/error.hpp"

namespace mdgen {

std::string_view mode_name(FilterMode m) {
    switch (m) {
        case FilterMode::include: return "include";
        case FilterMode::exclude: return "exclude";
        case FilterMode::continue_: return "continue";
    }
    throw InvalidArgument("invalid filter mode");
}

std::optional<FilterMode> mode_from_name(std::string_view name) {
    if (name == "include") return FilterMode::include;
    if (name == "exclude") return FilterMode::exclude;
    if (name == "continue") return FilterMode::continue_;
    return std::nullopt;
}

FilterProgram::FilterProgram(std::vector<FilterStep> steps) {
    steps_.reserve(steps.size());
    for (auto& s : steps) {
        if (!can_extend(s)) {
            throw InvalidArgument("duplicate " + std::string(mode_name(s.mode)) + " step for " +
                                  (s.tag ? s.tag->to_string() : std::string("<none>")));
        }
        steps_.push_back(std::move(s));
    }
}

bool FilterProgram::can_extend(const FilterStep& step) const {
    if (step.mode == FilterMode::continue_) return !step.tag.has_value();
    if (!step.tag) return false;
    return std::none_of(steps_.begin(), steps_.end(), [&](const FilterStep& s) {
        return s.mode == step.mode && s.tag == step.tag;
    });
}

std::vector<AttributeTag> FilterProgram::tags() const {
    std::vector<AttributeTag> out;
    for (const auto& s : steps_) {
        if (s.tag) out.push_back(*s.tag);
    }
    return out;
}

FilterProgram extend(const FilterProgram& program, const FilterStep& step) {
    std::vector<FilterStep> steps = program.steps();
    steps.push_back(step);
    return FilterProgram(std::move(steps));
}

IdSet intersect(const IdSet& a, std::span<const TrackIndex> b) {
    IdSet out;
    out.reserve(std::min(a.size(), b.size()));
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}

IdSet subtract(const IdSet& a, std::span<const TrackIndex> b) {
    IdSet out;
    out.reserve(a.size());
    std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}

IdSet apply_step(const MusicDatabase& db, const IdSet& current, const FilterStep& step) {
    if (step.mode == FilterMode::continue_) return current;
    std::span<const TrackIndex> postings;
    if (auto id = db.find_tag(*step.tag)) postings = db.postings(*id);
    return step.mode == FilterMode::include ? intersect(current, postings) : subtract(current, postings);
}

IdSet evaluate(const MusicDatabase& db, const FilterProgram& program) {
    IdSet current = db.all();
    for (const auto& step : program.steps()) current = apply_step(db, current, step);
    return current;
}

// ---------------------------------------------------------------------------
// Canonical text form
// ---------------------------------------------------------------------------

namespace {

bool needs_escape(char c) { return c == ',' || c == '(' || c == ')' || c == '\\'; }

void append_tag(std::string& out, const AttributeTag& tag) {
    out += category_name(tag.category);
    out.push_back(':');
    for (char c : tag.value) {
        if (needs_escape(c)) out.push_back('\\');
        out.push_back(c);
    }
}

class ProgramParser {
public:
    explicit ProgramParser(std::string_view text) : text_(text) {}

    FilterProgram parse() {
        std::vector<FilterStep> outer_first;
        for (;;) {
            skip_ws();
            const std::size_t word_at = pos_;
            const std::string_view word = identifier();
            if (word == "database") break;
            expect('(');
            if (word == "filter" || word == "exclude") {
                AttributeTag tag = parse_tag();
                expect(',');
                outer_first.push_back(word == "filter" ? FilterStep::include(std::move(tag))
                                                       : FilterStep::exclude(std::move(tag)));
            } else if (word == "continue") {
                outer_first.push_back(FilterStep::keep());
            } else {
                fail("expected filter, exclude, continue, or database", word_at);
            }
        }
        for (std::size_t i = 0; i < outer_first.size(); ++i) {
            skip_ws();
            expect(')');
        }
        skip_ws();
        if (pos_ != text_.size()) fail("trailing characters", pos_);

        std::reverse(outer_first.begin(), outer_first.end());
        try {
            return FilterProgram(std::move(outer_first));
        } catch (const InvalidArgument& e) {
            throw ParseError(e.what(), 0);
        }
    }

private:
    [[noreturn]] void fail(const std::string& what, std::size_t at) const { throw ParseError(what, at); }

    void skip_ws() {
        while (pos_ < text_.size() && (text_[pos_] == ' ' || text_[pos_] == '\t' || text_[pos_] == '\n' ||
                                       text_[pos_] == '\r')) {
            ++pos_;
        }
    }

    void expect(char c) {
        if (pos_ >= text_.size() || text_[pos_] != c) fail(std::string("expected '") + c + "'", pos_);
        ++pos_;
    }

    std::string_view identifier() {
        const std::size_t start = pos_;
        while (pos_ < text_.size() && ((text_[pos_] >= 'a' && text_[pos_] <= 'z') || text_[pos_] == '_')) ++pos_;
        if (pos_ == start) fail("expected identifier", start);
        return text_.substr(start, pos_ - start);
    }

    AttributeTag parse_tag() {
        skip_ws();
        const std::size_t cat_at = pos_;
        const auto category = category_from_name(identifier());
        if (!category) fail("unknown category", cat_at);
        expect(':');
        const std::size_t value_at = pos_;
        std::string value;
        std::size_t kept = 0;  // length without trailing unescaped whitespace
        while (pos_ < text_.size()) {
            const char c = text_[pos_];
            if (c == '\\') {
                if (pos_ + 1 >= text_.size()) fail("dangling escape", pos_);
                value.push_back(text_[pos_ + 1]);
                kept = value.size();
                pos_ += 2;
                continue;
            }
            if (c == ',' || c == '(' || c == ')') break;
            value.push_back(c);
            if (c != ' ' && c != '\t' && c != '\n' && c != '\r') kept = value.size();
            ++pos_;
        }
        value.resize(kept);
        if (value.empty() || normalize_tag_value(value) != value) fail("invalid tag value", value_at);
        return AttributeTag{*category, std::move(value)};
    }

    std::string_view text_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string render(const FilterProgram& program) {
    std::string out;
    const auto& steps = program.steps();
    for (auto it = steps.rbegin(); it != steps.rend(); ++it) {
        switch (it->mode) {
            case FilterMode::include:
                out += "filter(";
                append_tag(out, *it->tag);
                out += ", ";
                break;
            case FilterMode::exclude:
                out += "exclude(";
                append_tag(out, *it->tag);
                out += ", ";
                break;
            case FilterMode::continue_:
                out += "continue(";
                break;
        }
    }
    out += "database";
    out.append(steps.size(), ')');
    return out;
}

FilterProgram parse_program(std::string_view text) { return ProgramParser(text).parse(); }

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

nlohmann::json to_json(const FilterStep& step) {
    nlohmann::json j = nlohmann::json::object();
    j["mode"] = mode_name(step.mode);
    if (step.tag) {
        j["category"] = category_name(step.tag->category);
        j["value"] = step.tag->value;
    }
    return j;
}

FilterStep step_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("mode") || !j["mode"].is_string()) {
        throw DataError("step must be an object with a string mode");
    }
    auto mode = mode_from_name(j["mode"].get<std::string>());
    if (!mode) throw DataError("unknown step mode: " + j["mode"].get<std::string>());
    if (*mode == FilterMode::continue_) return FilterStep::keep();
    return FilterStep{*mode, tag_from_json(j)};
}

nlohmann::json to_json(const FilterProgram& program) {
    auto arr = nlohmann::json::array();
    for (const auto& s : program.steps()) arr.push_back(to_json(s));
    return arr;
}

FilterProgram program_from_json(const nlohmann::json& j) {
    if (!j.is_array()) throw DataError("program must be a JSON array");
    std::vector<FilterStep> steps;
    for (const auto& s : j) steps.push_back(step_from_json(s));
    try {
        return FilterProgram(std::move(steps));
    } catch (const InvalidArgument& e) {
        throw DataError(e.what());
    }
}

}  // namespace mdgen
