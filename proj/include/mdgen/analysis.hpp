#pragma once

#include <cstddef>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mdgen/utterance.hpp"

namespace mdgen {

/// Units x raters table of nominal labels; std::nullopt marks a missing label.
class AgreementData {
public:
    using Cell = std::optional<std::string>;

    /// `table[u][r]` is rater r's label for unit u; rows must have equal width.
    /// Throws InvalidArgument with fewer than two raters or ragged rows.
    explicit AgreementData(std::vector<std::vector<Cell>> table);

    std::size_t units() const noexcept { return table_.size(); }
    std::size_t raters() const noexcept { return raters_; }
    const std::vector<std::vector<Cell>>& table() const noexcept { return table_; }
    /// Units with at least two labels; only these enter alpha.
    std::size_t pairable_units() const;

    std::vector<std::string> unit_names;
    std::vector<std::string> rater_names;

private:
    std::vector<std::vector<Cell>> table_;
    std::size_t raters_ = 0;
};

/// Reads unit,rater,label rows (header row optional, double-quoted fields
/// allowed). Units and raters keep first-appearance order. A (unit, rater) pair
/// given twice with different labels is a DataError.
AgreementData read_agreement_csv(std::istream& in);
AgreementData read_agreement_csv(const std::filesystem::path& path);

/// Nominal Krippendorff's alpha, 1 - D_o / D_e over the coincidence matrix.
/// Units with fewer than two labels are dropped; D_e = 0 gives 1. Throws
/// InvalidArgument when no unit has two labels.
double krippendorff_alpha(const AgreementData& data);

struct StatsReport {
    std::size_t n_dialogues = 0;
    std::size_t n_turns = 0;
    std::size_t n_distinct_tracks = 0;
    std::size_t vocabulary_size = 0;
    double mean_turns = 0.0;
    double mean_query_length = 0.0;     // UTF-8 code points
    double mean_response_length = 0.0;  // UTF-8 code points
    std::map<std::string, std::size_t> category_counts;
    std::map<std::string, double> category_ratios;
};

/// Counts code points; invalid continuation bytes each count as one.
std::size_t utf8_length(std::string_view s);

/// Category counts take every include/exclude step once. Vocabulary is the set
/// of lowercase whitespace-separated tokens over queries and responses.
StatsReport stats_report(const std::vector<DialogueRecord>& dialogues);

nlohmann::ordered_json to_json(const StatsReport& report);

}  // namespace mdgen
