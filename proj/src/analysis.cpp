#include "mdgen/analysis.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include "mdgen/error.hpp"

namespace mdgen {

AgreementData::AgreementData(std::vector<std::vector<Cell>> table) : table_(std::move(table)) {
    raters_ = table_.empty() ? 0 : table_.front().size();
    for (const auto& row : table_) {
        if (row.size() != raters_) throw InvalidArgument("agreement table rows have different widths");
    }
    if (raters_ < 2) throw InvalidArgument("agreement data needs at least two raters");
}

std::size_t AgreementData::pairable_units() const {
    return static_cast<std::size_t>(std::count_if(table_.begin(), table_.end(), [](const auto& row) {
        return std::count_if(row.begin(), row.end(), [](const Cell& c) { return c.has_value(); }) >= 2;
    }));
}

double krippendorff_alpha(const AgreementData& data) {
    // Labels are numbered by first appearance so that renaming categories
    // leaves every floating-point operation unchanged.
    std::unordered_map<std::string, std::size_t> code;
    std::vector<std::vector<std::size_t>> units;
    for (const auto& row : data.table()) {
        std::vector<std::size_t> labels;
        for (const auto& cell : row) {
            if (!cell) continue;
            auto [it, inserted] = code.emplace(*cell, code.size());
            labels.push_back(it->second);
        }
        if (labels.size() >= 2) units.push_back(std::move(labels));
    }
    if (units.empty()) throw InvalidArgument("no unit has two or more labels");

    const std::size_t c = code.size();
    std::vector<double> o(c * c, 0.0);
    for (const auto& labels : units) {
        const double w = 1.0 / static_cast<double>(labels.size() - 1);
        for (std::size_t i = 0; i < labels.size(); ++i)
            for (std::size_t j = 0; j < labels.size(); ++j)
                if (i != j) o[labels[i] * c + labels[j]] += w;
    }
    std::vector<double> n_c(c, 0.0);
    double n = 0.0;
    for (std::size_t a = 0; a < c; ++a) {
        for (std::size_t b = 0; b < c; ++b) n_c[a] += o[a * c + b];
        n += n_c[a];
    }
    double disagree = 0.0, expected = 0.0;
    for (std::size_t a = 0; a < c; ++a) {
        for (std::size_t b = 0; b < c; ++b) {
            if (a == b) continue;
            disagree += o[a * c + b];
            expected += n_c[a] * n_c[b];
        }
    }
    if (expected == 0.0) return 1.0;
    return 1.0 - (n - 1.0) * disagree / expected;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line, std::size_t line_no) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur.push_back('"');
                ++i;
            } else if (ch == '"') {
                quoted = false;
            } else {
                cur.push_back(ch);
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    if (quoted) throw DataError("labels line " + std::to_string(line_no) + ": unterminated quote");
    fields.push_back(std::move(cur));
    for (auto& f : fields) {
        const auto b = f.find_first_not_of(" \t");
        const auto e = f.find_last_not_of(" \t");
        f = b == std::string::npos ? std::string() : f.substr(b, e - b + 1);
    }
    return fields;
}

std::string lower(std::string s) {
    for (auto& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return s;
}

}  // namespace

AgreementData read_agreement_csv(std::istream& in) {
    std::vector<std::string> unit_names, rater_names;
    std::unordered_map<std::string, std::size_t> unit_ix, rater_ix;
    std::map<std::pair<std::size_t, std::size_t>, std::string> labels;

    std::string line;
    std::size_t line_no = 0;
    bool first = true;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto f = split_csv_line(line, line_no);
        if (f.size() != 3) throw DataError("labels line " + std::to_string(line_no) + ": expected unit,rater,label");
        if (first && lower(f[0]) == "unit" && lower(f[1]) == "rater" && lower(f[2]) == "label") {
            first = false;
            continue;
        }
        first = false;
        if (f[0].empty() || f[1].empty()) throw DataError("labels line " + std::to_string(line_no) + ": empty unit or rater");
        auto [u, nu] = unit_ix.emplace(f[0], unit_names.size());
        if (nu) unit_names.push_back(f[0]);
        auto [r, nr] = rater_ix.emplace(f[1], rater_names.size());
        if (nr) rater_names.push_back(f[1]);
        if (f[2].empty()) continue;  // explicit missing label
        auto [it, inserted] = labels.emplace(std::make_pair(u->second, r->second), f[2]);
        if (!inserted && it->second != f[2]) {
            throw DataError("labels line " + std::to_string(line_no) + ": conflicting label for unit " + f[0] +
                            ", rater " + f[1]);
        }
    }
    if (rater_names.size() < 2) throw DataError("labels: need at least two raters");
    std::vector<std::vector<AgreementData::Cell>> table(unit_names.size(),
                                                        std::vector<AgreementData::Cell>(rater_names.size()));
    for (const auto& [key, label] : labels) table[key.first][key.second] = label;
    AgreementData data(std::move(table));
    data.unit_names = std::move(unit_names);
    data.rater_names = std::move(rater_names);
    return data;
}

AgreementData read_agreement_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path.string());
    return read_agreement_csv(in);
}

std::size_t utf8_length(std::string_view s) {
    std::size_t n = 0;
    for (unsigned char ch : s) {
        if ((ch & 0xC0) != 0x80) ++n;
    }
    return n;
}

StatsReport stats_report(const std::vector<DialogueRecord>& dialogues) {
    StatsReport r;
    r.n_dialogues = dialogues.size();
    std::set<std::string> tracks, vocab;
    std::size_t query_chars = 0, response_chars = 0, n_utt = 0;
    auto add_tokens = [&](const std::string& text) {
        std::istringstream ss(text);
        std::string tok;
        while (ss >> tok) vocab.insert(lower(tok));
    };
    for (const auto& d : dialogues) {
        r.n_turns += d.plan.turns.size();
        for (const auto& turn : d.plan.turns) {
            tracks.insert(turn.track_ids.begin(), turn.track_ids.end());
            if (turn.step && turn.step->tag) ++r.category_counts[std::string(category_name(turn.step->tag->category))];
        }
        for (const auto& u : d.utterances) {
            query_chars += utf8_length(u.user_query);
            response_chars += utf8_length(u.system_response);
            add_tokens(u.user_query);
            add_tokens(u.system_response);
            ++n_utt;
        }
    }
    r.n_distinct_tracks = tracks.size();
    r.vocabulary_size = vocab.size();
    if (r.n_dialogues > 0) r.mean_turns = static_cast<double>(r.n_turns) / static_cast<double>(r.n_dialogues);
    if (n_utt > 0) {
        r.mean_query_length = static_cast<double>(query_chars) / static_cast<double>(n_utt);
        r.mean_response_length = static_cast<double>(response_chars) / static_cast<double>(n_utt);
    }
    std::size_t total = 0;
    for (const auto& [name, count] : r.category_counts) total += count;
    for (const auto& [name, count] : r.category_counts) {
        r.category_ratios[name] = static_cast<double>(count) / static_cast<double>(total);
    }
    return r;
}

nlohmann::ordered_json to_json(const StatsReport& r) {
    nlohmann::ordered_json j;
    j["n_dialogues"] = r.n_dialogues;
    j["n_turns"] = r.n_turns;
    j["n_distinct_tracks"] = r.n_distinct_tracks;
    j["vocabulary_size"] = r.vocabulary_size;
    j["mean_turns"] = r.mean_turns;
    j["mean_query_length"] = r.mean_query_length;
    j["mean_response_length"] = r.mean_response_length;
    j["length_unit"] = "utf8_code_points";
    j["category_counts"] = r.category_counts;
    j["category_ratios"] = r.category_ratios;
    return j;
}

}  // namespace mdgen
