#pragma once

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "lexcorpus/errors.hpp"

namespace lexcorpus {

inline const std::vector<std::string>& reasoning_categories() {
    static const std::vector<std::string> kCategories = {"issue-spotting",  "rule-recall",    "rule-application",
                                                         "rule-conclusion", "interpretation", "rhetorical-understanding"};
    return kCategories;
}

/// Generic multiple-choice legal subsets scored through the same machinery.
inline constexpr std::string_view kMultipleChoiceCategory = "mmlu-legal";

inline bool is_known_category(std::string_view c) {
    const auto& cats = reasoning_categories();
    return c == kMultipleChoiceCategory || std::find(cats.begin(), cats.end(), c) != cats.end();
}

struct TaskItem {
    std::string id;
    std::string prompt;
    std::string gold;
};

struct TaskSpec {
    std::string id;
    std::string category;
    std::vector<std::string> labels;
    std::vector<TaskItem> items;

    void validate() const {
        if (labels.size() < 2) throw FormatError("task '" + id + "' needs at least two labels");
        if (!is_known_category(category)) throw FormatError("task '" + id + "' has unknown category '" + category + "'");
        for (const auto& it : items) {
            if (std::find(labels.begin(), labels.end(), it.gold) == labels.end()) {
                throw FormatError("task '" + id + "' item '" + it.id + "' gold label '" + it.gold + "' not in label set");
            }
        }
    }
};

inline TaskSpec task_spec_from_json(const nlohmann::json& j) {
    try {
        TaskSpec t;
        t.id = j.at("id").get<std::string>();
        t.category = j.at("category").get<std::string>();
        t.labels = j.at("labels").get<std::vector<std::string>>();
        for (const auto& it : j.at("items")) {
            t.items.push_back({it.at("id").get<std::string>(), it.value("prompt", std::string()),
                               it.at("gold").get<std::string>()});
        }
        t.validate();
        return t;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed task spec: ") + e.what());
    }
}

/// {"tasks": [TaskSpec...]} or a bare array.
inline std::vector<TaskSpec> load_tasks(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open task file '" + path + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError("task file '" + path + "': " + e.what());
    }
    const auto& arr = j.is_object() ? j.at("tasks") : j;
    std::vector<TaskSpec> tasks;
    for (const auto& t : arr) tasks.push_back(task_spec_from_json(t));
    return tasks;
}

// ---------------------------------------------------------------------------
// Answer parsing

/// nullopt is a parse failure.
using ParsedAnswer = std::optional<std::string>;

namespace detail {

inline std::string ascii_lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

inline bool word_char(char c) {
    const auto u = static_cast<unsigned char>(c);
    return std::isalnum(u) || c == '_' || u >= 0x80;
}

/// Earliest whole-word occurrence of any label in `hay` (lowercased); ties
/// at the same position prefer the longer label.
inline ParsedAnswer first_label(std::string_view hay, const std::vector<std::string>& labels,
                                const std::vector<std::string>& lowered) {
    std::size_t best_pos = std::string_view::npos;
    std::size_t best = 0;
    for (std::size_t l = 0; l < labels.size(); ++l) {
        const auto& needle = lowered[l];
        if (needle.empty()) continue;
        std::size_t pos = hay.find(needle);
        while (pos != std::string_view::npos) {
            const bool left_ok = pos == 0 || !word_char(hay[pos - 1]) || !word_char(needle.front());
            const std::size_t end = pos + needle.size();
            const bool right_ok = end >= hay.size() || !word_char(hay[end]) || !word_char(needle.back());
            if (left_ok && right_ok) break;
            pos = hay.find(needle, pos + 1);
        }
        if (pos == std::string_view::npos) continue;
        if (pos < best_pos || (pos == best_pos && needle.size() > lowered[best].size())) {
            best_pos = pos;
            best = l;
        }
    }
    if (best_pos == std::string_view::npos) return std::nullopt;
    return labels[best];
}

}  // namespace detail

/// Case-insensitive whole-word label search. A line starting with "Answer:"
/// is searched first; otherwise the first-occurring label in the text wins.
inline ParsedAnswer parse_answer(std::string_view raw, const std::vector<std::string>& labels) {
    if (labels.empty()) throw std::invalid_argument("label set must be nonempty");
    const std::string text = detail::ascii_lower(raw);
    std::vector<std::string> lowered;
    lowered.reserve(labels.size());
    for (const auto& l : labels) lowered.push_back(detail::ascii_lower(l));

    std::size_t start = 0;
    while (start <= text.size()) {
        const auto nl = text.find('\n', start);
        const std::string_view line(text.data() + start, (nl == std::string::npos ? text.size() : nl) - start);
        const auto first = line.find_first_not_of(" \t\r*#>-");
        if (first != std::string_view::npos && line.substr(first).starts_with("answer:")) {
            if (auto hit = detail::first_label(line.substr(first + 7), labels, lowered)) return hit;
        }
        if (nl == std::string::npos) break;
        start = nl + 1;
    }
    return detail::first_label(text, labels, lowered);
}

// ---------------------------------------------------------------------------
// Scoring

/// Mean per-label recall over labels that occur among the golds. Parse
/// failures count as wrong.
inline double balanced_accuracy(const std::vector<ParsedAnswer>& predictions, const std::vector<std::string>& golds,
                                const std::vector<std::string>& labels) {
    if (golds.empty()) throw std::invalid_argument("balanced accuracy is undefined for an empty gold list");
    if (predictions.size() != golds.size()) throw std::invalid_argument("predictions and golds differ in length");
    std::map<std::string, std::pair<std::size_t, std::size_t>> per_label;  // label -> (correct, total)
    for (std::size_t i = 0; i < golds.size(); ++i) {
        if (std::find(labels.begin(), labels.end(), golds[i]) == labels.end()) {
            throw std::invalid_argument("gold label '" + golds[i] + "' not in label set");
        }
        auto& [correct, total] = per_label[golds[i]];
        ++total;
        if (predictions[i] && *predictions[i] == golds[i]) ++correct;
    }
    double sum = 0.0;
    for (const auto& [label, ct] : per_label) sum += static_cast<double>(ct.first) / static_cast<double>(ct.second);
    return sum / static_cast<double>(per_label.size());
}

struct TaskScore {
    std::string task_id;
    std::string category;
    double balanced_accuracy = 0.0;
    double parse_failure_rate = 0.0;
    std::size_t items = 0;
};

/// Predictions keyed by item id. Missing predictions count as parse
/// failures. Returns nullopt (with `warning` set) for tasks whose golds use
/// fewer than two distinct labels.
inline std::optional<TaskScore> score_task(const TaskSpec& task, const std::map<std::string, std::string>& predictions,
                                           std::string* warning = nullptr) {
    std::set<std::string> distinct;
    for (const auto& it : task.items) distinct.insert(it.gold);
    if (distinct.size() < 2) {
        if (warning) *warning = "task '" + task.id + "' skipped: fewer than two distinct gold labels";
        return std::nullopt;
    }
    std::vector<ParsedAnswer> preds;
    std::vector<std::string> golds;
    std::size_t failures = 0;
    for (const auto& it : task.items) {
        auto p = predictions.find(it.id);
        ParsedAnswer parsed = p == predictions.end() ? std::nullopt : parse_answer(p->second, task.labels);
        failures += !parsed.has_value();
        preds.push_back(std::move(parsed));
        golds.push_back(it.gold);
    }
    return TaskScore{task.id, task.category, balanced_accuracy(preds, golds, task.labels),
                     static_cast<double>(failures) / static_cast<double>(task.items.size()), task.items.size()};
}

struct CategorySummary {
    double mean = 0.0;
    std::size_t tasks = 0;
};

struct CategoryReport {
    std::map<std::string, CategorySummary> categories;
    double overall = 0.0;  // mean over tasks
};

inline CategoryReport aggregate_categories(const std::vector<TaskScore>& scores) {
    if (scores.empty()) throw std::invalid_argument("no task scores to aggregate");
    CategoryReport r;
    std::map<std::string, double> sums;
    double total = 0.0;
    for (const auto& s : scores) {
        if (s.category.empty()) throw std::invalid_argument("task '" + s.task_id + "' has no category");
        sums[s.category] += s.balanced_accuracy;
        ++r.categories[s.category].tasks;
        total += s.balanced_accuracy;
    }
    for (auto& [c, summary] : r.categories) summary.mean = sums[c] / static_cast<double>(summary.tasks);
    r.overall = total / static_cast<double>(scores.size());
    return r;
}

inline nlohmann::json to_json(const TaskScore& s) {
    return {{"task", s.task_id}, {"category", s.category}, {"balanced_accuracy", s.balanced_accuracy},
            {"parse_failure_rate", s.parse_failure_rate}, {"items", s.items}};
}

inline nlohmann::json to_json(const CategoryReport& r) {
    nlohmann::json cats = nlohmann::json::object();
    for (const auto& [c, s] : r.categories) cats[c] = {{"mean", s.mean}, {"tasks", s.tasks}};
    return {{"categories", cats}, {"overall", r.overall}};
}

inline TaskScore task_score_from_json(const nlohmann::json& j) {
    try {
        return TaskScore{j.at("task").get<std::string>(), j.at("category").get<std::string>(),
                         j.at("balanced_accuracy").get<double>(), j.value("parse_failure_rate", 0.0),
                         j.value("items", std::size_t{0})};
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed task score: ") + e.what());
    }
}

/// Fixed-width table: one row per category plus the overall mean.
inline std::string format_category_table(const CategoryReport& r) {
    std::string out = "category                      tasks  balanced_acc\n";
    char buf[128];
    for (const auto& [c, s] : r.categories) {
        std::snprintf(buf, sizeof buf, "%-28s %6zu  %12.4f\n", c.c_str(), s.tasks, s.mean);
        out += buf;
    }
    std::snprintf(buf, sizeof buf, "%-28s %6s  %12.4f\n", "overall", "", r.overall);
    out += buf;
    return out;
}

// ---------------------------------------------------------------------------
// Delta tables

struct DeltaRow {
    std::string category;
    std::size_t tasks = 0;
    std::size_t nonnegative = 0;  // delta >= 0
    std::size_t nonpositive = 0;  // delta <= 0

    [[nodiscard]] double pct_nonnegative() const { return 100.0 * static_cast<double>(nonnegative) / static_cast<double>(tasks); }
    [[nodiscard]] double pct_nonpositive() const { return 100.0 * static_cast<double>(nonpositive) / static_cast<double>(tasks); }
};

/// One decimal and a percent sign; an empty column renders as an em dash.
inline std::string format_percentage(std::size_t count, std::size_t total) {
    if (count == 0) return "\xE2\x80\x94";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f%%", 100.0 * static_cast<double>(count) / static_cast<double>(total));
    return buf;
}

inline std::string format_delta_cell(const DeltaRow& r) {
    return format_percentage(r.nonnegative, r.tasks) + " / " + format_percentage(r.nonpositive, r.tasks);
}

/// Per category, the share of tasks with score_a - score_b >= 0 and <= 0. A
/// zero delta counts in both columns.
inline std::vector<DeltaRow> delta_table(const std::vector<TaskScore>& a, const std::vector<TaskScore>& b) {
    std::map<std::string, const TaskScore*> ma, mb;
    for (const auto& s : a) ma[s.task_id] = &s;
    for (const auto& s : b) mb[s.task_id] = &s;
    std::vector<std::string> only;
    for (const auto& [id, s] : ma) {
        if (!mb.count(id)) only.push_back(id);
    }
    for (const auto& [id, s] : mb) {
        if (!ma.count(id)) only.push_back(id);
    }
    if (!only.empty()) {
        std::string msg = "task sets differ:";
        for (const auto& id : only) msg += " " + id;
        throw std::invalid_argument(msg);
    }
    std::map<std::string, DeltaRow> rows;
    for (const auto& [id, sa] : ma) {
        const double delta = sa->balanced_accuracy - mb[id]->balanced_accuracy;
        auto& row = rows[sa->category];
        row.category = sa->category;
        ++row.tasks;
        row.nonnegative += delta >= 0.0;
        row.nonpositive += delta <= 0.0;
    }
    std::vector<DeltaRow> out;
    for (auto& [c, r] : rows) out.push_back(std::move(r));
    return out;
}

inline std::string format_delta_table(const std::vector<DeltaRow>& rows) {
    std::string out = "category                      tasks  delta>=0 / delta<=0\n";
    char buf[128];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%-28s %6zu  ", r.category.c_str(), r.tasks);
        out += buf + format_delta_cell(r) + "\n";
    }
    return out;
}

}  // namespace lexcorpus
