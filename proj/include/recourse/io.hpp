#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "recourse/common.hpp"
#include "recourse/schema.hpp"

namespace recourse {

namespace iodetail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    for (auto& s : out) {
        size_t b = s.find_first_not_of(" \t");
        size_t e = s.find_last_not_of(" \t");
        s = b == std::string::npos ? "" : s.substr(b, e - b + 1);
    }
    return out;
}

inline std::string format_value(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
}

}  // namespace iodetail

/// Instances CSV: one column per numeric feature (by name), one column per
/// one-hot group (holding the category label), and optionally a `label`
/// column with the observed class. No quoting; values must not contain
/// commas. Columns may appear in any order but all must be present.
inline std::vector<Instance> load_instances(const std::string& path,
                                            const FeatureSchema& schema) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open instances file: " + path);

    std::string line;
    if (!std::getline(in, line)) throw LoadError(path + ": empty instances file");
    std::vector<std::string> header = iodetail::split_csv_line(line);

    // Column plan: numeric feature index, or group name, or the label column.
    struct Column {
        enum class Kind { Numeric, Group, Label } kind;
        int feature_index{-1};
        std::string group;
    };
    std::vector<Column> columns;
    std::map<std::string, bool> seen_numeric;
    std::map<std::string, bool> seen_group;
    for (const auto& [group, members] : schema.groups()) {
        (void)members;
        seen_group[group] = false;
    }
    for (const Feature& f : schema.features())
        if (f.kind == FeatureKind::Numeric) seen_numeric[f.name] = false;

    for (const std::string& name : header) {
        if (name == "label") {
            columns.push_back({Column::Kind::Label, -1, {}});
            continue;
        }
        if (auto idx = schema.find(name);
            idx && schema.feature(*idx).kind == FeatureKind::Numeric) {
            if (seen_numeric[name]) throw LoadError(path + ": duplicate column '" + name + "'");
            seen_numeric[name] = true;
            columns.push_back({Column::Kind::Numeric, *idx, {}});
            continue;
        }
        if (seen_group.count(name)) {
            if (seen_group[name]) throw LoadError(path + ": duplicate column '" + name + "'");
            seen_group[name] = true;
            columns.push_back({Column::Kind::Group, -1, name});
            continue;
        }
        throw LoadError(path + ": unknown column '" + name +
                        "' (not a numeric feature or one-hot group of the schema)");
    }
    for (const auto& [name, seen] : seen_numeric)
        if (!seen) throw LoadError(path + ": missing column for numeric feature '" + name + "'");
    for (const auto& [name, seen] : seen_group)
        if (!seen) throw LoadError(path + ": missing column for one-hot group '" + name + "'");

    std::vector<Instance> instances;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        std::vector<std::string> cells = iodetail::split_csv_line(line);
        if (cells.size() != columns.size())
            throw LoadError(detail::format("%s: row %d has %zu cells, expected %zu",
                                           path.c_str(), line_no, cells.size(),
                                           columns.size()));
        Instance inst;
        inst.id = static_cast<int>(instances.size());
        inst.raw.assign(schema.feature_count(), 0.0);
        for (size_t c = 0; c < columns.size(); ++c) {
            const Column& col = columns[c];
            const std::string& cell = cells[c];
            if (col.kind == Column::Kind::Label) {
                if (cell.empty()) continue;
                if (cell != "0" && cell != "1")
                    throw LoadError(detail::format("%s: row %d: label must be 0 or 1, got '%s'",
                                                   path.c_str(), line_no, cell.c_str()));
                inst.label_hint = cell == "1" ? 1 : 0;
            } else if (col.kind == Column::Kind::Numeric) {
                char* end = nullptr;
                double v = std::strtod(cell.c_str(), &end);
                if (end == cell.c_str() || *end != '\0')
                    throw LoadError(detail::format("%s: row %d: '%s' is not a number",
                                                   path.c_str(), line_no, cell.c_str()));
                const Feature& f = schema.feature(col.feature_index);
                if (v < f.domain_min || v > f.domain_max)
                    throw LoadError(detail::format(
                        "%s: row %d: feature '%s' value %g outside domain [%g, %g]",
                        path.c_str(), line_no, f.name.c_str(), v, f.domain_min,
                        f.domain_max));
                inst.raw[static_cast<size_t>(col.feature_index)] = v;
            } else {
                bool found = false;
                for (int m : schema.group_members(col.group)) {
                    if (schema.feature(m).category == cell) {
                        inst.raw[static_cast<size_t>(m)] = 1.0;
                        found = true;
                    } else {
                        inst.raw[static_cast<size_t>(m)] = 0.0;
                    }
                }
                if (!found)
                    throw LoadError(detail::format(
                        "%s: row %d: '%s' is not a category of group '%s'", path.c_str(),
                        line_no, cell.c_str(), col.group.c_str()));
            }
        }
        instances.push_back(std::move(inst));
    }
    return instances;
}

/// Inverse of load_instances. Canonical column order: schema order, one-hot
/// groups appearing at their first member, label last when any instance has
/// one.
inline std::string instances_to_csv(const FeatureSchema& schema,
                                    const std::vector<Instance>& instances) {
    std::vector<std::string> numeric_cols;
    std::vector<std::string> group_cols;
    std::map<std::string, bool> group_done;
    std::ostringstream header;
    bool first = true;
    for (const Feature& f : schema.features()) {
        std::string col;
        if (f.kind == FeatureKind::Numeric) {
            col = f.name;
        } else {
            if (group_done[f.group]) continue;
            group_done[f.group] = true;
            col = f.group;
        }
        header << (first ? "" : ",") << col;
        first = false;
    }
    bool any_label = false;
    for (const Instance& inst : instances)
        if (inst.label_hint) any_label = true;
    if (any_label) header << ",label";

    std::ostringstream out;
    out << header.str() << '\n';
    for (const Instance& inst : instances) {
        group_done.clear();
        first = true;
        for (size_t i = 0; i < schema.feature_count(); ++i) {
            const Feature& f = schema.feature(static_cast<int>(i));
            if (f.kind == FeatureKind::Numeric) {
                out << (first ? "" : ",") << iodetail::format_value(inst.raw[i]);
                first = false;
            } else {
                if (group_done[f.group]) continue;
                group_done[f.group] = true;
                std::string label;
                for (int m : schema.group_members(f.group))
                    if (inst.raw[static_cast<size_t>(m)] == 1.0)
                        label = schema.feature(m).category;
                if (label.empty())
                    throw Error(detail::format("instance %d: group '%s' has no active member",
                                               inst.id, f.group.c_str()));
                out << (first ? "" : ",") << label;
                first = false;
            }
        }
        if (any_label)
            out << ',' << (inst.label_hint ? std::to_string(*inst.label_hint) : std::string());
        out << '\n';
    }
    return out.str();
}

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write file: " + path);
    out << content;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace recourse
