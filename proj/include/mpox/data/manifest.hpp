#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mpox/core/digest.hpp"
#include "mpox/core/error.hpp"
#include "mpox/core/image.hpp"
#include "mpox/data/labels.hpp"

namespace mpox {

struct ImageRecord {
    std::string id;
    std::string path;  ///< as written in the manifest, relative to the manifest directory
    ClassLabel label = ClassLabel::acne;  ///< source label, kept across relabelling
    int target = 0;                       ///< label code for the manifest's task
    std::string source;
    std::string sha256;
};

struct DatasetManifest {
    std::vector<ImageRecord> records;
    TaskKind task = TaskKind::multiclass;
    std::vector<std::size_t> class_counts = std::vector<std::size_t>(kMulticlassCount, 0);
    std::string version;
    std::filesystem::path root;  ///< directory that relative record paths resolve against

    std::filesystem::path resolve(const ImageRecord& r) const {
        std::filesystem::path p(r.path);
        return p.is_absolute() ? p : root / p;
    }
    const ImageRecord& find(const std::string& id) const {
        for (const auto& r : records)
            if (r.id == id) return r;
        fail(ErrorCode::not_found, "no record with id '" + id + "'");
    }
};

inline void recount(DatasetManifest& m) {
    m.class_counts.assign(static_cast<std::size_t>(class_count(m.task)), 0);
    for (const auto& r : m.records) ++m.class_counts.at(static_cast<std::size_t>(r.target));
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line, std::size_t line_no) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur.push_back('"');
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (quoted) fail(ErrorCode::parse, "line " + std::to_string(line_no) + ": unterminated quote");
    fields.push_back(cur);
    return fields;
}

inline std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
}

}  // namespace detail

/// Parse a manifest CSV with header `id,path,label,source,sha256`.
/// Image files are not touched.
inline DatasetManifest parse_manifest(std::istream& in, const std::filesystem::path& root, std::string version = {}) {
    DatasetManifest m;
    m.root = root;
    m.version = std::move(version);
    std::string line;
    std::size_t line_no = 0;
    bool header_seen = false;
    std::set<std::string> ids;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
        if (detail::trim(line).empty()) continue;
        auto fields = detail::split_csv_line(line, line_no);
        for (auto& f : fields) f = detail::trim(f);
        if (!header_seen) {
            const std::vector<std::string> expected{"id", "path", "label", "source", "sha256"};
            for (auto& f : fields) f = lowercase(f);
            if (fields != expected)
                fail(ErrorCode::parse, "line " + std::to_string(line_no) + ": header must be id,path,label,source,sha256");
            header_seen = true;
            continue;
        }
        if (fields.size() != 5)
            fail(ErrorCode::parse, "line " + std::to_string(line_no) + ": expected 5 fields, got " +
                                       std::to_string(fields.size()));
        if (fields[0].empty() || fields[1].empty())
            fail(ErrorCode::parse, "line " + std::to_string(line_no) + ": empty id or path");
        ImageRecord r;
        r.id = fields[0];
        r.path = fields[1];
        try {
            r.label = parse_class_label(fields[2]);
        } catch (const Error& e) {
            fail(ErrorCode::parse, "line " + std::to_string(line_no) + ": " + e.what());
        }
        r.target = target_code(r.label, TaskKind::multiclass);
        r.source = fields[3];
        r.sha256 = lowercase(fields[4]);
        if (!ids.insert(r.id).second) fail(ErrorCode::invalid_argument, "duplicate record id '" + r.id + "'");
        m.records.push_back(std::move(r));
    }
    if (!header_seen) fail(ErrorCode::parse, "manifest is missing its header line");
    recount(m);
    return m;
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::not_found, "manifest not found: " + path.string());
    const std::string version = sha256_hex(read_text_file(path.string())).substr(0, 12);
    return parse_manifest(in, path.parent_path(), version);
}

inline std::string to_csv(const DatasetManifest& m) {
    std::ostringstream os;
    os << "id,path,label,source,sha256\n";
    for (const auto& r : m.records)
        os << r.id << ',' << r.path << ',' << to_string(r.label) << ',' << r.source << ',' << r.sha256 << '\n';
    return os.str();
}

/// Mpox keeps code 0, every other record becomes Others (1). The source label
/// stays on the record so folds can still stratify over the four classes.
inline DatasetManifest relabel_binary(const DatasetManifest& m) {
    DatasetManifest out = m;
    out.task = TaskKind::binary;
    for (auto& r : out.records) r.target = target_code(r.label, TaskKind::binary);
    recount(out);
    return out;
}

struct ValidationCheck {
    std::string name;
    bool passed = true;
    std::vector<std::string> details;
};

struct ValidationReport {
    std::vector<ValidationCheck> checks;
    bool passed() const {
        for (const auto& c : checks)
            if (!c.passed) return false;
        return true;
    }
    const ValidationCheck& check(const std::string& name) const {
        for (const auto& c : checks)
            if (c.name == name) return c;
        fail(ErrorCode::not_found, "no validation check named " + name);
    }
};

inline nlohmann::json to_json(const ValidationReport& report) {
    nlohmann::json j;
    j["passed"] = report.passed();
    for (const auto& c : report.checks)
        j["checks"].push_back({{"name", c.name}, {"passed", c.passed}, {"details", c.details}});
    return j;
}

/// Checks file existence, decodability, content-hash uniqueness (and agreement
/// with the declared digest) and class balance. Failures are report entries.
inline ValidationReport validate_manifest(const DatasetManifest& m) {
    ValidationCheck exists{"file_exists", true, {}}, decodable{"decodable", true, {}}, unique{"hash_unique", true, {}},
        declared{"hash_matches_manifest", true, {}}, balance{"class_balance", true, {}};
    std::map<std::string, std::vector<std::string>> by_hash;
    for (const auto& r : m.records) {
        const auto path = m.resolve(r);
        std::error_code ec;
        if (!std::filesystem::is_regular_file(path, ec)) {
            exists.passed = false;
            exists.details.push_back(r.id + ": missing " + path.string());
            continue;
        }
        const auto bytes = read_file_bytes(path.string());
        const auto digest = sha256_hex(bytes);
        by_hash[digest].push_back(r.id);
        if (!r.sha256.empty() && r.sha256 != digest) {
            declared.passed = false;
            declared.details.push_back(r.id + ": declared " + r.sha256 + " but file hashes to " + digest);
        }
        try {
            (void)decode_image(bytes);
        } catch (const Error& e) {
            decodable.passed = false;
            decodable.details.push_back(r.id + ": " + e.what());
        }
    }
    for (const auto& [digest, ids] : by_hash) {
        if (ids.size() < 2) continue;
        unique.passed = false;
        std::string line = "identical content " + digest.substr(0, 16) + ":";
        for (const auto& id : ids) line += " " + id;
        unique.details.push_back(line);
    }
    const auto& names = class_names(m.task);
    if (!m.records.empty()) {
        const double expected = static_cast<double>(m.records.size()) / static_cast<double>(m.class_counts.size());
        for (std::size_t c = 0; c < m.class_counts.size(); ++c) {
            if (static_cast<double>(m.class_counts[c]) != expected) {
                balance.passed = false;
                std::ostringstream line;
                line << names[c] << ": " << m.class_counts[c] << " (expected " << expected << ")";
                balance.details.push_back(line.str());
            }
        }
    }
    return ValidationReport{{exists, decodable, unique, declared, balance}};
}

}  // namespace mpox
