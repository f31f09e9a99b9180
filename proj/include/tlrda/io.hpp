#pragma once

#include "tlrda/sample.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

// Dataset files and structured configs. One CSV per population with columns
// f1..fp,label; a JSON manifest maps population ids to files and marks the
// target. Config and report documents are JSON.

namespace tlrda {

using json = nlohmann::json;

inline void write_population_csv(const std::filesystem::path& path,
                                 const PopulationSample& sample) {
    sample.validate();
    std::ofstream os(path);
    if (!os) throw data_error("write_population_csv: cannot open " + path.string());
    const int p = static_cast<int>(sample.features.cols());
    for (int j = 0; j < p; ++j) os << 'f' << (j + 1) << ',';
    os << "label\n";
    os.precision(17);
    for (Eigen::Index i = 0; i < sample.features.rows(); ++i) {
        for (int j = 0; j < p; ++j) os << sample.features(i, j) << ',';
        os << sample.labels[static_cast<std::size_t>(i)] << '\n';
    }
    if (!os) throw data_error("write_population_csv: write failed for " + path.string());
}

inline PopulationSample read_population_csv(const std::filesystem::path& path,
                                            int population_id) {
    std::ifstream is(path);
    if (!is) throw data_error("read_population_csv: cannot open " + path.string());
    std::string line;
    if (!std::getline(is, line)) throw data_error("read_population_csv: empty file " + path.string());
    if (!line.empty() && line.back() == '\r') line.pop_back();

    std::vector<std::string> header;
    {
        std::istringstream hs(line);
        std::string cell;
        while (std::getline(hs, cell, ',')) header.push_back(cell);
    }
    if (header.size() < 2 || header.back() != "label")
        throw data_error("read_population_csv: expected header f1..fp,label in " + path.string());
    const int p = static_cast<int>(header.size()) - 1;
    for (int j = 0; j < p; ++j)
        if (header[static_cast<std::size_t>(j)] != "f" + std::to_string(j + 1))
            throw data_error("read_population_csv: unexpected feature column '" +
                             header[static_cast<std::size_t>(j)] + "' in " + path.string());

    std::vector<std::vector<double>> rows;
    std::vector<int> labels;
    int lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string cell;
        std::vector<double> row;
        row.reserve(static_cast<std::size_t>(p) + 1);
        while (std::getline(ls, cell, ',')) {
            std::size_t pos = 0;
            double value;
            try {
                value = std::stod(cell, &pos);
            } catch (const std::exception&) {
                throw data_error("read_population_csv: non-numeric cell '" + cell + "' at line " +
                                 std::to_string(lineno) + " of " + path.string());
            }
            if (pos != cell.size())
                throw data_error("read_population_csv: trailing junk in cell '" + cell +
                                 "' at line " + std::to_string(lineno) + " of " + path.string());
            row.push_back(value);
        }
        if (static_cast<int>(row.size()) != p + 1)
            throw data_error("read_population_csv: line " + std::to_string(lineno) + " of " +
                             path.string() + " has " + std::to_string(row.size()) +
                             " cells, expected " + std::to_string(p + 1));
        double lab = row.back();
        row.pop_back();
        if (lab != 1.0 && lab != -1.0)
            throw data_error("read_population_csv: label must be -1 or 1 at line " +
                             std::to_string(lineno) + " of " + path.string());
        labels.push_back(static_cast<int>(lab));
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw data_error("read_population_csv: no data rows in " + path.string());

    PopulationSample s;
    s.population_id = population_id;
    s.labels = std::move(labels);
    s.features.resize(static_cast<Eigen::Index>(rows.size()), p);
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (int j = 0; j < p; ++j)
            s.features(static_cast<Eigen::Index>(i), j) = rows[i][static_cast<std::size_t>(j)];
    s.validate();
    return s;
}

struct Manifest {
    struct Entry {
        int population_id = 0;
        std::string file;
        bool target = false;
    };
    std::vector<Entry> entries;      // target last by convention
    std::optional<std::string> test_file;
    std::string note;
};

inline void write_manifest(const std::filesystem::path& path, const Manifest& m) {
    json doc;
    doc["schema"] = "tlrda-manifest-v1";
    doc["populations"] = json::array();
    for (const auto& e : m.entries)
        doc["populations"].push_back(
            {{"population_id", e.population_id}, {"file", e.file}, {"target", e.target}});
    if (m.test_file)
        doc["test_file"] = *m.test_file;
    else
        doc["test_file"] = nullptr;
    if (!m.note.empty()) doc["note"] = m.note;
    std::ofstream os(path);
    if (!os) throw data_error("write_manifest: cannot open " + path.string());
    os << doc.dump(2) << '\n';
}

inline Manifest read_manifest(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw data_error("read_manifest: cannot open " + path.string());
    json doc;
    try {
        is >> doc;
    } catch (const json::exception& e) {
        throw data_error("read_manifest: invalid JSON in " + path.string() + ": " + e.what());
    }
    if (doc.value("schema", "") != "tlrda-manifest-v1")
        throw data_error("read_manifest: unsupported schema in " + path.string());
    Manifest m;
    if (!doc.contains("populations") || !doc["populations"].is_array())
        throw data_error("read_manifest: missing populations array in " + path.string());
    int targets = 0;
    for (const auto& e : doc["populations"]) {
        Manifest::Entry entry;
        entry.population_id = e.at("population_id").get<int>();
        entry.file = e.at("file").get<std::string>();
        entry.target = e.value("target", false);
        targets += entry.target ? 1 : 0;
        m.entries.push_back(std::move(entry));
    }
    if (m.entries.empty()) throw data_error("read_manifest: no populations listed");
    if (targets != 1) throw data_error("read_manifest: exactly one population must be the target");
    if (doc.contains("test_file") && !doc["test_file"].is_null())
        m.test_file = doc["test_file"].get<std::string>();
    m.note = doc.value("note", "");
    return m;
}

// Loads every population named by the manifest, reordered so the target
// population comes last.
inline std::vector<PopulationSample> load_datasets(const std::filesystem::path& manifest_path) {
    Manifest m = read_manifest(manifest_path);
    std::filesystem::path base = manifest_path.parent_path();
    std::vector<PopulationSample> sources, out;
    std::optional<PopulationSample> target;
    for (const auto& e : m.entries) {
        PopulationSample s = read_population_csv(base / e.file, e.population_id);
        if (e.target)
            target = std::move(s);
        else
            sources.push_back(std::move(s));
    }
    out = std::move(sources);
    out.push_back(std::move(*target));
    Eigen::Index p = out.front().features.cols();
    for (const auto& s : out)
        if (s.features.cols() != p)
            throw data_error("load_datasets: populations disagree on dimension");
    return out;
}

inline json read_json_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw contract_error("config: cannot open " + path.string());
    json doc;
    try {
        is >> doc;
    } catch (const json::exception& e) {
        throw contract_error("config: invalid JSON in " + path.string() + ": " + e.what());
    }
    if (!doc.is_object()) throw contract_error("config: top level must be a JSON object");
    return doc;
}

// Schema discipline: every recognized key is listed; anything else is an
// error so typos do not silently fall back to defaults.
inline void reject_unknown_keys(const json& obj, const std::vector<std::string>& allowed,
                                const std::string& context) {
    for (const auto& item : obj.items()) {
        bool ok = false;
        for (const auto& key : allowed)
            if (item.key() == key) {
                ok = true;
                break;
            }
        if (!ok)
            throw contract_error("config: unknown key '" + item.key() + "' in " + context);
    }
}

inline void write_json_file(const std::filesystem::path& path, const json& doc) {
    std::ofstream os(path);
    if (!os) throw data_error("write_json_file: cannot open " + path.string());
    os << doc.dump(2) << '\n';
    if (!os) throw data_error("write_json_file: write failed for " + path.string());
}

} // namespace tlrda
