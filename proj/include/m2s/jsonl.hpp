#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "m2s/binary_io.hpp"

namespace m2s {

using Json = nlohmann::json;

inline std::vector<Json> read_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<Json> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            rows.push_back(Json::parse(line));
        } catch (const Json::exception& e) {
            throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return rows;
}

inline void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& rows) {
    auto out = io::open_output(path);
    for (const auto& r : rows) out << r.dump() << '\n';
    if (!out) throw IoError("write failed: " + path.string());
}

inline Json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return Json::parse(in);
    } catch (const Json::exception& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

inline void write_json(const std::filesystem::path& path, const Json& doc) {
    auto out = io::open_output(path);
    out << doc.dump(2) << '\n';
    if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace m2s
