// Copyright (C) 2026 The tvla Authors
// SPDX-License-Identifier: Apache-2.0

#include "tvla/io.hpp"

#include <fstream>
#include <sstream>

#include "tvla/error.hpp"

namespace tvla {

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        out << bytes;
        if (!out) {
            throw Error(ErrorCode::io_error, "cannot write " + path.string(), {{"path", path.string()}});
        }
    }
    std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::io_error, "cannot read " + path.string(), {{"path", path.string()}});
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
    const std::string text = read_file(path);
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& ex) {
        throw Error(ErrorCode::data_error, "malformed JSON in " + path.string() + ": " + ex.what(),
                    {{"path", path.string()}});
    }
}

} // namespace tvla
