// Copyright (C) 2026 The tvla Authors
// SPDX-License-Identifier: Apache-2.0

#include <bit>
#include <cstring>

#include "tvla/error.hpp"
#include "tvla/io.hpp"
#include "tvla/model.hpp"

namespace tvla {

static_assert(std::endian::native == std::endian::little, "checkpoint blobs are stored little-endian");

namespace {

constexpr char kMagic[8] = {'T', 'V', 'L', 'A', 'C', 'K', 'P', 'T'};

template <typename U> void put(std::string& out, U value) {
    char buf[sizeof(U)];
    std::memcpy(buf, &value, sizeof(U));
    out.append(buf, sizeof(U));
}

void put_floats(std::string& out, const ParamVector<float>& v) {
    out.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(float));
}

[[noreturn]] void corrupt(const std::filesystem::path& path, const std::string& why) {
    throw Error(ErrorCode::incompatible_artifacts, "unreadable checkpoint " + path.string() + ": " + why,
                {{"path", path.string()}});
}

} // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    const std::size_t n = count_parameters(ckpt.config);
    if (ckpt.params.size() != n) {
        throw Error(ErrorCode::shape_mismatch, "parameter vector does not match the model config",
                    {{"expected", n}, {"actual", ckpt.params.size()}});
    }
    nlohmann::json tensors = nlohmann::json::array();
    for (const auto& t : parameter_layout(ckpt.config)) {
        tensors.push_back({{"name", t.name}, {"offset", t.offset}, {"shape", {t.rows, t.cols}}, {"vision", t.vision}});
    }
    nlohmann::json blobs = nlohmann::json::array({{{"name", "params"}, {"count", ckpt.params.size()}}});
    nlohmann::json optimizer = nullptr;
    if (ckpt.optimizer) {
        if (ckpt.optimizer->m.size() != ckpt.optimizer->v.size()) {
            throw Error(ErrorCode::shape_mismatch, "optimizer moment vectors differ in size");
        }
        blobs.push_back({{"name", "adam_m"}, {"count", ckpt.optimizer->m.size()}});
        blobs.push_back({{"name", "adam_v"}, {"count", ckpt.optimizer->v.size()}});
        optimizer = {{"step", ckpt.optimizer->step}};
    }
    const nlohmann::json header = {{"format_version", Checkpoint::kFormatVersion},
                                   {"dtype", "float32"},
                                   {"config", to_json(ckpt.config)},
                                   {"vocab_hash", ckpt.vocab_hash},
                                   {"vocab", ckpt.vocab},
                                   {"tensors", tensors},
                                   {"blobs", blobs},
                                   {"optimizer", optimizer},
                                   {"meta", ckpt.meta}};
    const std::string text = header.dump();

    std::string out;
    out.append(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, Checkpoint::kFormatVersion);
    put<std::uint64_t>(out, text.size());
    out += text;
    put_floats(out, ckpt.params);
    if (ckpt.optimizer) {
        put_floats(out, ckpt.optimizer->m);
        put_floats(out, ckpt.optimizer->v);
    }
    write_file_atomic(path, out);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const std::string bytes = read_file(path);
    constexpr std::size_t fixed = sizeof kMagic + sizeof(std::uint32_t) + sizeof(std::uint64_t);
    if (bytes.size() < fixed || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
        corrupt(path, "bad magic");
    }
    std::uint32_t version = 0;
    std::uint64_t header_len = 0;
    std::memcpy(&version, bytes.data() + sizeof kMagic, sizeof version);
    std::memcpy(&header_len, bytes.data() + sizeof kMagic + sizeof version, sizeof header_len);
    if (version != Checkpoint::kFormatVersion) {
        throw Error(ErrorCode::incompatible_artifacts, "unsupported checkpoint version",
                    {{"path", path.string()}, {"version", version}, {"supported", Checkpoint::kFormatVersion}});
    }
    if (header_len > bytes.size() - fixed) {
        corrupt(path, "truncated header");
    }
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(fixed, header_len));
    } catch (const nlohmann::json::exception&) {
        corrupt(path, "malformed header");
    }

    Checkpoint ckpt;
    ckpt.config = model_config_from_json(header.at("config"));
    ckpt.config.validate();
    ckpt.vocab = header.at("vocab");
    ckpt.vocab_hash = header.at("vocab_hash").get<std::string>();
    ckpt.meta = header.value("meta", nlohmann::json::object());

    std::size_t pos = fixed + header_len;
    auto take = [&](std::size_t count) {
        if (count > (bytes.size() - pos) / sizeof(float)) {
            corrupt(path, "truncated weight blob");
        }
        ParamVector<float> v(count);
        std::memcpy(v.data(), bytes.data() + pos, count * sizeof(float));
        pos += count * sizeof(float);
        return v;
    };
    const auto& blobs = header.at("blobs");
    ckpt.params = take(blobs.at(0).at("count").get<std::size_t>());
    if (ckpt.params.size() != count_parameters(ckpt.config)) {
        corrupt(path, "parameter count does not match its config");
    }
    if (!header.at("optimizer").is_null()) {
        OptimizerState opt;
        opt.step = header.at("optimizer").at("step").get<std::int64_t>();
        opt.m = take(blobs.at(1).at("count").get<std::size_t>());
        opt.v = take(blobs.at(2).at("count").get<std::size_t>());
        ckpt.optimizer = std::move(opt);
    }
    if (pos != bytes.size()) {
        corrupt(path, "trailing bytes");
    }
    return ckpt;
}

} // namespace tvla
