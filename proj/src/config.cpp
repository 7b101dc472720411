// Copyright (C) 2026 The tvla Authors
// SPDX-License-Identifier: Apache-2.0

#include "tvla/config.hpp"

#include "tvla/error.hpp"
#include "tvla/io.hpp"

namespace tvla {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& key, const std::string& msg, json detail = json::object()) {
    detail["key"] = key;
    throw Error(ErrorCode::config_error, msg, std::move(detail));
}

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

const char* kind_name(const json& v) {
    if (v.is_object()) {
        return "object";
    }
    if (v.is_array()) {
        return "array";
    }
    if (v.is_string()) {
        return "string";
    }
    if (v.is_boolean()) {
        return "boolean";
    }
    if (v.is_number_integer()) {
        return "integer";
    }
    if (v.is_number()) {
        return "number";
    }
    return "null";
}

bool compatible(const json& given, const json& reference) {
    if (reference.is_number_float()) {
        return given.is_number();
    }
    if (reference.is_number_integer()) {
        return given.is_number_integer();
    }
    return std::string(kind_name(given)) == kind_name(reference);
}

json hypothesis_reference() { return to_json(Hypothesis{}); }

void check_keys(const json& given, const json& reference, const std::string& path) {
    if (!given.is_object()) {
        fail(path, "'" + path + "' must be an object");
    }
    for (const auto& [key, value] : given.items()) {
        const std::string full = join(path, key);
        if (!reference.contains(key)) {
            fail(full, "unknown config key '" + full + "'");
        }
        const json& ref = reference.at(key);
        if (!compatible(value, ref)) {
            fail(full, "config key '" + full + "' must be " + (ref.is_number_float() ? "a number" : kind_name(ref)),
                 {{"got", kind_name(value)}});
        }
        if (full == "ablation.hypotheses") {
            for (std::size_t i = 0; i < value.size(); ++i) {
                const std::string item = full + "[" + std::to_string(i) + "]";
                const json h_ref = hypothesis_reference();
                if (!value[i].is_object()) {
                    fail(item, "'" + item + "' must be an object");
                }
                for (const auto& [hk, hv] : value[i].items()) {
                    if (!h_ref.contains(hk)) {
                        fail(item + "." + hk, "unknown config key '" + item + "." + hk + "'");
                    }
                    if ((hk == "lhs" || hk == "rhs") ? !hv.is_object() : !hv.is_string()) {
                        fail(item + "." + hk, "config key '" + item + "." + hk + "' has the wrong type");
                    }
                }
            }
        } else if (ref.is_object() && !ref.empty()) {
            check_keys(value, ref, full);
        }
    }
}

// Runs `parse`, converting library type errors into config errors on `key`.
template <typename F> auto section(const std::string& key, F&& parse) {
    try {
        return parse();
    } catch (const json::exception& e) {
        fail(key, "invalid value in '" + key + "': " + e.what());
    } catch (const Error& e) {
        if (e.code() == ErrorCode::config_error) {
            json detail = e.detail();
            if (!detail.contains("key")) {
                detail["key"] = key;
            }
            throw Error(ErrorCode::config_error, e.what(), detail);
        }
        throw;
    }
}

json model_section(const ModelConfig& m) {
    json j = to_json(m);
    j.erase("vocab_size");    // taken from the dataset vocabulary
    j.erase("freeze_vision"); // a training setting
    return j;
}

json data_section(const DatagenOptions& d) {
    return {{"episodes", d.episodes},
            {"seed", d.seed},
            {"split_ratios", {d.ratios.train, d.ratios.val, d.ratios.test}},
            {"expert", to_json(d.expert)},
            {"shard_size", d.shard_size}};
}

json ablation_section(const AblationSettings& a) {
    json outputs = json::array();
    for (auto k : a.outputs) {
        outputs.push_back(std::string(to_string(k)));
    }
    json hyps = json::array();
    for (const auto& h : a.hypotheses) {
        hyps.push_back(to_json(h));
    }
    return {{"name", a.name},
            {"axis", std::string(to_string(a.axis))},
            {"seeds", a.seeds},
            {"resolutions", a.resolutions},
            {"outputs", outputs},
            {"resolution", a.resolution},
            {"pretrain_episodes", a.pretrain_episodes},
            {"pretrain", to_json(a.pretrain)},
            {"hypotheses", hyps}};
}

} // namespace

TrainConfig AblationSettings::default_pretrain() {
    TrainConfig t;
    t.phase = TrainPhase::pretrain_language;
    t.spec = {OutputKind::language_only, false, false};
    return t;
}

json to_json(const RunConfigFile& c) {
    return {{"schema_version", RunConfigFile::kSchemaVersion},
            {"codec", to_json(c.codec)},
            {"model", model_section(c.model)},
            {"train", to_json(c.train)},
            {"data", data_section(c.data)},
            {"eval", to_json(c.eval)},
            {"ablation", ablation_section(c.ablation)}};
}

RunConfigFile parse_run_config(const json& j) {
    if (!j.is_object()) {
        fail("", "config must be a JSON object");
    }
    if (!j.contains("schema_version")) {
        fail("schema_version", "config is missing 'schema_version'");
    }
    if (!j.at("schema_version").is_number_integer() ||
        j.at("schema_version").get<int>() != RunConfigFile::kSchemaVersion) {
        fail("schema_version", "unsupported schema_version",
             {{"supported", RunConfigFile::kSchemaVersion}, {"got", j.at("schema_version")}});
    }
    const RunConfigFile defaults;
    check_keys(j, to_json(defaults), "");

    RunConfigFile c;
    const json empty = json::object();
    auto sub = [&](const char* key) -> const json& { return j.contains(key) ? j.at(key) : empty; };

    c.codec = section("codec", [&] {
        CodecConfig codec = codec_config_from_json(sub("codec"));
        codec.validate();
        return codec;
    });
    c.model = section("model", [&] {
        ModelConfig m = model_config_from_json(sub("model"));
        ModelConfig probe = m;
        probe.vocab_size = 1;
        probe.validate();
        return m;
    });
    c.train = section("train", [&] {
        TrainConfig t = train_config_from_json(sub("train"));
        t.validate();
        return t;
    });
    c.data = section("data", [&] {
        const json& d = sub("data");
        DatagenOptions o;
        o.episodes = d.value("episodes", o.episodes);
        o.seed = d.value("seed", o.seed);
        if (d.contains("split_ratios")) {
            const auto r = d.at("split_ratios").get<std::vector<double>>();
            if (r.size() != 3) {
                fail("data.split_ratios", "split_ratios needs three values (train, val, test)");
            }
            o.ratios = {r[0], r[1], r[2]};
        }
        o.ratios.validate();
        if (d.contains("expert")) {
            o.expert = expert_config_from_json(d.at("expert"));
        }
        o.shard_size = d.value("shard_size", o.shard_size);
        if (o.episodes == 0 || o.shard_size == 0) {
            fail("data", "episodes and shard_size must be positive");
        }
        return o;
    });
    c.eval = section("eval", [&] { return eval_settings_from_json(sub("eval")); });
    c.ablation = section("ablation", [&] {
        const json& a = sub("ablation");
        AblationSettings s;
        s.name = a.value("name", s.name);
        if (a.contains("axis")) {
            s.axis = ablation_axis_from_string(a.at("axis").get<std::string>());
        }
        s.seeds = a.value("seeds", s.seeds);
        s.resolutions = a.value("resolutions", s.resolutions);
        if (a.contains("outputs")) {
            s.outputs.clear();
            for (const auto& k : a.at("outputs")) {
                s.outputs.push_back(output_kind_from_string(k.get<std::string>()));
            }
        }
        s.resolution = a.value("resolution", s.resolution);
        s.pretrain_episodes = a.value("pretrain_episodes", s.pretrain_episodes);
        if (a.contains("pretrain")) {
            json merged = to_json(AblationSettings::default_pretrain());
            merged.merge_patch(a.at("pretrain"));
            s.pretrain = train_config_from_json(merged);
        }
        s.hypotheses.clear();
        if (a.contains("hypotheses")) {
            for (const auto& h : a.at("hypotheses")) {
                s.hypotheses.push_back(hypothesis_from_json(h));
            }
        } else {
            s.hypotheses = default_hypotheses(s.axis);
        }
        return s;
    });
    section("ablation", [&] {
        ablation_plan(c).validate();
        return 0;
    });
    return c;
}

RunConfigFile load_run_config(const std::filesystem::path& path) {
    const std::string text = read_file(path);
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::config_error, "config file is not valid JSON: " + std::string(e.what()),
                    {{"path", path.string()}, {"key", ""}});
    }
    return parse_run_config(j);
}

DatagenOptions datagen_options(const RunConfigFile& c, bool pretraining) {
    DatagenOptions o = c.data;
    o.codec = c.codec;
    o.pretraining_templates = pretraining;
    if (pretraining) {
        o.episodes = c.ablation.pretrain_episodes;
    }
    return o;
}

AblationPlan ablation_plan(const RunConfigFile& c) {
    AblationPlan p;
    p.name = c.ablation.name;
    p.axis = c.ablation.axis;
    p.seeds = c.ablation.seeds;
    p.resolutions = c.ablation.resolutions;
    p.outputs = c.ablation.outputs;
    p.resolution = c.ablation.resolution;
    p.model = c.model;
    p.train = c.train;
    p.data = datagen_options(c);
    p.eval = c.eval;
    p.pretrain = c.ablation.pretrain;
    p.pretrain_episodes = c.ablation.pretrain_episodes;
    p.hypotheses = c.ablation.hypotheses;
    return p;
}

} // namespace tvla
