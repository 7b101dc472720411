// Copyright (C) 2026 The tvla Authors
// SPDX-License-Identifier: Apache-2.0

#include "tvla/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "tvla/error.hpp"
#include "tvla/io.hpp"
#include "tvla/hash.hpp"

namespace tvla {

std::string_view to_string(Split s) {
    switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    }
    return "?";
}

Split split_from_string(std::string_view s) {
    if (s == "train") {
        return Split::train;
    }
    if (s == "val") {
        return Split::val;
    }
    if (s == "test") {
        return Split::test;
    }
    throw Error(ErrorCode::config_error, "unknown split '" + std::string(s) + "'", {{"key", "split"}});
}

void SplitRatios::validate() const {
    if (train < 0 || val < 0 || test < 0 || std::abs(train + val + test - 1.0) > 1e-6) {
        throw Error(ErrorCode::config_error, "split ratios must be non-negative and sum to 1",
                    {{"key", "split_ratios"}});
    }
}

SplitRatios parse_split_ratios(std::string_view text) {
    std::vector<double> parts;
    std::stringstream ss{std::string(text)};
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            parts.push_back(std::stod(item));
        } catch (const std::exception&) {
            throw Error(ErrorCode::config_error, "split ratio '" + item + "' is not a number", {{"key", "split_ratios"}});
        }
    }
    if (parts.size() != 3) {
        throw Error(ErrorCode::config_error, "expected three split ratios", {{"key", "split_ratios"}});
    }
    SplitRatios r{parts[0], parts[1], parts[2]};
    r.validate();
    return r;
}

nlohmann::json to_json(const DatagenOptions& o) {
    return {{"episodes", o.episodes},
            {"seed", o.seed},
            {"split_ratios", {o.ratios.train, o.ratios.val, o.ratios.test}},
            {"expert", to_json(o.expert)},
            {"codec", to_json(o.codec)},
            {"pretraining_templates", o.pretraining_templates},
            {"shard_size", o.shard_size}};
}

// ---------------------------------------------------------------------------

void DatasetManifest::validate() const {
    std::set<std::uint64_t> seen;
    for (const auto& [split, list] : ids) {
        for (auto id : list) {
            if (!seen.insert(id).second) {
                throw Error(ErrorCode::data_error, "episode " + std::to_string(id) + " appears in more than one split");
            }
        }
    }
}

std::size_t DatasetManifest::count(Split s) const {
    const auto it = ids.find(s);
    return it == ids.end() ? 0 : it->second.size();
}

nlohmann::json to_json(const DatasetManifest& m) {
    nlohmann::json j;
    j["version"] = DatasetManifest::kFormatVersion;
    j["seed"] = m.seed;
    j["split_ratios"] = {m.ratios.train, m.ratios.val, m.ratios.test};
    j["templates"] = m.templates;
    j["expert"] = to_json(m.expert);
    j["codec"] = to_json(m.codec);
    j["codec_hash"] = m.codec_hash;
    j["vocab_hash"] = m.vocab_hash;
    for (auto s : {Split::train, Split::val, Split::test}) {
        const std::string key(to_string(s));
        j["splits"][key]["ids"] = m.ids.count(s) ? m.ids.at(s) : std::vector<std::uint64_t>{};
        j["splits"][key]["shards"] = m.shards.count(s) ? m.shards.at(s) : std::vector<std::string>{};
        j["counts"][key] = m.count(s);
    }
    j["failed"] = m.failed;
    return j;
}

DatasetManifest manifest_from_json(const nlohmann::json& j) {
    try {
        if (j.at("version").get<int>() != DatasetManifest::kFormatVersion) {
            throw Error(ErrorCode::incompatible_artifacts, "unsupported manifest version");
        }
        DatasetManifest m;
        m.seed = j.at("seed").get<std::uint64_t>();
        const auto r = j.at("split_ratios");
        m.ratios = {r.at(0).get<double>(), r.at(1).get<double>(), r.at(2).get<double>()};
        m.templates = j.at("templates").get<std::vector<std::string>>();
        m.expert = expert_config_from_json(j.at("expert"));
        m.codec = codec_config_from_json(j.at("codec"));
        m.codec_hash = j.at("codec_hash").get<std::string>();
        m.vocab_hash = j.at("vocab_hash").get<std::string>();
        for (auto s : {Split::train, Split::val, Split::test}) {
            const auto& sj = j.at("splits").at(std::string(to_string(s)));
            m.ids[s] = sj.at("ids").get<std::vector<std::uint64_t>>();
            m.shards[s] = sj.at("shards").get<std::vector<std::string>>();
        }
        m.failed = j.value("failed", nlohmann::json::array());
        m.validate();
        return m;
    } catch (const nlohmann::json::exception& ex) {
        throw Error(ErrorCode::data_error, std::string("malformed manifest: ") + ex.what());
    }
}

std::vector<const Episode*> Dataset::split(Split s) const {
    std::vector<const Episode*> out;
    const auto it = manifest.ids.find(s);
    if (it == manifest.ids.end()) {
        return out;
    }
    for (auto id : it->second) {
        out.push_back(&episodes.at(id));
    }
    return out;
}

Dataset generate_dataset(const DatagenOptions& options) {
    options.ratios.validate();
    options.expert.validate();
    options.codec.validate();
    if (options.episodes == 0) {
        throw Error(ErrorCode::config_error, "at least one episode is required", {{"key", "episodes"}});
    }
    std::vector<TaskTemplate> templates;
    if (options.pretraining_templates) {
        templates.assign(kPretrainTemplates.begin(), kPretrainTemplates.end());
    } else {
        templates.assign(kJointTemplates.begin(), kJointTemplates.end());
    }

    Dataset ds;
    ds.vocab = TokenVocab::build(options.codec);
    auto& m = ds.manifest;
    m.seed = options.seed;
    m.ratios = options.ratios;
    for (auto t : templates) {
        m.templates.emplace_back(to_string(t));
    }
    m.expert = options.expert;
    m.codec = options.codec;
    m.codec_hash = codec_hash(options.codec);
    m.vocab_hash = ds.vocab.hash();

    Rng task_rng(derive_seed(options.seed, 1));
    const std::size_t max_attempts = 2 * options.episodes + 100;
    for (std::size_t attempt = 0; ds.episodes.size() < options.episodes; ++attempt) {
        if (attempt >= max_attempts) {
            throw Error(ErrorCode::generation_failed, "too many failed episode generations",
                        {{"failed", m.failed.size()}});
        }
        const auto task = templates[task_rng.below(templates.size())];
        const std::uint64_t seed = derive_seed(options.seed, 1000 + attempt);
        try {
            Episode e = generate_episode(seed, task, options.expert);
            e.id = ds.episodes.size();
            ds.episodes.emplace(e.id, std::move(e));
        } catch (const Error& err) {
            if (err.code() != ErrorCode::generation_failed) {
                throw;
            }
            m.failed.push_back({{"seed", seed}, {"task", std::string(to_string(task))}, {"reason", err.what()}});
        }
    }

    std::vector<std::uint64_t> ids;
    for (const auto& [id, e] : ds.episodes) {
        ids.push_back(id);
    }
    Rng split_rng(derive_seed(options.seed, 2));
    split_rng.shuffle(ids);
    const auto n = ids.size();
    const auto n_train = static_cast<std::size_t>(std::llround(options.ratios.train * static_cast<double>(n)));
    const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(options.ratios.val * static_cast<double>(n))));
    m.ids[Split::train].assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
    m.ids[Split::val].assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train),
                             ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    m.ids[Split::test].assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), ids.end());
    const std::size_t shard_size = std::max<std::size_t>(1, options.shard_size);
    for (auto s : {Split::train, Split::val, Split::test}) {
        const auto count = m.ids[s].size();
        for (std::size_t k = 0; k * shard_size < count; ++k) {
            char name[64];
            std::snprintf(name, sizeof name, "%s-%05zu.jsonl", std::string(to_string(s)).c_str(), k);
            m.shards[s].emplace_back(name);
        }
    }
    m.validate();
    return ds;
}

void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    for (auto s : {Split::train, Split::val, Split::test}) {
        const auto& ids = ds.manifest.ids.at(s);
        const auto& shards = ds.manifest.shards.at(s);
        const std::size_t per_shard = shards.empty() ? 1 : (ids.size() + shards.size() - 1) / shards.size();
        for (std::size_t k = 0; k < shards.size(); ++k) {
            std::string text;
            for (std::size_t i = k * per_shard; i < std::min(ids.size(), (k + 1) * per_shard); ++i) {
                text += to_json(ds.episodes.at(ids[i])).dump();
                text += '\n';
            }
            write_file_atomic(dir / shards[k], text);
        }
    }
    write_file_atomic(dir / "vocab.json", ds.vocab.to_json().dump(1) + "\n");
    write_file_atomic(dir / "manifest.json", to_json(ds.manifest).dump(1) + "\n");
}

Dataset load_dataset(const std::filesystem::path& dir) {
    Dataset ds;
    ds.manifest = manifest_from_json(read_json_file(dir / "manifest.json"));
    ds.vocab = TokenVocab::from_json(read_json_file(dir / "vocab.json"));
    if (ds.vocab.hash() != ds.manifest.vocab_hash) {
        throw Error(ErrorCode::incompatible_artifacts, "vocabulary hash does not match the manifest",
                    {{"expected", ds.manifest.vocab_hash}, {"found", ds.vocab.hash()}});
    }
    if (codec_hash(ds.manifest.codec) != ds.manifest.codec_hash) {
        throw Error(ErrorCode::incompatible_artifacts, "codec hash does not match the manifest");
    }
    for (auto s : {Split::train, Split::val, Split::test}) {
        std::set<std::uint64_t> expected(ds.manifest.ids[s].begin(), ds.manifest.ids[s].end());
        for (const auto& shard : ds.manifest.shards[s]) {
            std::ifstream in(dir / shard);
            if (!in) {
                throw Error(ErrorCode::io_error, "missing shard " + (dir / shard).string());
            }
            std::string line;
            while (std::getline(in, line)) {
                if (line.empty()) {
                    continue;
                }
                Episode e;
                try {
                    e = episode_from_json(nlohmann::json::parse(line));
                } catch (const nlohmann::json::exception& ex) {
                    throw Error(ErrorCode::data_error, "malformed line in " + shard + ": " + ex.what());
                }
                if (!expected.count(e.id)) {
                    throw Error(ErrorCode::data_error, "episode " + std::to_string(e.id) + " in " + shard +
                                                           " is not listed for that split");
                }
                ds.episodes.emplace(e.id, std::move(e));
            }
        }
        for (auto id : expected) {
            if (!ds.episodes.count(id)) {
                throw Error(ErrorCode::data_error, "episode " + std::to_string(id) + " missing from shards");
            }
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------

std::vector<int> sample_frames(int length, int count, Rng& rng) {
    std::vector<int> out;
    if (length <= 0 || count <= 0) {
        return out;
    }
    if (length <= count) {
        for (int i = 0; i < length; ++i) {
            out.push_back(i);
        }
        return out;
    }
    out.push_back(0);
    if (count >= 2) {
        out.push_back(length - 1);
    }
    // Partial Fisher-Yates over the interior indices.
    std::vector<int> interior;
    for (int i = 1; i < length - 1; ++i) {
        interior.push_back(i);
    }
    for (int k = 0; k < count - 2; ++k) {
        const std::size_t j = static_cast<std::size_t>(k) + rng.below(interior.size() - static_cast<std::size_t>(k));
        std::swap(interior[static_cast<std::size_t>(k)], interior[j]);
        out.push_back(interior[static_cast<std::size_t>(k)]);
    }
    std::sort(out.begin(), out.end());
    return out;
}

nlohmann::json to_json(const SampleRecord& r) {
    return {{"episode_id", r.episode_id},
            {"sub_episode", r.sub_episode},
            {"frame", r.frame},
            {"image", {{"height", r.image.height}, {"width", r.image.width}, {"pixels", r.image.pixels}}},
            {"prompt_ids", r.prompt_ids},
            {"target_ids", r.target_ids},
            {"loss_mask", r.loss_mask},
            {"instruction", r.instruction},
            {"caption", r.caption},
            {"action", {r.action.dx, r.action.dy}},
            {"state", {r.state.x, r.state.y}}};
}

SampleRecord sample_record_from_json(const nlohmann::json& j) {
    SampleRecord r;
    r.episode_id = j.at("episode_id").get<std::uint64_t>();
    r.sub_episode = j.at("sub_episode").get<int>();
    r.frame = j.at("frame").get<int>();
    r.image.height = j.at("image").at("height").get<int>();
    r.image.width = j.at("image").at("width").get<int>();
    r.image.pixels = j.at("image").at("pixels").get<std::vector<float>>();
    r.prompt_ids = j.at("prompt_ids").get<std::vector<int>>();
    r.target_ids = j.at("target_ids").get<std::vector<int>>();
    r.loss_mask = j.at("loss_mask").get<std::vector<std::uint8_t>>();
    r.instruction = j.at("instruction").get<std::string>();
    r.caption = j.at("caption").get<std::string>();
    r.action = {j.at("action").at(0).get<double>(), j.at("action").at(1).get<double>()};
    r.state = {j.at("state").at(0).get<double>(), j.at("state").at(1).get<double>()};
    return r;
}

SampleRecord make_sample(const Episode& episode, std::size_t sub_episode, std::size_t frame, const PromptSpec& spec,
                         const SampleContext& ctx) {
    if (ctx.vocab == nullptr) {
        throw Error(ErrorCode::config_error, "sample context has no vocabulary");
    }
    const SubEpisode& sub = episode.sub_episodes.at(sub_episode);
    if (frame + 1 >= sub.frames.size()) {
        throw Error(ErrorCode::no_action, "frame " + std::to_string(frame) + " is the terminal frame of its sub-episode");
    }
    const Frame& f = sub.frames[frame];
    SampleRecord r;
    r.episode_id = episode.id;
    r.sub_episode = static_cast<int>(sub_episode);
    r.frame = static_cast<int>(frame);
    r.image = render(episode.board_at(f), ctx.image_resolution);
    r.instruction = episode.instruction;
    r.caption = sub.caption;
    r.action = sub.actions[frame];
    r.state = f.pointer;

    const std::string prompt =
        build_prompt(episode.instruction, spec, spec.include_state ? std::optional<StateVec>(f.pointer) : std::nullopt,
                     ctx.codec);
    r.prompt_ids.push_back(ctx.vocab->bos_id());
    for (int id : ctx.vocab->encode(split_text(prompt))) {
        r.prompt_ids.push_back(id);
    }
    r.prompt_ids.push_back(ctx.vocab->sep_id());
    r.target_ids = ctx.vocab->encode(build_target(sub.caption, r.action, spec, ctx.codec));

    const std::size_t prefix = static_cast<std::size_t>(ctx.image_tokens()) + r.prompt_ids.size();
    r.loss_mask.assign(prefix + r.target_ids.size(), 0);
    std::fill(r.loss_mask.begin() + static_cast<std::ptrdiff_t>(prefix), r.loss_mask.end(), 1);
    return r;
}

nlohmann::json to_json(const BatchOptions& o) {
    return {{"batch_size", o.batch_size},         {"frames_per_caption", o.frames_per_caption},
            {"seed", o.seed},                     {"epoch_examples", o.epoch_examples},
            {"shuffle_window", o.shuffle_window}, {"workers", o.workers}};
}

std::vector<RecordRef> plan_pass(const std::vector<const Episode*>& episodes, const std::vector<std::size_t>& order,
                                 int frames_per_caption, Rng& rng) {
    std::vector<RecordRef> refs;
    for (std::size_t e : order) {
        const Episode& ep = *episodes.at(e);
        for (std::size_t s = 0; s < ep.sub_episodes.size(); ++s) {
            const int length = static_cast<int>(ep.sub_episodes[s].frames.size());
            for (int f : sample_frames(length, frames_per_caption, rng)) {
                // The terminal frame has no action; use the preceding one.
                const int frame = std::min(f, length - 2);
                refs.push_back({e, s, static_cast<std::size_t>(frame)});
            }
        }
    }
    return refs;
}

EpochBatches::EpochBatches(std::vector<const Episode*> episodes, PromptSpec spec, SampleContext ctx,
                           BatchOptions options, std::size_t epoch)
    : episodes_(std::move(episodes)), spec_(spec), ctx_(ctx), options_(options) {
    if (episodes_.empty()) {
        throw Error(ErrorCode::empty_split, "cannot build batches from an empty split");
    }
    if (options_.batch_size < 1 || options_.frames_per_caption < 1) {
        throw Error(ErrorCode::config_error, "batch_size and frames_per_caption must be positive");
    }
    spec_.validate();
    Rng rng(derive_seed(options_.seed, 0x5eed0000ULL + epoch));
    const std::size_t window = std::max<std::size_t>(1, options_.shuffle_window);
    std::vector<RecordRef> buffer;
    auto want_more = [&] { return options_.epoch_examples == 0 || plan_.size() < options_.epoch_examples; };
    auto emit_from_buffer = [&] {
        const std::size_t k = rng.below(buffer.size());
        plan_.push_back(buffer[k]);
        buffer[k] = buffer.back();
        buffer.pop_back();
    };
    for (std::size_t pass = 0; want_more(); ++pass) {
        std::vector<std::size_t> order(episodes_.size());
        for (std::size_t i = 0; i < order.size(); ++i) {
            order[i] = i;
        }
        rng.shuffle(order);
        for (const auto& ref : plan_pass(episodes_, order, options_.frames_per_caption, rng)) {
            buffer.push_back(ref);
            if (buffer.size() >= window && want_more()) {
                emit_from_buffer();
            }
        }
        if (options_.epoch_examples == 0) {
            break;
        }
        if (pass > 10000) {
            throw Error(ErrorCode::data_error, "split yields no records");
        }
    }
    while (!buffer.empty() && want_more()) {
        emit_from_buffer();
    }
    if (options_.epoch_examples != 0 && plan_.size() > options_.epoch_examples) {
        plan_.resize(options_.epoch_examples);
    }
    plan_.resize(plan_.size() / static_cast<std::size_t>(options_.batch_size) *
                 static_cast<std::size_t>(options_.batch_size));
}

std::vector<SampleRecord> EpochBatches::batch(std::size_t index) const {
    const std::size_t bs = static_cast<std::size_t>(options_.batch_size);
    std::vector<SampleRecord> out(bs);
    auto fill = [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            const RecordRef& ref = plan_.at(index * bs + i);
            out[i] = make_sample(*episodes_[ref.episode], ref.sub_episode, ref.frame, spec_, ctx_);
        }
    };
    const std::size_t workers = std::clamp<std::size_t>(static_cast<std::size_t>(options_.workers), 1, bs);
    if (workers == 1) {
        fill(0, bs);
        return out;
    }
    std::vector<std::thread> threads;
    const std::size_t chunk = (bs + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        threads.emplace_back(fill, std::min(bs, w * chunk), std::min(bs, (w + 1) * chunk));
    }
    for (auto& t : threads) {
        t.join();
    }
    return out;
}

std::vector<SampleRecord> evaluation_records(const std::vector<const Episode*>& episodes, const PromptSpec& spec,
                                             const SampleContext& ctx, int frames_per_caption, std::uint64_t seed,
                                             std::size_t max_records) {
    if (episodes.empty()) {
        throw Error(ErrorCode::empty_split, "cannot evaluate on an empty split");
    }
    std::vector<std::size_t> order(episodes.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    Rng rng(derive_seed(seed, 0xe7a1ULL));
    auto refs = plan_pass(episodes, order, frames_per_caption, rng);
    if (max_records != 0 && refs.size() > max_records) {
        // A fixed stride would alias with the frames-per-sub-episode pattern
        // and keep picking the same phase, so draw a seeded subset instead.
        std::vector<std::size_t> idx(refs.size());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            idx[i] = i;
        }
        rng.shuffle(idx);
        idx.resize(max_records);
        std::sort(idx.begin(), idx.end());
        std::vector<RecordRef> picked;
        for (std::size_t i : idx) {
            picked.push_back(refs[i]);
        }
        refs = std::move(picked);
    }
    std::vector<SampleRecord> out;
    out.reserve(refs.size());
    for (const auto& ref : refs) {
        out.push_back(make_sample(*episodes[ref.episode], ref.sub_episode, ref.frame, spec, ctx));
    }
    return out;
}

} // namespace tvla
