// Copyright (C) 2026 The tvla Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tvla/codec.hpp"
#include "tvla/env.hpp"
#include "tvla/rng.hpp"

namespace tvla {

enum class Split { train, val, test };
std::string_view to_string(Split s);
Split split_from_string(std::string_view s);

struct SplitRatios {
    double train = 0.8;
    double val = 0.1;
    double test = 0.1;

    void validate() const;
};

/// Parses "0.8,0.1,0.1".
SplitRatios parse_split_ratios(std::string_view text);

struct DatagenOptions {
    std::size_t episodes = 2000;
    std::uint64_t seed = 0;
    SplitRatios ratios;
    ExpertConfig expert;
    CodecConfig codec;
    bool pretraining_templates = false; // held-out templates for language pretraining
    std::size_t shard_size = 1000;
};

nlohmann::json to_json(const DatagenOptions& o);

struct DatasetManifest {
    static constexpr int kFormatVersion = 1;

    std::uint64_t seed = 0;
    SplitRatios ratios;
    std::vector<std::string> templates;
    ExpertConfig expert;
    CodecConfig codec;
    std::string codec_hash;
    std::string vocab_hash;
    std::map<Split, std::vector<std::uint64_t>> ids;
    std::map<Split, std::vector<std::string>> shards;
    nlohmann::json failed = nlohmann::json::array(); // discarded generation attempts

    /// Throws data_error when splits overlap.
    void validate() const;
    std::size_t count(Split s) const;
};

nlohmann::json to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const nlohmann::json& j);

struct Dataset {
    DatasetManifest manifest;
    TokenVocab vocab;
    std::map<std::uint64_t, Episode> episodes;

    /// Episodes of one split in manifest order.
    std::vector<const Episode*> split(Split s) const;
};

Dataset generate_dataset(const DatagenOptions& options);
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Samples

/// Endpoints plus N-2 uniform interior draws without replacement, sorted; all
/// indices when the sequence is shorter than N.
std::vector<int> sample_frames(int length, int count, Rng& rng);

struct SampleContext {
    CodecConfig codec;
    const TokenVocab* vocab = nullptr;
    int image_resolution = 32;
    int patch_size = 4;

    int image_tokens() const {
        const int side = image_resolution / patch_size;
        return side * side;
    }
};

struct SampleRecord {
    std::uint64_t episode_id = 0;
    int sub_episode = 0;
    int frame = 0;
    Image image;
    std::vector<int> prompt_ids; // <bos> ... <sep>
    std::vector<int> target_ids; // ... <eos>
    std::vector<std::uint8_t> loss_mask; // image + prompt + target positions
    std::string instruction;
    std::string caption;
    ActionVec action;
    StateVec state;
};

nlohmann::json to_json(const SampleRecord& r);
SampleRecord sample_record_from_json(const nlohmann::json& j);

/// Throws no_action when `frame` is the terminal frame of the sub-episode.
SampleRecord make_sample(const Episode& episode, std::size_t sub_episode, std::size_t frame, const PromptSpec& spec,
                         const SampleContext& ctx);

struct BatchOptions {
    int batch_size = 8;
    int frames_per_caption = 3;
    std::uint64_t seed = 0;
    std::size_t epoch_examples = 16000; // 0 = one pass over the split
    std::size_t shuffle_window = 1024;
    int workers = 1;
};

nlohmann::json to_json(const BatchOptions& o);

/// Reference to one record before it is rendered.
struct RecordRef {
    std::size_t episode = 0; // index into the split
    std::size_t sub_episode = 0;
    std::size_t frame = 0;
    friend bool operator==(const RecordRef&, const RecordRef&) = default;
};

/// All frame picks for one visit of every episode in `order`, terminal
/// frames mapped to the preceding action.
std::vector<RecordRef> plan_pass(const std::vector<const Episode*>& episodes, const std::vector<std::size_t>& order,
                                 int frames_per_caption, Rng& rng);

/// One epoch of fixed-size batches. Records are planned up front (cheap) and
/// rendered on demand, so any batch can be materialized independently.
class EpochBatches {
  public:
    EpochBatches(std::vector<const Episode*> episodes, PromptSpec spec, SampleContext ctx, BatchOptions options,
                 std::size_t epoch);

    std::size_t size() const { return plan_.size() / static_cast<std::size_t>(options_.batch_size); }
    std::size_t record_count() const { return plan_.size(); }
    const std::vector<RecordRef>& plan() const { return plan_; }
    std::vector<SampleRecord> batch(std::size_t index) const;

  private:
    std::vector<const Episode*> episodes_;
    PromptSpec spec_;
    SampleContext ctx_;
    BatchOptions options_;
    std::vector<RecordRef> plan_;
};

/// Deterministic evaluation records: every sub-episode's sampled frames, in
/// split order, no shuffling.
std::vector<SampleRecord> evaluation_records(const std::vector<const Episode*>& episodes, const PromptSpec& spec,
                                             const SampleContext& ctx, int frames_per_caption, std::uint64_t seed,
                                             std::size_t max_records = 0);

} // namespace tvla
