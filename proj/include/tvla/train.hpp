// Copyright (C) 2026 The tvla Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tvla/codec.hpp"
#include "tvla/data.hpp"
#include "tvla/eval.hpp"
#include "tvla/model.hpp"

namespace tvla {

enum class TrainPhase { pretrain_language, joint };
std::string_view to_string(TrainPhase p);
TrainPhase train_phase_from_string(std::string_view s);

struct TrainConfig {
    double learning_rate = 3e-4;
    int warmup_steps = 500;
    std::string schedule = "constant"; // "constant" or "cosine" (decay to 0 after warmup)
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.0; // decoupled
    double grad_clip = 1.0;    // global norm; 0 disables
    int batch_size = 8;
    int accumulation_steps = 32;
    int epochs = 3;
    std::size_t epoch_examples = 16000;
    std::uint64_t seed = 0;
    TrainPhase phase = TrainPhase::joint;
    PromptSpec spec{OutputKind::full, false, false};
    bool freeze_vision = false;
    int frames_per_caption = 3;
    std::size_t shuffle_window = 1024; // records shuffled together before batching
    double action_distance_weight = 0.0;
    std::size_t max_steps = 0;        // optimizer steps; 0 = no cap
    std::size_t val_max_records = 200; // 0 = whole val split
    std::size_t checkpoint_every = 0;  // optimizer steps between resumable checkpoints; 0 = epoch ends only
    int workers = 1;

    int effective_batch() const { return batch_size * accumulation_steps; }
    /// Throws config_error.
    void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Adam with warmup, accumulation, clipping and an optionally frozen vision
/// prefix of the parameter vector.
class Trainer {
  public:
    Trainer(Transformer<float> model, TrainConfig config, std::size_t total_steps = 0);

    Transformer<float>& model() { return model_; }
    const Transformer<float>& model() const { return model_; }
    const TrainConfig& config() const { return config_; }
    std::int64_t step() const { return step_; }
    int pending_micro_batches() const { return micro_; }
    const ParamVector<float>& gradient() const { return grad_; }
    /// First parameter index the optimizer updates.
    std::size_t trainable_begin() const { return begin_; }

    double learning_rate(std::int64_t step) const;
    /// Distance-weighted action loss settings; the weight comes from the config.
    void set_action_tokens(int first_action_id, int action_bins);

    /// Adds one micro-batch's gradient scaled by 1/accumulation_steps.
    /// Throws non_finite_loss naming `batch_id`.
    LossStats accumulate(std::span<const Sequence> batch, std::uint64_t batch_id);
    /// accumulate() followed by an optimizer update once accumulation_steps
    /// micro-batches are pending. Returns true when an update happened.
    bool train_step(std::span<const Sequence> batch, std::uint64_t batch_id, LossStats* stats = nullptr);
    /// Applies pending micro-batches as a (smaller) step; no-op when none.
    bool flush();

    OptimizerState optimizer_state() const;
    void restore(const OptimizerState& state);

  private:
    Transformer<float> model_;
    TrainConfig config_;
    std::size_t total_steps_ = 0;
    std::size_t begin_ = 0;
    ParamVector<float> grad_, m_, v_;
    std::int64_t step_ = 0;
    int micro_ = 0;
    std::size_t window_targets_ = 0;
    LossOptions loss_options_;

    void apply();
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0; // mean over the epoch's micro-batches
    MetricsReport val;
    double selection_score = 0.0;
};

struct RunRecord {
    nlohmann::json config;
    std::string config_hash;
    std::vector<double> step_losses; // mean micro-batch loss per optimizer step
    std::vector<EpochRecord> epochs;
    std::map<std::string, std::string> checkpoints;
    int best_epoch = -1;
    double wall_seconds = 0.0;
    std::int64_t steps = 0;
    bool completed = false;
};

nlohmann::json to_json(const RunRecord& r);
RunRecord run_record_from_json(const nlohmann::json& j);

struct RunOptions {
    std::optional<std::filesystem::path> init_checkpoint; // weights only, e.g. from language pretraining
    bool resume = false;                                  // continue from <out>/last.ckpt when present
    std::size_t stop_after_steps = 0;                     // simulate an interruption; 0 = run to the end
    EvalOptions eval;
    std::function<void(const std::string&)> log;
};

/// Redraws the embedding rows, output columns and output biases of the action,
/// state and marker tokens as in a fresh model. Joint training applies this
/// to language-pretrained weights, which never saw those tokens.
void reinit_control_tokens(Transformer<float>& model, const TokenVocab& vocab, const CodecConfig& codec,
                           std::uint64_t seed);

/// Hash of the model and train configs plus the dataset identity.
std::string run_config_hash(const ModelConfig& model, const TrainConfig& train, const Dataset& data);

/// Trains on the train split, evaluates val each epoch, writes best.ckpt,
/// final.ckpt, last.ckpt and record.json under `out`.
RunRecord run_training(ModelConfig model, const TrainConfig& train, const Dataset& data,
                       const std::filesystem::path& out, const RunOptions& options = {});

/// Sample context for a model config over a dataset.
SampleContext sample_context(const ModelConfig& model, const Dataset& data);

/// Loads a checkpoint into a model, checking its vocabulary against `vocab`.
Transformer<float> load_model(const Checkpoint& ckpt, const TokenVocab& vocab);

struct EvalSettings {
    Split split = Split::test;
    std::size_t max_records = 0; // 0 = every sampled frame of the split
    int max_new_tokens = 48;
    int frames_per_caption = 3;
    std::uint64_t seed = 0; // frame sampling
};

nlohmann::json to_json(const EvalSettings& s);
EvalSettings eval_settings_from_json(const nlohmann::json& j);

/// Greedy evaluation of `model` on one split of `data`.
MetricsReport evaluate_split(const Transformer<float>& model, const Dataset& data, const PromptSpec& spec,
                             const EvalSettings& settings, std::vector<SampleOutput>* outputs = nullptr);

} // namespace tvla
