// Copyright (C) 2026 The tvla Authors
// SPDX-License-Identifier: Apache-2.0

#include "tvla/train.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>

#include "tvla/error.hpp"
#include "tvla/hash.hpp"
#include "tvla/io.hpp"
#include "tvla/rng.hpp"

namespace tvla {

std::string_view to_string(TrainPhase p) {
    return p == TrainPhase::pretrain_language ? "pretrain_language" : "joint";
}

TrainPhase train_phase_from_string(std::string_view s) {
    if (s == "pretrain_language") {
        return TrainPhase::pretrain_language;
    }
    if (s == "joint") {
        return TrainPhase::joint;
    }
    throw Error(ErrorCode::config_error, "unknown training phase '" + std::string(s) + "'", {{"phase", s}});
}

void TrainConfig::validate() const {
    auto fail = [](const std::string& msg, nlohmann::json detail = {}) {
        throw Error(ErrorCode::config_error, msg, std::move(detail));
    };
    if (!(learning_rate > 0.0) || warmup_steps < 0) {
        fail("learning_rate must be positive and warmup_steps non-negative");
    }
    if (schedule != "constant" && schedule != "cosine") {
        fail("schedule must be 'constant' or 'cosine'", {{"schedule", schedule}});
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(adam_eps > 0.0)) {
        fail("Adam hyperparameters out of range");
    }
    if (weight_decay < 0.0 || grad_clip < 0.0 || action_distance_weight < 0.0) {
        fail("weight_decay, grad_clip and action_distance_weight must be non-negative");
    }
    if (batch_size < 1 || accumulation_steps < 1) {
        fail("batch_size and accumulation_steps must be at least 1");
    }
    if (epochs < 1) {
        fail("epochs must be at least 1", {{"epochs", epochs}});
    }
    if (frames_per_caption < 1 || workers < 1 || shuffle_window < 1) {
        fail("frames_per_caption, shuffle_window and workers must be at least 1");
    }
    spec.validate();
    if (phase == TrainPhase::pretrain_language && spec.kind != OutputKind::language_only) {
        fail("language pretraining requires spec kind language_only", {{"spec", spec.label()}});
    }
    if (phase == TrainPhase::joint && spec.kind == OutputKind::language_only) {
        fail("joint training requires an action-producing spec", {{"spec", spec.label()}});
    }
}

nlohmann::json to_json(const TrainConfig& c) {
    return {{"learning_rate", c.learning_rate},
            {"warmup_steps", c.warmup_steps},
            {"schedule", c.schedule},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"adam_eps", c.adam_eps},
            {"weight_decay", c.weight_decay},
            {"grad_clip", c.grad_clip},
            {"batch_size", c.batch_size},
            {"accumulation_steps", c.accumulation_steps},
            {"epochs", c.epochs},
            {"epoch_examples", c.epoch_examples},
            {"seed", c.seed},
            {"phase", std::string(to_string(c.phase))},
            {"spec", to_json(c.spec)},
            {"freeze_vision", c.freeze_vision},
            {"frames_per_caption", c.frames_per_caption},
            {"shuffle_window", c.shuffle_window},
            {"action_distance_weight", c.action_distance_weight},
            {"max_steps", c.max_steps},
            {"val_max_records", c.val_max_records},
            {"checkpoint_every", c.checkpoint_every},
            {"workers", c.workers}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.schedule = j.value("schedule", c.schedule);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.accumulation_steps = j.value("accumulation_steps", c.accumulation_steps);
    c.epochs = j.value("epochs", c.epochs);
    c.epoch_examples = j.value("epoch_examples", c.epoch_examples);
    c.seed = j.value("seed", c.seed);
    if (j.contains("phase")) {
        c.phase = train_phase_from_string(j.at("phase").get<std::string>());
    }
    if (j.contains("spec")) {
        c.spec = prompt_spec_from_json(j.at("spec"));
    }
    c.freeze_vision = j.value("freeze_vision", c.freeze_vision);
    c.frames_per_caption = j.value("frames_per_caption", c.frames_per_caption);
    c.shuffle_window = j.value("shuffle_window", c.shuffle_window);
    c.action_distance_weight = j.value("action_distance_weight", c.action_distance_weight);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.val_max_records = j.value("val_max_records", c.val_max_records);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.workers = j.value("workers", c.workers);
    return c;
}

// ---------------------------------------------------------------------------
// Trainer

namespace {

Transformer<float> with_freeze(Transformer<float> model, bool freeze) {
    if (model.config().freeze_vision == freeze) {
        return model;
    }
    ModelConfig cfg = model.config();
    cfg.freeze_vision = freeze;
    return Transformer<float>(cfg, std::move(model.params()));
}

} // namespace

Trainer::Trainer(Transformer<float> model, TrainConfig config, std::size_t total_steps)
    : model_(with_freeze(std::move(model), config.freeze_vision)), config_(std::move(config)),
      total_steps_(total_steps) {
    config_.validate();
    begin_ = config_.freeze_vision ? model_.vision_end() : 0;
    grad_.assign(model_.params().size(), 0.0f);
    m_.assign(model_.params().size() - begin_, 0.0f);
    v_.assign(model_.params().size() - begin_, 0.0f);
    loss_options_.action_distance_weight = config_.action_distance_weight;
}

void Trainer::set_action_tokens(int first_action_id, int action_bins) {
    loss_options_.first_action_id = first_action_id;
    loss_options_.action_bins = action_bins;
}

double Trainer::learning_rate(std::int64_t step) const {
    const double warm = config_.warmup_steps > 0
                            ? std::min(1.0, static_cast<double>(step) / static_cast<double>(config_.warmup_steps))
                            : 1.0;
    double decay = 1.0;
    const auto warmup = static_cast<std::int64_t>(config_.warmup_steps);
    if (config_.schedule == "cosine" && static_cast<std::int64_t>(total_steps_) > warmup && step > warmup) {
        const double progress = std::min(1.0, static_cast<double>(step - warmup) /
                                                  static_cast<double>(static_cast<std::int64_t>(total_steps_) - warmup));
        decay = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
    }
    return config_.learning_rate * warm * decay;
}

LossStats Trainer::accumulate(std::span<const Sequence> batch, std::uint64_t batch_id) {
    LossOptions opts = loss_options_;
    opts.training = true;
    opts.dropout_seed = derive_seed(config_.seed, 0xd0000000ULL + batch_id);
    const float scale = 1.0f / static_cast<float>(config_.accumulation_steps);
    const LossStats stats = model_.loss(batch, grad_.data(), scale, opts);
    const bool finite_grad =
        Eigen::Map<const Eigen::ArrayXf>(grad_.data() + begin_, static_cast<Eigen::Index>(grad_.size() - begin_))
            .allFinite();
    if (!std::isfinite(stats.loss) || !finite_grad) {
        throw Error(ErrorCode::non_finite_loss, "non-finite loss or gradient",
                    {{"batch_id", batch_id}, {"step", step_}, {"loss", std::isfinite(stats.loss) ? stats.loss : -1.0}});
    }
    ++micro_;
    window_targets_ += stats.target_tokens;
    return stats;
}

bool Trainer::train_step(std::span<const Sequence> batch, std::uint64_t batch_id, LossStats* stats) {
    const LossStats s = accumulate(batch, batch_id);
    if (stats) {
        *stats = s;
    }
    if (micro_ >= config_.accumulation_steps) {
        const std::int64_t before = step_;
        apply();
        return step_ != before;
    }
    return false;
}

bool Trainer::flush() {
    if (micro_ == 0) {
        return false;
    }
    const float rescale = static_cast<float>(config_.accumulation_steps) / static_cast<float>(micro_);
    for (std::size_t i = begin_; i < grad_.size(); ++i) {
        grad_[i] *= rescale;
    }
    const std::int64_t before = step_;
    apply();
    return step_ != before;
}

void Trainer::apply() {
    const auto n = static_cast<Eigen::Index>(grad_.size() - begin_);
    Eigen::Map<Eigen::ArrayXf> g(grad_.data() + begin_, n);
    if (window_targets_ > 0) {
        ++step_;
        if (config_.grad_clip > 0.0) {
            const double norm = std::sqrt(g.cast<double>().square().sum());
            if (norm > config_.grad_clip) {
                g *= static_cast<float>(config_.grad_clip / norm);
            }
        }
        const double t = static_cast<double>(step_);
        const auto lr = static_cast<float>(learning_rate(step_));
        const auto b1 = static_cast<float>(config_.beta1);
        const auto b2 = static_cast<float>(config_.beta2);
        const auto bc1 = static_cast<float>(1.0 - std::pow(config_.beta1, t));
        const auto bc2 = static_cast<float>(1.0 - std::pow(config_.beta2, t));
        const auto eps = static_cast<float>(config_.adam_eps);
        const auto wd = static_cast<float>(config_.weight_decay);
        Eigen::Map<Eigen::ArrayXf> m(m_.data(), n);
        Eigen::Map<Eigen::ArrayXf> v(v_.data(), n);
        Eigen::Map<Eigen::ArrayXf> p(model_.params().data() + begin_, n);
        m = b1 * m + (1.0f - b1) * g;
        v = b2 * v + (1.0f - b2) * g.square();
        p -= lr * ((m / bc1) / ((v / bc2).sqrt() + eps) + wd * p);
    }
    std::fill(grad_.begin(), grad_.end(), 0.0f);
    micro_ = 0;
    window_targets_ = 0;
}

OptimizerState Trainer::optimizer_state() const {
    return {step_, m_, v_};
}

void Trainer::restore(const OptimizerState& state) {
    if (state.m.size() != m_.size() || state.v.size() != v_.size()) {
        throw Error(ErrorCode::incompatible_artifacts, "optimizer state does not match the trainable parameters",
                    {{"expected", m_.size()}, {"actual", state.m.size()}});
    }
    step_ = state.step;
    m_ = state.m;
    v_ = state.v;
    std::fill(grad_.begin(), grad_.end(), 0.0f);
    micro_ = 0;
    window_targets_ = 0;
}

// ---------------------------------------------------------------------------
// Records

nlohmann::json to_json(const RunRecord& r) {
    nlohmann::json epochs = nlohmann::json::array();
    for (const auto& e : r.epochs) {
        epochs.push_back({{"epoch", e.epoch},
                          {"train_loss", e.train_loss},
                          {"val", to_json(e.val)},
                          {"selection_score", e.selection_score}});
    }
    return {{"config", r.config},
            {"config_hash", r.config_hash},
            {"step_losses", r.step_losses},
            {"epochs", epochs},
            {"checkpoints", r.checkpoints},
            {"best_epoch", r.best_epoch},
            {"wall_seconds", r.wall_seconds},
            {"steps", r.steps},
            {"completed", r.completed}};
}

RunRecord run_record_from_json(const nlohmann::json& j) {
    RunRecord r;
    r.config = j.at("config");
    r.config_hash = j.at("config_hash").get<std::string>();
    r.step_losses = j.at("step_losses").get<std::vector<double>>();
    for (const auto& e : j.at("epochs")) {
        r.epochs.push_back({e.at("epoch").get<int>(), e.at("train_loss").get<double>(),
                            metrics_report_from_json(e.at("val")), e.at("selection_score").get<double>()});
    }
    r.checkpoints = j.at("checkpoints").get<std::map<std::string, std::string>>();
    r.best_epoch = j.at("best_epoch").get<int>();
    r.wall_seconds = j.at("wall_seconds").get<double>();
    r.steps = j.at("steps").get<std::int64_t>();
    r.completed = j.at("completed").get<bool>();
    return r;
}

void reinit_control_tokens(Transformer<float>& model, const TokenVocab& vocab, const CodecConfig& codec,
                           std::uint64_t seed) {
    std::vector<int> ids{vocab.id(codec.action_marker), vocab.id(codec.state_marker)};
    for (int i = 0; i < codec.resolution; ++i) {
        ids.push_back(vocab.id(action_token(i)));
        ids.push_back(vocab.id(state_token(i)));
    }
    const auto d = static_cast<std::size_t>(model.config().embed_dim);
    const auto v = static_cast<std::size_t>(model.config().vocab_size);
    std::size_t emb = 0, head_w = 0, head_b = 0;
    for (const auto& t : model.layout()) {
        if (t.name == "text.tok_emb") {
            emb = t.offset;
        } else if (t.name == "head.w") {
            head_w = t.offset;
        } else if (t.name == "head.b") {
            head_b = t.offset;
        }
    }
    Rng rng(seed);
    auto& p = model.params();
    for (int id : ids) {
        const auto row = static_cast<std::size_t>(id);
        for (std::size_t k = 0; k < d; ++k) {
            p[emb + row * d + k] = static_cast<float>(0.02 * rng.normal());
        }
        for (std::size_t k = 0; k < d; ++k) {
            p[head_w + k * v + row] = static_cast<float>(0.02 * rng.normal());
        }
        p[head_b + row] = 0.0f;
    }
}

// ---------------------------------------------------------------------------
// Runs

namespace {

nlohmann::json dataset_identity(const Dataset& data) {
    return {{"seed", data.manifest.seed},
            {"vocab_hash", data.manifest.vocab_hash},
            {"codec_hash", data.manifest.codec_hash},
            {"templates", data.manifest.templates},
            {"train_episodes", data.manifest.count(Split::train)},
            {"val_episodes", data.manifest.count(Split::val)},
            {"test_episodes", data.manifest.count(Split::test)}};
}

nlohmann::json architecture(const ModelConfig& c) {
    nlohmann::json j = to_json(c);
    j.erase("freeze_vision");
    j.erase("dropout");
    return j;
}

ModelConfig resolved_model(ModelConfig model, const TrainConfig& train, const Dataset& data) {
    model.vocab_size = data.vocab.size();
    model.freeze_vision = train.freeze_vision;
    model.validate();
    return model;
}

} // namespace

std::string run_config_hash(const ModelConfig& model, const TrainConfig& train, const Dataset& data) {
    return json_hash({{"model", to_json(resolved_model(model, train, data))},
                      {"train", to_json(train)},
                      {"data", dataset_identity(data)}});
}

SampleContext sample_context(const ModelConfig& model, const Dataset& data) {
    SampleContext ctx;
    ctx.codec = data.manifest.codec;
    ctx.vocab = &data.vocab;
    ctx.image_resolution = model.image_resolution;
    ctx.patch_size = model.patch_size;
    return ctx;
}

Transformer<float> load_model(const Checkpoint& ckpt, const TokenVocab& vocab) {
    if (ckpt.vocab_hash != vocab.hash()) {
        throw Error(ErrorCode::incompatible_artifacts, "checkpoint vocabulary does not match the dataset vocabulary",
                    {{"checkpoint_vocab_hash", ckpt.vocab_hash}, {"dataset_vocab_hash", vocab.hash()}});
    }
    return Transformer<float>(ckpt.config, ckpt.params);
}

nlohmann::json to_json(const EvalSettings& s) {
    return {{"split", std::string(to_string(s.split))},
            {"max_records", s.max_records},
            {"max_new_tokens", s.max_new_tokens},
            {"frames_per_caption", s.frames_per_caption},
            {"seed", s.seed}};
}

EvalSettings eval_settings_from_json(const nlohmann::json& j) {
    EvalSettings s;
    if (j.contains("split")) {
        s.split = split_from_string(j.at("split").get<std::string>());
    }
    s.max_records = j.value("max_records", s.max_records);
    s.max_new_tokens = j.value("max_new_tokens", s.max_new_tokens);
    s.frames_per_caption = j.value("frames_per_caption", s.frames_per_caption);
    s.seed = j.value("seed", s.seed);
    if (s.max_new_tokens < 0 || s.frames_per_caption < 1) {
        throw Error(ErrorCode::config_error, "eval needs max_new_tokens >= 0 and frames_per_caption >= 1",
                    {{"max_new_tokens", s.max_new_tokens}, {"frames_per_caption", s.frames_per_caption}});
    }
    return s;
}

MetricsReport evaluate_split(const Transformer<float>& model, const Dataset& data, const PromptSpec& spec,
                             const EvalSettings& settings, std::vector<SampleOutput>* outputs) {
    const auto records = evaluation_records(data.split(settings.split), spec, sample_context(model.config(), data),
                                            settings.frames_per_caption, settings.seed, settings.max_records);
    EvalOptions opts;
    opts.max_new_tokens = settings.max_new_tokens;
    MetricsReport report = evaluate(model, records, spec, data.vocab, data.manifest.codec, opts, outputs);
    report.config["split"] = std::string(to_string(settings.split));
    report.config["eval"] = to_json(settings);
    return report;
}

RunRecord run_training(ModelConfig model_cfg, const TrainConfig& train, const Dataset& data,
                       const std::filesystem::path& out, const RunOptions& options) {
    const auto t0 = std::chrono::steady_clock::now();
    train.validate();
    model_cfg = resolved_model(model_cfg, train, data);
    auto log = [&](const std::string& msg) {
        if (options.log) {
            options.log(msg);
        }
    };
    const SampleContext ctx = sample_context(model_cfg, data);
    const auto train_eps = data.split(Split::train);
    const auto val_eps = data.split(Split::val);
    if (train_eps.empty() || val_eps.empty()) {
        throw Error(ErrorCode::empty_split, "training needs nonempty train and val splits",
                    {{"train", train_eps.size()}, {"val", val_eps.size()}});
    }
    std::filesystem::create_directories(out);

    RunRecord rec;
    rec.config = {{"model", to_json(model_cfg)}, {"train", to_json(train)}, {"data", dataset_identity(data)}};
    if (options.init_checkpoint) {
        rec.config["init_checkpoint"] = options.init_checkpoint->string();
    }
    rec.config_hash = run_config_hash(model_cfg, train, data);

    BatchOptions batch_opts;
    batch_opts.batch_size = train.batch_size;
    batch_opts.frames_per_caption = train.frames_per_caption;
    batch_opts.seed = train.seed;
    batch_opts.epoch_examples = train.epoch_examples;
    batch_opts.workers = train.workers;
    batch_opts.shuffle_window = train.shuffle_window;
    const std::size_t batches_per_epoch = EpochBatches(train_eps, train.spec, ctx, batch_opts, 0).size();
    const std::size_t steps_per_epoch =
        (batches_per_epoch + static_cast<std::size_t>(train.accumulation_steps) - 1) /
        static_cast<std::size_t>(train.accumulation_steps);
    std::size_t total_steps = steps_per_epoch * static_cast<std::size_t>(train.epochs);
    if (train.max_steps > 0) {
        total_steps = std::min(total_steps, train.max_steps);
    }

    const auto last_path = out / "last.ckpt";
    std::optional<Checkpoint> resume_from;
    if (options.resume && std::filesystem::exists(last_path)) {
        resume_from = load_checkpoint(last_path);
        if (resume_from->meta.value("config_hash", std::string()) != rec.config_hash) {
            throw Error(ErrorCode::incompatible_artifacts, "resume checkpoint was written by a different run config",
                        {{"checkpoint", last_path.string()}, {"expected_hash", rec.config_hash}});
        }
    }

    std::optional<Transformer<float>> initial;
    if (resume_from) {
        initial.emplace(load_model(*resume_from, data.vocab));
    } else if (options.init_checkpoint) {
        const Checkpoint init = load_checkpoint(*options.init_checkpoint);
        Transformer<float> loaded = load_model(init, data.vocab);
        if (architecture(loaded.config()) != architecture(model_cfg)) {
            throw Error(ErrorCode::incompatible_artifacts, "init checkpoint architecture differs from the model config",
                        {{"checkpoint", architecture(loaded.config())}, {"config", architecture(model_cfg)}});
        }
        initial.emplace(model_cfg, std::move(loaded.params()));
        if (init.meta.value("phase", "") == to_string(TrainPhase::pretrain_language) &&
            train.phase == TrainPhase::joint) {
            reinit_control_tokens(*initial, data.vocab, data.manifest.codec, derive_seed(train.seed, 5));
        }
    } else {
        initial.emplace(model_cfg, derive_seed(train.seed, 3));
    }
    Trainer trainer(std::move(*initial), train, total_steps);
    trainer.set_action_tokens(data.vocab.id(action_token(0)), data.manifest.codec.resolution);

    int start_epoch = 0;
    std::size_t start_batch = 0;
    double best = -std::numeric_limits<double>::infinity();
    double epoch_sum = 0.0;
    std::size_t epoch_count = 0;
    double prior_seconds = 0.0;
    if (resume_from) {
        trainer.restore(*resume_from->optimizer);
        const auto& meta = resume_from->meta;
        start_epoch = meta.at("epoch").get<int>();
        start_batch = meta.at("next_batch").get<std::size_t>();
        epoch_sum = meta.at("epoch_loss_sum").get<double>();
        epoch_count = meta.at("epoch_loss_count").get<std::size_t>();
        if (!meta.at("best_score").is_null()) {
            best = meta.at("best_score").get<double>();
        }
        const RunRecord prev = run_record_from_json(meta.at("record"));
        rec.step_losses = prev.step_losses;
        rec.epochs = prev.epochs;
        rec.checkpoints = prev.checkpoints;
        rec.best_epoch = prev.best_epoch;
        prior_seconds = prev.wall_seconds;
        log("resuming at epoch " + std::to_string(start_epoch) + " batch " + std::to_string(start_batch) +
            " step " + std::to_string(trainer.step()));
    }

    auto elapsed = [&]() {
        return prior_seconds + std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };
    auto make_ckpt = [&](bool with_optimizer) {
        Checkpoint c;
        c.config = trainer.model().config();
        c.vocab = data.vocab.to_json();
        c.vocab_hash = data.vocab.hash();
        c.params = trainer.model().params();
        if (with_optimizer) {
            c.optimizer = trainer.optimizer_state();
        }
        c.meta = {{"config_hash", rec.config_hash}, {"codec", to_json(data.manifest.codec)},
                  {"spec", to_json(train.spec)},    {"phase", std::string(to_string(train.phase))},
                  {"step", trainer.step()}};
        return c;
    };
    auto save_last = [&](int epoch, std::size_t next_batch) {
        rec.steps = trainer.step();
        rec.wall_seconds = elapsed();
        rec.checkpoints["last"] = last_path.string();
        Checkpoint c = make_ckpt(true);
        c.meta["epoch"] = epoch;
        c.meta["next_batch"] = next_batch;
        c.meta["epoch_loss_sum"] = epoch_sum;
        c.meta["epoch_loss_count"] = epoch_count;
        c.meta["best_score"] = std::isfinite(best) ? nlohmann::json(best) : nlohmann::json(nullptr);
        c.meta["record"] = to_json(rec);
        save_checkpoint(c, last_path);
    };
    auto write_record = [&]() {
        rec.steps = trainer.step();
        rec.wall_seconds = elapsed();
        write_file_atomic(out / "record.json", to_json(rec).dump(1) + "\n");
    };

    const bool pretraining = train.phase == TrainPhase::pretrain_language;
    bool capped = false;
    double window_loss = 0.0;
    int window_n = 0;
    for (int epoch = start_epoch; epoch < train.epochs && !capped; ++epoch) {
        const EpochBatches batches(train_eps, train.spec, ctx, batch_opts, static_cast<std::size_t>(epoch));
        std::size_t i = epoch == start_epoch ? start_batch : 0;
        if (epoch != start_epoch) {
            epoch_sum = 0.0;
            epoch_count = 0;
        }
        for (; i < batches.size(); ++i) {
            const auto records = batches.batch(i);
            std::vector<Sequence> seqs;
            seqs.reserve(records.size());
            for (const auto& r : records) {
                if (pretraining) {
                    for (int id : r.target_ids) {
                        if (data.vocab.is_action_token(id)) {
                            throw Error(ErrorCode::data_error, "action token in a language pretraining target",
                                        {{"episode", r.episode_id}});
                        }
                    }
                }
                seqs.push_back(make_sequence(r));
            }
            LossStats stats;
            const std::uint64_t batch_id = (static_cast<std::uint64_t>(epoch) << 32) | i;
            const bool stepped = trainer.train_step(seqs, batch_id, &stats);
            window_loss += stats.loss;
            ++window_n;
            epoch_sum += stats.loss;
            ++epoch_count;
            if (!stepped) {
                continue;
            }
            rec.step_losses.push_back(window_loss / window_n);
            window_loss = 0.0;
            window_n = 0;
            const auto step = static_cast<std::size_t>(trainer.step());
            if (step % 50 == 0) {
                log("epoch " + std::to_string(epoch) + " step " + std::to_string(step) + "/" +
                    std::to_string(total_steps) + " loss " + std::to_string(rec.step_losses.back()));
            }
            if (options.stop_after_steps > 0 && step >= options.stop_after_steps) {
                save_last(epoch, i + 1);
                write_record();
                log("stopped after step " + std::to_string(step));
                return rec;
            }
            if (train.checkpoint_every > 0 && step % train.checkpoint_every == 0) {
                save_last(epoch, i + 1);
            }
            if (train.max_steps > 0 && step >= train.max_steps) {
                capped = true;
                break;
            }
        }
        if (trainer.flush()) {
            rec.step_losses.push_back(window_loss / window_n);
        }
        window_loss = 0.0;
        window_n = 0;

        const auto val_records = evaluation_records(val_eps, train.spec, ctx, train.frames_per_caption,
                                                    derive_seed(train.seed, 4), train.val_max_records);
        EpochRecord er;
        er.epoch = epoch;
        er.train_loss = epoch_count ? epoch_sum / static_cast<double>(epoch_count) : 0.0;
        er.val = evaluate(trainer.model(), val_records, train.spec, data.vocab, data.manifest.codec, options.eval);
        er.selection_score = er.val.selection_score();
        rec.epochs.push_back(er);
        log("epoch " + std::to_string(epoch) + " train_loss " + std::to_string(er.train_loss) + " val_score " +
            std::to_string(er.selection_score));
        if (er.selection_score > best) {
            best = er.selection_score;
            rec.best_epoch = epoch;
            const auto best_path = out / "best.ckpt";
            save_checkpoint(make_ckpt(false), best_path);
            rec.checkpoints["best"] = best_path.string();
        }
        epoch_sum = 0.0;
        epoch_count = 0;
        save_last(epoch + 1, 0);
    }

    const auto final_path = out / "final.ckpt";
    save_checkpoint(make_ckpt(false), final_path);
    rec.checkpoints["final"] = final_path.string();
    rec.completed = true;
    write_record();
    return rec;
}

} // namespace tvla
