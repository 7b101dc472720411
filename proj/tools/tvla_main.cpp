// Copyright (C) 2026 The tvla Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "tvla/ablate.hpp"
#include "tvla/config.hpp"
#include "tvla/error.hpp"
#include "tvla/io.hpp"
#include "tvla/train.hpp"

namespace {

using namespace tvla;
using nlohmann::json;

void log_line(const std::string& msg) { std::cout << msg << std::endl; }

void write_snapshot(const std::filesystem::path& out, const RunConfigFile& config) {
    write_file_atomic(out / "config.json", to_json(config).dump(1) + "\n");
}

json run_summary(const RunRecord& rec, const std::filesystem::path& out) {
    json epochs = json::array();
    for (const auto& e : rec.epochs) {
        epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"selection_score", e.selection_score}});
    }
    return {{"out", out.string()},        {"config_hash", rec.config_hash}, {"steps", rec.steps},
            {"completed", rec.completed}, {"best_epoch", rec.best_epoch},   {"epochs", epochs},
            {"checkpoints", rec.checkpoints}};
}

void check_codec(const RunConfigFile& config, const Dataset& data) {
    if (!(config.codec == data.manifest.codec)) {
        throw Error(ErrorCode::incompatible_artifacts, "dataset codec differs from the config codec",
                    {{"config", to_json(config.codec)}, {"dataset", to_json(data.manifest.codec)}});
    }
}

struct Loaded {
    Checkpoint ckpt;
    Dataset data;
    std::optional<Transformer<float>> model;
};

Loaded load_for_inference(const std::string& checkpoint, const std::string& data_dir) {
    Loaded l{load_checkpoint(checkpoint), load_dataset(data_dir), std::nullopt};
    if (l.ckpt.meta.contains("codec") && l.ckpt.meta.at("codec") != to_json(l.data.manifest.codec)) {
        throw Error(ErrorCode::incompatible_artifacts, "checkpoint was trained with a different codec",
                    {{"checkpoint", l.ckpt.meta.at("codec")}, {"dataset", to_json(l.data.manifest.codec)}});
    }
    l.model.emplace(load_model(l.ckpt, l.data.vocab));
    return l;
}

PromptSpec spec_or_default(const std::string& label, const Checkpoint& ckpt) {
    if (!label.empty()) {
        return prompt_spec_from_label(label);
    }
    if (ckpt.meta.contains("spec")) {
        return prompt_spec_from_json(ckpt.meta.at("spec"));
    }
    return {};
}

std::string join_tokens(const std::vector<std::string>& tokens) {
    std::string out;
    for (const auto& t : tokens) {
        out += (out.empty() ? "" : " ") + t;
    }
    return out;
}

std::string format_action(const std::optional<ActionVec>& a) {
    if (!a) {
        return "none";
    }
    char buf[64];
    std::snprintf(buf, sizeof buf, "(%+.4f, %+.4f)", a->dx, a->dy);
    return buf;
}

// ---------------------------------------------------------------------------

struct DatagenArgs {
    std::string config, out, split_ratios;
    std::size_t episodes = 0;
    std::uint64_t seed = 0;
    int resolution = 0;
    bool pretraining = false;
};

int cmd_datagen(const DatagenArgs& a, const CLI::App& sub) {
    RunConfigFile config = a.config.empty() ? parse_run_config({{"schema_version", RunConfigFile::kSchemaVersion}})
                                            : load_run_config(a.config);
    DatagenOptions o = datagen_options(config, a.pretraining);
    if (sub.count("--episodes")) {
        o.episodes = a.episodes;
    }
    if (sub.count("--seed")) {
        o.seed = a.seed;
    }
    if (sub.count("--split-ratios")) {
        o.ratios = parse_split_ratios(a.split_ratios);
    }
    if (sub.count("--resolution")) {
        o.codec.resolution = a.resolution;
        o.codec.validate();
    }
    if (o.episodes == 0) {
        throw Error(ErrorCode::config_error, "--episodes must be positive", {{"key", "episodes"}});
    }
    const Dataset ds = generate_dataset(o);
    write_dataset(ds, a.out);
    std::cout << json{{"out", a.out},
                      {"episodes", ds.episodes.size()},
                      {"train", ds.manifest.count(Split::train)},
                      {"val", ds.manifest.count(Split::val)},
                      {"test", ds.manifest.count(Split::test)},
                      {"failed_attempts", ds.manifest.failed.size()},
                      {"vocab_hash", ds.manifest.vocab_hash}}
                     .dump()
              << "\n";
    return 0;
}

struct TrainArgs {
    std::string config, data, init_checkpoint, out;
    bool resume = false;
    std::size_t stop_after_steps = 0;
};

int cmd_train(const TrainArgs& a, bool pretraining) {
    RunConfigFile config = load_run_config(a.config);
    TrainConfig t = config.train;
    if (pretraining) {
        t = config.ablation.pretrain;
        t.phase = TrainPhase::pretrain_language;
        t.spec = {OutputKind::language_only, false, false};
    }
    const Dataset ds = a.data.empty() ? generate_dataset(datagen_options(config, true)) : load_dataset(a.data);
    check_codec(config, ds);
    std::filesystem::create_directories(a.out);
    write_snapshot(a.out, config);
    RunOptions ro;
    ro.resume = a.resume;
    ro.stop_after_steps = a.stop_after_steps;
    ro.eval.max_new_tokens = config.eval.max_new_tokens;
    ro.log = log_line;
    if (!a.init_checkpoint.empty()) {
        ro.init_checkpoint = a.init_checkpoint;
    }
    const RunRecord rec = run_training(config.model, t, ds, a.out, ro);
    std::cout << run_summary(rec, a.out).dump() << "\n";
    return 0;
}

struct EvalArgs {
    std::string checkpoint, data, split = "test", spec, config, out;
    std::size_t max_records = 0;
    int max_new_tokens = 48;
};

int cmd_eval(const EvalArgs& a, const CLI::App& sub) {
    EvalSettings s;
    if (!a.config.empty()) {
        s = load_run_config(a.config).eval;
    }
    if (sub.count("--split") || a.config.empty()) {
        s.split = split_from_string(a.split);
    }
    if (sub.count("--max-records")) {
        s.max_records = a.max_records;
    }
    if (sub.count("--max-new-tokens")) {
        s.max_new_tokens = a.max_new_tokens;
    }
    const Loaded l = load_for_inference(a.checkpoint, a.data);
    const PromptSpec spec = spec_or_default(a.spec, l.ckpt);
    const MetricsReport report = evaluate_split(*l.model, l.data, spec, s);
    if (!a.out.empty()) {
        write_file_atomic(a.out, to_json(report).dump(1) + "\n");
    }
    std::cout << to_markdown(report, spec.kind == OutputKind::action_only ? "Action" : "Full");
    std::cout << json{{"spec", spec.label()},
                      {"split", std::string(to_string(s.split))},
                      {"n_samples", report.n_samples},
                      {"parse_failure_rate", report.parse_failure_rate}}
                     .dump()
              << "\n";
    return 0;
}

struct AblateArgs {
    std::string plan, out_root = "runs";
};

int cmd_ablate(const AblateArgs& a) {
    const RunConfigFile config = load_run_config(a.plan);
    AblationOptions o;
    o.out_root = a.out_root;
    o.log = log_line;
    const AblationResult r = run_ablation(ablation_plan(config), o);
    write_snapshot(r.out_dir, config);
    std::cout << table_markdown(r.table) << "\n" << verdicts_markdown(r.verdicts, r.missing);
    std::cout << json{{"out", r.out_dir.string()}, {"train_steps", r.train_steps}}.dump() << "\n";
    return 0;
}

struct InferArgs {
    std::string checkpoint, data, spec;
    std::uint64_t episode = 0;
    std::size_t frame = 0;
    int max_new_tokens = 48;
};

int cmd_infer(const InferArgs& a) {
    const Loaded l = load_for_inference(a.checkpoint, a.data);
    const PromptSpec spec = spec_or_default(a.spec, l.ckpt);
    const auto it = l.data.episodes.find(a.episode);
    if (it == l.data.episodes.end()) {
        throw Error(ErrorCode::data_error, "episode not found in the dataset", {{"episode", a.episode}});
    }
    const Episode& e = it->second;
    std::size_t remaining = a.frame;
    std::size_t sub = 0;
    while (sub < e.sub_episodes.size() && remaining >= e.sub_episodes[sub].actions.size()) {
        remaining -= e.sub_episodes[sub].actions.size();
        ++sub;
    }
    if (sub == e.sub_episodes.size()) {
        throw Error(ErrorCode::data_error, "frame is past the episode's last action",
                    {{"frame", a.frame}, {"actions", e.total_actions()}});
    }
    const SampleRecord r = make_sample(e, sub, remaining, spec, sample_context(l.model->config(), l.data));
    GenerateOptions g;
    g.max_new_tokens = a.max_new_tokens;
    g.eos_id = l.data.vocab.eos_id();
    const auto ids = l.model->generate(r.image, r.prompt_ids, g);
    const auto generated = l.data.vocab.decode(ids);
    const auto reference = l.data.vocab.decode(r.target_ids);
    const ParsedOutput parsed = parse_output(generated, spec, l.data.manifest.codec);
    const ParsedOutput truth = parse_output(reference, spec, l.data.manifest.codec);
    std::cout << "prompt: " << join_tokens(l.data.vocab.decode(r.prompt_ids)) << "\n";
    std::cout << "generated: " << join_tokens(generated) << " | statement: " << parsed.statement
              << " | action: " << format_action(parsed.action) << " | parse: " << to_string(parsed.status) << "\n";
    std::cout << "ground truth: " << join_tokens(reference) << " | statement: " << truth.statement
              << " | action: " << format_action(truth.action) << " | raw action: " << format_action(r.action)
              << "\n";
    return 0;
}

int report(const Error& e) {
    std::cerr << e.to_json().dump() << std::endl;
    return exit_code(e.code());
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"tvla: transparent vision-language-action models on a synthetic tabletop"};
    app.require_subcommand(1);

    DatagenArgs dg;
    auto* datagen = app.add_subcommand("datagen", "Generate and shard a synthetic episode dataset");
    datagen->add_option("--config", dg.config, "Run config file (data and codec sections)");
    datagen->add_option("--episodes", dg.episodes, "Number of episodes");
    datagen->add_option("--seed", dg.seed, "Dataset seed");
    datagen->add_option("--split-ratios", dg.split_ratios, "train,val,test fractions, e.g. 0.8,0.1,0.1");
    datagen->add_option("--resolution", dg.resolution, "Action/state bins per dimension");
    datagen->add_flag("--pretraining", dg.pretraining, "Use the held-out language pretraining templates");
    datagen->add_option("--out", dg.out, "Output directory")->required();

    TrainArgs pt;
    auto* pretrain = app.add_subcommand("pretrain", "Language-only pretraining on the held-out templates");
    pretrain->add_option("--config", pt.config, "Run config file")->required();
    pretrain->add_option("--data", pt.data, "Pretraining dataset (generated from the config when omitted)");
    pretrain->add_option("--out", pt.out, "Run directory")->required();
    pretrain->add_flag("--resume", pt.resume, "Continue from <out>/last.ckpt");

    TrainArgs tr;
    auto* train = app.add_subcommand("train", "Joint action-language training");
    train->add_option("--config", tr.config, "Run config file")->required();
    train->add_option("--data", tr.data, "Dataset directory")->required();
    train->add_option("--init-checkpoint", tr.init_checkpoint, "Initial weights, e.g. a pretrained checkpoint");
    train->add_option("--out", tr.out, "Run directory")->required();
    train->add_flag("--resume", tr.resume, "Continue from <out>/last.ckpt");
    train->add_option("--stop-after-steps", tr.stop_after_steps, "Stop after this many optimizer steps");

    EvalArgs ev;
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
    eval->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
    eval->add_option("--data", ev.data, "Dataset directory")->required();
    eval->add_option("--split", ev.split, "train, val or test")->capture_default_str();
    eval->add_option("--spec", ev.spec, "Prompt spec, e.g. full+state (default: the checkpoint's)");
    eval->add_option("--config", ev.config, "Run config file (eval section)");
    eval->add_option("--max-records", ev.max_records, "Cap on evaluated records (0 = all)");
    eval->add_option("--max-new-tokens", ev.max_new_tokens, "Decoding budget")->capture_default_str();
    eval->add_option("--out", ev.out, "Write the JSON metrics report here");

    AblateArgs ab;
    auto* ablate = app.add_subcommand("ablate", "Run an ablation plan");
    ablate->add_option("--plan", ab.plan, "Run config file with an ablation section")->required();
    ablate->add_option("--out-root", ab.out_root, "Output root")->capture_default_str();

    InferArgs in;
    auto* infer = app.add_subcommand("infer", "Show one test-set prediction next to its ground truth");
    infer->add_option("--checkpoint", in.checkpoint, "Checkpoint file")->required();
    infer->add_option("--data", in.data, "Dataset directory")->required();
    infer->add_option("--episode", in.episode, "Episode id")->required();
    infer->add_option("--frame", in.frame, "Step index within the episode")->required();
    infer->add_option("--spec", in.spec, "Prompt spec (default: the checkpoint's)");
    infer->add_option("--max-new-tokens", in.max_new_tokens, "Decoding budget")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return report(Error(ErrorCode::config_error, e.what(), {{"key", "argv"}}));
    }

    try {
        if (*datagen) {
            return cmd_datagen(dg, *datagen);
        }
        if (*pretrain) {
            return cmd_train(pt, true);
        }
        if (*train) {
            return cmd_train(tr, false);
        }
        if (*eval) {
            return cmd_eval(ev, *eval);
        }
        if (*ablate) {
            return cmd_ablate(ab);
        }
        if (*infer) {
            return cmd_infer(in);
        }
    } catch (const Error& e) {
        return report(e);
    } catch (const std::filesystem::filesystem_error& e) {
        return report(Error(ErrorCode::io_error, e.what(), {{"path", e.path1().string()}}));
    } catch (const std::exception& e) {
        std::cerr << json{{"error", {{"code", "runtime"}, {"exit_code", 5}, {"message", e.what()}, {"detail", json::object()}}}}
                         .dump()
                  << std::endl;
        return 5;
    }
    return 0;
}
