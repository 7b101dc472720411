// Copyright (C) 2026 The tvla Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite: one PASS/FAIL line per criterion. Tolerances are pinned
// below; nothing here reads them from configuration.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tvla/ablate.hpp"
#include "tvla/config.hpp"
#include "tvla/io.hpp"
#include "tvla/train.hpp"

#include "oracles.hpp"
#include "prompt_golden.hpp"

namespace fs = std::filesystem;
using namespace tvla;

namespace {

constexpr double kRoundTripSlack = 1e-12;     // relative, for floating-point bin centers
constexpr double kRoundTripSeconds = 1.0;
constexpr std::size_t kFloorSamples = 100000;
constexpr double kFloorBand = 0.20;
constexpr double kMetricTolerance = 1e-9;
constexpr double kGradTolerance = 1e-4;
constexpr double kGradSeconds = 120.0;
constexpr std::size_t kOverfitParamBudget = 2000000;
constexpr double kOverfitAccuracy = 0.99;
constexpr int kOverfitMaxSteps = 2000;
constexpr double kOverfitSeconds = 600.0;
constexpr double kLossTolerance = 1e-6;
constexpr double kE2eCosSim = 0.5;
constexpr double kE2eFloorMultiple = 4.0;
constexpr double kE2eParseFailure = 0.05;

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Context {
    fs::path work;
    fs::path source;
    bool verbose = false;
};

struct Criterion {
    std::string name;
    std::function<Outcome(const Context&)> run;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

double uniform_floor(const CodecConfig& c) {
    const double w = c.action.width() / c.resolution;
    return w * w / 12.0;
}

fs::path fresh(const fs::path& dir) {
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::function<void(const std::string&)> logger(const Context& ctx) {
    if (!ctx.verbose) {
        return {};
    }
    return [](const std::string& s) { std::cerr << "    " << s << "\n"; };
}

// ---------------------------------------------------------------------------

Outcome codec_round_trip(const Context&) {
    const auto t0 = std::chrono::steady_clock::now();
    std::size_t violations = 0;
    std::size_t checked = 0;
    double worst_ratio = 0.0;
    for (int n : {10, 25, 50}) {
        CodecConfig c;
        c.resolution = n;
        const Range r = c.action;
        const double tol = (r.hi - r.lo) / (2.0 * n);
        for (int i = 0; i < 100; ++i) {
            for (int j = 0; j < 100; ++j) {
                const ActionVec a{r.lo + (r.hi - r.lo) * i / 99.0, r.lo + (r.hi - r.lo) * j / 99.0};
                const ActionVec back = detokenize_action(tokenize_action(a, c), c);
                const double err = std::max(std::abs(back.dx - a.dx), std::abs(back.dy - a.dy));
                worst_ratio = std::max(worst_ratio, err / tol);
                violations += err > tol * (1.0 + kRoundTripSlack) ? 1 : 0;
                ++checked;
            }
        }
    }
    const double secs = seconds_since(t0);
    return {violations == 0 && secs < kRoundTripSeconds,
            std::to_string(violations) + " violations in " + std::to_string(checked) +
                " grid actions at N=10,25,50; worst error " + fmt("%.6f", worst_ratio) + " x width/(2N); " +
                fmt("%.3f", secs) + " s (limit " + fmt("%.0f", kRoundTripSeconds) + " s)"};
}

Outcome quantization_floor(const Context&) {
    Rng rng(4);
    std::vector<ActionVec> truth;
    for (std::size_t i = 0; i < kFloorSamples; ++i) {
        truth.push_back({rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05)});
    }
    bool pass = true;
    double prev = INFINITY;
    std::string detail;
    for (int n : {10, 25, 50}) {
        CodecConfig c;
        c.resolution = n;
        std::vector<std::optional<ActionVec>> quantized;
        for (const auto& a : truth) {
            quantized.push_back(detokenize_action(tokenize_action(a, c), c));
        }
        const double mse = trajectory_metrics(quantized, truth).mse.mean;
        const double ratio = mse / uniform_floor(c);
        pass = pass && std::abs(ratio - 1.0) <= kFloorBand && mse < prev;
        prev = mse;
        detail += (detail.empty() ? "" : ", ") + ("N=" + std::to_string(n) + " mse " + fmt("%.3e", mse) + " (" +
                                                  fmt("%.3f", ratio) + "x floor)");
    }
    return {pass, detail + "; band ±" + fmt("%.0f", kFloorBand * 100) + "%, " + std::to_string(kFloorSamples) +
                      " uniform samples, strictly decreasing"};
}

Outcome metric_oracles(const Context&) {
    using namespace tvla::testing;
    Rng rng(31);
    std::vector<Words> cands, refs;
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
        const Words ref = caption_words(rng);
        const Words cand = rng.uniform() < 0.3 ? caption_words(rng) : perturb(ref, rng);
        worst = std::max(worst, std::abs(rouge1(cand, ref) - brute_rouge1(cand, ref)));
        worst = std::max(worst, std::abs(sentence_bleu(cand, ref) - brute_bleu({cand}, {ref})));
        cands.push_back(cand);
        refs.push_back(ref);
    }
    worst = std::max(worst, std::abs(bleu(cands, refs).score - brute_bleu(cands, refs)));
    const double example = rouge1(metric_tokens("push the red cube"), metric_tokens("push the blue cube"));
    return {worst <= kMetricTolerance && example == 0.75,
            "max |implementation - brute force| " + fmt("%.2e", worst) + " over 100 caption pairs (limit " +
                fmt("%.0e", kMetricTolerance) + "); ROUGE(push the red cube, push the blue cube) = " +
                fmt("%.17g", example)};
}

Outcome gradient_check(const Context&) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto g = tvla::testing::finite_difference_check(false, 0.0, 0.0);
    const double secs = seconds_since(t0);
    return {g.worst_relative_error <= kGradTolerance && secs < kGradSeconds,
            "worst per-tensor relative error " + fmt("%.2e", g.worst_relative_error) + " (limit " +
                fmt("%.0e", kGradTolerance) + ") over " + std::to_string(g.parameters) +
                " parameters, embed 16, 1 layer; " + fmt("%.1f", secs) + " s"};
}

Outcome overfit(const Context& ctx) {
    const auto t0 = std::chrono::steady_clock::now();
    DatagenOptions o;
    o.episodes = 20;
    o.seed = 3;
    const Dataset ds = generate_dataset(o);
    ModelConfig mc; // default architecture
    mc.vocab_size = ds.vocab.size();
    const std::size_t params = count_parameters(mc);

    BatchOptions b;
    b.batch_size = 32;
    b.epoch_examples = 32;
    b.seed = 1;
    const PromptSpec spec{OutputKind::full, false, false};
    const auto records = EpochBatches(ds.split(Split::train), spec, sample_context(mc, ds), b, 0).batch(0);
    std::vector<Sequence> seqs;
    for (const auto& r : records) {
        seqs.push_back(make_sequence(r));
    }

    TrainConfig t;
    t.learning_rate = 1e-3;
    t.warmup_steps = 20;
    t.batch_size = 8;
    t.accumulation_steps = 4;
    Trainer tr(Transformer<float>(mc, 0), t);
    auto accuracy = [&] {
        const LossStats s = tr.model().loss(seqs);
        return static_cast<double>(s.correct) / static_cast<double>(s.target_tokens);
    };
    int steps = 0;
    double acc = accuracy();
    while (steps < kOverfitMaxSteps && acc < kOverfitAccuracy) {
        for (std::size_t k = 0; k < seqs.size(); k += 8) {
            tr.train_step(std::span<const Sequence>(seqs).subspan(k, 8), static_cast<std::uint64_t>(steps));
        }
        ++steps;
        if (steps % 10 == 0 || steps == kOverfitMaxSteps) {
            acc = accuracy();
            if (ctx.verbose) {
                std::cerr << "    overfit step " << steps << " accuracy " << acc << "\n";
            }
        }
    }
    const double secs = seconds_since(t0);
    return {params <= kOverfitParamBudget && acc >= kOverfitAccuracy && secs < kOverfitSeconds,
            std::to_string(params) + " parameters; teacher-forced accuracy " + fmt("%.4f", acc) + " on " +
                std::to_string(seqs.size()) + " samples after " + std::to_string(steps) + " steps (limits " +
                fmt("%.2f", kOverfitAccuracy) + ", " + std::to_string(kOverfitMaxSteps) + " steps); " +
                fmt("%.0f", secs) + " s"};
}

Outcome determinism(const Context& ctx) {
    const fs::path dir = fresh(ctx.work / "determinism");
    DatagenOptions o;
    o.episodes = 60;
    o.seed = 17;
    o.codec.resolution = 10;
    o.shard_size = 20;
    write_dataset(generate_dataset(o), dir / "data_a");
    write_dataset(generate_dataset(o), dir / "data_b");
    std::size_t files = 0, differing = 0;
    for (const auto& e : fs::directory_iterator(dir / "data_a")) {
        ++files;
        differing += read_file(e.path()) != read_file(dir / "data_b" / e.path().filename()) ? 1 : 0;
    }
    const Dataset ds = load_dataset(dir / "data_a");

    ModelConfig mc;
    mc.embed_dim = 32;
    mc.layers = 2;
    mc.heads = 2;
    mc.ff_dim = 64;
    mc.max_seq_len = 160;
    TrainConfig t;
    t.learning_rate = 2e-3;
    t.warmup_steps = 4;
    t.batch_size = 8;
    t.accumulation_steps = 2;
    t.epochs = 2;
    t.epoch_examples = 64;
    t.val_max_records = 10;
    t.workers = 1;
    RunOptions ro;
    ro.eval.max_new_tokens = 32;
    const RunRecord a = run_training(mc, t, ds, dir / "run_a", ro);
    const RunRecord b = run_training(mc, t, ds, dir / "run_b", ro);
    double loss_diff = a.step_losses.size() == b.step_losses.size() ? 0.0 : INFINITY;
    for (std::size_t i = 0; i < std::min(a.step_losses.size(), b.step_losses.size()); ++i) {
        loss_diff = std::max(loss_diff, std::abs(a.step_losses[i] - b.step_losses[i]));
    }

    EvalSettings es;
    es.max_records = 40;
    es.max_new_tokens = 32;
    const auto report = [&](const fs::path& ckpt) {
        return to_json(evaluate_split(load_model(load_checkpoint(ckpt), ds.vocab), ds, t.spec, es)).dump();
    };
    const bool reports_equal = report(dir / "run_a" / "final.ckpt") == report(dir / "run_b" / "final.ckpt");
    const bool pass = differing == 0 && files > 0 && loss_diff <= kLossTolerance && reports_equal;
    return {pass, std::to_string(differing) + "/" + std::to_string(files) + " dataset files differ; " +
                      std::to_string(a.step_losses.size()) + " step losses, max diff " + fmt("%.1e", loss_diff) +
                      " (limit " + fmt("%.0e", kLossTolerance) + "); evaluation reports " +
                      (reports_equal ? "byte-identical" : "DIFFER")};
}

Outcome end_to_end(const Context& ctx) {
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path dir = fresh(ctx.work / "e2e");
    const RunConfigFile config = load_run_config(ctx.source / "configs" / "e2e.json");
    const Dataset ds = generate_dataset(datagen_options(config));
    RunOptions ro;
    ro.eval.max_new_tokens = config.eval.max_new_tokens;
    ro.log = logger(ctx);
    const RunRecord rec = run_training(config.model, config.train, ds, dir, ro);
    const MetricsReport r =
        evaluate_split(load_model(load_checkpoint(dir / "best.ckpt"), ds.vocab), ds, config.train.spec, config.eval);
    write_file_atomic(dir / "report.json", to_json(r).dump(1) + "\n");
    const double secs = seconds_since(t0);

    const double floor = uniform_floor(config.codec);
    const double cos = r.cossim ? r.cossim->mean : -INFINITY;
    const double mse = r.mse ? r.mse->mean : INFINITY;
    const bool pass = config.codec.resolution == 10 && ds.episodes.size() == 2000 && config.train.epochs == 3 &&
                      config.train.epoch_examples == 16000 && cos >= kE2eCosSim &&
                      mse <= kE2eFloorMultiple * floor && r.parse_failure_rate <= kE2eParseFailure;
    return {pass, "CosSim " + fmt("%.4f", cos) + " (min " + fmt("%.2f", kE2eCosSim) + "), MSE " + fmt("%.3e", mse) +
                      " (max " + fmt("%.3e", kE2eFloorMultiple * floor) + " = 4x floor), parse failures " +
                      fmt("%.2f", 100 * r.parse_failure_rate) + "% (max 5%), ROUGE " +
                      (r.rouge1 ? fmt("%.4f", r.rouge1->mean) : std::string("-")) + ", " +
                      std::to_string(r.n_samples) + " test samples, " + std::to_string(rec.steps) +
                      " optimizer steps; " + fmt("%.0f", secs) + " s"};
}

Outcome ablation_tables(const Context& ctx) {
    const fs::path dir = fresh(ctx.work / "ablation");
    RunConfigFile base = load_run_config(ctx.source / "configs" / "ablation_tiny.json");
    std::size_t tables = 0, verdicts = 0, missing = 0, layout_errors = 0, failed_cells = 0;
    std::string outcomes;
    for (auto axis : {AblationAxis::actions_first, AblationAxis::include_state, AblationAxis::resolution,
                      AblationAxis::checkpoint, AblationAxis::training}) {
        AblationPlan plan = ablation_plan(base);
        plan.axis = axis;
        plan.name = std::string(to_string(axis));
        plan.hypotheses = default_hypotheses(axis);
        AblationOptions o;
        o.out_root = dir / "runs";
        o.cache_root = dir / "cache";
        o.log = logger(ctx);
        const AblationResult res = run_ablation(plan, o);

        const auto columns = axis_columns(axis);
        std::string header = "|";
        for (const auto& c : columns) {
            header += " " + c + " |";
        }
        header += " ROUGE↑ | BLEU↑ | CosSim↑ | MSE↓ |";
        const std::string md = read_file(res.out_dir / "table.md");
        layout_errors += md.find(header + "\n") == std::string::npos ? 1 : 0;
        layout_errors += res.table.rows.size() == plan_cells(plan).size() ? 0 : 1;
        for (const auto& row : res.table.rows) {
            failed_cells += row.succeeded ? 0 : 1;
            const bool action_only = row.cell.spec.kind == OutputKind::action_only;
            layout_errors += action_only == (row.metrics.count("rouge1") == 0) ? 0 : 1;
            layout_errors += action_only == (row.metrics.count("bleu") == 0) ? 0 : 1;
            if (action_only && row.succeeded) {
                std::string cells;
                for (const auto& [col, value] : row.cell.key) {
                    cells += "| " + value + " ";
                }
                layout_errors += md.find(cells + "| - | - |") == std::string::npos ? 1 : 0;
            }
        }
        layout_errors += fs::exists(res.out_dir / "verdicts.md") ? 0 : 1;
        layout_errors += res.verdicts.size() + res.missing.size() == plan.hypotheses.size() ? 0 : 1;
        for (const auto& v : res.verdicts) {
            outcomes += (outcomes.empty() ? "" : ", ") + v.hypothesis.name + "=" + std::string(to_string(v.outcome));
        }
        verdicts += res.verdicts.size();
        missing += res.missing.size();
        ++tables;
    }
    return {tables == 5 && layout_errors == 0 && failed_cells == 0,
            std::to_string(tables) + " tables under " + (dir / "runs").string() + ", " +
                std::to_string(layout_errors) + " layout errors, " + std::to_string(failed_cells) +
                " failed cells; verdicts (reported, not asserted): " + outcomes +
                (missing ? "; " + std::to_string(missing) + " missing" : std::string())};
}

Outcome prompt_goldens(const Context& ctx) {
    std::size_t matched = 0, total = 0;
    std::string mismatched;
    for (auto kind : {OutputKind::action_only, OutputKind::full, OutputKind::language_only}) {
        for (bool state : {false, true}) {
            for (bool first : {false, true}) {
                const std::string name = tvla::testing::golden_name(kind, state, first);
                const fs::path path = ctx.source / "tests" / "golden" / "prompts" / name;
                ++total;
                if (fs::exists(path) &&
                    tvla::testing::read_file(path) == tvla::testing::render_golden(kind, state, first)) {
                    ++matched;
                } else {
                    mismatched += " " + name;
                }
            }
        }
    }
    return {matched == 12 && total == 12,
            std::to_string(matched) + "/" + std::to_string(total) + " spec combinations byte-match" +
                (mismatched.empty() ? "" : "; mismatched:" + mismatched)};
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"tvla acceptance suite"};
    Context ctx;
    ctx.work = fs::temp_directory_path() / "tvla_acceptance";
    ctx.source = TVLA_SOURCE_DIR;
    std::vector<std::string> only;
    app.add_option("--work-dir", ctx.work, "Scratch directory for runs")->capture_default_str();
    app.add_option("--only", only, "Run only these criteria");
    app.add_flag("--verbose", ctx.verbose, "Stream training logs to stderr");
    CLI11_PARSE(app, argc, argv);

    const std::vector<Criterion> criteria{
        {"codec_round_trip", codec_round_trip},   {"quantization_floor", quantization_floor},
        {"metric_oracles", metric_oracles},       {"gradient_check", gradient_check},
        {"overfit", overfit},                     {"determinism", determinism},
        {"end_to_end", end_to_end},               {"ablation_tables", ablation_tables},
        {"prompt_goldens", prompt_goldens},
    };
    fs::create_directories(ctx.work);
    int failures = 0;
    for (const auto& c : criteria) {
        if (!only.empty() && std::find(only.begin(), only.end(), c.name) == only.end()) {
            continue;
        }
        Outcome o;
        try {
            o = c.run(ctx);
        } catch (const Error& e) {
            o = {false, "error: " + e.to_json().dump()};
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        failures += o.pass ? 0 : 1;
        std::cout << (o.pass ? "PASS " : "FAIL ") << c.name << ": " << o.detail << std::endl;
    }
    std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
    return failures == 0 ? 0 : 1;
}
