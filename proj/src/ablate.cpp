// Copyright (C) 2026 The tvla Authors
// SPDX-License-Identifier: Apache-2.0

#include "tvla/ablate.hpp"

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cctype>
#include <cstdlib>
#include <set>

#include "tvla/error.hpp"
#include "tvla/hash.hpp"
#include "tvla/io.hpp"

namespace tvla {

namespace {

constexpr const char* kOff = "✗";
constexpr const char* kOn = "✓";
const std::vector<std::string> kMetrics{"rouge1", "bleu", "cossim", "mse"};

[[noreturn]] void config_fail(const std::string& msg, nlohmann::json detail = nlohmann::json::object()) {
    throw Error(ErrorCode::config_error, msg, std::move(detail));
}

std::string output_label(OutputKind k) {
    switch (k) {
    case OutputKind::action_only:
        return "Action";
    case OutputKind::full:
        return "Full";
    case OutputKind::language_only:
        break;
    }
    return "Language";
}

const std::optional<Stat>& report_metric(const MetricsReport& r, const std::string& name) {
    if (name == "rouge1") {
        return r.rouge1;
    }
    if (name == "bleu") {
        return r.bleu;
    }
    if (name == "cossim") {
        return r.cossim;
    }
    return r.mse;
}

std::string fmt(const char* pattern, double a, double b) {
    char buf[96];
    std::snprintf(buf, sizeof buf, pattern, a, b);
    return buf;
}

std::string fmt1(const char* pattern, double a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, pattern, a);
    return buf;
}

std::string slug(std::string label) {
    for (const auto& [mark, word] : {std::pair<std::string, std::string>{kOn, "on"}, {kOff, "off"}}) {
        for (auto pos = label.find(mark); pos != std::string::npos; pos = label.find(mark)) {
            label.replace(pos, mark.size(), word);
        }
    }
    std::string out;
    for (char c : label) {
        const auto u = static_cast<unsigned char>(c);
        out += std::isalnum(u) ? static_cast<char>(std::tolower(u)) : '_';
    }
    return out;
}

} // namespace

std::string_view to_string(AblationAxis a) {
    switch (a) {
    case AblationAxis::actions_first:
        return "actions_first";
    case AblationAxis::include_state:
        return "include_state";
    case AblationAxis::resolution:
        return "resolution";
    case AblationAxis::checkpoint:
        return "checkpoint";
    case AblationAxis::training:
        return "training";
    }
    return "resolution";
}

AblationAxis ablation_axis_from_string(std::string_view s) {
    for (auto a : {AblationAxis::actions_first, AblationAxis::include_state, AblationAxis::resolution,
                   AblationAxis::checkpoint, AblationAxis::training}) {
        if (to_string(a) == s) {
            return a;
        }
    }
    config_fail("unknown ablation axis '" + std::string(s) + "'", {{"key", "ablation.axis"}});
}

nlohmann::json to_json(const Hypothesis& h) {
    return {{"name", h.name}, {"claim", h.claim}, {"metric", h.metric},
            {"lhs", h.lhs},   {"relation", h.relation}, {"rhs", h.rhs}};
}

Hypothesis hypothesis_from_json(const nlohmann::json& j) {
    Hypothesis h;
    h.name = j.value("name", h.name);
    h.claim = j.value("claim", h.claim);
    h.metric = j.value("metric", h.metric);
    h.relation = j.value("relation", h.relation);
    if (j.contains("lhs")) {
        h.lhs = j.at("lhs").get<std::map<std::string, std::string>>();
    }
    if (j.contains("rhs")) {
        h.rhs = j.at("rhs").get<std::map<std::string, std::string>>();
    }
    if (std::find(kMetrics.begin(), kMetrics.end(), h.metric) == kMetrics.end()) {
        config_fail("hypothesis metric must be rouge1, bleu, cossim or mse", {{"metric", h.metric}});
    }
    if (h.relation != ">" && h.relation != "<") {
        config_fail("hypothesis relation must be '>' or '<'", {{"relation", h.relation}});
    }
    return h;
}

std::vector<Hypothesis> default_hypotheses(AblationAxis axis) {
    switch (axis) {
    case AblationAxis::actions_first:
        return {{"actions_first_cossim", "emitting actions first gives more accurate actions", "cossim",
                 {{"Actions First", kOn}}, ">", {{"Actions First", kOff}}},
                {"actions_first_rouge", "emitting the statement last raises ROUGE", "rouge1",
                 {{"Actions First", kOn}}, ">", {{"Actions First", kOff}}}};
    case AblationAxis::include_state:
        return {{"state_rouge", "state tokens in the prompt help language generation", "rouge1", {{"State", kOn}},
                 ">", {{"State", kOff}}}};
    case AblationAxis::resolution:
        return {{"joint_output_cossim", "generating the statement with the action improves trajectory CosSim",
                 "cossim", {{"Resolution", "10"}, {"Output", "Full"}}, ">",
                 {{"Resolution", "10"}, {"Output", "Action"}}},
                {"joint_output_mse", "generating the statement with the action lowers trajectory MSE", "mse",
                 {{"Resolution", "10"}, {"Output", "Full"}}, "<", {{"Resolution", "10"}, {"Output", "Action"}}},
                {"coarse_bins_full_cossim", "fewer bins score higher for Full output", "cossim",
                 {{"Resolution", "10"}, {"Output", "Full"}}, ">", {{"Resolution", "50"}, {"Output", "Full"}}}};
    case AblationAxis::checkpoint:
        return {{"pretraining_full_cossim", "language pretraining improves Full-output trajectories", "cossim",
                 {{"Checkpoint", "Pretrained"}, {"Output", "Full"}}, ">",
                 {{"Checkpoint", "None"}, {"Output", "Full"}}},
                {"pretraining_full_rouge", "language pretraining slightly raises Full-output ROUGE", "rouge1",
                 {{"Checkpoint", "Pretrained"}, {"Output", "Full"}}, ">",
                 {{"Checkpoint", "None"}, {"Output", "Full"}}}};
    case AblationAxis::training:
        return {{"full_training_action_cossim", "training the vision encoder improves Action-output CosSim",
                 "cossim", {{"Training", "Full"}, {"Output", "Action"}}, ">",
                 {{"Training", "LLM"}, {"Output", "Action"}}}};
    }
    return {};
}

void AblationPlan::validate() const {
    if (name.empty() || name.find('/') != std::string::npos || name == "." || name == "..") {
        config_fail("ablation name must be a plain directory name", {{"key", "ablation.name"}, {"name", name}});
    }
    if (seeds.empty()) {
        config_fail("ablation needs at least one seed", {{"key", "ablation.seeds"}});
    }
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
        config_fail("ablation seeds must be distinct", {{"key", "ablation.seeds"}});
    }
    const bool uses_outputs = axis == AblationAxis::resolution || axis == AblationAxis::checkpoint ||
                              axis == AblationAxis::training;
    if (uses_outputs) {
        if (outputs.empty()) {
            config_fail("ablation needs at least one output", {{"key", "ablation.outputs"}});
        }
        for (auto k : outputs) {
            if (k == OutputKind::language_only) {
                config_fail("ablation outputs must be action or full", {{"key", "ablation.outputs"}});
            }
        }
    }
    if (axis == AblationAxis::resolution && resolutions.empty()) {
        config_fail("resolution ablation needs at least one resolution", {{"key", "ablation.resolutions"}});
    }
    train.validate();
    TrainConfig p = pretrain;
    p.phase = TrainPhase::pretrain_language;
    p.spec = {OutputKind::language_only, false, false};
    p.validate();
    data.ratios.validate();
    const auto columns = axis_columns(axis);
    for (const auto& h : hypotheses) {
        for (const auto* side : {&h.lhs, &h.rhs}) {
            for (const auto& entry : *side) {
                if (std::find(columns.begin(), columns.end(), entry.first) == columns.end()) {
                    config_fail("hypothesis '" + h.name + "' names a column this axis does not have",
                                {{"column", entry.first}, {"columns", columns}});
                }
            }
        }
    }
}

std::string AblationCell::label() const {
    std::string out;
    for (const auto& [col, value] : key) {
        if (!out.empty()) {
            out += ',';
        }
        out += col + "=" + value;
    }
    return out;
}

std::vector<std::string> axis_columns(AblationAxis axis) {
    switch (axis) {
    case AblationAxis::actions_first:
        return {"Actions First"};
    case AblationAxis::include_state:
        return {"State"};
    case AblationAxis::resolution:
        return {"Resolution", "Output"};
    case AblationAxis::checkpoint:
        return {"Checkpoint", "Output"};
    case AblationAxis::training:
        return {"Training", "Output"};
    }
    return {};
}

std::string axis_caption(AblationAxis axis) {
    switch (axis) {
    case AblationAxis::actions_first:
        return "Action Before Language";
    case AblationAxis::include_state:
        return "State Inclusion";
    case AblationAxis::resolution:
        return "Tokenization Resolution";
    case AblationAxis::checkpoint:
        return "Pretraining";
    case AblationAxis::training:
        return "Results Weight and Output Configuration";
    }
    return "";
}

std::vector<AblationCell> plan_cells(const AblationPlan& plan) {
    std::vector<AblationCell> cells;
    const PromptSpec full{OutputKind::full, false, false};
    auto base = [&]() {
        AblationCell c;
        c.spec = full;
        c.resolution = plan.resolution;
        return c;
    };
    switch (plan.axis) {
    case AblationAxis::actions_first:
    case AblationAxis::include_state: {
        const bool first = plan.axis == AblationAxis::actions_first;
        for (bool on : {false, true}) {
            AblationCell c = base();
            (first ? c.spec.actions_first : c.spec.include_state) = on;
            c.key = {{first ? "Actions First" : "State", on ? kOn : kOff}};
            cells.push_back(c);
        }
        break;
    }
    case AblationAxis::resolution:
        for (auto kind : plan.outputs) {
            for (int r : plan.resolutions) {
                AblationCell c = base();
                c.spec.kind = kind;
                c.resolution = r;
                c.key = {{"Resolution", std::to_string(r)}, {"Output", output_label(kind)}};
                cells.push_back(c);
            }
        }
        break;
    case AblationAxis::checkpoint:
    case AblationAxis::training: {
        const bool ckpt = plan.axis == AblationAxis::checkpoint;
        for (bool variant : {false, true}) {
            for (auto kind : plan.outputs) {
                AblationCell c = base();
                c.spec.kind = kind;
                if (ckpt) {
                    c.pretrained = variant;
                    c.key = {{"Checkpoint", variant ? "Pretrained" : "None"}, {"Output", output_label(kind)}};
                } else {
                    // The paper's "LLM" rows train only the language model.
                    c.freeze_vision = !variant;
                    c.key = {{"Training", variant ? "Full" : "LLM"}, {"Output", output_label(kind)}};
                }
                cells.push_back(c);
            }
        }
        break;
    }
    }
    return cells;
}

CellResult summarize_cell(AblationCell cell, std::vector<SeedResult> seeds) {
    CellResult out;
    out.cell = std::move(cell);
    out.seeds = std::move(seeds);
    std::vector<const MetricsReport*> ok;
    for (const auto& s : out.seeds) {
        if (s.report) {
            ok.push_back(&*s.report);
        }
    }
    out.succeeded = ok.size();
    if (ok.empty()) {
        return out;
    }
    double pfr = 0.0;
    for (const auto* r : ok) {
        pfr += r->parse_failure_rate;
    }
    out.parse_failure_rate = pfr / static_cast<double>(ok.size());
    for (const auto& m : kMetrics) {
        std::vector<double> means;
        double sample_std = 0.0;
        for (const auto* r : ok) {
            if (const auto& st = report_metric(*r, m)) {
                means.push_back(st->mean);
                sample_std += st->std;
            }
        }
        if (means.size() != ok.size()) {
            continue;
        }
        const Stat across = summarize(means);
        out.metrics[m] = {across.mean, across.std, sample_std / static_cast<double>(means.size()), means.size()};
    }
    return out;
}

nlohmann::json to_json(const AblationTable& t) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : t.rows) {
        nlohmann::json key = nlohmann::json::array();
        for (const auto& [col, value] : row.cell.key) {
            key.push_back({col, value});
        }
        nlohmann::json metrics = nlohmann::json::object();
        for (const auto& [m, s] : row.metrics) {
            metrics[m] = {{"mean", s.mean}, {"seed_std", s.seed_std}, {"sample_std", s.sample_std}, {"seeds", s.seeds}};
        }
        nlohmann::json seeds = nlohmann::json::array();
        for (const auto& s : row.seeds) {
            seeds.push_back({{"seed", s.seed},
                             {"config_hash", s.config_hash},
                             {"report", s.report ? to_json(*s.report) : nlohmann::json(nullptr)},
                             {"error", s.error},
                             {"cached", s.cached},
                             {"train_steps", s.train_steps}});
        }
        rows.push_back({{"label", row.cell.label()},
                        {"key", key},
                        {"spec", to_json(row.cell.spec)},
                        {"resolution", row.cell.resolution},
                        {"pretrained", row.cell.pretrained},
                        {"freeze_vision", row.cell.freeze_vision},
                        {"metrics", metrics},
                        {"parse_failure_rate", row.parse_failure_rate},
                        {"succeeded", row.succeeded},
                        {"seeds", seeds}});
    }
    return {{"name", t.name}, {"axis", std::string(to_string(t.axis))}, {"rows", rows}};
}

namespace {

std::string metric_cell(const CellResult& row, const std::string& m, bool sample) {
    if (row.succeeded == 0) {
        return "failed";
    }
    const auto it = row.metrics.find(m);
    if (it == row.metrics.end()) {
        return "-";
    }
    const double spread = sample ? it->second.sample_std : it->second.seed_std;
    return fmt(m == "mse" ? "%.3e ± %.3e" : "%.4f ± %.4f", it->second.mean, spread);
}

std::string markdown_grid(const AblationTable& t, bool sample) {
    const auto columns = axis_columns(t.axis);
    std::string out = "|";
    std::string rule = "|";
    for (const auto& c : columns) {
        out += " " + c + " |";
        rule += "---|";
    }
    out += " ROUGE↑ | BLEU↑ | CosSim↑ | MSE↓ |\n";
    rule += "---|---|---|---|\n";
    out += rule;
    for (const auto& row : t.rows) {
        out += "|";
        for (const auto& [col, value] : row.cell.key) {
            out += " " + value + " |";
        }
        for (const auto& m : kMetrics) {
            out += " " + metric_cell(row, m, sample) + " |";
        }
        out += "\n";
    }
    return out;
}

std::size_t seed_count(const AblationTable& t) {
    std::size_t n = 0;
    for (const auto& row : t.rows) {
        n = std::max(n, row.seeds.size());
    }
    return n;
}

} // namespace

std::string table_markdown(const AblationTable& t) {
    std::string out = "## " + axis_caption(t.axis) + " (" + t.name + ")\n\n";
    out += markdown_grid(t, false);
    out += "\nMean ± population std across " + std::to_string(seed_count(t)) +
           " seeds of each seed's test-split mean.\n\n";
    out += "### Per-sample std\n\n";
    out += markdown_grid(t, true);
    out += "\nMean across seeds ± mean over seeds of the per-sample population std. BLEU means are corpus BLEU-4;"
           " its per-sample std is over sentence BLEU.\n";
    std::string failures;
    for (const auto& row : t.rows) {
        for (const auto& s : row.seeds) {
            if (!s.error.is_null()) {
                failures += "- " + row.cell.label() + " seed " + std::to_string(s.seed) + ": " +
                            s.error.value("message", std::string("failed")) + "\n";
            }
        }
    }
    if (!failures.empty()) {
        out += "\n### Failed runs\n\n" + failures;
    }
    return out;
}

std::string table_csv(const AblationTable& t) {
    std::string out;
    for (const auto& c : axis_columns(t.axis)) {
        out += c + ",";
    }
    for (const auto& m : kMetrics) {
        out += m + "_mean," + m + "_seed_std," + m + "_sample_std,";
    }
    out += "parse_failure_rate,seeds_ok,seeds_failed\n";
    for (const auto& row : t.rows) {
        for (const auto& [col, value] : row.cell.key) {
            out += value + ",";
        }
        for (const auto& m : kMetrics) {
            const auto it = row.metrics.find(m);
            if (it == row.metrics.end()) {
                out += "-,-,-,";
            } else {
                out += fmt1("%.10g", it->second.mean) + "," + fmt1("%.10g", it->second.seed_std) + "," +
                       fmt1("%.10g", it->second.sample_std) + ",";
            }
        }
        out += (row.succeeded ? fmt1("%.10g", row.parse_failure_rate) : std::string("-")) + "," +
               std::to_string(row.succeeded) + "," + std::to_string(row.seeds.size() - row.succeeded) + "\n";
    }
    return out;
}

std::string_view to_string(TrendOutcome o) {
    switch (o) {
    case TrendOutcome::pass:
        return "pass";
    case TrendOutcome::fail:
        return "fail";
    case TrendOutcome::no_difference:
        return "no difference";
    }
    return "no difference";
}

Verdict compare_trend(const AblationTable& table, const Hypothesis& h) {
    auto find = [&](const std::map<std::string, std::string>& want, const char* side) -> const MetricSummary& {
        for (const auto& row : table.rows) {
            bool match = want.size() == row.cell.key.size();
            for (const auto& [col, value] : row.cell.key) {
                const auto it = want.find(col);
                match = match && it != want.end() && it->second == value;
            }
            if (!match) {
                continue;
            }
            const auto m = row.metrics.find(h.metric);
            if (m == row.metrics.end()) {
                break;
            }
            return m->second;
        }
        throw Error(ErrorCode::missing_cell, "hypothesis '" + h.name + "' references a cell without " + h.metric,
                    {{"hypothesis", h.name}, {"side", side}, {"cell", want}, {"metric", h.metric}});
    };
    const MetricSummary& a = find(h.lhs, "lhs");
    const MetricSummary& b = find(h.rhs, "rhs");
    Verdict v;
    v.hypothesis = h;
    v.lhs = a.mean;
    v.rhs = b.mean;
    v.difference = a.mean - b.mean;
    const double pooled = std::sqrt(0.5 * (a.seed_std * a.seed_std + b.seed_std * b.seed_std));
    if (pooled > 0.0) {
        v.effect_size = v.difference / pooled;
    }
    if (v.difference == 0.0) {
        v.outcome = TrendOutcome::no_difference;
    } else {
        const bool greater = v.difference > 0.0;
        v.outcome = greater == (h.relation == ">") ? TrendOutcome::pass : TrendOutcome::fail;
    }
    return v;
}

nlohmann::json to_json(const Verdict& v) {
    return {{"hypothesis", to_json(v.hypothesis)},
            {"lhs", v.lhs},
            {"rhs", v.rhs},
            {"difference", v.difference},
            {"effect_size", v.effect_size ? nlohmann::json(*v.effect_size) : nlohmann::json(nullptr)},
            {"verdict", std::string(to_string(v.outcome))}};
}

std::string verdicts_markdown(const std::vector<Verdict>& verdicts, const std::vector<nlohmann::json>& missing) {
    auto side = [](const std::map<std::string, std::string>& m) {
        std::string s;
        for (const auto& [k, v] : m) {
            s += (s.empty() ? "" : ", ") + k + "=" + v;
        }
        return s;
    };
    std::string out = "## Trend verdicts\n\nDescriptive only: desk-scale runs are not expected to reproduce the "
                      "paper's trends.\n\n| Hypothesis | Claim | Test | LHS | RHS | Δ | Effect size | Verdict |\n"
                      "|---|---|---|---|---|---|---|---|\n";
    for (const auto& v : verdicts) {
        const auto& h = v.hypothesis;
        out += "| " + h.name + " | " + h.claim + " | " + h.metric + "(" + side(h.lhs) + ") " + h.relation + " " +
               h.metric + "(" + side(h.rhs) + ") | " + fmt1("%.4g", v.lhs) + " | " + fmt1("%.4g", v.rhs) + " | " +
               fmt1("%+.4g", v.difference) + " | " + (v.effect_size ? fmt1("%+.2f", *v.effect_size) : "-") + " | " +
               std::string(to_string(v.outcome)) + " |\n";
    }
    for (const auto& m : missing) {
        out += "| " + m.value("hypothesis", std::string()) + " | | missing cell | | | | | not evaluated |\n";
    }
    return out;
}

std::filesystem::path resolve_cache_root(const AblationOptions& options) {
    if (options.cache_root) {
        return *options.cache_root;
    }
    if (const char* env = std::getenv("TP_CACHE_DIR"); env && *env) {
        return env;
    }
    return options.out_root / "cache";
}

// ---------------------------------------------------------------------------
// Runner

namespace {

class Runner {
  public:
    Runner(const AblationPlan& plan, const AblationOptions& options)
        : plan_(plan), options_(options), cache_(resolve_cache_root(options)) {}

    std::int64_t steps() const { return steps_; }

    SeedResult run(const AblationCell& cell, std::uint64_t seed) {
        SeedResult res;
        res.seed = seed;
        try {
            const Dataset& ds = dataset(cell.resolution, false);
            TrainConfig t = plan_.train;
            t.seed = seed;
            t.spec = cell.spec;
            t.phase = TrainPhase::joint;
            t.freeze_vision = cell.freeze_vision;
            std::optional<std::filesystem::path> init;
            nlohmann::json init_id = nullptr;
            if (cell.pretrained) {
                const auto [path, hash] = pretrained(cell.resolution, seed);
                init = path;
                init_id = hash;
            }
            res.config_hash = json_hash({{"run", run_config_hash(plan_.model, t, ds)},
                                         {"eval", to_json(plan_.eval)},
                                         {"init", init_id}});
            const auto dir = cache_ / "cells" / res.config_hash;
            if (std::filesystem::exists(dir / "result.json")) {
                const auto j = read_json_file(dir / "result.json");
                res.report = metrics_report_from_json(j.at("report"));
                res.cached = true;
                log(cell.label() + " seed " + std::to_string(seed) + ": cached");
                return res;
            }
            log(cell.label() + " seed " + std::to_string(seed) + ": training");
            const auto tmp = scratch_dir(dir);
            RunOptions ro;
            ro.init_checkpoint = init;
            ro.eval.max_new_tokens = plan_.eval.max_new_tokens;
            ro.log = options_.log;
            const RunRecord rec = run_training(plan_.model, t, ds, tmp, ro);
            res.train_steps = rec.steps;
            steps_ += rec.steps;
            const Transformer<float> model = load_model(load_checkpoint(tmp / "best.ckpt"), ds.vocab);
            res.report = evaluate_split(model, ds, cell.spec, plan_.eval);
            std::filesystem::remove(tmp / "last.ckpt");
            std::filesystem::remove(tmp / "final.ckpt");
            write_file_atomic(tmp / "result.json",
                              nlohmann::json{{"cell", cell.label()}, {"seed", seed}, {"report", to_json(*res.report)}}
                                      .dump(1) +
                                  "\n");
            publish(tmp, dir);
        } catch (const Error& e) {
            res.error = e.to_json().at("error");
            res.report.reset();
        } catch (const std::exception& e) {
            res.error = {{"code", "runtime"}, {"exit_code", 5}, {"message", e.what()}};
            res.report.reset();
        }
        if (!res.error.is_null()) {
            log(cell.label() + " seed " + std::to_string(seed) + " failed: " + res.error.value("message", ""));
        }
        return res;
    }

  private:
    const AblationPlan& plan_;
    const AblationOptions& options_;
    std::filesystem::path cache_;
    std::map<std::pair<int, bool>, Dataset> datasets_;
    std::int64_t steps_ = 0;
    int scratch_counter_ = 0;

    void log(const std::string& msg) const {
        if (options_.log) {
            options_.log(msg);
        }
    }

    const Dataset& dataset(int resolution, bool pretraining) {
        const auto key = std::make_pair(resolution, pretraining);
        auto it = datasets_.find(key);
        if (it == datasets_.end()) {
            DatagenOptions o = plan_.data;
            o.codec.resolution = resolution;
            o.pretraining_templates = pretraining;
            if (pretraining) {
                o.episodes = plan_.pretrain_episodes;
            }
            it = datasets_.emplace(key, generate_dataset(o)).first;
        }
        return it->second;
    }

    std::filesystem::path scratch_dir(const std::filesystem::path& final_dir) {
        auto tmp = final_dir;
        tmp += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(scratch_counter_++);
        std::filesystem::remove_all(tmp);
        std::filesystem::create_directories(tmp);
        return tmp;
    }

    // Atomic publish; a concurrent writer that got there first wins.
    static void publish(const std::filesystem::path& tmp, const std::filesystem::path& dir) {
        std::error_code ec;
        std::filesystem::rename(tmp, dir, ec);
        if (ec) {
            if (!std::filesystem::exists(dir / "result.json")) {
                std::filesystem::remove_all(dir);
                std::filesystem::rename(tmp, dir);
            } else {
                std::filesystem::remove_all(tmp);
            }
        }
    }

    std::pair<std::filesystem::path, std::string> pretrained(int resolution, std::uint64_t seed) {
        const Dataset& ds = dataset(resolution, true);
        TrainConfig t = plan_.pretrain;
        t.seed = seed;
        t.phase = TrainPhase::pretrain_language;
        t.spec = {OutputKind::language_only, false, false};
        t.freeze_vision = false;
        const std::string hash = json_hash({{"pretrain", run_config_hash(plan_.model, t, ds)}});
        const auto dir = cache_ / "pretrain" / hash;
        if (!std::filesystem::exists(dir / "final.ckpt")) {
            log("pretraining resolution " + std::to_string(resolution) + " seed " + std::to_string(seed));
            const auto tmp = scratch_dir(dir);
            RunOptions ro;
            ro.eval.max_new_tokens = plan_.eval.max_new_tokens;
            ro.log = options_.log;
            const RunRecord rec = run_training(plan_.model, t, ds, tmp, ro);
            steps_ += rec.steps;
            std::filesystem::remove(tmp / "last.ckpt");
            std::filesystem::remove(tmp / "best.ckpt");
            publish(tmp, dir);
        }
        return {dir / "final.ckpt", hash};
    }
};

} // namespace

AblationResult run_ablation(const AblationPlan& plan, const AblationOptions& options) {
    plan.validate();
    AblationResult result;
    result.table.name = plan.name;
    result.table.axis = plan.axis;
    result.out_dir = options.out_root / plan.name;
    std::filesystem::create_directories(result.out_dir);

    Runner runner(plan, options);
    for (const auto& cell : plan_cells(plan)) {
        std::vector<SeedResult> seeds;
        for (auto seed : plan.seeds) {
            seeds.push_back(runner.run(cell, seed));
            const auto& s = seeds.back();
            const auto cell_dir = result.out_dir / "cells" / slug(cell.label()) / ("seed" + std::to_string(seed));
            nlohmann::json rec = {{"cell", cell.label()},
                                  {"seed", seed},
                                  {"config_hash", s.config_hash},
                                  {"cached", s.cached},
                                  {"train_steps", s.train_steps},
                                  {"report", s.report ? to_json(*s.report) : nlohmann::json(nullptr)},
                                  {"error", s.error}};
            write_file_atomic(cell_dir / "result.json", rec.dump(1) + "\n");
        }
        result.table.rows.push_back(summarize_cell(cell, std::move(seeds)));
    }
    result.train_steps = runner.steps();

    for (const auto& h : plan.hypotheses) {
        try {
            result.verdicts.push_back(compare_trend(result.table, h));
        } catch (const Error& e) {
            result.missing.push_back({{"hypothesis", h.name}, {"error", e.to_json()}});
        }
    }

    nlohmann::json verdicts = nlohmann::json::array();
    for (const auto& v : result.verdicts) {
        verdicts.push_back(to_json(v));
    }
    write_file_atomic(result.out_dir / "table.md", table_markdown(result.table));
    write_file_atomic(result.out_dir / "table.csv", table_csv(result.table));
    write_file_atomic(result.out_dir / "verdicts.md", verdicts_markdown(result.verdicts, result.missing));
    write_file_atomic(result.out_dir / "results.json",
                      nlohmann::json{{"table", to_json(result.table)}, {"verdicts", verdicts}, {"missing", result.missing}}
                              .dump(1) +
                          "\n");
    return result;
}

} // namespace tvla
