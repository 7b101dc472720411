// Copyright (C) 2026 The tvla Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "tvla/env.hpp"
#include "tvla/error.hpp"
#include "tvla/eval.hpp"
#include "tvla/rng.hpp"

#include "oracles.hpp"

using namespace tvla;
using namespace tvla::testing;

namespace {

const CodecConfig kCodec10 = [] {
    CodecConfig c;
    c.resolution = 10;
    return c;
}();

} // namespace

TEST_CASE("rouge1 examples") {
    CHECK(rouge1("push the red cube", "push the red cube") == 1.0);
    CHECK(rouge1("push the red cube", "push the blue cube") == 0.75);
    CHECK(rouge1("push the red cube", "move arm behind star") == 0.0);
    CHECK(rouge1("", "push") == 0.0);
    CHECK(rouge1("push", "") == 0.0);
    // Clipping: repeated candidate words only match as often as the reference has them.
    CHECK(rouge1("the the the", "the cube") == doctest::Approx(2.0 * (1.0 / 3) * 0.5 / (1.0 / 3 + 0.5)).epsilon(1e-15));
    CHECK(metric_tokens("Push the RED cube.  Now?") == Words{"push", "the", "red", "cube", "now"});
}

TEST_CASE("bleu examples") {
    const Words ref{"push", "the", "red", "cube"};
    const Words cand{"push", "the", "red", "cube", "now"};
    const auto r = bleu({cand}, {ref});
    CHECK(r.brevity_penalty == 1.0);
    CHECK(r.score == doctest::Approx(std::pow(0.8 * 0.75 * (2.0 / 3) * 0.5, 0.25)).epsilon(1e-12));
    CHECK(r.score == doctest::Approx(brute_bleu({cand}, {ref})).epsilon(1e-12));

    CHECK(bleu({ref}, {ref}).score == 1.0);
    CHECK(bleu({Words{"move", "arm"}}, {ref}).score == 0.0);

    // Only orders reachable by some candidate count; brevity penalty applies.
    const auto short_pair = bleu({Words{"push", "the"}}, {Words{"push", "the", "cube"}});
    CHECK(short_pair.orders_used == 2);
    CHECK(short_pair.score == doctest::Approx(std::exp(1.0 - 1.5)).epsilon(1e-12));
    CHECK(bleu({Words{"push", "cube"}}, {Words{"push", "the", "cube"}}).score == 0.0);

    CHECK_THROWS_AS(bleu({}, {}), Error);
    try {
        bleu({ref}, {});
        CHECK(false);
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::length_mismatch);
    }
    try {
        bleu({}, {});
        CHECK(false);
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::empty_corpus);
    }
}

TEST_CASE("rouge1 and bleu match the brute-force reference on random caption pairs") {
    Rng rng(31);
    std::vector<Words> cands, refs;
    for (int i = 0; i < 100; ++i) {
        const Words ref = caption_words(rng);
        const Words cand = rng.uniform() < 0.3 ? caption_words(rng) : perturb(ref, rng);
        const double r = rouge1(cand, ref);
        CHECK(std::abs(r - brute_rouge1(cand, ref)) <= 1e-9);
        CHECK(r >= 0.0);
        CHECK(r <= 1.0);
        const double s = sentence_bleu(cand, ref);
        CHECK(std::abs(s - brute_bleu({cand}, {ref})) <= 1e-9);
        CHECK(s >= 0.0);
        CHECK(s <= 1.0);
        CHECK(rouge1(ref, ref) == 1.0);
        CHECK(sentence_bleu(ref, ref) == doctest::Approx(1.0).epsilon(1e-12));
        cands.push_back(cand);
        refs.push_back(ref);
    }
    CHECK(std::abs(bleu(cands, refs).score - brute_bleu(cands, refs)) <= 1e-9);
}

TEST_CASE("trajectory metrics") {
    const std::vector<ActionVec> truth{{0.01, 0.02}, {-0.03, 0.0}};
    std::vector<std::optional<ActionVec>> same(truth.begin(), truth.end());
    const auto m = trajectory_metrics(same, truth);
    CHECK(m.mse.mean == 0.0);
    CHECK(m.cossim.mean == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(m.parse_failure_rate == 0.0);

    CHECK(cosine_similarity({0.02, 0.0}, {0.0, 0.03}) == 0.0);
    CHECK(cosine_similarity({0.0, 0.0}, {0.0, 0.03}) == 0.0);
    CHECK(action_mse({0.01, 0.0}, {0.0, 0.0}) == doctest::Approx(0.5e-4).epsilon(1e-15));

    Rng rng(2);
    for (int i = 0; i < 200; ++i) {
        const ActionVec a{rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05)};
        const ActionVec b{rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05)};
        const double lambda = rng.uniform(0.01, 100.0);
        CHECK(std::abs(cosine_similarity({lambda * a.dx, lambda * a.dy}, b) - cosine_similarity(a, b)) <= 1e-12);
    }

    std::vector<std::optional<ActionVec>> partial{truth[0], std::nullopt};
    const auto p = trajectory_metrics(partial, truth);
    CHECK(p.parse_failure_rate == 0.5);
    CHECK(p.mse.n == 1);
    CHECK_THROWS_AS(trajectory_metrics(partial, std::span<const ActionVec>(truth).first(1)), Error);
}

TEST_CASE("quantized ground truth sits on the quantization floor and improves with resolution") {
    Rng rng(4);
    std::vector<ActionVec> truth;
    for (int i = 0; i < 100000; ++i) {
        truth.push_back({rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05)});
    }
    double prev = 1.0;
    for (int n : {10, 25, 50}) {
        CodecConfig cfg;
        cfg.resolution = n;
        std::vector<std::optional<ActionVec>> predicted;
        for (const auto& a : truth) {
            predicted.push_back(detokenize_action(tokenize_action(a, cfg), cfg));
        }
        const double mse = trajectory_metrics(predicted, truth).mse.mean;
        const double floor = std::pow(0.1 / n, 2) / 12.0;
        CHECK(mse >= 0.8 * floor);
        CHECK(mse <= 1.2 * floor);
        CHECK(mse < prev);
        prev = mse;
    }
}

TEST_CASE("parse_output on canonical targets") {
    const auto full = build_target("push the red cube towards the top left corner", {0.011, -0.019},
                                   {OutputKind::full, false, false}, kCodec10);
    const auto parsed = parse_output(full, {OutputKind::full, false, false}, kCodec10);
    CHECK(parsed.status == ParseStatus::ok);
    CHECK(parsed.order == OrderObserved::language_first);
    CHECK(parsed.statement == "push the red cube towards the top left corner");
    CHECK(parsed.action->dx == doctest::Approx(0.015));
    CHECK(parsed.action->dy == doctest::Approx(-0.015));

    const PromptSpec first{OutputKind::full, false, true};
    const auto reversed = parse_output(build_target("move the arm to the red cube", {0.0, 0.0}, first, kCodec10), first,
                                       kCodec10);
    CHECK(reversed.status == ParseStatus::ok);
    CHECK(reversed.order == OrderObserved::action_first);

    const PromptSpec action{OutputKind::action_only, false, false};
    const auto only = parse_output(build_target("x", {0.0, 0.0}, action, kCodec10), action, kCodec10);
    CHECK(only.status == ParseStatus::ok);
    CHECK(only.statement.empty());
    CHECK(only.order == OrderObserved::not_applicable);

    const PromptSpec lang{OutputKind::language_only, false, false};
    CHECK(parse_output(Words{"<eos>"}, lang, kCodec10).status == ParseStatus::missing_statement);
    CHECK(parse_output(Words{"touch", "the", "cube", "<eos>"}, lang, kCodec10).status == ParseStatus::ok);
    // Text after EOS is ignored.
    CHECK(parse_output(Words{"<eos>", "[action]", "a1", "a2", "[action]"}, action, kCodec10).status ==
          ParseStatus::malformed_action);
}

TEST_CASE("parse_output fuzz: malformed blocks are flagged and the statement survives") {
    Rng rng(17);
    const Words pool{"[action]", "a3", "a9", "push", "the", "<eos>", "s2", "[state]", "cube"};
    const PromptSpec spec{OutputKind::full, false, false};
    int malformed = 0;
    for (int trial = 0; trial < 2000; ++trial) {
        Words t = build_target("push the red cube towards the blue star", {0.02, -0.01}, spec, kCodec10);
        const int edits = 1 + static_cast<int>(rng.below(4));
        for (int e = 0; e < edits; ++e) {
            if (rng.uniform() < 0.5 && !t.empty()) {
                t.erase(t.begin() + static_cast<std::ptrdiff_t>(rng.below(t.size())));
            } else {
                t.insert(t.begin() + static_cast<std::ptrdiff_t>(rng.below(t.size() + 1)), pool[rng.below(pool.size())]);
            }
        }
        // Oracle: scan for marker, two action tokens, marker before the first <eos>.
        const auto end = std::find(t.begin(), t.end(), "<eos>");
        const Words body(t.begin(), end);
        bool has_block = false;
        Words words;
        for (std::size_t i = 0; i + 3 < body.size() && !has_block; ++i) {
            auto is_a = [](const std::string& s) {
                return s.size() >= 2 && s[0] == 'a' && std::isdigit(static_cast<unsigned char>(s[1]));
            };
            has_block = body[i] == "[action]" && is_a(body[i + 1]) && is_a(body[i + 2]) && body[i + 3] == "[action]";
        }
        for (const auto& w : body) {
            if (w == "push" || w == "the" || w == "red" || w == "cube" || w == "towards" || w == "blue" || w == "star") {
                words.push_back(w);
            }
        }
        const auto parsed = parse_output(t, spec, kCodec10);
        CHECK(parsed.action.has_value() == has_block);
        if (!has_block) {
            ++malformed;
            CHECK(parsed.status != ParseStatus::ok);
        }
        CHECK(metric_tokens(parsed.statement) == words);
    }
    CHECK(malformed > 100);
}

TEST_CASE("report JSON and markdown") {
    MetricsReport r;
    r.mse = Stat{8.3e-6, 1e-6, 10};
    r.cossim = Stat{0.9, 0.05, 10};
    r.n_samples = 10;
    const std::string md = to_markdown(r, "Action");
    CHECK(md.find("| Output | ROUGE↑ | BLEU↑ | CosSim↑ | MSE↓ |") == 0);
    CHECK(md.find("| Action | - | - | 0.9000 ± 0.0500 | 8.300e-06 ± 1.000e-06 |") != std::string::npos);
    const MetricsReport back = metrics_report_from_json(to_json(r));
    CHECK(to_json(back) == to_json(r));
    CHECK(!back.rouge1);
    CHECK(r.selection_score() == doctest::Approx(0.9));
}

TEST_CASE("evaluate is deterministic and omits language metrics for action-only output") {
    DatagenOptions o;
    o.episodes = 20;
    o.seed = 3;
    o.codec.resolution = 10;
    const Dataset ds = generate_dataset(o);
    ModelConfig mc;
    mc.embed_dim = 32;
    mc.heads = 2;
    mc.layers = 1;
    mc.ff_dim = 64;
    mc.vocab_size = ds.vocab.size();
    mc.max_seq_len = 128;
    Transformer<float> model(mc, 1);
    SampleContext ctx;
    ctx.codec = ds.manifest.codec;
    ctx.vocab = &ds.vocab;
    for (const auto& spec : all_prompt_specs()) {
        const auto records = evaluation_records(ds.split(Split::test), spec, ctx, 3, 5, 12);
        EvalOptions eo;
        eo.max_new_tokens = 8;
        const auto a = evaluate(model, records, spec, ds.vocab, ds.manifest.codec, eo);
        const auto b = evaluate(model, records, spec, ds.vocab, ds.manifest.codec, eo);
        CHECK(to_json(a).dump() == to_json(b).dump());
        CHECK(a.n_samples == records.size());
        CHECK(a.rouge1.has_value() == spec.wants_statement());
        CHECK(a.bleu.has_value() == spec.wants_statement());
        if (spec.kind == OutputKind::action_only) {
            CHECK(to_markdown(a, "Action").find("| Action | - | - |") != std::string::npos);
        }
    }
    CHECK_THROWS_AS(evaluate(model, {}, {OutputKind::full, false, false}, ds.vocab, ds.manifest.codec), Error);
}
