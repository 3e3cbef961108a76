// Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any
// failure. Tolerances and time limits are fixed here.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "mirg/annotator.hpp"
#include "mirg/evaluation.hpp"
#include "mirg/grpo.hpp"
#include "mirg/json_io.hpp"
#include "mirg/pipeline.hpp"
#include "mirg/reward.hpp"
#include "mirg/training.hpp"
#include "mirg/trajectory.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace mirg;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

struct Criterion {
    int number;
    std::string name;
    double time_limit_s;  // 0 means unlimited
    std::function<Outcome()> check;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// ---- 1 ------------------------------------------------------------------------

std::string mutate(std::string s, std::mt19937_64& rng) {
    static const std::vector<std::string> tokens = {
        "<think>", "</think>", "<answer>", "</answer>", "<bbox_id>", "</bbox_id>", "<|object_ref_start|>",
        "<|object_ref_end|>", "<|box_start|>", "<|box_end|>", "[", "]", "-", ",", "(", ")", "1", "0", ".", "e9", " "};
    const int edits = std::uniform_int_distribution<int>(1, 4)(rng);
    for (int e = 0; e < edits; ++e) {
        const std::size_t at = s.empty() ? 0 : std::uniform_int_distribution<std::size_t>(0, s.size())(rng);
        switch (std::uniform_int_distribution<int>(0, 3)(rng)) {
            case 0: s.insert(at, tokens[std::uniform_int_distribution<std::size_t>(0, tokens.size() - 1)(rng)]); break;
            case 1:
                if (!s.empty()) s.erase(at == s.size() ? at - 1 : at, std::uniform_int_distribution<std::size_t>(1, 12)(rng));
                break;
            case 2:
                if (!s.empty()) s[at == s.size() ? at - 1 : at] = static_cast<char>(rng());
                break;
            default: s = s.substr(0, at); break;
        }
    }
    return s;
}

Outcome grammar_round_trip() {
    std::mt19937_64 rng(1001);
    int mismatches = 0;
    std::vector<std::string> corpus;
    for (int i = 0; i < 1000; ++i) {
        const Trajectory t = oracle::random_trajectory(rng);
        const std::string text = serialize_trajectory(t);
        corpus.push_back(text);
        const auto back = try_parse_trajectory(text);
        if (!back || !(*back == t)) ++mismatches;
    }
    int crashes = 0, accepted = 0;
    for (int i = 0; i < 10000; ++i) {
        std::string input;
        if (i % 2 == 0) {
            const std::size_t len = std::uniform_int_distribution<std::size_t>(0, 300)(rng);
            for (std::size_t k = 0; k < len; ++k) input += static_cast<char>(rng());
        } else {
            input = mutate(corpus[static_cast<std::size_t>(i) % corpus.size()], rng);
        }
        try {
            const auto parsed = try_parse_trajectory(input);
            if (parsed.has_value() != check_format(input)) ++crashes;
            if (parsed) {
                ++accepted;
                if (!(parse_trajectory(serialize_trajectory(*parsed)) == *parsed)) ++crashes;
            }
        } catch (...) {
            ++crashes;
        }
    }
    return {mismatches == 0 && crashes == 0,
            fmt("round-trip mismatches %d/1000; fuzz faults %d/10000 (%d inputs accepted)", mismatches, crashes, accepted)};
}

// ---- 2 ------------------------------------------------------------------------

Outcome reward_oracle() {
    std::mt19937_64 rng(1002);
    int bad = 0;
    double worst = 0.0;
    for (int i = 0; i < 5000; ++i) {
        const bool lattice = i % 2 == 0;
        std::uniform_int_distribution<int> lat(0, 5), image(1, 3);
        const auto box = [&] {
            if (!lattice) return oracle::random_box(rng);
            int a = lat(rng), b = lat(rng), c = lat(rng), d = lat(rng);
            if (a == b) ++b;
            if (c == d) ++d;
            return BoundingBox{double(std::min(a, b)), double(std::min(c, d)), double(std::max(a, b)), double(std::max(c, d))};
        };
        GroundTruth gt{{}, 3};
        std::vector<GroundedObject> preds;
        int gn[4] = {}, pn[4] = {};
        for (int k = std::uniform_int_distribution<int>(1, 5)(rng); k > 0; --k) {
            const int n = image(rng);
            gt.objects.push_back({{n, ++gn[n]}, "g", box()});
        }
        for (int k = std::uniform_int_distribution<int>(0, 5)(rng); k > 0; --k) {
            const int n = image(rng);
            preds.push_back({{n, ++pn[n]}, "p", box()});
        }
        Trajectory t;
        t.think.append_text("r");
        for (const auto& p : preds) t.answer.append(p);
        const auto got = score_response(serialize_trajectory(t), gt);
        const auto want = oracle::score(preds, gt.objects);
        const double err = std::max({std::abs(got.format - want.format), std::abs(got.image - want.image),
                                     std::abs(got.object - want.object), std::abs(got.total - want.total)});
        worst = std::max(worst, err);
        if (err > 1e-12) ++bad;
    }
    return {bad == 0, fmt("%d/5000 instances differ; max component error %.3g (tol 1e-12)", bad, worst)};
}

// ---- 3 ------------------------------------------------------------------------

Outcome iou_fixed_points() {
    const double seventh = iou({0, 0, 10, 10}, {5, 5, 15, 15});
    const double same = iou({3, 4, 9, 12}, {3, 4, 9, 12});
    const double apart = iou({0, 0, 10, 10}, {11, 11, 20, 20});
    const bool ok = std::abs(seventh - 1.0 / 7.0) <= 1e-12 && same == 1.0 && apart == 0.0;
    return {ok, fmt("iou=%.15f (1/7 +- 1e-12), identical=%g, disjoint=%g", seventh, same, apart)};
}

// ---- 4 ------------------------------------------------------------------------

Outcome advantage_invariants() {
    std::mt19937_64 rng(1004);
    double worst_mean = 0.0, worst_std = 0.0;
    int groups = 0;
    while (groups < 1000) {
        const int n = std::uniform_int_distribution<int>(2, 16)(rng);
        std::vector<double> r(static_cast<std::size_t>(n));
        for (double& v : r) v = std::uniform_real_distribution<double>(-3.0, 3.0)(rng);
        double m = 0.0, s = 0.0;
        for (double v : r) m += v;
        m /= n;
        for (double v : r) s += (v - m) * (v - m);
        if (std::sqrt(s / n) <= 1e-8) continue;
        const auto a = normalize_advantages(r, 1e-8);
        double am = 0.0, as = 0.0;
        for (double v : a) am += v;
        am /= n;
        for (double v : a) as += (v - am) * (v - am);
        worst_mean = std::max(worst_mean, std::abs(am));
        worst_std = std::max(worst_std, std::abs(std::sqrt(as / n) - 1.0));
        ++groups;
    }
    int nonzero = 0;
    for (int n = 2; n <= 16; ++n) {
        for (double v : {0.0, 1.0, 2.6, -7.25}) {
            for (double x : normalize_advantages(std::vector<double>(static_cast<std::size_t>(n), v), 1e-8)) nonzero += x != 0.0;
        }
    }
    return {worst_mean < 1e-9 && worst_std < 1e-6 && nonzero == 0,
            fmt("max |mean| %.3g (< 1e-9), max |std-1| %.3g (< 1e-6), nonzero entries in equal groups %d", worst_mean,
                worst_std, nonzero)};
}

// ---- 5 ------------------------------------------------------------------------

Outcome gradient_check() {
    std::mt19937_64 rng(1005);
    int bad = 0;
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
        const auto c = support::random_gradient_case(rng, 2 + i % 7);
        const auto analytic = grpo_gradient(c.group, c.policy, c.reference, c.features, c.lambda);
        const double err = support::relative_error(analytic, support::numeric_gradient(c, 1e-5));
        worst = std::max(worst, err);
        if (!(err < 1e-4)) ++bad;
    }
    return {bad == 0, fmt("%d/100 configurations off; max relative error %.3g (< 1e-4)", bad, worst)};
}

// ---- 6 ------------------------------------------------------------------------

Outcome kl_properties() {
    std::mt19937_64 rng(1006);
    int self_nonzero = 0, negative = 0;
    double min_kl = INFINITY;
    for (int i = 0; i < 1000; ++i) {
        EnvConfig env;
        env.grid_size = 2 + i % 7;
        const auto task = generate_task(rng(), env);
        const auto p = support::random_policy(rng, env.grid_size, 1.5);
        const auto q = support::random_policy(rng, env.grid_size, 1.5);
        self_nonzero += kl_divergence(p, p, task) != 0.0;
        const double k = kl_divergence(p, q, task);
        min_kl = std::min(min_kl, k);
        negative += k < 0.0;
    }
    ActionDistribution pi, ref;
    pi.cells_per_image = ref.cells_per_image = 1;
    pi.image_logp = {std::log(0.5), std::log(0.5)};
    ref.image_logp = {std::log(0.9), std::log(0.1)};
    pi.cell_logp = ref.cell_logp = {0.0, 0.0};
    const double hand = kl_divergence(pi, ref);
    return {self_nonzero == 0 && negative == 0 && std::abs(hand - 0.510826) <= 1e-5,
            fmt("kl(p,p)!=0 in %d/1000; negative in %d/1000 (min %.3g); hand case %.7f (0.510826 +- 1e-5)", self_nonzero,
                negative, min_kl, hand)};
}

// ---- 7 ------------------------------------------------------------------------

Outcome desk_scale_learning() {
    const auto r = train_loop(GrpoConfig{}, EnvConfig{}, TrainOptions{});
    const double gain = r.final.accuracy - r.initial.accuracy;
    return {gain >= 0.20, fmt("held-out Acc@0.5 %.4f -> %.4f over 200 tasks, gain %.4f (>= 0.20)", r.initial.accuracy,
                              r.final.accuracy, gain)};
}

// ---- 8 ------------------------------------------------------------------------

Outcome image_reward_ablation() {
    int wins = 0;
    std::string per_seed;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        GrpoConfig cfg;
        cfg.seed = seed;
        TrainOptions with, without;
        without.image_reward = false;
        const auto on = train_loop(cfg, EnvConfig{}, with);
        const auto off = train_loop(cfg, EnvConfig{}, without);
        const bool win = on.final.accuracy > off.final.accuracy && on.final.mean_r_img > off.final.mean_r_img;
        wins += win;
        per_seed += fmt(" s%d:%s(acc %.3f/%.3f r_img %.3f/%.3f)", static_cast<int>(seed), win ? "win" : "loss",
                        on.final.accuracy, off.final.accuracy, on.final.mean_r_img, off.final.mean_r_img);
    }
    return {wins >= 4, fmt("image reward ahead in %d/5 seeds (>= 4);", wins) + per_seed};
}

// ---- 9 ------------------------------------------------------------------------

Outcome strict_threshold() {
    const GroundTruth gt{{{{1, 1}, "cup", {0, 0, 10, 10}}}, 1};
    const std::string half = "<think>.</think><answer><bbox_id>[1-1]</bbox_id><|object_ref_start|>cup<|object_ref_end|>"
                             "<|box_start|>(0,0),(10,5)<|box_end|></answer>";
    const double v = iou({0, 0, 10, 5}, {0, 0, 10, 10});
    const bool correct = is_correct(half, gt);
    return {v == 0.5 && !correct, fmt("IoU %.17g scores %s", v, correct ? "correct" : "incorrect")};
}

// ---- 10 -----------------------------------------------------------------------

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

Outcome pipeline_integrity() {
    const fs::path dir = fs::temp_directory_path() / "mirg-acceptance-pipeline";
    fs::remove_all(dir);
    fs::create_directories(dir);
    {
        std::ofstream out(dir / "raw.jsonl");
        for (int i = 0; i < 100; ++i) {
            out << json(support::raw_from_task(generate_task(static_cast<std::uint64_t>(90000 + i), EnvConfig{}),
                                               "raw-" + std::to_string(i)))
                       .dump()
                << '\n';
        }
    }
    DeterministicMock mock;
    const StageClients clients{&mock, &mock, &mock};
    const auto a = run_pipeline(dir / "raw.jsonl", dir / "a.jsonl", dir / "a.rej", clients);
    const auto b = run_pipeline(dir / "raw.jsonl", dir / "b.jsonl", dir / "b.rej", clients);
    const bool identical = slurp(dir / "a.jsonl") == slurp(dir / "b.jsonl");

    int invalid = 0, lines = 0;
    std::ifstream out(dir / "a.jsonl");
    for (std::string line; std::getline(out, line);) {
        ++lines;
        invalid += !try_parse_trajectory(json::parse(line).at("trajectory").get<std::string>()).has_value();
    }

    DeterministicMock faulty(FaultPlan{2, FaultKind::OutOfRange, {"raw-42"}});
    const auto f = run_pipeline(dir / "raw.jsonl", dir / "f.jsonl", dir / "f.rej", {&faulty, &faulty, &faulty});
    std::ifstream rej(dir / "f.rej");
    std::string rej_line;
    std::getline(rej, rej_line);
    const json r = rej_line.empty() ? json{} : json::parse(rej_line);
    const bool quarantined = f.emitted == 99 && f.rejected == 1 && f.rejected_by_stage[2] == 1 &&
                             json(f).at("rejected_by_stage") == json{{"2", 1}} && r.value("sample_id", "") == "raw-42" &&
                             r.value("stage", 0) == 2 && slurp(dir / "f.jsonl").find("\"raw-42\"") == std::string::npos;
    fs::remove_all(dir);

    const bool ok = a.emitted == 100 && a.rejected == 0 && b.emitted == 100 && lines == 100 && invalid == 0 &&
                    a.revalidation_failures == 0 && identical && quarantined;
    return {ok, fmt("emitted %zu/100, parse-invalid %d, byte-identical %s, stage-2 fault quarantined %s",
                    a.emitted, invalid, identical ? "yes" : "no", quarantined ? "yes" : "no")};
}

// ---- 11 -----------------------------------------------------------------------

Outcome scoring_fixture() {
    std::ostringstream out, err;
    const int code = cli::run({"score", std::string(MIRG_FIXTURE_DIR) + "/score_fixture.jsonl"}, out, err);
    if (code != 0) return {false, "score exited " + std::to_string(code) + ": " + err.str()};
    const json got = json::parse(out.str());
    std::ifstream in(std::string(MIRG_FIXTURE_DIR) + "/score_fixture_expected.json");
    const json want = json::parse(in);
    bool ok = got.at("total_samples") == want.at("total_samples") && got.at("total_correct") == want.at("total_correct") &&
              got.at("per_task").size() == want.at("per_task").size();
    std::string tally;
    for (const auto& [kind, t] : want.at("per_task").items()) {
        const auto& g = got.at("per_task").at(kind);
        ok = ok && g.at("count") == t.at("count") && g.at("correct") == t.at("correct");
        tally += fmt(" %s %d/%d", kind.c_str(), g.at("correct").get<int>(), g.at("count").get<int>());
    }
    ok = ok && std::abs(got.at("average").get<double>() - want.at("average").get<double>()) <= 1e-12;
    return {ok, fmt("%d/%d correct;", got.at("total_correct").get<int>(), got.at("total_samples").get<int>()) + tally};
}

}  // namespace

int main() {
    const std::vector<Criterion> criteria = {
        {1, "grammar round-trip and fuzz", 10.0, grammar_round_trip},
        {2, "reward matches exhaustive oracle", 60.0, reward_oracle},
        {3, "IoU fixed points", 0.0, iou_fixed_points},
        {4, "advantage normalization invariants", 0.0, advantage_invariants},
        {5, "analytic gradient vs finite differences", 30.0, gradient_check},
        {6, "KL properties", 0.0, kl_properties},
        {7, "desk-scale learning", 300.0, desk_scale_learning},
        {8, "image-reward ablation direction", 0.0, image_reward_ablation},
        {9, "Acc@0.5 threshold is strict", 0.0, strict_threshold},
        {10, "pipeline integrity", 0.0, pipeline_integrity},
        {11, "scoring fixture via CLI", 0.0, scoring_fixture},
    };
    int failures = 0;
    for (const auto& c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.check();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::string timing = fmt("%.2fs", secs);
        if (c.time_limit_s > 0.0) {
            timing += fmt(" (limit %.0fs)", c.time_limit_s);
            if (secs >= c.time_limit_s) o.pass = false;
        }
        failures += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << " [" << c.number << "] " << c.name << ": " << o.detail << " [" << timing
                  << "]" << std::endl;
    }
    std::cout << (failures == 0 ? "ALL PASS" : std::to_string(failures) + " FAILED") << std::endl;
    return failures == 0 ? 0 : 1;
}
