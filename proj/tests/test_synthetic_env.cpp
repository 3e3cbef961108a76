#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>

#include "mirg/synthetic_env.hpp"
#include "mirg/training.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace mirg;

namespace {

bool has(const SceneImage& img, Color c, Shape s) {
    for (const auto& o : img.objects) {
        if (o.color == c && o.shape == s) return true;
    }
    return false;
}

// Every (image, object) pair the query describes, read straight off the QuerySpec.
std::vector<PositionId> query_targets(const TaskSample& t) {
    const QuerySpec& q = t.spec;
    std::vector<PositionId> out;
    for (std::size_t i = 0; i < t.images.size(); ++i) {
        const int n = static_cast<int>(i) + 1;
        const SceneImage& img = t.images[i];
        for (const auto& o : img.objects) {
            bool hit = false;
            switch (q.kind) {
                case TaskKind::Referential:
                    hit = o.color == q.color && o.shape == q.shape;
                    break;
                case TaskKind::Tracking:
                    hit = n != q.anchor_image && o.color == q.color && o.shape == q.shape;
                    break;
                case TaskKind::Difference:
                    hit = n == q.anchor_image && !has(t.images[q.other_image - 1], o.color, o.shape);
                    break;
                case TaskKind::Similarity:
                    hit = n == q.anchor_image && has(t.images[q.other_image - 1], o.color, o.shape);
                    break;
                case TaskKind::Reasoning: {
                    bool context = false;
                    for (const auto& other : img.objects) context = context || other.shape == q.context_shape;
                    hit = context && o.color == q.color && o.shape == q.shape;
                    break;
                }
            }
            if (hit) out.push_back({n, o.object_index});
        }
    }
    return out;
}

bool same_action(const ActionRecord& a, const ActionRecord& b) {
    return a.chosen_image == b.chosen_image && a.chosen_cell == b.chosen_cell && a.box == b.box;
}

}  // namespace

TEST(GenerateTask, Deterministic) {
    EnvConfig env;
    env.min_images = env.max_images = 2;
    const auto a = generate_task(1, env), b = generate_task(1, env);
    EXPECT_EQ(a.query, b.query);
    EXPECT_EQ(a.images.size(), 2u);
    ASSERT_EQ(a.ground_truth.objects.size(), b.ground_truth.objects.size());
    EXPECT_EQ(a.ground_truth.objects[0], b.ground_truth.objects[0]);
    for (std::size_t i = 0; i < a.images.size(); ++i) {
        ASSERT_EQ(a.images[i].objects.size(), 3u);
        for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(a.images[i].objects[k].box, b.images[i].objects[k].box);
    }
}

TEST(GenerateTask, NoObjectsExhausts) {
    EnvConfig env;
    env.objects_per_image = 0;
    EXPECT_THROW(generate_task(1, env), GenerationExhausted);
}

TEST(GenerateTask, GoldIsTheUniqueAnswer) {
    const EnvConfig env;
    std::map<TaskKind, int> kinds;
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        const auto t = generate_task(seed, env);
        ASSERT_NO_THROW(t.ground_truth.validate());
        ASSERT_GE(t.images.size(), 2u);
        ASSERT_LE(t.images.size(), 4u);
        ASSERT_EQ(t.ground_truth.image_count, static_cast<int>(t.images.size()));
        ASSERT_EQ(t.ground_truth.objects.size(), 1u);
        const auto targets = query_targets(t);
        ASSERT_EQ(targets.size(), 1u) << "seed " << seed;
        const auto& g = t.ground_truth.objects[0];
        EXPECT_EQ(targets[0], g.position);
        const auto& img = t.images[g.position.image_index - 1];
        EXPECT_EQ(img.objects[g.position.object_index - 1].box, g.box);
        EXPECT_EQ(t.query, render_query(t.spec));
        if (t.spec.kind == TaskKind::Tracking) {
            EXPECT_TRUE(has(t.images[t.spec.anchor_image - 1], *t.spec.color, *t.spec.shape)) << "seed " << seed;
        }
        for (std::size_t i = 0; i < t.images.size(); ++i) {
            const auto& im = t.images[i];
            for (std::size_t k = 0; k < im.objects.size(); ++k) {
                const auto& b = im.objects[k].box;
                EXPECT_EQ(im.objects[k].object_index, static_cast<int>(k) + 1);
                EXPECT_TRUE(b.x1 >= 0 && b.y1 >= 0 && b.x2 <= im.width && b.y2 <= im.height);
            }
        }
        ++kinds[t.task_kind];
    }
    EXPECT_EQ(kinds.size(), 5u);
}

TEST(EnvConfig, Validation) {
    EnvConfig c;
    c.min_images = 1;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = EnvConfig{};
    c.max_images = 1;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = EnvConfig{};
    c.grid_size = 0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Policy, UniformLogprob) {
    EnvConfig env;
    env.min_images = env.max_images = 2;
    env.grid_size = 4;
    const auto task = generate_task(5, env);
    const ToyPolicy uniform(4);
    EXPECT_NEAR(policy_logprob(uniform, task, make_action(task, 4, 2, 7)), -std::log(32.0), 1e-12);
}

TEST(Policy, InvalidActions) {
    const auto task = generate_task(5, EnvConfig{});
    const ToyPolicy p(8);
    ActionRecord bad = make_action(task, 8, 1, 0);
    bad.chosen_image = static_cast<int>(task.images.size()) + 1;
    EXPECT_THROW(policy_logprob(p, task, bad), InvalidAction);
    bad = make_action(task, 8, 1, 0);
    bad.chosen_cell = 64;
    EXPECT_THROW(policy_logprob(p, task, bad), InvalidAction);
    bad = make_action(task, 8, 1, 3);
    bad.box.x1 += 1.0;
    EXPECT_THROW(policy_logprob(p, task, bad), InvalidAction);
    EXPECT_THROW(make_action(task, 8, 0, 0), InvalidAction);
}

TEST(Policy, DistributionMatchesOracleAndSumsToOne) {
    std::mt19937_64 rng(41);
    for (int i = 0; i < 200; ++i) {
        const int grid = std::uniform_int_distribution<int>(2, 8)(rng);
        EnvConfig env;
        env.grid_size = grid;
        const auto task = generate_task(rng(), env);
        const auto policy = support::random_policy(rng, grid, 2.0);
        const auto f = extract_features(task, grid);
        const auto dist = action_distribution(policy, f);
        const auto want = oracle::joint_probabilities({policy.parameters().begin(), policy.parameters().end()}, f);
        double total = 0.0;
        std::size_t a = 0;
        for (int n = 1; n <= static_cast<int>(task.images.size()); ++n) {
            for (int c = 0; c < grid * grid; ++c, ++a) {
                const double lp = policy_logprob(policy, task, make_action(task, grid, n, c));
                EXPECT_TRUE(std::isfinite(lp));
                EXPECT_NEAR(lp, dist.logprob(n, c), 1e-12);
                EXPECT_NEAR(std::exp(lp), want[a], 1e-12);
                total += std::exp(lp);
            }
        }
        EXPECT_NEAR(total, 1.0, 1e-9);
    }
}

TEST(Policy, SamplingIsDeterministicAndReportsLogprob) {
    const auto task = generate_task(9, EnvConfig{});
    std::mt19937_64 seed_rng(42);
    const auto policy = support::random_policy(seed_rng, 8, 1.0);
    std::mt19937_64 r1(3), r2(3);
    for (int i = 0; i < 200; ++i) {
        const auto [a, lp] = policy_sample(policy, task, r1);
        const auto [b, lq] = policy_sample(policy, task, r2);
        EXPECT_TRUE(same_action(a, b));
        EXPECT_EQ(lp, lq);
        EXPECT_EQ(lp, policy_logprob(policy, task, a));
    }
}

TEST(Policy, NearOneHotSamplesDominantAction) {
    EnvConfig env;
    env.grid_size = 4;
    const auto task = generate_task(11, env);
    ActionDistribution d;
    d.cells_per_image = 16;
    std::vector<double> images(task.images.size(), 0.0), cells(16, 0.0);
    images[1] = 25.0;
    cells[6] = 25.0;
    d.image_logp = log_softmax(images);
    for (std::size_t n = 0; n < images.size(); ++n) {
        for (double v : log_softmax(cells)) d.cell_logp.push_back(v);
    }
    std::mt19937_64 rng(43);
    int dominant = 0;
    for (int i = 0; i < 1000; ++i) {
        const auto a = sample_action(d, task, 4, rng);
        dominant += a.chosen_image == 2 && a.chosen_cell == 6;
    }
    EXPECT_GE(dominant, 999);
}

TEST(Policy, EmpiricalFrequenciesMatchExactProbabilities) {
    EnvConfig env;
    env.grid_size = 2;
    const auto task = generate_task(12, env);
    std::mt19937_64 prng(44);
    const auto policy = support::random_policy(prng, 2, 1.0);
    const auto f = extract_features(task, 2);
    const auto exact = oracle::joint_probabilities({policy.parameters().begin(), policy.parameters().end()}, f);
    std::vector<double> counts(exact.size(), 0.0);
    std::mt19937_64 rng(45);
    const int draws = 100000;
    for (int i = 0; i < draws; ++i) {
        const auto [a, lp] = policy_sample(policy, task, rng);
        counts[static_cast<std::size_t>((a.chosen_image - 1) * 4 + a.chosen_cell)] += 1.0;
    }
    double tv = 0.0;
    for (std::size_t k = 0; k < exact.size(); ++k) tv += std::abs(counts[k] / draws - exact[k]);
    EXPECT_LT(0.5 * tv, 0.01);
}

TEST(LogSoftmax, StableForLargeLogits) {
    const auto l = log_softmax(std::vector<double>{1000.0, 1000.0});
    EXPECT_NEAR(l[0], -std::log(2.0), 1e-12);
    EXPECT_NEAR(l[1], -std::log(2.0), 1e-12);
}

TEST(RenderResponse, ParsesAndRecoversBox) {
    std::mt19937_64 rng(46);
    for (int i = 0; i < 300; ++i) {
        EnvConfig env;
        env.grid_size = std::uniform_int_distribution<int>(2, 9)(rng);
        const auto task = generate_task(rng(), env);
        const int n = std::uniform_int_distribution<int>(1, static_cast<int>(task.images.size()))(rng);
        const int c = std::uniform_int_distribution<int>(0, env.grid_size * env.grid_size - 1)(rng);
        const auto action = make_action(task, env.grid_size, n, c);
        const auto text = render_response(action, task);
        EXPECT_EQ(format_reward(text), 1);
        const auto g = extract_groundings(parse_trajectory(text));
        ASSERT_EQ(g.size(), 1u);
        EXPECT_EQ(g[0].position, (PositionId{n, 1}));
        EXPECT_EQ(g[0].box, action.box);
        EXPECT_NE(text.find("Image-" + std::to_string(n)), std::string::npos);
        EXPECT_EQ(format_reward(render_response(action, task, RenderMode::DropAnswerClose)), 0);
    }
}

TEST(TrainLoop, ZeroIterationsReportsInitialPolicy) {
    GrpoConfig cfg;
    cfg.iterations = 0;
    TrainOptions opts;
    opts.eval_tasks = 40;
    const auto r = train_loop(cfg, EnvConfig{}, opts);
    EXPECT_TRUE(r.iterations.empty());
    EXPECT_EQ(r.initial.accuracy, r.final.accuracy);
    EXPECT_EQ(r.initial.mean_reward, r.final.mean_reward);
    EXPECT_EQ(r.policy, ToyPolicy(8));
}

TEST(TrainLoop, WithoutKlImprovesHeldOutAccuracy) {
    GrpoConfig cfg;
    cfg.kl_coefficient = 0.0;
    const auto r = train_loop(cfg, EnvConfig{});
    EXPECT_EQ(r.iterations.size(), 300u);
    EXPECT_GT(r.final.accuracy, r.initial.accuracy);
}

TEST(TrainLoop, BitIdenticalAcrossRuns) {
    GrpoConfig cfg;
    cfg.iterations = 60;
    TrainOptions opts;
    opts.eval_tasks = 30;
    int observed = 0;
    const auto a = train_loop(cfg, EnvConfig{}, opts, [&](const IterationMetrics&) { ++observed; });
    const auto b = train_loop(cfg, EnvConfig{}, opts);
    EXPECT_EQ(observed, 60);
    EXPECT_EQ(a.policy, b.policy);
    EXPECT_EQ(a.final.accuracy, b.final.accuracy);
    for (std::size_t i = 0; i < a.iterations.size(); ++i) {
        EXPECT_EQ(a.iterations[i].objective, b.iterations[i].objective);
        EXPECT_EQ(a.iterations[i].kl, b.iterations[i].kl);
        EXPECT_EQ(a.iterations[i].iteration, static_cast<int>(i) + 1);
    }
}

TEST(TrainLoop, SeedsStayDisjointFromHeldOut) {
    for (std::uint64_t s : {0ull, 7ull, ~0ull}) {
        for (int it = 1; it <= 50; ++it) EXPECT_GE(training_task_seed(s, it), std::uint64_t{1} << 63);
    }
}

TEST(HeldOut, UniformPolicyMatchesDirectEnumeration) {
    const EnvConfig env;
    const HeldOutSet set(500, 5, env);
    const auto e = set.evaluate(ToyPolicy(8));
    double acc = 0.0;
    for (const auto& t : set.tasks()) {
        double p = 0.0;
        const double w = 1.0 / (static_cast<double>(t.images.size()) * 64.0);
        for (int n = 1; n <= static_cast<int>(t.images.size()); ++n) {
            for (int c = 0; c < 64; ++c) {
                const auto a = make_action(t, 8, n, c);
                const auto& g = t.ground_truth.objects[0];
                if (n == g.position.image_index && oracle::box_iou(a.box, g.box) > 0.5) p += w;
            }
        }
        acc += p;
    }
    EXPECT_NEAR(e.accuracy, acc / 5.0, 1e-12);
}
