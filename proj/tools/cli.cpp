#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "mirg/config.hpp"
#include "mirg/evaluation.hpp"
#include "mirg/json_io.hpp"
#include "mirg/pipeline.hpp"
#include "mirg/policy.hpp"
#include "mirg/reward.hpp"
#include "mirg/training.hpp"

namespace mirg::cli {

namespace {

namespace fs = std::filesystem;

// Usage and config problems; mapped to exit code 2.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

void require_file(const fs::path& p, const std::string& what) {
    std::error_code ec;
    if (!fs::exists(p, ec) || fs::is_directory(p, ec)) throw UsageError(what + " not found: " + p.string());
}

void require_parent(const fs::path& p, const std::string& what) {
    const fs::path parent = p.parent_path();
    std::error_code ec;
    if (!parent.empty() && !fs::is_directory(parent, ec)) {
        throw UsageError(what + " directory does not exist: " + parent.string());
    }
}

std::ofstream open_out(const fs::path& p) {
    std::ofstream f(p, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + p.string());
    return f;
}

RunConfig base_config(const std::optional<std::string>& config_path) {
    if (!config_path) return RunConfig{};
    require_file(*config_path, "config file");
    return load_run_config(*config_path);
}

template <class T>
void override_with(T& target, const std::optional<T>& value) {
    if (value) target = *value;
}

// ---- build-data ------------------------------------------------------------

struct BuildDataArgs {
    std::optional<std::string> config;
    std::optional<std::string> input;
    std::optional<std::string> output;
    std::optional<std::string> rejects;
    std::optional<std::string> checkpoint_dir;
    std::optional<int> max_in_flight;
    std::optional<std::string> annotator;
    std::optional<std::string> url;
    bool allow_rejects = false;
    bool skip_stage1 = false;
    bool lenient_envelope = false;
    int fault_stage = 0;
    std::string fault_kind = "transport";
    std::vector<std::string> fault_ids;
};

FaultKind parse_fault_kind(const std::string& s) {
    static const std::map<std::string, FaultKind> kinds{{"transport", FaultKind::Transport},
                                                        {"plain-text", FaultKind::PlainText},
                                                        {"malformed", FaultKind::Malformed},
                                                        {"out-of-range", FaultKind::OutOfRange},
                                                        {"drop-mention", FaultKind::DropMention}};
    const auto it = kinds.find(s);
    if (it == kinds.end()) throw UsageError("unknown fault kind " + s);
    return it->second;
}

int cmd_build_data(const BuildDataArgs& a, std::ostream& out, std::ostream& err) {
    RunConfig c = base_config(a.config);
    if (a.input) c.paths.input = *a.input;
    if (a.output) c.paths.output = *a.output;
    if (a.rejects) c.paths.rejects = *a.rejects;
    if (a.checkpoint_dir) c.pipeline.pipeline.checkpoint_dir = *a.checkpoint_dir;
    override_with(c.pipeline.pipeline.max_in_flight, a.max_in_flight);
    if (a.skip_stage1) c.pipeline.pipeline.skip_stage1 = true;
    if (a.lenient_envelope) c.pipeline.pipeline.strict_envelope = false;
    if (a.annotator) c.pipeline.annotator.kind = *a.annotator == "remote" ? AnnotatorKind::Remote : AnnotatorKind::Mock;
    if (a.url) c.pipeline.annotator.url = *a.url;
    validate_run_config(c);

    if (!c.paths.input) throw UsageError("build-data needs an input path");
    if (!c.paths.output) throw UsageError("build-data needs an output path");
    require_file(*c.paths.input, "input");
    require_parent(*c.paths.output, "output");
    const fs::path rejects = c.paths.rejects.value_or(fs::path(*c.paths.output).replace_extension(".rejects.jsonl"));
    require_parent(rejects, "rejects");

    FaultPlan faults;
    if (a.fault_stage != 0) {
        if (c.pipeline.annotator.kind != AnnotatorKind::Mock) throw UsageError("fault injection needs the mock annotator");
        faults.stage = a.fault_stage;
        faults.kind = parse_fault_kind(a.fault_kind);
        faults.sample_ids.insert(a.fault_ids.begin(), a.fault_ids.end());
    }
    const auto client = make_annotator(c.pipeline.annotator, faults);
    const StageClients clients{client.get(), client.get(), client.get()};

    const PipelineReport report = run_pipeline(*c.paths.input, *c.paths.output, rejects, clients, c.pipeline.pipeline);
    out << json(report).dump() << '\n';
    if (report.revalidation_failures > 0) {
        err << "error: " << report.revalidation_failures << " emitted samples failed revalidation\n";
        return kExitFailure;
    }
    if (report.rejected > 0) {
        err << report.rejected << " samples rejected; see " << rejects.string() << '\n';
        if (!a.allow_rejects) return kExitFailure;
    }
    return kExitOk;
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
    std::optional<std::string> config;
    std::optional<int> iterations;
    std::optional<std::uint64_t> seed;
    std::optional<int> group_size;
    std::optional<double> kl_coefficient;
    std::optional<double> learning_rate;
    std::optional<int> eval_tasks;
    std::optional<std::uint64_t> eval_seed;
    std::optional<std::string> metrics;
    std::optional<std::string> params_out;
    std::optional<std::string> export_eval_set;
    bool no_image_reward = false;
};

ActionRecord greedy_action(const ToyPolicy& policy, const TaskSample& task, int grid_size) {
    const ActionDistribution dist = action_distribution(policy, extract_features(task, grid_size));
    int best_image = 1;
    int best_cell = 0;
    double best = -INFINITY;
    for (std::size_t n = 0; n < dist.image_count(); ++n) {
        for (std::size_t c = 0; c < dist.cells_per_image; ++c) {
            const double lp = dist.image_logp[n] + dist.cell(n, c);
            if (lp > best) {
                best = lp;
                best_image = static_cast<int>(n) + 1;
                best_cell = static_cast<int>(c);
            }
        }
    }
    return make_action(task, grid_size, best_image, best_cell);
}

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
    RunConfig c = base_config(a.config);
    override_with(c.grpo.iterations, a.iterations);
    override_with(c.grpo.seed, a.seed);
    override_with(c.grpo.group_size, a.group_size);
    override_with(c.grpo.kl_coefficient, a.kl_coefficient);
    override_with(c.grpo.learning_rate, a.learning_rate);
    override_with(c.train.eval_tasks, a.eval_tasks);
    override_with(c.train.eval_seed, a.eval_seed);
    if (a.no_image_reward) c.train.image_reward = false;
    if (a.metrics) c.paths.metrics = *a.metrics;
    if (a.params_out) c.paths.params_out = *a.params_out;
    validate_run_config(c);
    if (c.paths.metrics) require_parent(*c.paths.metrics, "metrics");
    if (c.paths.params_out) require_parent(*c.paths.params_out, "params");
    if (a.export_eval_set) require_parent(*a.export_eval_set, "eval set");

    const TrainingReport report = train_loop(c.grpo, c.env, c.train);

    if (c.paths.metrics) {
        std::ofstream f = open_out(*c.paths.metrics);
        const auto eval_line = [&](int iteration, const PolicyEvaluation& e) {
            json j = e;
            j["type"] = "eval";
            j["iteration"] = iteration;
            f << j.dump() << '\n';
        };
        eval_line(0, report.initial);
        for (const auto& m : report.iterations) {
            json j = m;
            j["type"] = "iteration";
            f << j.dump() << '\n';
        }
        if (!report.iterations.empty()) eval_line(c.grpo.iterations, report.final);
    }
    if (c.paths.params_out) {
        const ToyPolicy& p = report.policy;
        const auto vec = [](std::span<const double> s) { return std::vector<double>(s.begin(), s.end()); };
        open_out(*c.paths.params_out) << json{{"grid_size", p.grid_size()},
                                              {"image_weights", vec(p.image_weights())},
                                              {"cell_weights", vec(p.cell_weights())}}
                                             .dump()
                                      << '\n';
    }
    if (a.export_eval_set) {
        std::ofstream f = open_out(*a.export_eval_set);
        for (int i = 0; i < c.train.eval_tasks; ++i) {
            const std::uint64_t seed = c.train.eval_seed + static_cast<std::uint64_t>(i);
            const TaskSample task = generate_task(seed, c.env);
            const std::string prediction = render_response(greedy_action(report.policy, task, c.env.grid_size), task);
            f << task_to_eval_json(task, "eval-" + std::to_string(seed), prediction).dump() << '\n';
        }
    }
    err << "accuracy " << report.initial.accuracy << " -> " << report.final.accuracy << " over "
        << c.train.eval_tasks << " held-out tasks\n";
    out << json{{"image_reward", c.train.image_reward},
                {"iterations", c.grpo.iterations},
                {"seed", c.grpo.seed},
                {"initial", report.initial},
                {"final", report.final}}
               .dump()
        << '\n';
    return kExitOk;
}

// ---- score -----------------------------------------------------------------

struct ScoreArgs {
    std::optional<std::string> samples;
    std::optional<std::string> gt;
    std::optional<std::string> predictions;
};

std::vector<EvalSample> read_file_samples(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw UsageError("cannot open " + p.string());
    try {
        return read_eval_samples(in);
    } catch (const JsonlError& e) {
        throw UsageError(p.string() + ": " + e.what());
    }
}

// Joins a ground-truth file ({sample_id, task_kind, ground_truth}) with a
// predictions file ({sample_id, prediction}). Missing predictions score as
// empty responses.
std::vector<EvalSample> read_split_samples(const fs::path& gt_path, const fs::path& pred_path) {
    const auto each_line = [](const fs::path& p, auto&& fn) {
        std::ifstream in(p);
        if (!in) throw UsageError("cannot open " + p.string());
        std::string line;
        std::size_t number = 0;
        while (std::getline(in, line)) {
            ++number;
            if (std::all_of(line.begin(), line.end(), [](unsigned char ch) { return std::isspace(ch); })) continue;
            try {
                fn(json::parse(line));
            } catch (const std::exception& e) {
                throw UsageError(p.string() + ": line " + std::to_string(number) + ": " + e.what());
            }
        }
    };
    std::vector<EvalSample> samples;
    std::map<std::string, std::size_t> index;
    each_line(gt_path, [&](const json& j) {
        EvalSample s;
        s.sample_id = j.at("sample_id").get<std::string>();
        s.task_kind = j.at("task_kind").get<std::string>();
        s.ground_truth = j.at("ground_truth").get<GroundTruth>();
        if (!index.emplace(s.sample_id, samples.size()).second) throw std::invalid_argument("duplicate sample_id " + s.sample_id);
        samples.push_back(std::move(s));
    });
    std::set<std::string> seen;
    each_line(pred_path, [&](const json& j) {
        const auto id = j.at("sample_id").get<std::string>();
        const auto it = index.find(id);
        if (it == index.end()) throw std::invalid_argument("prediction for unknown sample_id " + id);
        if (!seen.insert(id).second) throw std::invalid_argument("duplicate prediction for " + id);
        samples[it->second].prediction = j.at("prediction").get<std::string>();
    });
    return samples;
}

int cmd_score(const ScoreArgs& a, std::ostream& out, std::ostream&) {
    const bool combined = a.samples.has_value();
    const bool split = a.gt.has_value() || a.predictions.has_value();
    if (combined == split) throw UsageError("score takes either one combined file or both --gt and --predictions");
    std::vector<EvalSample> samples;
    if (combined) {
        require_file(*a.samples, "samples file");
        samples = read_file_samples(*a.samples);
    } else {
        if (!a.gt || !a.predictions) throw UsageError("--gt and --predictions go together");
        require_file(*a.gt, "ground-truth file");
        require_file(*a.predictions, "predictions file");
        samples = read_split_samples(*a.gt, *a.predictions);
    }
    EvalReport report;
    try {
        report = evaluate(samples);
    } catch (const EmptyInput& e) {
        throw UsageError(std::string("EmptyInput: ") + e.what());
    }
    out << json(report).dump() << '\n';
    return kExitOk;
}

// ---- inspect ---------------------------------------------------------------

struct InspectArgs {
    std::optional<std::string> text;
    std::optional<std::string> file;
    std::optional<std::string> gt;
};

std::string box_text(const BoundingBox& b) {
    return "(" + format_coordinate(b.x1) + "," + format_coordinate(b.y1) + "),(" + format_coordinate(b.x2) + "," +
           format_coordinate(b.y2) + ")";
}

std::string id_text(PositionId id) {
    return "[" + std::to_string(id.image_index) + "-" + std::to_string(id.object_index) + "]";
}

void print_tree(const Trajectory& t, std::ostream& err) {
    const auto block = [&](const char* name, const Block& b) {
        err << name << ":\n";
        for (const auto& seg : b.segments) {
            if (const auto* text = std::get_if<std::string>(&seg)) {
                err << "  text " << json(*text).dump() << '\n';
            } else if (const auto* full = std::get_if<GroundedObject>(&std::get<ObjectMention>(seg))) {
                err << "  object " << id_text(full->position) << ' ' << json(full->description).dump() << ' '
                    << box_text(full->box) << '\n';
            } else {
                err << "  ref " << id_text(std::get<BackReference>(std::get<ObjectMention>(seg)).target) << '\n';
            }
        }
    };
    block("think", t.think);
    block("answer", t.answer);
}

int cmd_inspect(const InspectArgs& a, std::ostream& out, std::ostream& err) {
    if (a.text.has_value() == a.file.has_value()) throw UsageError("inspect takes either a trajectory string or --file");
    std::string text;
    if (a.file) {
        require_file(*a.file, "trajectory file");
        std::ifstream in(*a.file);
        std::ostringstream ss;
        ss << in.rdbuf();
        text = ss.str();
    } else {
        text = *a.text;
    }
    std::optional<GroundTruth> gt;
    if (a.gt) {
        require_file(*a.gt, "ground-truth file");
        std::ifstream in(*a.gt);
        try {
            gt = json::parse(in).get<GroundTruth>();
        } catch (const std::exception& e) {
            throw UsageError(*a.gt + ": " + e.what());
        }
    }

    Trajectory t;
    try {
        t = parse_trajectory(text);
    } catch (const ParseError& e) {
        err << "parse error: " << to_string(e.kind()) << " at byte " << e.offset() << ": " << e.what() << '\n';
        out << json{{"error", std::string(to_string(e.kind()))}, {"offset", e.offset()}, {"detail", e.what()}}.dump()
            << '\n';
        return kExitFailure;
    }

    print_tree(t, err);
    const auto groundings = extract_groundings(t);
    err << "groundings:\n";
    for (const auto& g : groundings) {
        err << "  " << id_text(g.position) << ' ' << json(g.description).dump() << ' ' << box_text(g.box) << '\n';
    }
    json result{{"format", format_reward(text)}, {"tree", trajectory_to_json(t)}, {"groundings", groundings}};
    if (gt) {
        const RewardBreakdown r = score_response(text, *gt);
        err << "reward: r_fmt=" << r.format << " r_img=" << r.image << " r_obj=" << r.object << " total=" << r.total
            << '\n';
        result["reward"] = r;
        result["match"] = match_objects(groundings, gt->objects);
        result["correct"] = is_correct(text, *gt);
    }
    out << result.dump() << '\n';
    return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Multi-image grounding trajectories: data building, GRPO training, scoring and inspection", "mirg"};
    app.require_subcommand(1);

    BuildDataArgs bd;
    auto* build = app.add_subcommand("build-data", "Run the three-stage annotation pipeline over a RawSample JSONL file");
    build->add_option("--config", bd.config, "JSON run config; flags override its values");
    build->add_option("--input", bd.input, "Input JSONL of raw samples");
    build->add_option("--output", bd.output, "Output JSONL of final samples");
    build->add_option("--rejects", bd.rejects, "Rejects JSONL (default: <output>.rejects.jsonl)");
    build->add_option("--checkpoint-dir", bd.checkpoint_dir, "Directory for per-stage checkpoints");
    build->add_option("--max-in-flight", bd.max_in_flight, "Concurrent annotator requests")->check(CLI::PositiveNumber);
    build->add_option("--annotator", bd.annotator, "Annotator client")->check(CLI::IsMember({"mock", "remote"}));
    build->add_option("--url", bd.url, "Remote annotator endpoint (http://host:port/path)");
    build->add_flag("--allow-rejects", bd.allow_rejects, "Exit 0 even when samples are rejected");
    build->add_flag("--skip-stage1", bd.skip_stage1, "Answer-only samples: build the reasoning from gold objects");
    build->add_flag("--lenient-envelope", bd.lenient_envelope, "Wrap stage-1 replies lacking the envelope instead of rejecting");
    build->add_option("--fault-stage", bd.fault_stage, "Mock only: stage at which to inject a fault")->check(CLI::Range(1, 3));
    build->add_option("--fault-kind", bd.fault_kind, "Mock only: transport, plain-text, malformed, out-of-range, drop-mention");
    build->add_option("--fault-ids", bd.fault_ids, "Mock only: sample ids that receive the fault")->delimiter(',');

    TrainArgs tr;
    auto* train = app.add_subcommand("train", "Train the toy policy with GRPO on synthetic grounding tasks");
    train->add_option("--config", tr.config, "JSON run config; flags override its values");
    train->add_option("--iterations", tr.iterations, "Training iterations")->check(CLI::NonNegativeNumber);
    train->add_option("--seed", tr.seed, "Run seed");
    train->add_option("--group-size", tr.group_size, "Responses sampled per query");
    train->add_option("--kl-coefficient", tr.kl_coefficient, "Weight of the KL penalty");
    train->add_option("--learning-rate", tr.learning_rate, "Gradient ascent step size");
    train->add_option("--eval-tasks", tr.eval_tasks, "Held-out task count");
    train->add_option("--eval-seed", tr.eval_seed, "Seed of the first held-out task");
    train->add_option("--metrics", tr.metrics, "Write per-iteration metrics JSONL here");
    train->add_option("--params-out", tr.params_out, "Write final policy parameters (JSON) here");
    train->add_option("--export-eval-set", tr.export_eval_set, "Write held-out tasks with greedy predictions as score input");
    train->add_flag("--no-image-reward", tr.no_image_reward, "Train without the image-index reward");

    ScoreArgs sc;
    auto* score = app.add_subcommand("score", "Compute Acc@0.5 per task kind");
    score->add_option("samples", sc.samples, "JSONL of {sample_id, task_kind, prediction, ground_truth}");
    score->add_option("--gt", sc.gt, "JSONL of {sample_id, task_kind, ground_truth}");
    score->add_option("--predictions", sc.predictions, "JSONL of {sample_id, prediction}");

    InspectArgs in;
    auto* inspect = app.add_subcommand("inspect", "Parse a trajectory and show its tree, groundings and rewards");
    inspect->add_option("trajectory", in.text, "Trajectory text");
    inspect->add_option("--file", in.file, "Read the trajectory from a file");
    inspect->add_option("--gt", in.gt, "Ground truth JSON {image_count, objects} to score against");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (build->parsed()) return cmd_build_data(bd, out, err);
        if (train->parsed()) return cmd_train(tr, out, err);
        if (score->parsed()) return cmd_score(sc, out, err);
        return cmd_inspect(in, out, err);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitFailure;
    }
}

}  // namespace mirg::cli
