#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <filesystem>
#include <sstream>

#include "mirg/evaluation.hpp"
#include "mirg/grpo.hpp"
#include "mirg/json_io.hpp"
#include "mirg/pipeline.hpp"
#include "mirg/reward.hpp"
#include "mirg/synthetic_env.hpp"
#include "mirg/training.hpp"
#include "mirg/trajectory.hpp"

namespace py = pybind11;
using mirg::json;

// Structured values cross the boundary as JSON text; the Python package
// decodes them.
namespace {

mirg::GroundTruth gt_from(const std::string& text) { return json::parse(text).get<mirg::GroundTruth>(); }

mirg::BoundingBox box_from(const std::vector<double>& v) {
    if (v.size() != 4) throw py::value_error("box needs four coordinates");
    return {v[0], v[1], v[2], v[3]};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Multi-image grounding trajectories, rewards and GRPO training.";

    static py::exception<mirg::ParseError> parse_error(m, "ParseError", PyExc_ValueError);
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const mirg::ParseError& e) {
            py::object err = py::reinterpret_borrow<py::object>(parse_error.ptr())(e.what());
            err.attr("kind") = std::string(mirg::to_string(e.kind()));
            err.attr("offset") = e.offset();
            PyErr_SetObject(parse_error.ptr(), err.ptr());
        } catch (const json::exception& e) {
            PyErr_SetString(PyExc_ValueError, e.what());
        } catch (const mirg::PipelineError& e) {
            PyErr_SetString(PyExc_RuntimeError, e.what());
        }
    });

    m.def("parse_trajectory", [](const std::string& text) { return mirg::trajectory_to_json(mirg::parse_trajectory(text)).dump(); },
          py::arg("text"));
    m.def("canonicalize", [](const std::string& text) { return mirg::serialize_trajectory(mirg::parse_trajectory(text)); },
          py::arg("text"));
    m.def("check_format", [](const std::string& text) { return mirg::check_format(text); }, py::arg("text"));
    m.def("extract_groundings",
          [](const std::string& text) { return json(mirg::extract_groundings(mirg::parse_trajectory(text))).dump(); },
          py::arg("text"));
    m.def("iou", [](const std::vector<double>& a, const std::vector<double>& b) { return mirg::iou(box_from(a), box_from(b)); },
          py::arg("a"), py::arg("b"));
    m.def("score_response",
          [](const std::string& text, const std::string& gt) { return json(mirg::score_response(text, gt_from(gt))).dump(); },
          py::arg("text"), py::arg("ground_truth"));
    m.def("is_correct", [](const std::string& text, const std::string& gt) { return mirg::is_correct(text, gt_from(gt)); },
          py::arg("text"), py::arg("ground_truth"));
    m.def("evaluate",
          [](const std::string& jsonl) {
              std::istringstream in(jsonl);
              const auto samples = mirg::read_eval_samples(in);
              return json(mirg::evaluate(samples)).dump();
          },
          py::arg("jsonl"));
    m.def("normalize_advantages",
          [](const std::vector<double>& rewards, double eps) { return mirg::normalize_advantages(rewards, eps); },
          py::arg("rewards"), py::arg("epsilon") = 1e-8);
    m.def("generate_task",
          [](std::uint64_t seed) {
              const auto task = mirg::generate_task(seed, mirg::EnvConfig{});
              json j = mirg::task_to_eval_json(task, "task-" + std::to_string(seed));
              j["query"] = task.query;
              return j.dump();
          },
          py::arg("seed"));
    m.def("train",
          [](int iterations, std::uint64_t seed, bool image_reward, int eval_tasks) {
              mirg::GrpoConfig cfg;
              cfg.iterations = iterations;
              cfg.seed = seed;
              mirg::TrainOptions opts;
              opts.image_reward = image_reward;
              opts.eval_tasks = eval_tasks;
              mirg::TrainingReport r;
              {
                  py::gil_scoped_release release;
                  r = mirg::train_loop(cfg, mirg::EnvConfig{}, opts);
              }
              const auto params = r.policy.parameters();
              return json{{"initial", r.initial},
                          {"final", r.final},
                          {"iterations", r.iterations},
                          {"parameters", std::vector<double>(params.begin(), params.end())}}
                  .dump();
          },
          py::arg("iterations") = 300, py::arg("seed") = 7, py::arg("image_reward") = true, py::arg("eval_tasks") = 200);
    m.def("run_pipeline_mock",
          [](const std::string& input, const std::string& output, const std::string& rejects, int max_in_flight) {
              mirg::DeterministicMock mock;
              mirg::PipelineConfig cfg;
              cfg.max_in_flight = max_in_flight;
              mirg::PipelineReport r;
              {
                  py::gil_scoped_release release;
                  r = mirg::run_pipeline(input, output, rejects, {&mock, &mock, &mock}, cfg);
              }
              return json(r).dump();
          },
          py::arg("input"), py::arg("output"), py::arg("rejects"), py::arg("max_in_flight") = 4);
}
