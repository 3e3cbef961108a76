#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mirg/reward.hpp"
#include "mirg/trajectory.hpp"

namespace mirg {

enum class Shape { Circle, Square, Triangle };
enum class Color { Red, Blue, Green, Yellow };
enum class TaskKind { Difference, Similarity, Tracking, Referential, Reasoning };

inline constexpr int kShapeCount = 3;
inline constexpr int kColorCount = 4;
inline constexpr int kTaskKindCount = 5;

std::string_view to_string(Shape shape);
std::string_view to_string(Color color);
std::string_view to_string(TaskKind kind);
std::optional<TaskKind> task_kind_from_string(std::string_view name);

struct SceneObject {
    Shape shape;
    Color color;
    BoundingBox box;
    int object_index;  // 1-based within its image
};

struct SceneImage {
    double width = 100.0;
    double height = 100.0;
    std::vector<SceneObject> objects;
};

// Structured form of a templated query. The natural-language text in
// TaskSample::query is rendered from it.
//
//   Referential  color+shape anywhere
//   Tracking     color+shape in an image other than `anchor_image`, which
//                also shows the same kind of object
//   Difference   object in `anchor_image` whose color+shape is absent from
//                `other_image`
//   Similarity   object in `anchor_image` whose color+shape also appears in
//                `other_image`
//   Reasoning    color+shape in the image that also contains `context_shape`
struct QuerySpec {
    TaskKind kind = TaskKind::Referential;
    std::optional<Color> color;
    std::optional<Shape> shape;
    int anchor_image = 0;
    int other_image = 0;
    std::optional<Shape> context_shape;
};

struct TaskSample {
    std::uint64_t seed = 0;
    std::vector<SceneImage> images;
    std::string query;
    QuerySpec spec;
    GroundTruth ground_truth;
    TaskKind task_kind = TaskKind::Referential;
};

struct EnvConfig {
    int min_images = 2;
    int max_images = 4;
    int objects_per_image = 3;
    int grid_size = 8;
    double image_width = 100.0;
    double image_height = 100.0;
    int max_retries = 200;

    // Throws std::invalid_argument on out-of-range values.
    void validate() const;
};

struct ActionRecord {
    int chosen_image = 1;  // 1-based
    int chosen_cell = 0;   // row-major index into the grid
    BoundingBox box;
};

class GenerationExhausted : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidAction : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Whether the object satisfies the attribute part of the query
// (independent of which image it sits in).
bool object_condition(const TaskSample& task, int image_index, const SceneObject& object);
// Whether the image satisfies the image part of the query.
bool image_condition(const TaskSample& task, int image_index);
// Near miss: the object shares some but not all of the queried attributes.
bool partial_condition(const TaskSample& task, int image_index, const SceneObject& object);

std::string render_query(const QuerySpec& spec);

TaskSample generate_task(std::uint64_t seed, const EnvConfig& config);

BoundingBox cell_box(const SceneImage& image, int grid_size, int cell);
ActionRecord make_action(const TaskSample& task, int grid_size, int image_index, int cell);
void validate_action(const TaskSample& task, int grid_size, const ActionRecord& action);

enum class RenderMode { Normal, DropAnswerClose };

std::string render_response(const ActionRecord& action, const TaskSample& task,
                            RenderMode mode = RenderMode::Normal);

}  // namespace mirg
