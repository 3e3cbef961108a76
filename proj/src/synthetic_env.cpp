#include "mirg/synthetic_env.hpp"

#include <algorithm>
#include <random>
#include <sstream>

namespace mirg {

namespace {

bool has_combo(const SceneImage& image, Color color, Shape shape) {
    return std::any_of(image.objects.begin(), image.objects.end(),
                       [&](const SceneObject& o) { return o.color == color && o.shape == shape; });
}

bool shares_one_attribute(const SceneImage& image, Color color, Shape shape) {
    return std::any_of(image.objects.begin(), image.objects.end(), [&](const SceneObject& o) {
        return (o.color == color) != (o.shape == shape);
    });
}

const SceneImage& image_at(const TaskSample& task, int index) {
    return task.images.at(static_cast<std::size_t>(index - 1));
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(rng);
}

double uniform_real(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// Gold boxes sit near a grid cell but never on it, so the best cell IoU is
// strictly between 0.6 and 1.
BoundingBox jittered_box(const SceneImage& image, int grid_size, int cell, std::mt19937_64& rng) {
    const BoundingBox base = cell_box(image, grid_size, cell);
    const double cw = base.width();
    const double ch = base.height();
    const double cx = 0.5 * (base.x1 + base.x2) + uniform_real(rng, -0.12, 0.12) * cw;
    const double cy = 0.5 * (base.y1 + base.y2) + uniform_real(rng, -0.12, 0.12) * ch;
    const double w = cw * uniform_real(rng, 0.85, 1.15);
    const double h = ch * uniform_real(rng, 0.85, 1.15);
    return BoundingBox{std::clamp(cx - 0.5 * w, 0.0, image.width), std::clamp(cy - 0.5 * h, 0.0, image.height),
                       std::clamp(cx + 0.5 * w, 0.0, image.width), std::clamp(cy + 0.5 * h, 0.0, image.height)};
}

SceneImage random_image(const EnvConfig& config, std::mt19937_64& rng) {
    SceneImage image;
    image.width = config.image_width;
    image.height = config.image_height;
    const int cells = config.grid_size * config.grid_size;
    std::vector<int> order(static_cast<std::size_t>(cells));
    for (int c = 0; c < cells; ++c) order[static_cast<std::size_t>(c)] = c;
    std::shuffle(order.begin(), order.end(), rng);
    for (int k = 0; k < config.objects_per_image; ++k) {
        SceneObject obj;
        obj.shape = static_cast<Shape>(uniform_int(rng, 0, kShapeCount - 1));
        obj.color = static_cast<Color>(uniform_int(rng, 0, kColorCount - 1));
        obj.box = jittered_box(image, config.grid_size, order[static_cast<std::size_t>(k)], rng);
        obj.object_index = k + 1;
        image.objects.push_back(obj);
    }
    return image;
}

int other_image(int exclude, int count, std::mt19937_64& rng) {
    int pick = uniform_int(rng, 1, count - 1);
    return pick >= exclude ? pick + 1 : pick;
}

void random_combo_except(SceneObject& obj, Color color, Shape shape, std::mt19937_64& rng) {
    do {
        obj.shape = static_cast<Shape>(uniform_int(rng, 0, kShapeCount - 1));
        obj.color = static_cast<Color>(uniform_int(rng, 0, kColorCount - 1));
    } while (obj.color == color && obj.shape == shape);
}

// Builds a query around the chosen target, adjusting distractors where the
// task kind needs it. Returns false when this draw cannot host the kind.
bool build_query(TaskSample& task, int target_image, std::size_t target_pos, std::mt19937_64& rng) {
    const int count = static_cast<int>(task.images.size());
    const SceneObject target = task.images[static_cast<std::size_t>(target_image - 1)].objects[target_pos];
    QuerySpec& spec = task.spec;
    spec = QuerySpec{};
    spec.kind = task.task_kind;

    switch (task.task_kind) {
        case TaskKind::Referential:
            spec.color = target.color;
            spec.shape = target.shape;
            return true;
        case TaskKind::Tracking: {
            spec.color = target.color;
            spec.shape = target.shape;
            spec.anchor_image = other_image(target_image, count, rng);
            auto& anchor = task.images[static_cast<std::size_t>(spec.anchor_image - 1)].objects;
            auto& copy = anchor[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(anchor.size()) - 1))];
            copy.color = target.color;
            copy.shape = target.shape;
            return true;
        }
        case TaskKind::Similarity: {
            spec.anchor_image = target_image;
            spec.other_image = other_image(target_image, count, rng);
            auto& other = task.images[static_cast<std::size_t>(spec.other_image - 1)].objects;
            auto& copy = other[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(other.size()) - 1))];
            copy.color = target.color;
            copy.shape = target.shape;
            return true;
        }
        case TaskKind::Difference: {
            spec.anchor_image = target_image;
            spec.other_image = other_image(target_image, count, rng);
            const auto& anchor = task.images[static_cast<std::size_t>(target_image - 1)].objects;
            auto& other = task.images[static_cast<std::size_t>(spec.other_image - 1)].objects;
            std::size_t slot = 0;
            for (std::size_t k = 0; k < anchor.size(); ++k) {
                if (k == target_pos) continue;
                other[slot].color = anchor[k].color;
                other[slot].shape = anchor[k].shape;
                ++slot;
            }
            for (; slot < other.size(); ++slot) random_combo_except(other[slot], target.color, target.shape, rng);
            return true;
        }
        case TaskKind::Reasoning: {
            std::vector<Shape> contexts;
            for (const auto& o : task.images[static_cast<std::size_t>(target_image - 1)].objects) {
                if (o.shape != target.shape) contexts.push_back(o.shape);
            }
            if (contexts.empty()) return false;
            spec.color = target.color;
            spec.shape = target.shape;
            spec.context_shape = contexts[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(contexts.size()) - 1))];
            return true;
        }
    }
    return false;
}

}  // namespace

std::string_view to_string(Shape shape) {
    switch (shape) {
        case Shape::Circle: return "circle";
        case Shape::Square: return "square";
        case Shape::Triangle: return "triangle";
    }
    return "?";
}

std::string_view to_string(Color color) {
    switch (color) {
        case Color::Red: return "red";
        case Color::Blue: return "blue";
        case Color::Green: return "green";
        case Color::Yellow: return "yellow";
    }
    return "?";
}

std::string_view to_string(TaskKind kind) {
    switch (kind) {
        case TaskKind::Difference: return "difference";
        case TaskKind::Similarity: return "similarity";
        case TaskKind::Tracking: return "tracking";
        case TaskKind::Referential: return "referential";
        case TaskKind::Reasoning: return "reasoning";
    }
    return "?";
}

std::optional<TaskKind> task_kind_from_string(std::string_view name) {
    for (int k = 0; k < kTaskKindCount; ++k) {
        if (to_string(static_cast<TaskKind>(k)) == name) return static_cast<TaskKind>(k);
    }
    return std::nullopt;
}

void EnvConfig::validate() const {
    if (min_images < 1 || max_images < min_images) throw std::invalid_argument("env: bad image count range");
    if (min_images < 2) throw std::invalid_argument("env: multi-image tasks need at least 2 images");
    if (grid_size < 1) throw std::invalid_argument("env: grid_size must be positive");
    if (objects_per_image < 0 || objects_per_image > grid_size * grid_size) {
        throw std::invalid_argument("env: objects_per_image must lie in [0, grid_size^2]");
    }
    if (!(image_width > 0.0) || !(image_height > 0.0)) throw std::invalid_argument("env: image size must be positive");
    if (max_retries < 1) throw std::invalid_argument("env: max_retries must be positive");
}

bool object_condition(const TaskSample& task, int image_index, const SceneObject& object) {
    (void)image_index;
    const QuerySpec& q = task.spec;
    switch (q.kind) {
        case TaskKind::Referential:
        case TaskKind::Tracking:
        case TaskKind::Reasoning:
            return object.color == q.color && object.shape == q.shape;
        case TaskKind::Difference:
            return !has_combo(image_at(task, q.other_image), object.color, object.shape);
        case TaskKind::Similarity:
            return has_combo(image_at(task, q.other_image), object.color, object.shape);
    }
    return false;
}

bool image_condition(const TaskSample& task, int image_index) {
    const QuerySpec& q = task.spec;
    switch (q.kind) {
        case TaskKind::Referential: return true;
        case TaskKind::Tracking: return image_index != q.anchor_image;
        case TaskKind::Difference:
        case TaskKind::Similarity: return image_index == q.anchor_image;
        case TaskKind::Reasoning: {
            const auto& objs = image_at(task, image_index).objects;
            return std::any_of(objs.begin(), objs.end(), [&](const SceneObject& o) { return o.shape == q.context_shape; });
        }
    }
    return false;
}

bool partial_condition(const TaskSample& task, int image_index, const SceneObject& object) {
    if (object_condition(task, image_index, object)) return false;
    const QuerySpec& q = task.spec;
    switch (q.kind) {
        case TaskKind::Referential:
        case TaskKind::Tracking:
        case TaskKind::Reasoning:
            return (object.color == q.color) != (object.shape == q.shape);
        case TaskKind::Difference:
        case TaskKind::Similarity:
            return shares_one_attribute(image_at(task, q.other_image), object.color, object.shape);
    }
    return false;
}

std::string render_query(const QuerySpec& spec) {
    std::ostringstream out;
    const auto attrs = [&] {
        return std::string(to_string(spec.color.value_or(Color::Red))) + " " +
               std::string(to_string(spec.shape.value_or(Shape::Circle)));
    };
    switch (spec.kind) {
        case TaskKind::Referential:
            out << "Find the " << attrs() << " across all images.";
            break;
        case TaskKind::Tracking:
            out << "The " << attrs() << " in Image-" << spec.anchor_image
                << " appears again in another image. Locate it there.";
            break;
        case TaskKind::Difference:
            out << "Find the object in Image-" << spec.anchor_image << " that does not appear in Image-"
                << spec.other_image << ".";
            break;
        case TaskKind::Similarity:
            out << "Find the object in Image-" << spec.anchor_image << " that also appears in Image-"
                << spec.other_image << ".";
            break;
        case TaskKind::Reasoning:
            out << "Find the " << attrs() << " in the image that also contains a "
                << to_string(spec.context_shape.value_or(Shape::Circle)) << ".";
            break;
    }
    return out.str();
}

TaskSample generate_task(std::uint64_t seed, const EnvConfig& config) {
    config.validate();
    if (config.objects_per_image < 1) {
        throw GenerationExhausted("no objects per image: a query has nothing to refer to");
    }
    std::mt19937_64 rng(seed);
    for (int attempt = 0; attempt < config.max_retries; ++attempt) {
        TaskSample task;
        task.seed = seed;
        const int count = uniform_int(rng, config.min_images, config.max_images);
        for (int n = 0; n < count; ++n) task.images.push_back(random_image(config, rng));
        task.task_kind = static_cast<TaskKind>(uniform_int(rng, 0, kTaskKindCount - 1));

        const int target_image = uniform_int(rng, 1, count);
        const auto target_pos = static_cast<std::size_t>(uniform_int(rng, 0, config.objects_per_image - 1));
        if (!build_query(task, target_image, target_pos, rng)) continue;

        int satisfying = 0;
        bool target_ok = false;
        for (int n = 1; n <= count; ++n) {
            if (!image_condition(task, n)) continue;
            const auto& objs = task.images[static_cast<std::size_t>(n - 1)].objects;
            for (std::size_t k = 0; k < objs.size(); ++k) {
                if (!object_condition(task, n, objs[k])) continue;
                ++satisfying;
                target_ok = target_ok || (n == target_image && k == target_pos);
            }
        }
        if (satisfying != 1 || !target_ok) continue;

        const SceneObject& target = task.images[static_cast<std::size_t>(target_image - 1)].objects[target_pos];
        task.query = render_query(task.spec);
        task.ground_truth.image_count = count;
        task.ground_truth.objects.push_back(
            GroundedObject{PositionId{target_image, target.object_index},
                           std::string(to_string(target.color)) + " " + std::string(to_string(target.shape)),
                           target.box});
        return task;
    }
    throw GenerationExhausted("no uniquely answerable task after " + std::to_string(config.max_retries) +
                              " attempts (seed " + std::to_string(seed) + ")");
}

BoundingBox cell_box(const SceneImage& image, int grid_size, int cell) {
    const int col = cell % grid_size;
    const int row = cell / grid_size;
    const double g = grid_size;
    return BoundingBox{image.width * col / g, image.height * row / g, image.width * (col + 1) / g,
                       image.height * (row + 1) / g};
}

namespace {

void check_action_range(const TaskSample& task, int grid_size, int image_index, int cell) {
    if (image_index < 1 || image_index > static_cast<int>(task.images.size())) {
        throw InvalidAction("chosen_image " + std::to_string(image_index) + " out of range");
    }
    if (cell < 0 || cell >= grid_size * grid_size) {
        throw InvalidAction("chosen_cell " + std::to_string(cell) + " out of range");
    }
}

}  // namespace

void validate_action(const TaskSample& task, int grid_size, const ActionRecord& action) {
    check_action_range(task, grid_size, action.chosen_image, action.chosen_cell);
    const auto& image = task.images[static_cast<std::size_t>(action.chosen_image - 1)];
    if (!(action.box == cell_box(image, grid_size, action.chosen_cell))) {
        throw InvalidAction("box does not match cell " + std::to_string(action.chosen_cell));
    }
}

ActionRecord make_action(const TaskSample& task, int grid_size, int image_index, int cell) {
    check_action_range(task, grid_size, image_index, cell);
    ActionRecord action{image_index, cell, {}};
    action.box = cell_box(task.images[static_cast<std::size_t>(image_index - 1)], grid_size, cell);
    return action;
}

std::string render_response(const ActionRecord& action, const TaskSample& task, RenderMode mode) {
    if (action.chosen_image < 1 || action.chosen_image > static_cast<int>(task.images.size())) {
        throw InvalidAction("chosen_image out of range");
    }
    std::string description = "queried object";
    if (task.spec.color && task.spec.shape) {
        description = std::string(to_string(*task.spec.color)) + " " + std::string(to_string(*task.spec.shape));
    }
    Trajectory t;
    t.think.append_text("Image-" + std::to_string(action.chosen_image) +
                        " best matches the query; the target lies in grid cell " +
                        std::to_string(action.chosen_cell) + ".");
    t.answer.append_text("The target is ")
        .append(GroundedObject{PositionId{action.chosen_image, 1}, description, action.box})
        .append_text(".");
    std::string text = serialize_trajectory(t);
    if (mode == RenderMode::DropAnswerClose) {
        text.erase(text.rfind(tokens::kAnswerClose), tokens::kAnswerClose.size());
    }
    return text;
}

}  // namespace mirg
