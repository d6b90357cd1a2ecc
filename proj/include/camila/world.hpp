#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "camila/error.hpp"
#include "camila/image.hpp"
#include "camila/numerics/nn.hpp"

// Deterministic synthetic scenes and editing instructions.
//
// Layout: the image is a 8×8 grid of patches split into four 4×4-patch
// quadrants. Every object lives in its own quadrant, has a patch-aligned
// bounding box, and a label that is unique within the scene. Objects are
// solid rectangles or ellipses on a black background.

namespace camila::world {

inline constexpr std::size_t kGrid = 8;          // patches per side
inline constexpr std::size_t kQuadrantCells = 4;  // patches per quadrant side

enum class Category { add, remove, replace, change };

inline constexpr std::array<Category, 4> kCategories = {Category::add, Category::remove, Category::replace,
                                                        Category::change};

/// Category mix of generated instructions: add 34.3%, remove 21.1%,
/// replace 20.5%, change 24.1%.
inline constexpr std::array<double, 4> kCategoryWeights = {0.343, 0.211, 0.205, 0.241};

inline std::string_view category_name(Category c) {
    switch (c) {
        case Category::add: return "add";
        case Category::remove: return "remove";
        case Category::replace: return "replace";
        case Category::change: return "change";
    }
    return "?";
}

inline Category parse_category(std::string_view s) {
    for (Category c : kCategories) {
        if (category_name(c) == s) {
            return c;
        }
    }
    throw FormatError("unknown instruction category '" + std::string(s) + "'");
}

struct LabelSpec {
    std::string_view word;
    bool ellipse;
    std::size_t w, h;  // footprint in patches
};

inline constexpr std::array<LabelSpec, 5> kLabels = {{
    {"square", false, 2, 2},
    {"circle", true, 2, 2},
    {"dot", true, 1, 1},
    {"bar", false, 3, 1},
    {"pillar", false, 1, 3},
}};

struct ColorSpec {
    std::string_view word;
    double r, g, b;
};

inline constexpr std::array<ColorSpec, 7> kColors = {{
    {"red", 1, 0, 0},
    {"green", 0, 1, 0},
    {"blue", 0, 0, 1},
    {"yellow", 1, 1, 0},
    {"cyan", 0, 1, 1},
    {"magenta", 1, 0, 1},
    {"white", 1, 1, 1},
}};

inline constexpr std::array<std::string_view, 4> kQuadrantWords = {"top left", "top right", "bottom left",
                                                                  "bottom right"};

// ---------------------------------------------------------------------------
// Vocabulary

inline constexpr std::string_view kBoundary = "<sep>";
inline constexpr std::string_view kConnective = "and";

class Vocabulary {
public:
    static const Vocabulary& get() {
        static const Vocabulary vocab;
        return vocab;
    }

    std::size_t size() const noexcept { return words_.size(); }
    const std::string& word(std::size_t id) const { return words_.at(id); }

    std::size_t id(std::string_view w) const {
        auto it = ids_.find(std::string(w));
        if (it == ids_.end()) {
            throw TokenizeError("word '" + std::string(w) + "' is not in the vocabulary");
        }
        return it->second;
    }

    bool contains(std::string_view w) const { return ids_.contains(std::string(w)); }

    std::vector<std::size_t> tokenize(std::string_view text) const {
        std::vector<std::size_t> out;
        std::istringstream is{std::string(text)};
        std::string w;
        while (is >> w) {
            out.push_back(id(w));
        }
        return out;
    }

    std::string detokenize(const std::vector<std::size_t>& ids) const {
        std::string out;
        for (std::size_t i = 0; i < ids.size(); ++i) {
            out += (i ? " " : "") + word(ids[i]);
        }
        return out;
    }

private:
    Vocabulary() {
        const std::vector<std::string_view> base = {
            kBoundary, kConnective, "add", "remove", "replace", "make", "a", "the", "with", "at",
            "top",     "bottom",    "left", "right", "empty", "scene", "nothing", "in", "to", "there",
            "is",      "of",        "an",   "it",    "color"};
        for (auto w : base) {
            push(w);
        }
        for (const auto& l : kLabels) {
            push(l.word);
        }
        for (const auto& c : kColors) {
            push(c.word);
        }
    }

    void push(std::string_view w) {
        ids_[std::string(w)] = words_.size();
        words_.emplace_back(w);
    }

    std::vector<std::string> words_;
    std::map<std::string, std::size_t> ids_;
};

// ---------------------------------------------------------------------------
// Scene

struct Box {
    std::size_t x = 0, y = 0, w = 0, h = 0;  // pixels
    bool operator==(const Box&) const = default;
};

struct SceneObject {
    std::size_t label = 0;
    std::size_t color = 0;
    Box box;
    std::size_t quadrant = 0;
    bool operator==(const SceneObject&) const = default;
};

struct SceneConfig {
    std::size_t size = 64;
    std::size_t min_objects = 1;
    std::size_t max_objects = 4;
    std::size_t min_box = 8;
    std::size_t max_retries = 32;
    std::optional<std::size_t> num_objects;  // fixes the object count when set
};

struct Scene {
    Image image;
    std::vector<SceneObject> objects;
    bool operator==(const Scene&) const = default;
};

inline std::size_t patch_size(std::size_t image_size) { return image_size / kGrid; }

inline Box quadrant_origin(std::size_t quadrant, std::size_t image_size) {
    const std::size_t half = image_size / 2;
    return Box{(quadrant % 2) * half, (quadrant / 2) * half, half, half};
}

/// Box for `label` placed at patch offset (ox, oy) inside `quadrant`.
inline Box place_box(std::size_t label, std::size_t quadrant, std::size_t ox, std::size_t oy,
                     std::size_t image_size) {
    const auto q = quadrant_origin(quadrant, image_size);
    const std::size_t ps = patch_size(image_size);
    return Box{q.x + ox * ps, q.y + oy * ps, kLabels[label].w * ps, kLabels[label].h * ps};
}

/// Deterministic placement used when an object is added to an empty quadrant.
inline Box add_box(std::size_t label, std::size_t quadrant, std::size_t image_size) {
    const std::size_t ox = (kQuadrantCells - kLabels[label].w) / 2;
    const std::size_t oy = (kQuadrantCells - kLabels[label].h) / 2;
    return place_box(label, quadrant, ox, oy, image_size);
}

/// Box for the replacement shape: keeps the old top-left patch, clamped so it
/// stays inside the quadrant.
inline Box replace_box(const SceneObject& old, std::size_t new_label, std::size_t image_size) {
    const auto q = quadrant_origin(old.quadrant, image_size);
    const std::size_t ps = patch_size(image_size);
    const std::size_t ox = std::min((old.box.x - q.x) / ps, kQuadrantCells - kLabels[new_label].w);
    const std::size_t oy = std::min((old.box.y - q.y) / ps, kQuadrantCells - kLabels[new_label].h);
    return place_box(new_label, old.quadrant, ox, oy, image_size);
}

inline bool inside_shape(std::size_t label, const Box& box, std::size_t x, std::size_t y) {
    if (x < box.x || y < box.y || x >= box.x + box.w || y >= box.y + box.h) {
        return false;
    }
    if (!kLabels[label].ellipse) {
        return true;
    }
    const double cx = static_cast<double>(box.x) + static_cast<double>(box.w) / 2.0;
    const double cy = static_cast<double>(box.y) + static_cast<double>(box.h) / 2.0;
    const double dx = (static_cast<double>(x) + 0.5 - cx) / (static_cast<double>(box.w) / 2.0);
    const double dy = (static_cast<double>(y) + 0.5 - cy) / (static_cast<double>(box.h) / 2.0);
    return dx * dx + dy * dy <= 1.0;
}

inline void paint_shape(Image& img, std::size_t label, std::size_t color, const Box& box) {
    const auto& c = kColors[color];
    for (std::size_t y = box.y; y < box.y + box.h; ++y) {
        for (std::size_t x = box.x; x < box.x + box.w; ++x) {
            if (inside_shape(label, box, x, y)) {
                img.at(y, x, 0) = c.r;
                img.at(y, x, 1) = c.g;
                img.at(y, x, 2) = c.b;
            }
        }
    }
}

inline void erase_box(Image& img, const Box& box) {
    for (std::size_t y = box.y; y < box.y + box.h; ++y) {
        for (std::size_t x = box.x; x < box.x + box.w; ++x) {
            img.at(y, x, 0) = img.at(y, x, 1) = img.at(y, x, 2) = 0.0;
        }
    }
}

inline Mask box_mask(const Box& box, std::size_t image_size) {
    Mask m = Mask::zeros(image_size, image_size);
    for (std::size_t y = box.y; y < box.y + box.h; ++y) {
        for (std::size_t x = box.x; x < box.x + box.w; ++x) {
            m.at(y, x) = 1;
        }
    }
    return m;
}

inline Image render_scene(const std::vector<SceneObject>& objects, std::size_t image_size) {
    Image img = Image::filled(image_size, image_size, 0.0, 0.0, 0.0);
    for (const auto& o : objects) {
        paint_shape(img, o.label, o.color, o.box);
    }
    return img;
}

inline void validate_config(const SceneConfig& config) {
    if (config.size < 16 || config.size % 16 != 0) {
        throw GenerationError("scene size must be a positive multiple of 16");
    }
    if (config.min_objects < 1 || config.min_objects > config.max_objects) {
        throw GenerationError("object count bounds must satisfy 1 <= min <= max");
    }
    if (config.min_box > patch_size(config.size)) {
        throw GenerationError("minimum box exceeds the patch size");
    }
    if (config.num_objects && (*config.num_objects < config.min_objects || *config.num_objects > config.max_objects)) {
        throw GenerationError("requested object count outside configured bounds");
    }
}

/// Scene for a fixed seed. Throws GenerationError when the requested
/// number of objects cannot be placed within the retry budget.
inline Scene gen_scene(std::uint64_t seed, const SceneConfig& config = {}) {
    validate_config(config);
    Rng rng(mix_seed(seed, 0x5ce9e));
    const std::size_t n =
        config.num_objects ? *config.num_objects
                           : std::uniform_int_distribution<std::size_t>(config.min_objects, config.max_objects)(rng);
    std::vector<SceneObject> objects;
    std::vector<std::size_t> quadrants = {0, 1, 2, 3};
    std::shuffle(quadrants.begin(), quadrants.end(), rng);
    std::vector<std::size_t> labels(kLabels.size());
    std::iota(labels.begin(), labels.end(), std::size_t{0});
    std::shuffle(labels.begin(), labels.end(), rng);
    for (std::size_t i = 0; i < n; ++i) {
        bool placed = false;
        for (std::size_t attempt = 0; attempt < config.max_retries && !placed; ++attempt) {
            if (i >= quadrants.size() || i >= labels.size()) {
                break;
            }
            const std::size_t label = labels[i];
            const auto& spec = kLabels[label];
            if (spec.w > kQuadrantCells || spec.h > kQuadrantCells) {
                break;
            }
            const std::size_t ox = std::uniform_int_distribution<std::size_t>(0, kQuadrantCells - spec.w)(rng);
            const std::size_t oy = std::uniform_int_distribution<std::size_t>(0, kQuadrantCells - spec.h)(rng);
            const std::size_t color = std::uniform_int_distribution<std::size_t>(0, kColors.size() - 1)(rng);
            SceneObject obj{label, color, place_box(label, quadrants[i], ox, oy, config.size), quadrants[i]};
            if (obj.box.w < config.min_box || obj.box.h < config.min_box) {
                continue;
            }
            objects.push_back(obj);
            placed = true;
        }
        if (!placed) {
            throw GenerationError("could not place object " + std::to_string(i + 1) + " of " + std::to_string(n));
        }
    }
    std::sort(objects.begin(), objects.end(),
              [](const SceneObject& a, const SceneObject& b) { return a.quadrant < b.quadrant; });
    return Scene{render_scene(objects, config.size), objects};
}

// ---------------------------------------------------------------------------
// Instructions

inline constexpr std::size_t kNone = static_cast<std::size_t>(-1);

struct Instruction {
    Category category = Category::add;
    bool applicable = false;
    std::size_t label = 0;          // object referred to (add: the label to add)
    std::size_t new_label = kNone;  // replace only
    std::size_t color = kNone;      // add / change only
    std::size_t quadrant = kNone;   // add only
    Mask target_mask;

    bool operator==(const Instruction&) const = default;
};

inline std::vector<std::string> instruction_words(const Instruction& in) {
    auto split = [](std::string_view s) {
        std::vector<std::string> out;
        std::istringstream is{std::string(s)};
        std::string w;
        while (is >> w) {
            out.push_back(w);
        }
        return out;
    };
    std::vector<std::string> w;
    switch (in.category) {
        case Category::add: {
            w = {"add", "a", std::string(kColors[in.color].word), std::string(kLabels[in.label].word), "at"};
            for (auto& q : split(kQuadrantWords[in.quadrant])) {
                w.push_back(q);
            }
            break;
        }
        case Category::remove:
            w = {"remove", "the", std::string(kLabels[in.label].word)};
            break;
        case Category::replace:
            w = {"replace", "the", std::string(kLabels[in.label].word), "with", "a",
                 std::string(kLabels[in.new_label].word)};
            break;
        case Category::change:
            w = {"make", "the", std::string(kLabels[in.label].word), std::string(kColors[in.color].word)};
            break;
    }
    return w;
}

inline std::string instruction_text(const Instruction& in) {
    std::string s;
    for (const auto& w : instruction_words(in)) {
        s += (s.empty() ? "" : " ") + w;
    }
    return s;
}

inline const SceneObject* find_label(const std::vector<SceneObject>& objects, std::size_t label) {
    for (const auto& o : objects) {
        if (o.label == label) {
            return &o;
        }
    }
    return nullptr;
}

inline const SceneObject* find_quadrant(const std::vector<SceneObject>& objects, std::size_t quadrant) {
    for (const auto& o : objects) {
        if (o.quadrant == quadrant) {
            return &o;
        }
    }
    return nullptr;
}

/// Whether an instruction can be executed against `objects`.
inline bool is_applicable(const Instruction& in, const std::vector<SceneObject>& objects) {
    if (in.category == Category::add) {
        return find_quadrant(objects, in.quadrant) == nullptr;
    }
    return find_label(objects, in.label) != nullptr;
}

namespace detail {

struct PlanState {
    std::vector<bool> quadrant_used = std::vector<bool>(4, false);
    std::vector<bool> label_introduced = std::vector<bool>(kLabels.size(), false);
};

template <class T>
T pick(const std::vector<T>& v, Rng& rng) {
    return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
}

inline std::vector<std::size_t> absent_labels(const Scene& scene, const PlanState& st) {
    std::vector<std::size_t> out;
    for (std::size_t l = 0; l < kLabels.size(); ++l) {
        if (!find_label(scene.objects, l) && !st.label_introduced[l]) {
            out.push_back(l);
        }
    }
    return out;
}

/// Builds one applicable instruction of `cat`, or nullopt when infeasible.
inline std::optional<Instruction> make_applicable(Category cat, const Scene& scene, PlanState& st, Rng& rng) {
    const std::size_t size = scene.image.height;
    Instruction in;
    in.category = cat;
    in.applicable = true;
    if (cat == Category::add) {
        std::vector<std::size_t> empty_q;
        for (std::size_t q = 0; q < 4; ++q) {
            if (!find_quadrant(scene.objects, q) && !st.quadrant_used[q]) {
                empty_q.push_back(q);
            }
        }
        const auto labels = absent_labels(scene, st);
        if (empty_q.empty() || labels.empty()) {
            return std::nullopt;
        }
        in.quadrant = pick(empty_q, rng);
        in.label = pick(labels, rng);
        in.color = std::uniform_int_distribution<std::size_t>(0, kColors.size() - 1)(rng);
        in.target_mask = box_mask(add_box(in.label, in.quadrant, size), size);
        st.quadrant_used[in.quadrant] = true;
        st.label_introduced[in.label] = true;
        return in;
    }
    std::vector<const SceneObject*> free_objects;
    for (const auto& o : scene.objects) {
        if (!st.quadrant_used[o.quadrant]) {
            free_objects.push_back(&o);
        }
    }
    if (free_objects.empty()) {
        return std::nullopt;
    }
    const SceneObject* target = pick(free_objects, rng);
    in.label = target->label;
    if (cat == Category::replace) {
        const auto labels = absent_labels(scene, st);
        if (labels.empty()) {
            return std::nullopt;
        }
        in.new_label = pick(labels, rng);
        in.target_mask =
            mask_union(box_mask(target->box, size), box_mask(replace_box(*target, in.new_label, size), size));
        st.label_introduced[in.new_label] = true;
    } else {
        if (cat == Category::change) {
            std::vector<std::size_t> colors;
            for (std::size_t c = 0; c < kColors.size(); ++c) {
                if (c != target->color) {
                    colors.push_back(c);
                }
            }
            in.color = pick(colors, rng);
        }
        in.target_mask = box_mask(target->box, size);
    }
    st.quadrant_used[target->quadrant] = true;
    return in;
}

/// Builds one non-applicable instruction of `cat`, or nullopt when the scene
/// offers no unambiguous way to phrase it.
inline std::optional<Instruction> make_nonapplicable(Category cat, const Scene& scene, const PlanState& st,
                                                     Rng& rng) {
    const std::size_t size = scene.image.height;
    Instruction in;
    in.category = cat;
    in.applicable = false;
    in.target_mask = Mask::zeros(size, size);
    if (cat == Category::add) {
        // Names a quadrant that is occupied and untouched by applicable edits.
        std::vector<std::size_t> occupied;
        for (const auto& o : scene.objects) {
            if (!st.quadrant_used[o.quadrant]) {
                occupied.push_back(o.quadrant);
            }
        }
        if (occupied.empty()) {
            return std::nullopt;
        }
        in.quadrant = pick(occupied, rng);
        in.label = std::uniform_int_distribution<std::size_t>(0, kLabels.size() - 1)(rng);
        in.color = std::uniform_int_distribution<std::size_t>(0, kColors.size() - 1)(rng);
        return in;
    }
    // Refers to a label absent from the scene and not introduced by an edit.
    const auto labels = absent_labels(scene, st);
    if (labels.empty()) {
        return std::nullopt;
    }
    in.label = pick(labels, rng);
    if (cat == Category::replace) {
        std::vector<std::size_t> others;
        for (std::size_t l = 0; l < kLabels.size(); ++l) {
            if (l != in.label) {
                others.push_back(l);
            }
        }
        in.new_label = pick(others, rng);
    } else if (cat == Category::change) {
        in.color = std::uniform_int_distribution<std::size_t>(0, kColors.size() - 1)(rng);
    }
    return in;
}

inline Category sample_category(Rng& rng, const std::vector<bool>& allowed) {
    double total = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
        total += allowed[i] ? kCategoryWeights[i] : 0.0;
    }
    if (total <= 0.0) {
        throw GenerationError("no feasible instruction category");
    }
    double u = std::uniform_real_distribution<double>(0.0, total)(rng);
    for (std::size_t i = 0; i < 4; ++i) {
        if (!allowed[i]) {
            continue;
        }
        if (u < kCategoryWeights[i]) {
            return kCategories[i];
        }
        u -= kCategoryWeights[i];
    }
    for (std::size_t i = 4; i-- > 0;) {
        if (allowed[i]) {
            return kCategories[i];
        }
    }
    throw GenerationError("no feasible instruction category");
}

inline std::size_t category_index(Category c) { return static_cast<std::size_t>(c); }

}  // namespace detail

/// Instructions for `scene` with planned categories for the applicable part.
/// Non-applicable categories are drawn from the category mix, restricted to
/// those the scene can express. The final order is shuffled.
inline std::vector<Instruction> gen_instructions_planned(const Scene& scene, const std::vector<Category>& applicable,
                                                         std::size_t n_nonapplicable, Rng& rng) {
    detail::PlanState st;
    std::vector<Instruction> out;
    for (Category c : applicable) {
        auto in = detail::make_applicable(c, scene, st, rng);
        if (!in) {
            throw GenerationError("requested " + std::string(category_name(c)) +
                                  " instruction is not feasible for this scene");
        }
        out.push_back(std::move(*in));
    }
    for (std::size_t i = 0; i < n_nonapplicable; ++i) {
        std::vector<bool> allowed(4, true);
        std::optional<Instruction> in;
        while (!in) {
            const Category c = detail::sample_category(rng, allowed);
            in = detail::make_nonapplicable(c, scene, st, rng);
            if (!in) {
                allowed[detail::category_index(c)] = false;
            }
        }
        out.push_back(std::move(*in));
    }
    std::shuffle(out.begin(), out.end(), rng);
    return out;
}

/// Samples `n_applicable` executable and `n_nonapplicable` non-executable
/// instructions. Throws GenerationError when the scene cannot support the
/// requested number of applicable edits.
inline std::vector<Instruction> gen_instructions(const Scene& scene, std::size_t n_applicable,
                                                 std::size_t n_nonapplicable, std::uint64_t seed) {
    if (n_applicable + n_nonapplicable == 0) {
        throw GenerationError("at least one instruction is required");
    }
    Rng rng(mix_seed(seed, 0x1275));
    detail::PlanState st;
    std::vector<Category> plan;
    for (std::size_t i = 0; i < n_applicable; ++i) {
        std::vector<bool> allowed(4, true);
        bool placed = false;
        while (!placed) {
            Category c;
            try {
                c = detail::sample_category(rng, allowed);
            } catch (const GenerationError&) {
                throw GenerationError("scene supports only " + std::to_string(i) + " applicable edits, " +
                                      std::to_string(n_applicable) + " requested");
            }
            // Probe feasibility on a scratch copy of the plan state.
            detail::PlanState probe = st;
            Rng probe_rng = rng;
            if (detail::make_applicable(c, scene, probe, probe_rng)) {
                plan.push_back(c);
                Rng replay = rng;
                detail::make_applicable(c, scene, st, replay);
                placed = true;
            } else {
                allowed[detail::category_index(c)] = false;
            }
        }
    }
    return gen_instructions_planned(scene, plan, n_nonapplicable, rng);
}

// ---------------------------------------------------------------------------
// Goal rendering

inline std::vector<std::string> caption_words(const std::vector<SceneObject>& objects) {
    if (objects.empty()) {
        return {"empty", "scene"};
    }
    auto sorted = objects;
    std::sort(sorted.begin(), sorted.end(),
              [](const SceneObject& a, const SceneObject& b) { return a.quadrant < b.quadrant; });
    std::vector<std::string> out;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        if (i) {
            out.emplace_back(kConnective);
        }
        out.insert(out.end(), {"a", std::string(kColors[sorted[i].color].word),
                               std::string(kLabels[sorted[i].label].word), "at"});
        std::istringstream is{std::string(kQuadrantWords[sorted[i].quadrant])};
        std::string w;
        while (is >> w) {
            out.push_back(w);
        }
    }
    return out;
}

struct GoalRender {
    Image image;
    std::vector<std::string> description;
    std::vector<SceneObject> objects;
};

/// Applies the applicable instructions in list order. Non-applicable ones are
/// skipped; pixels outside the edited boxes are never written.
inline GoalRender render_goal(const Scene& scene, const std::vector<Instruction>& instructions) {
    const std::size_t size = scene.image.height;
    Image img = scene.image;
    std::vector<SceneObject> objects = scene.objects;
    for (const auto& in : instructions) {
        if (!in.applicable) {
            continue;
        }
        if (in.category == Category::add) {
            const Box box = add_box(in.label, in.quadrant, size);
            paint_shape(img, in.label, in.color, box);
            objects.push_back(SceneObject{in.label, in.color, box, in.quadrant});
            continue;
        }
        auto it = std::find_if(objects.begin(), objects.end(),
                               [&](const SceneObject& o) { return o.label == in.label; });
        if (it == objects.end()) {
            throw ContractError("applicable instruction refers to missing label " +
                                std::string(kLabels[in.label].word));
        }
        switch (in.category) {
            case Category::remove:
                erase_box(img, it->box);
                objects.erase(it);
                break;
            case Category::change:
                it->color = in.color;
                paint_shape(img, it->label, it->color, it->box);
                break;
            case Category::replace: {
                const Box nb = replace_box(*it, in.new_label, size);
                erase_box(img, it->box);
                it->label = in.new_label;
                it->box = nb;
                paint_shape(img, it->label, it->color, it->box);
                break;
            }
            case Category::add:
                break;
        }
    }
    return GoalRender{std::move(img), caption_words(objects), std::move(objects)};
}

// ---------------------------------------------------------------------------
// Episodes

enum class TaskKind { single, multi_turn, multi, context_aware };

inline std::string_view task_name(TaskKind t) {
    switch (t) {
        case TaskKind::single: return "single";
        case TaskKind::multi_turn: return "multi-turn";
        case TaskKind::multi: return "multi";
        case TaskKind::context_aware: return "context-aware";
    }
    return "?";
}

inline TaskKind parse_task(std::string_view s) {
    for (TaskKind t : {TaskKind::single, TaskKind::multi_turn, TaskKind::multi, TaskKind::context_aware}) {
        if (task_name(t) == s) {
            return t;
        }
    }
    throw FormatError("unknown task kind '" + std::string(s) + "'");
}

/// Sample totals per task (single-turn, multi-turn, multi-instruction,
/// context-aware) of the reference editing benchmark; kept as provenance and
/// used as the task mixture weights.
inline constexpr std::array<double, 4> kTaskTotals = {1053, 535, 717, 2624};

struct Episode {
    std::uint64_t seed = 0;
    TaskKind task = TaskKind::single;
    Scene scene;
    std::vector<Instruction> instructions;
    Image goal_image;
    std::vector<std::string> goal_description;

    bool operator==(const Episode&) const = default;
};

/// Token ids of the multi-instruction prompt plus bookkeeping. Instruction i
/// spans [connective] words <sep>; the connective opens every instruction but
/// the first.
struct Prompt {
    std::vector<std::size_t> ids;
    std::vector<std::size_t> instruction_of;  // per position
    std::vector<std::size_t> boundaries;      // position of each <sep>
    std::vector<std::size_t> offset_in_instruction;
};

inline Prompt build_prompt(const std::vector<std::vector<std::string>>& instructions) {
    const auto& vocab = Vocabulary::get();
    Prompt p;
    for (std::size_t i = 0; i < instructions.size(); ++i) {
        std::size_t off = 0;
        auto push = [&](std::string_view w) {
            p.ids.push_back(vocab.id(w));
            p.instruction_of.push_back(i);
            p.offset_in_instruction.push_back(off++);
        };
        if (i) {
            push(kConnective);
        }
        for (const auto& w : instructions[i]) {
            push(w);
        }
        push(kBoundary);
        p.boundaries.push_back(p.ids.size() - 1);
    }
    return p;
}

inline Prompt build_prompt(const std::vector<Instruction>& instructions) {
    std::vector<std::vector<std::string>> words;
    for (const auto& in : instructions) {
        words.push_back(instruction_words(in));
    }
    return build_prompt(words);
}

/// Parses a prompt in text form ("remove the dot <sep> and make ...").
inline Prompt parse_prompt(std::string_view text) {
    const auto& vocab = Vocabulary::get();
    const auto ids = vocab.tokenize(text);
    std::vector<std::vector<std::string>> groups(1);
    for (std::size_t k = 0; k < ids.size(); ++k) {
        const auto& w = vocab.word(ids[k]);
        if (w == kBoundary) {
            groups.emplace_back();
        } else if (!(w == kConnective && groups.back().empty() && groups.size() > 1)) {
            groups.back().push_back(w);
        }
    }
    if (!groups.back().empty()) {
        throw ContractError("prompt must end with a boundary marker " + std::string(kBoundary));
    }
    groups.pop_back();
    return build_prompt(groups);
}

/// Draws a full episode: task kind, planned categories, a scene that can
/// host them, instructions, and the rendered goal.
inline Episode gen_episode(std::uint64_t seed, const SceneConfig& config = {}) {
    Rng rng(mix_seed(seed, 0xe915));
    std::discrete_distribution<int> task_dist(kTaskTotals.begin(), kTaskTotals.end());
    const auto task = static_cast<TaskKind>(task_dist(rng));
    std::size_t n_app = 1, n_non = 0;
    switch (task) {
        case TaskKind::single:
            n_app = 1;
            break;
        case TaskKind::multi_turn: {
            std::discrete_distribution<int> d({216.0, 120.0, 199.0});
            n_app = static_cast<std::size_t>(d(rng)) + 1;
            break;
        }
        case TaskKind::multi: {
            std::discrete_distribution<int> d({120.0, 597.0});
            n_app = static_cast<std::size_t>(d(rng)) + 2;
            break;
        }
        case TaskKind::context_aware: {
            std::discrete_distribution<int> d({1053.0, 1571.0});
            n_app = static_cast<std::size_t>(d(rng)) + 1;
            n_non = 1;
            break;
        }
    }
    for (std::size_t attempt = 0; attempt < 64; ++attempt) {
        std::vector<Category> plan;
        const std::vector<bool> all(4, true);
        for (std::size_t i = 0; i < n_app; ++i) {
            plan.push_back(detail::sample_category(rng, all));
        }
        const auto n_add = static_cast<std::size_t>(std::count(plan.begin(), plan.end(), Category::add));
        const auto n_rep = static_cast<std::size_t>(std::count(plan.begin(), plan.end(), Category::replace));
        const std::size_t n_obj_edits = n_app - n_add;
        const std::size_t lo = std::max({config.min_objects, n_obj_edits, std::size_t{1}});
        std::size_t hi = std::min(config.max_objects, 4 - std::min<std::size_t>(n_add, 4));
        // Leave enough absent labels for added/replacement shapes plus one
        // for a label-based non-applicable instruction.
        const std::size_t labels_needed = n_add + n_rep + (n_non ? 1 : 0);
        if (labels_needed > kLabels.size()) {
            continue;
        }
        hi = std::min(hi, kLabels.size() - labels_needed);
        if (lo > hi) {
            continue;
        }
        SceneConfig sc = config;
        sc.num_objects = std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
        Scene scene = gen_scene(rng(), sc);
        auto instructions = gen_instructions_planned(scene, plan, n_non, rng);
        auto goal = render_goal(scene, instructions);
        return Episode{seed, task, std::move(scene), std::move(instructions), std::move(goal.image),
                       std::move(goal.description)};
    }
    throw GenerationError("could not plan a feasible episode for seed " + std::to_string(seed));
}

/// Lists invariant violations of an episode (empty when valid).
inline std::vector<std::string> episode_violations(const Episode& ep) {
    std::vector<std::string> v;
    const std::size_t size = ep.scene.image.height;
    if (ep.instructions.empty()) {
        v.push_back("episode has no instructions");
    }
    for (const auto& o : ep.scene.objects) {
        if (o.box.x + o.box.w > size || o.box.y + o.box.h > size) {
            v.push_back("object box outside image");
        }
    }
    for (std::size_t i = 0; i < ep.scene.objects.size(); ++i) {
        for (std::size_t j = i + 1; j < ep.scene.objects.size(); ++j) {
            if (ep.scene.objects[i].label == ep.scene.objects[j].label &&
                ep.scene.objects[i].box == ep.scene.objects[j].box) {
                v.push_back("duplicate (label, box) pair");
            }
        }
    }
    Mask uni = Mask::zeros(size, size);
    for (std::size_t i = 0; i < ep.instructions.size(); ++i) {
        const auto& in = ep.instructions[i];
        if (in.applicable != is_applicable(in, ep.scene.objects)) {
            v.push_back("instruction " + std::to_string(i) + " applicability flag disagrees with scene");
        }
        if (in.applicable == in.target_mask.empty()) {
            v.push_back("instruction " + std::to_string(i) + " mask/applicability mismatch");
        }
        if (in.applicable) {
            uni = mask_union(uni, in.target_mask);
        }
    }
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            if (uni.at(y, x)) {
                continue;
            }
            for (std::size_t c = 0; c < 3; ++c) {
                if (ep.goal_image.at(y, x, c) != ep.scene.image.at(y, x, c)) {
                    v.push_back("goal differs outside edit masks at (" + std::to_string(x) + "," +
                                std::to_string(y) + ")");
                    return v;
                }
            }
        }
    }
    return v;
}

}  // namespace camila::world
