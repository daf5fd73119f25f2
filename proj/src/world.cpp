#include "kiwi/world.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "kiwi/image_io.hpp"
#include "kiwi/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace kiwi::world {

namespace {

double u8(int v) { return v / 255.0; }

} // namespace

const std::vector<Color>& object_palette() {
    static const std::vector<Color> p = {
        {"red", 1, 0, 0},
        {"green", 0, 1, 0},
        {"blue", 0, 0, 1},
        {"yellow", 1, 1, 0},
        {"cyan", 0, 1, 1},
        {"magenta", 1, 0, 1},
        {"orange", 1, u8(128), 0},
        {"purple", u8(128), 0, u8(128)},
    };
    return p;
}

const std::vector<Color>& background_palette() {
    static const std::vector<Color> p = {
        {"black", 0, 0, 0},
        {"gray", u8(128), u8(128), u8(128)},
        {"navy", 0, 0, u8(128)},
        {"olive", u8(128), u8(128), 0},
        {"teal", 0, u8(128), u8(128)},
        {"maroon", u8(128), 0, 0},
    };
    return p;
}

Color palette_color(const std::string& name) {
    for (const auto& c : object_palette())
        if (c.name == name) return c;
    for (const auto& c : background_palette())
        if (c.name == name) return c;
    if (name == "white") return {"white", 1, 1, 1};
    throw std::invalid_argument("unknown palette color: " + name);
}

bool covers(const ObjectSpec& obj, int frame, double px, double py) {
    const double cx = obj.x0 + frame * obj.vx;
    const double cy = obj.y0 + frame * obj.vy;
    const double x = px + 0.5, y = py + 0.5; // pixel center
    switch (obj.shape) {
        case ShapeKind::Circle: {
            const double dx = x - cx, dy = y - cy;
            return dx * dx + dy * dy <= obj.size * obj.size;
        }
        case ShapeKind::Square: {
            const double h = obj.size / 2.0;
            return std::abs(x - cx) <= h && std::abs(y - cy) <= h;
        }
        case ShapeKind::Triangle: {
            // axis-aligned isoceles, apex up, base = height = size
            const double h = obj.size / 2.0;
            const double ty = y - (cy - h); // 0 at apex, size at base
            if (ty < 0 || ty > obj.size) return false;
            const double half_width = (ty / obj.size) * h;
            return std::abs(x - cx) <= half_width;
        }
    }
    return false;
}

FrameBox object_box(const ObjectSpec& obj, int frame) {
    const double cx = obj.x0 + frame * obj.vx;
    const double cy = obj.y0 + frame * obj.vy;
    double hx = 0, hy = 0;
    switch (obj.shape) {
        case ShapeKind::Circle: hx = hy = obj.size; break;
        case ShapeKind::Square:
        case ShapeKind::Triangle: hx = hy = obj.size / 2.0; break;
    }
    return {cx - hx, cy - hy, cx + hx, cy + hy};
}

void validate(const SceneSpec& spec) {
    if (spec.frame_count < 1) throw std::invalid_argument("frame_count must be >= 1");
    if (spec.height < 1 || spec.width < 1) throw std::invalid_argument("bad resolution");
    std::set<std::string> ids;
    for (const auto& o : spec.objects) {
        if (!ids.insert(o.id).second)
            throw std::invalid_argument("duplicate object id: " + o.id);
        if (o.size <= 0) throw std::invalid_argument("object size must be > 0");
        for (double c : {o.color.r, o.color.g, o.color.b})
            if (c < 0.0 || c > 1.0) throw std::invalid_argument("color out of [0,1]");
        for (int t = 0; t < spec.frame_count; ++t) {
            FrameBox b = object_box(o, t);
            if (b.x0 < 0 || b.y0 < 0 || b.x1 > spec.width || b.y1 > spec.height)
                throw std::invalid_argument("object " + o.id + " leaves frame bounds");
        }
    }
}

namespace {

double quant(double v) { return std::lround(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

void background_pixel(const BackgroundSpec& bg, int h, int /*w*/, int y, int x,
                      double* out) {
    switch (bg.kind) {
        case BackgroundKind::SolidColor:
            out[0] = bg.a.r; out[1] = bg.a.g; out[2] = bg.a.b;
            return;
        case BackgroundKind::TwoToneGradient: {
            const double f = h > 1 ? static_cast<double>(y) / (h - 1) : 0.0;
            out[0] = quant(bg.a.r + (bg.b.r - bg.a.r) * f);
            out[1] = quant(bg.a.g + (bg.b.g - bg.a.g) * f);
            out[2] = quant(bg.a.b + (bg.b.b - bg.a.b) * f);
            return;
        }
        case BackgroundKind::Checker: {
            const int cell = std::max(1, bg.checker_cell);
            const bool odd = ((x / cell) + (y / cell)) % 2 == 1;
            const Color& c = odd ? bg.b : bg.a;
            out[0] = c.r; out[1] = c.g; out[2] = c.b;
            return;
        }
    }
}

// Render with an optional object filter; objects render in list order.
Tensor render_filtered(const SceneSpec& spec,
                       const std::function<bool(const ObjectSpec&)>& keep,
                       const Color* forced_background = nullptr) {
    validate(spec);
    const int T = spec.frame_count, H = spec.height, W = spec.width;
    Tensor video({T, H, W, 3});
    double* d = video.data();
    for (int t = 0; t < T; ++t) {
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                double* px = d + ((static_cast<int64_t>(t) * H + y) * W + x) * 3;
                if (forced_background) {
                    px[0] = forced_background->r;
                    px[1] = forced_background->g;
                    px[2] = forced_background->b;
                } else {
                    background_pixel(spec.background, H, W, y, x, px);
                }
                for (const auto& o : spec.objects) {
                    if (keep && !keep(o)) continue;
                    if (covers(o, t, x, y)) {
                        px[0] = o.color.r; px[1] = o.color.g; px[2] = o.color.b;
                    }
                }
            }
        }
    }
    return video;
}

} // namespace

Tensor render_scene(const SceneSpec& spec) {
    return render_filtered(spec, nullptr);
}

SceneSpec apply_edit(const SceneSpec& spec, const EditSpec& edit) {
    auto find_target = [&](SceneSpec& s) -> ObjectSpec& {
        if (!edit.target_id) throw std::invalid_argument("edit requires target_id");
        for (auto& o : s.objects)
            if (o.id == *edit.target_id) return o;
        throw std::out_of_range("target object not found: " + *edit.target_id);
    };
    SceneSpec out = spec;
    switch (edit.kind) {
        case EditKind::LocalRecolor: {
            if (!edit.new_object) throw std::invalid_argument("recolor requires new_attributes");
            find_target(out).color = edit.new_object->color;
            return out;
        }
        case EditKind::LocalReplace: {
            if (!edit.new_object) throw std::invalid_argument("replace requires new_attributes");
            ObjectSpec& tgt = find_target(out);
            // shape/color/size replaced; id and trajectory preserved
            tgt.shape = edit.new_object->shape;
            tgt.color = edit.new_object->color;
            tgt.size = edit.new_object->size;
            return out;
        }
        case EditKind::LocalAdd: {
            if (!edit.new_object) throw std::invalid_argument("add requires new_attributes");
            for (const auto& o : out.objects)
                if (o.id == edit.new_object->id)
                    throw std::invalid_argument("added object id already exists");
            out.objects.push_back(*edit.new_object);
            return out;
        }
        case EditKind::LocalRemove: {
            const ObjectSpec& tgt = find_target(out);
            const std::string id = tgt.id;
            std::erase_if(out.objects, [&](const ObjectSpec& o) { return o.id == id; });
            return out;
        }
        case EditKind::BackgroundChange: {
            if (!edit.new_background)
                throw std::invalid_argument("background-change requires new background");
            out.background = *edit.new_background;
            return out;
        }
    }
    throw std::invalid_argument("unknown edit kind");
}

namespace {

const ObjectSpec& edited_object(const SceneSpec& edited_spec, const EditSpec& edit) {
    const std::string* id = nullptr;
    if (edit.kind == EditKind::LocalAdd) {
        id = &edit.new_object->id;
    } else if (edit.target_id) {
        id = &*edit.target_id;
    }
    if (!id) throw std::invalid_argument("edit has no edited object");
    for (const auto& o : edited_spec.objects)
        if (o.id == *id) return o;
    throw std::out_of_range("edited object not in edited scene: " + *id);
}

} // namespace

Tensor derive_reference(const SceneSpec& edited_spec, const EditSpec& edit) {
    if (edit.kind == EditKind::LocalRemove)
        throw std::invalid_argument("remove edits have no reference image");
    if (edit.kind == EditKind::BackgroundChange) {
        // new background with all foreground objects removed
        SceneSpec bg_only = edited_spec;
        bg_only.objects.clear();
        bg_only.frame_count = 1;
        Tensor frame = render_scene(bg_only);
        return frame.reshaped({edited_spec.height, edited_spec.width, 3});
    }
    // local edit: the edited object alone on a white background, tight crop
    // with an 8% margin around its frame-0 bounding box
    const ObjectSpec& obj = edited_object(edited_spec, edit);
    SceneSpec solo = edited_spec;
    solo.frame_count = 1;
    const Color white{"white", 1, 1, 1};
    Tensor frame = render_filtered(
        solo, [&](const ObjectSpec& o) { return o.id == obj.id; }, &white);
    FrameBox b = object_box(obj, 0);
    const double mx = 0.08 * (b.x1 - b.x0), my = 0.08 * (b.y1 - b.y0);
    const int x0 = std::max(0, static_cast<int>(std::floor(b.x0 - mx)));
    const int y0 = std::max(0, static_cast<int>(std::floor(b.y0 - my)));
    const int x1 = std::min(edited_spec.width, static_cast<int>(std::ceil(b.x1 + mx)));
    const int y1 = std::min(edited_spec.height, static_cast<int>(std::ceil(b.y1 + my)));
    Tensor crop({y1 - y0, x1 - x0, 3});
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x)
            for (int c = 0; c < 3; ++c)
                crop[((static_cast<int64_t>(y - y0) * (x1 - x0)) + (x - x0)) * 3 + c] =
                    frame[((static_cast<int64_t>(y) * edited_spec.width) + x) * 3 + c];
    return crop;
}

std::string edit_kind_name(EditKind k) {
    switch (k) {
        case EditKind::LocalRecolor: return "local-recolor";
        case EditKind::LocalReplace: return "local-replace";
        case EditKind::LocalAdd: return "local-add";
        case EditKind::LocalRemove: return "local-remove";
        case EditKind::BackgroundChange: return "background-change";
    }
    throw std::invalid_argument("unknown edit kind");
}

EditKind edit_kind_from_name(const std::string& s) {
    if (s == "local-recolor") return EditKind::LocalRecolor;
    if (s == "local-replace") return EditKind::LocalReplace;
    if (s == "local-add") return EditKind::LocalAdd;
    if (s == "local-remove") return EditKind::LocalRemove;
    if (s == "background-change") return EditKind::BackgroundChange;
    throw std::invalid_argument("unknown edit category: " + s);
}

namespace {

std::string shape_name(ShapeKind s) {
    switch (s) {
        case ShapeKind::Circle: return "circle";
        case ShapeKind::Square: return "square";
        case ShapeKind::Triangle: return "triangle";
    }
    return "shape";
}

const ObjectSpec& scene_object(const SceneSpec& scene, const std::string& id) {
    for (const auto& o : scene.objects)
        if (o.id == id) return o;
    throw std::out_of_range("object not in scene: " + id);
}

} // namespace

std::string instruction_text(const EditSpec& edit, const SceneSpec& scene) {
    switch (edit.kind) {
        case EditKind::LocalRecolor: {
            const auto& tgt = scene_object(scene, *edit.target_id);
            return "Change the color of the " + shape_name(tgt.shape) + " to " +
                   edit.new_object->color.name;
        }
        case EditKind::LocalReplace: {
            const auto& tgt = scene_object(scene, *edit.target_id);
            return "Replace the " + shape_name(tgt.shape) + " with a " +
                   edit.new_object->color.name + " " + shape_name(edit.new_object->shape);
        }
        case EditKind::LocalAdd:
            return "Add a " + edit.new_object->color.name + " " +
                   shape_name(edit.new_object->shape);
        case EditKind::LocalRemove: {
            const auto& tgt = scene_object(scene, *edit.target_id);
            return "Remove the " + shape_name(tgt.shape);
        }
        case EditKind::BackgroundChange: {
            const auto& bg = *edit.new_background;
            switch (bg.kind) {
                case BackgroundKind::SolidColor:
                    return "Replace the background with a solid " + bg.a.name + " background";
                case BackgroundKind::TwoToneGradient:
                    return "Replace the background with a " + bg.a.name + "-to-" +
                           bg.b.name + " gradient";
                case BackgroundKind::Checker:
                    return "Replace the background with a checker pattern";
            }
            break;
        }
    }
    throw std::invalid_argument("unknown edit kind");
}

namespace {

Tensor diff_mask_dilated(const Tensor& a, const Tensor& b) {
    const int64_t T = a.shape()[0], H = a.shape()[1], W = a.shape()[2];
    Tensor raw({T, H, W});
    for (int64_t t = 0; t < T; ++t)
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x) {
                const int64_t o = ((t * H + y) * W + x) * 3;
                raw[(t * H + y) * W + x] =
                    (a[o] != b[o] || a[o + 1] != b[o + 1] || a[o + 2] != b[o + 2]) ? 1.0 : 0.0;
            }
    // dilate by 1 pixel (3x3 neighborhood), per frame
    Tensor out({T, H, W});
    for (int64_t t = 0; t < T; ++t)
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x) {
                double v = 0.0;
                for (int64_t dy = -1; dy <= 1 && v == 0.0; ++dy)
                    for (int64_t dx = -1; dx <= 1; ++dx) {
                        const int64_t ny = y + dy, nx = x + dx;
                        if (ny < 0 || ny >= H || nx < 0 || nx >= W) continue;
                        if (raw[(t * H + ny) * W + nx] != 0.0) { v = 1.0; break; }
                    }
                out[(t * H + y) * W + x] = v;
            }
    return out;
}

// Jitter palette colors on the 1/255 grid so independently generated scenes
// almost never render pixel-identical frames; color names stay canonical so
// instruction text is unaffected.
Color jitter_color(Color c, Rng& rng) {
    for (double* ch : {&c.r, &c.g, &c.b}) {
        const int v = static_cast<int>(std::lround(*ch * 255.0));
        const int j = static_cast<int>(rng.uniform_int(-7, 7));
        *ch = std::clamp(v + j, 0, 255) / 255.0;
    }
    return c;
}

ObjectSpec random_object(Rng& rng, const std::string& id, const GenOptions& opts,
                         const std::vector<ObjectSpec>& existing) {
    const auto& palette = object_palette();
    for (int attempt = 0; attempt < 64; ++attempt) {
        ObjectSpec o;
        o.id = id;
        o.shape = static_cast<ShapeKind>(rng.uniform_int(0, 2));
        o.color = jitter_color(
            palette[static_cast<size_t>(
                rng.uniform_int(0, static_cast<int64_t>(palette.size()) - 1))],
            rng);
        o.size = o.shape == ShapeKind::Circle
                     ? static_cast<double>(rng.uniform_int(5, 9))
                     : static_cast<double>(rng.uniform_int(10, 18));
        const double ext = o.shape == ShapeKind::Circle ? o.size : o.size / 2.0;
        const double span = opts.frame_count - 1;
        o.vx = rng.uniform(-1.5, 1.5);
        o.vy = rng.uniform(-1.5, 1.5);
        const double lo_x = ext + std::max(0.0, -o.vx * span) + 0.5;
        const double hi_x = opts.width - ext - std::max(0.0, o.vx * span) - 0.5;
        const double lo_y = ext + std::max(0.0, -o.vy * span) + 0.5;
        const double hi_y = opts.height - ext - std::max(0.0, o.vy * span) - 0.5;
        if (hi_x <= lo_x || hi_y <= lo_y) continue;
        o.x0 = rng.uniform(lo_x, hi_x);
        o.y0 = rng.uniform(lo_y, hi_y);
        // reject swept-box overlap with existing objects so analytic masks
        // never occlude each other
        bool overlaps = false;
        for (const auto& e : existing) {
            FrameBox eb{1e9, 1e9, -1e9, -1e9}, ob{1e9, 1e9, -1e9, -1e9};
            for (int t = 0; t < opts.frame_count; ++t) {
                FrameBox b1 = object_box(e, t), b2 = object_box(o, t);
                eb = {std::min(eb.x0, b1.x0), std::min(eb.y0, b1.y0),
                      std::max(eb.x1, b1.x1), std::max(eb.y1, b1.y1)};
                ob = {std::min(ob.x0, b2.x0), std::min(ob.y0, b2.y0),
                      std::max(ob.x1, b2.x1), std::max(ob.y1, b2.y1)};
            }
            if (eb.x0 < ob.x1 + 2 && ob.x0 < eb.x1 + 2 &&
                eb.y0 < ob.y1 + 2 && ob.y0 < eb.y1 + 2) { overlaps = true; break; }
        }
        if (!overlaps) return o;
    }
    ObjectSpec fallback;
    fallback.id = id;
    fallback.shape = ShapeKind::Circle;
    fallback.color = palette[0];
    fallback.size = 5;
    fallback.x0 = opts.width / 2.0;
    fallback.y0 = opts.height / 2.0;
    return fallback;
}

BackgroundSpec random_background(Rng& rng) {
    const auto& palette = background_palette();
    auto pick = [&]() {
        return palette[static_cast<size_t>(
            rng.uniform_int(0, static_cast<int64_t>(palette.size()) - 1))];
    };
    BackgroundSpec bg;
    bg.kind = static_cast<BackgroundKind>(rng.uniform_int(0, 2));
    bg.a = pick();
    do { bg.b = pick(); } while (bg.b.name == bg.a.name);
    bg.a = jitter_color(bg.a, rng);
    bg.b = jitter_color(bg.b, rng);
    return bg;
}

} // namespace

GeneratedSample make_quadruplet(uint64_t seed, EditKind category, const GenOptions& opts) {
    Rng rng(Rng::seed_mix(seed, static_cast<uint64_t>(category) + 101));

    SceneSpec scene;
    scene.height = opts.height;
    scene.width = opts.width;
    scene.frame_count = opts.frame_count;
    scene.background = random_background(rng);
    const int64_t min_objects = category == EditKind::LocalAdd ? 1 : 1;
    const int64_t n_objects = rng.uniform_int(min_objects, 2);
    for (int64_t i = 0; i < n_objects; ++i)
        scene.objects.push_back(
            random_object(rng, "obj" + std::to_string(i), opts, scene.objects));

    const auto& palette = object_palette();
    auto pick_color = [&](const std::string& avoid) {
        Color c;
        do {
            c = palette[static_cast<size_t>(
                rng.uniform_int(0, static_cast<int64_t>(palette.size()) - 1))];
        } while (c.name == avoid);
        return jitter_color(c, rng);
    };

    EditSpec edit;
    edit.kind = category;
    const int64_t target_idx = rng.uniform_int(0, n_objects - 1);
    switch (category) {
        case EditKind::LocalRecolor: {
            const ObjectSpec& tgt = scene.objects[static_cast<size_t>(target_idx)];
            edit.target_id = tgt.id;
            ObjectSpec attrs = tgt;
            attrs.color = pick_color(tgt.color.name);
            edit.new_object = attrs;
            break;
        }
        case EditKind::LocalReplace: {
            const ObjectSpec& tgt = scene.objects[static_cast<size_t>(target_idx)];
            edit.target_id = tgt.id;
            ObjectSpec attrs = tgt;
            attrs.shape = static_cast<ShapeKind>(
                (static_cast<int>(tgt.shape) + static_cast<int>(rng.uniform_int(1, 2))) % 3);
            attrs.color = pick_color(tgt.color.name);
            // size is radius for circles and edge extent otherwise; convert so
            // the replacement's footprint matches the original's half-extent
            // and stays inside frame bounds
            const double ext = tgt.shape == ShapeKind::Circle ? tgt.size : tgt.size / 2.0;
            attrs.size = attrs.shape == ShapeKind::Circle ? ext : 2.0 * ext;
            edit.new_object = attrs;
            break;
        }
        case EditKind::LocalAdd: {
            ObjectSpec add = random_object(rng, "obj" + std::to_string(n_objects), opts,
                                           scene.objects);
            edit.new_object = add;
            break;
        }
        case EditKind::LocalRemove: {
            edit.target_id = scene.objects[static_cast<size_t>(target_idx)].id;
            break;
        }
        case EditKind::BackgroundChange: {
            BackgroundSpec bg;
            do { bg = random_background(rng); } while (
                bg.kind == scene.background.kind && bg.a.name == scene.background.a.name);
            edit.new_background = bg;
            break;
        }
    }

    GeneratedSample s;
    s.seed = seed;
    s.scene = scene;
    s.edit = edit;
    s.edited_scene = apply_edit(scene, edit);
    s.quad.category = category;
    s.quad.source = render_scene(scene);
    s.quad.target = render_scene(s.edited_scene);
    s.quad.instruction = instruction_text(edit, scene);
    if (category != EditKind::LocalRemove)
        s.quad.reference = derive_reference(s.edited_scene, edit);
    s.quad.edit_mask = diff_mask_dilated(s.quad.source, s.quad.target);
    return s;
}

Annotations ground_truth_annotations(const GeneratedSample& sample) {
    const SceneSpec& scene = sample.scene;
    const int T = scene.frame_count, H = scene.height, W = scene.width;
    Annotations ann;
    ann.masks = Tensor({T, H, W});

    std::vector<const ObjectSpec*> region;
    if (sample.edit.kind == EditKind::BackgroundChange) {
        for (const auto& o : scene.objects) region.push_back(&o);
    } else if (sample.edit.kind == EditKind::LocalRemove) {
        region.push_back(&scene_object(scene, *sample.edit.target_id));
    } else {
        region.push_back(&edited_object(sample.edited_scene, sample.edit));
    }

    for (int t = 0; t < T; ++t) {
        FrameBox u{1e9, 1e9, -1e9, -1e9};
        for (const ObjectSpec* o : region) {
            FrameBox b = object_box(*o, t);
            u = {std::min(u.x0, b.x0), std::min(u.y0, b.y0),
                 std::max(u.x1, b.x1), std::max(u.y1, b.y1)};
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    if (covers(*o, t, x, y))
                        ann.masks[(static_cast<int64_t>(t) * H + y) * W + x] = 1.0;
        }
        if (region.empty()) u = {0, 0, 0, 0};
        ann.boxes.push_back(u);
    }
    return ann;
}

// ---------------------------------------------------------------------------
// persistence

namespace {

json color_to_json(const Color& c) {
    return json{{"name", c.name}, {"rgb", {c.r, c.g, c.b}}};
}
Color color_from_json(const json& j) {
    return Color{j.at("name").get<std::string>(), j.at("rgb")[0], j.at("rgb")[1], j.at("rgb")[2]};
}

json object_to_json(const ObjectSpec& o) {
    return json{{"id", o.id},
                {"shape", shape_name(o.shape)},
                {"color", color_to_json(o.color)},
                {"size", o.size},
                {"x0", o.x0}, {"y0", o.y0}, {"vx", o.vx}, {"vy", o.vy}};
}
ObjectSpec object_from_json(const json& j) {
    ObjectSpec o;
    o.id = j.at("id").get<std::string>();
    const std::string s = j.at("shape").get<std::string>();
    o.shape = s == "circle" ? ShapeKind::Circle
              : s == "square" ? ShapeKind::Square
                              : ShapeKind::Triangle;
    o.color = color_from_json(j.at("color"));
    o.size = j.at("size").get<double>();
    o.x0 = j.at("x0").get<double>();
    o.y0 = j.at("y0").get<double>();
    o.vx = j.at("vx").get<double>();
    o.vy = j.at("vy").get<double>();
    return o;
}

json background_to_json(const BackgroundSpec& b) {
    const char* kind = b.kind == BackgroundKind::SolidColor ? "solid-color"
                       : b.kind == BackgroundKind::TwoToneGradient ? "two-tone-gradient"
                                                                   : "checker";
    return json{{"kind", kind}, {"a", color_to_json(b.a)}, {"b", color_to_json(b.b)},
                {"checker_cell", b.checker_cell}};
}
BackgroundSpec background_from_json(const json& j) {
    BackgroundSpec b;
    const std::string k = j.at("kind").get<std::string>();
    b.kind = k == "solid-color" ? BackgroundKind::SolidColor
             : k == "two-tone-gradient" ? BackgroundKind::TwoToneGradient
                                        : BackgroundKind::Checker;
    b.a = color_from_json(j.at("a"));
    b.b = color_from_json(j.at("b"));
    b.checker_cell = j.at("checker_cell").get<int>();
    return b;
}

json scene_to_json(const SceneSpec& s) {
    json objs = json::array();
    for (const auto& o : s.objects) objs.push_back(object_to_json(o));
    return json{{"background", background_to_json(s.background)},
                {"objects", objs},
                {"frame_count", s.frame_count},
                {"height", s.height},
                {"width", s.width}};
}
SceneSpec scene_from_json(const json& j) {
    SceneSpec s;
    s.background = background_from_json(j.at("background"));
    for (const auto& oj : j.at("objects")) s.objects.push_back(object_from_json(oj));
    s.frame_count = j.at("frame_count").get<int>();
    s.height = j.at("height").get<int>();
    s.width = j.at("width").get<int>();
    return s;
}

json edit_to_json(const EditSpec& e) {
    json j{{"kind", edit_kind_name(e.kind)}};
    if (e.target_id) j["target_id"] = *e.target_id;
    if (e.new_object) j["new_object"] = object_to_json(*e.new_object);
    if (e.new_background) j["new_background"] = background_to_json(*e.new_background);
    return j;
}
EditSpec edit_from_json(const json& j) {
    EditSpec e;
    e.kind = edit_kind_from_name(j.at("kind").get<std::string>());
    if (j.contains("target_id")) e.target_id = j.at("target_id").get<std::string>();
    if (j.contains("new_object")) e.new_object = object_from_json(j.at("new_object"));
    if (j.contains("new_background")) e.new_background = background_from_json(j.at("new_background"));
    return e;
}

std::string frame_name(const char* prefix, int t) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s_%04d.png", prefix, t);
    return buf;
}

} // namespace

void save_sample(const std::string& dir, const GeneratedSample& sample) {
    fs::create_directories(dir);
    const int T = sample.scene.frame_count;
    const int64_t H = sample.scene.height, W = sample.scene.width;
    for (int t = 0; t < T; ++t) {
        Tensor src({H, W, 3}), tgt({H, W, 3});
        const int64_t off = static_cast<int64_t>(t) * H * W * 3;
        std::copy_n(sample.quad.source.data() + off, H * W * 3, src.data());
        std::copy_n(sample.quad.target.data() + off, H * W * 3, tgt.data());
        img::write_png(dir + "/" + frame_name("src", t), src);
        img::write_png(dir + "/" + frame_name("tgt", t), tgt);
    }
    if (sample.quad.reference)
        img::write_png(dir + "/reference.png", *sample.quad.reference);

    json meta{{"schema", 1},
              {"seed", sample.seed},
              {"category", edit_kind_name(sample.quad.category)},
              {"instruction", sample.quad.instruction},
              {"scene", scene_to_json(sample.scene)},
              {"edited_scene", scene_to_json(sample.edited_scene)},
              {"edit", edit_to_json(sample.edit)}};
    std::ofstream out(dir + "/meta.json");
    if (!out) throw std::runtime_error("cannot write " + dir + "/meta.json");
    out << meta.dump(2) << "\n";
}

GeneratedSample load_sample(const std::string& dir) {
    std::ifstream in(dir + "/meta.json");
    if (!in) throw std::runtime_error("cannot read " + dir + "/meta.json");
    json meta = json::parse(in);

    GeneratedSample s;
    s.seed = meta.at("seed").get<uint64_t>();
    s.scene = scene_from_json(meta.at("scene"));
    s.edited_scene = scene_from_json(meta.at("edited_scene"));
    s.edit = edit_from_json(meta.at("edit"));
    s.quad.category = edit_kind_from_name(meta.at("category").get<std::string>());
    s.quad.instruction = meta.at("instruction").get<std::string>();

    const int T = s.scene.frame_count;
    const int64_t H = s.scene.height, W = s.scene.width;
    s.quad.source = Tensor({T, H, W, 3});
    s.quad.target = Tensor({T, H, W, 3});
    for (int t = 0; t < T; ++t) {
        Tensor src = img::read_png(dir + "/" + frame_name("src", t));
        Tensor tgt = img::read_png(dir + "/" + frame_name("tgt", t));
        const int64_t off = static_cast<int64_t>(t) * H * W * 3;
        std::copy_n(src.data(), H * W * 3, s.quad.source.data() + off);
        std::copy_n(tgt.data(), H * W * 3, s.quad.target.data() + off);
    }
    if (fs::exists(dir + "/reference.png"))
        s.quad.reference = img::read_png(dir + "/reference.png");
    s.quad.edit_mask = diff_mask_dilated(s.quad.source, s.quad.target);
    return s;
}

} // namespace kiwi::world
