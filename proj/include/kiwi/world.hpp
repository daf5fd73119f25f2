#pragma once

#include <optional>
#include <string>
#include <vector>

#include "kiwi/tensor.hpp"

namespace kiwi::world {

// Deterministic procedural video generator. Scenes rasterize on the integer
// pixel grid without anti-aliasing, and every rendered value is a multiple
// of 1/255, so pixel equality tests and PNG roundtrips are exact.

enum class BackgroundKind { SolidColor, TwoToneGradient, Checker };
enum class ShapeKind { Circle, Square, Triangle };
enum class EditKind { LocalRecolor, LocalReplace, LocalAdd, LocalRemove, BackgroundChange };

struct Color {
    std::string name; // palette name used in instruction text
    double r = 0, g = 0, b = 0;
};

// Palette of u8-exact colors. White is reserved for reference backgrounds.
const std::vector<Color>& object_palette();
const std::vector<Color>& background_palette();
Color palette_color(const std::string& name);

struct ObjectSpec {
    std::string id;
    ShapeKind shape = ShapeKind::Circle;
    Color color;
    double size = 8;          // circle: radius; square/triangle: edge extent
    double x0 = 0, y0 = 0;    // center position at frame 0
    double vx = 0, vy = 0;    // velocity in pixels per frame
};

struct BackgroundSpec {
    BackgroundKind kind = BackgroundKind::SolidColor;
    Color a; // solid color / gradient top / checker primary
    Color b; // gradient bottom / checker secondary
    int checker_cell = 8;
};

struct SceneSpec {
    BackgroundSpec background;
    std::vector<ObjectSpec> objects; // draw order; later objects on top
    int frame_count = 8;
    int height = 64, width = 64;
};

struct EditSpec {
    EditKind kind = EditKind::LocalRecolor;
    std::optional<std::string> target_id;         // recolor/replace/remove
    std::optional<ObjectSpec> new_object;         // recolor(color)/replace/add
    std::optional<BackgroundSpec> new_background; // background-change
};

struct Quadruplet {
    Tensor source;                  // (T,H,W,3)
    std::string instruction;
    std::optional<Tensor> reference; // (h,w,3)
    Tensor target;                  // (T,H,W,3)
    Tensor edit_mask;               // (T,H,W) in {0,1}
    EditKind category = EditKind::LocalRecolor;
};

// Quadruplet together with the specs it was generated from, so oracle
// adapters can recover exact ground truth.
struct GeneratedSample {
    Quadruplet quad;
    SceneSpec scene;
    SceneSpec edited_scene;
    EditSpec edit;
    uint64_t seed = 0;
};

struct FrameBox {
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0; // [x0,x1] x [y0,y1], pixel units
    bool empty() const { return x1 <= x0 || y1 <= y0; }
};

struct Annotations {
    std::vector<FrameBox> boxes; // one per frame
    Tensor masks;                // (T,H,W) in {0,1}
};

struct GenOptions {
    int height = 64, width = 64;
    int frame_count = 8;
};

void validate(const SceneSpec& spec); // throws std::invalid_argument

Tensor render_scene(const SceneSpec& spec);
SceneSpec apply_edit(const SceneSpec& spec, const EditSpec& edit);
Tensor derive_reference(const SceneSpec& edited_spec, const EditSpec& edit);
std::string instruction_text(const EditSpec& edit, const SceneSpec& scene);
GeneratedSample make_quadruplet(uint64_t seed, EditKind category,
                                const GenOptions& opts = {});
Annotations ground_truth_annotations(const GeneratedSample& sample);

// Analytic per-frame coverage of one object (no background).
bool covers(const ObjectSpec& obj, int frame, double px, double py);
FrameBox object_box(const ObjectSpec& obj, int frame);

std::string edit_kind_name(EditKind k);
EditKind edit_kind_from_name(const std::string& s); // throws on unknown

// Directory-per-sample persistence: frame PNGs, reference PNG, meta.json.
void save_sample(const std::string& dir, const GeneratedSample& sample);
GeneratedSample load_sample(const std::string& dir);

} // namespace kiwi::world
