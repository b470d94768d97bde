#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mcactrl/core/training.hpp"
#include "mcactrl/core/vocab.hpp"
#include "mcactrl/mask/mask.hpp"
#include "mcactrl/scene/image.hpp"

namespace mcactrl {

/// Eight colors ordered so that neighbours look alike; palette distance is
/// the index difference.
inline constexpr int kPaletteSize = 8;
Rgb palette_rgb(int color);
const std::string& palette_name(int color);
/// -1 if `name` is not a palette color.
int palette_index(std::string_view name);
int palette_distance(int a, int b);
/// Background rendition of a palette color, pulled toward gray so it never
/// collides with object pixels.
Rgb muted_rgb(int color);
/// Darker variant used for stripes and dots.
Rgb shade_rgb(Rgb c);

enum class ObjectShape { Circle, Square, Triangle };
enum class Texture { Plain, Striped, Dotted };
enum class BackgroundKind { Solid, Gradient, Checker };

const char* shape_name(ObjectShape s);
const char* texture_name(Texture t);
std::optional<ObjectShape> parse_shape(std::string_view name);

struct Background {
    BackgroundKind kind = BackgroundKind::Solid;
    int color = 0;
    int color2 = 0;  // gradient end / second checker color
};

/// Integer centre and half-size keep rasterisation exact.
struct SceneObject {
    ObjectShape shape = ObjectShape::Circle;
    int color = 0;
    Texture texture = Texture::Plain;
    int cx = 16;
    int cy = 16;
    int scale = 6;
};

struct SceneSpec {
    Background background;
    std::vector<SceneObject> objects;  // painter's order: later objects are in front
    uint64_t seed = 0;
};

/// Query for segmentation: the pair "color shape", e.g. "red circle".
struct ObjectQuery {
    ObjectShape shape = ObjectShape::Circle;
    int color = 0;

    std::string text() const;
    static ObjectQuery parse(std::string_view text);
};

struct RenderedScene {
    RgbImage image;
    std::vector<BinaryMask> masks;  // one per object, visible pixels only
};

/// Pixel-centre coverage test for one object.
bool object_covers(const SceneObject& obj, int x, int y);

RenderedScene render_scene(const SceneSpec& spec, int size = 32);

/// "striped red circle and blue square on white".
std::string scene_caption(const SceneSpec& spec);

/// Random scenes with one or two objects, deterministic per seed.
std::vector<SceneSpec> sample_training_specs(int n, uint64_t seed, int size = 32);
std::vector<TrainingExample> make_training_dataset(int n, uint64_t seed, int size = 32);

enum class TaskKind { Generation, Swapping, Addition };
const char* task_name(TaskKind t);
TaskKind parse_task(std::string_view name);

enum class SceneVariant { Clean, MultiObject, SimilarColor, Occlusion, Touching };
const char* variant_name(SceneVariant v);
SceneVariant parse_variant(std::string_view name);

struct BenchmarkConfig {
    int subjects = 2;
    int conditions_per_subject = 10;
    int prompts_per_subject = 5;
    uint64_t seed = 0;
    int size = 32;
};

struct BenchmarkCase {
    std::string id;
    TaskKind task = TaskKind::Swapping;
    SceneVariant variant = SceneVariant::Clean;
    SceneSpec subject_spec;
    ObjectQuery subject_query;
    /// Unused for generation cases. For swapping the edited object is the last one.
    SceneSpec condition_spec;
    /// Swapping: the object to replace. Unused otherwise.
    ObjectQuery edit_query;
    /// Addition: inclusive box where the subject goes.
    int box[4] = {0, 0, 0, 0};
    /// Generation: text prompt. Image tasks: condition caption.
    std::string prompt;
    /// Optional per-case schedule overrides, `key=value` joined by commas.
    std::string schedule_overrides;
};

/// Per subject: K swapping cases, K addition cases and P generation prompts.
/// When K >= 5 the last four swapping cases are the complex variants.
std::vector<BenchmarkCase> make_benchmark(const BenchmarkConfig& config);

struct CaseImages {
    RgbImage subject;
    BinaryMask subject_mask;
    RgbImage condition;
    /// Ground truth of the region to edit (object mask, or box for addition).
    BinaryMask edit_mask;
};
CaseImages render_case(const BenchmarkCase& c, int size = 32);

/// Writes PNGs and masks under `dir` plus `dir/manifest.tsv`.
void write_benchmark(const std::filesystem::path& dir, const std::vector<BenchmarkCase>& cases, int size = 32);

/// One manifest line per case, tab separated.
struct ManifestEntry {
    std::string id;
    TaskKind task = TaskKind::Swapping;
    SceneVariant variant = SceneVariant::Clean;
    std::string subject_image;
    std::string subject_mask;
    std::string subject_query;
    std::string subject_prompt;
    std::string condition_image;  // "-" for generation
    std::string edit_mask;        // ground truth; "-" for generation
    std::string edit_query;       // "-" unless swapping
    std::string region;           // region file for addition, else "-"
    std::string prompt;
    std::string schedule_overrides;  // "-" if none
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

}  // namespace mcactrl
