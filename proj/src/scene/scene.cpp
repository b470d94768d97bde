#include "mcactrl/scene/scene.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "mcactrl/errors.hpp"

namespace mcactrl {

namespace {

struct PaletteEntry {
    std::string name;
    Rgb rgb;
};

const std::array<PaletteEntry, kPaletteSize>& palette() {
    static const std::array<PaletteEntry, kPaletteSize> p{{
        {"white", {240, 240, 240}},
        {"yellow", {230, 210, 40}},
        {"orange", {235, 130, 30}},
        {"red", {210, 40, 40}},
        {"magenta", {200, 50, 170}},
        {"blue", {40, 70, 210}},
        {"cyan", {40, 190, 210}},
        {"green", {50, 170, 60}},
    }};
    return p;
}

void check_color(int c) {
    if (c < 0 || c >= kPaletteSize) throw std::invalid_argument("palette index " + std::to_string(c) + " out of range");
}

uint8_t mix(double a, double b, double t) { return static_cast<uint8_t>(std::lround(a + (b - a) * t)); }

}  // namespace

Rgb palette_rgb(int color) {
    check_color(color);
    return palette()[static_cast<size_t>(color)].rgb;
}

const std::string& palette_name(int color) {
    check_color(color);
    return palette()[static_cast<size_t>(color)].name;
}

int palette_index(std::string_view name) {
    for (int i = 0; i < kPaletteSize; ++i) {
        if (palette()[static_cast<size_t>(i)].name == name) return i;
    }
    return -1;
}

int palette_distance(int a, int b) { return std::abs(a - b); }

Rgb muted_rgb(int color) {
    const Rgb c = palette_rgb(color);
    return {mix(128, c[0], 0.6), mix(128, c[1], 0.6), mix(128, c[2], 0.6)};
}

Rgb shade_rgb(Rgb c) { return {mix(0, c[0], 0.7), mix(0, c[1], 0.7), mix(0, c[2], 0.7)}; }

const char* shape_name(ObjectShape s) {
    switch (s) {
        case ObjectShape::Circle: return "circle";
        case ObjectShape::Square: return "square";
        case ObjectShape::Triangle: return "triangle";
    }
    return "?";
}

const char* texture_name(Texture t) {
    switch (t) {
        case Texture::Plain: return "plain";
        case Texture::Striped: return "striped";
        case Texture::Dotted: return "dotted";
    }
    return "?";
}

std::optional<ObjectShape> parse_shape(std::string_view name) {
    for (auto s : {ObjectShape::Circle, ObjectShape::Square, ObjectShape::Triangle}) {
        if (name == shape_name(s)) return s;
    }
    return std::nullopt;
}

std::string ObjectQuery::text() const { return palette_name(color) + " " + shape_name(shape); }

ObjectQuery ObjectQuery::parse(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string color, shape, extra;
    if (!(in >> color >> shape) || (in >> extra)) {
        throw std::invalid_argument("object query must be `<color> <shape>`, got '" + std::string(text) + "'");
    }
    const int c = palette_index(color);
    if (c < 0) throw std::invalid_argument("unknown color '" + color + "'");
    const auto s = parse_shape(shape);
    if (!s) throw std::invalid_argument("unknown shape '" + shape + "'");
    return {*s, c};
}

bool object_covers(const SceneObject& obj, int x, int y) {
    const double px = x + 0.5 - obj.cx, py = y + 0.5 - obj.cy, s = obj.scale;
    switch (obj.shape) {
        case ObjectShape::Circle: return px * px + py * py < s * s;
        case ObjectShape::Square: return px >= -s && px < s && py >= -s && py < s;
        case ObjectShape::Triangle: return py >= -s && py < s && std::abs(px) < (py + s) / 2.0;
    }
    return false;
}

namespace {

bool shaded(Texture t, int x, int y) {
    switch (t) {
        case Texture::Plain: return false;
        case Texture::Striped: return y % 4 == 2;
        case Texture::Dotted: return x % 4 == 1 && y % 4 == 1;
    }
    return false;
}

Rgb background_at(const Background& bg, int x, int y, int size) {
    switch (bg.kind) {
        case BackgroundKind::Solid: return muted_rgb(bg.color);
        case BackgroundKind::Gradient: {
            const Rgb a = muted_rgb(bg.color), b = muted_rgb(bg.color2);
            const double t = size > 1 ? static_cast<double>(x) / (size - 1) : 0.0;
            return {mix(a[0], b[0], t), mix(a[1], b[1], t), mix(a[2], b[2], t)};
        }
        case BackgroundKind::Checker: return ((x / 8 + y / 8) % 2 == 0) ? muted_rgb(bg.color) : muted_rgb(bg.color2);
    }
    return {0, 0, 0};
}

}  // namespace

RenderedScene render_scene(const SceneSpec& spec, int size) {
    if (size <= 0) throw std::invalid_argument("scene size must be positive");
    check_color(spec.background.color);
    check_color(spec.background.color2);
    for (const auto& o : spec.objects) {
        check_color(o.color);
        if (o.scale <= 0 || o.cx - o.scale < 0 || o.cy - o.scale < 0 || o.cx + o.scale > size ||
            o.cy + o.scale > size) {
            throw std::invalid_argument(std::string(shape_name(o.shape)) + " at (" + std::to_string(o.cx) + "," +
                                        std::to_string(o.cy) + ") scale " + std::to_string(o.scale) +
                                        " leaves the canvas");
        }
    }
    RenderedScene out;
    out.image = RgbImage(size, size);
    std::vector<int> owner(static_cast<size_t>(size) * size, -1);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            Rgb c = background_at(spec.background, x, y, size);
            for (size_t i = 0; i < spec.objects.size(); ++i) {
                const auto& o = spec.objects[i];
                if (!object_covers(o, x, y)) continue;
                const Rgb base = palette_rgb(o.color);
                c = shaded(o.texture, x, y) ? shade_rgb(base) : base;
                owner[static_cast<size_t>(y) * size + x] = static_cast<int>(i);
            }
            out.image.set(x, y, c);
        }
    }
    out.masks.assign(spec.objects.size(), BinaryMask(size, size));
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const int o = owner[static_cast<size_t>(y) * size + x];
            if (o >= 0) out.masks[static_cast<size_t>(o)].set(x, y);
        }
    }
    return out;
}

std::string scene_caption(const SceneSpec& spec) {
    std::string out;
    for (size_t i = 0; i < spec.objects.size(); ++i) {
        const auto& o = spec.objects[i];
        if (i) out += " and ";
        if (o.texture != Texture::Plain) out += std::string(texture_name(o.texture)) + " ";
        out += palette_name(o.color) + " " + shape_name(o.shape);
    }
    if (!out.empty()) out += " ";
    out += "on ";
    switch (spec.background.kind) {
        case BackgroundKind::Solid: out += palette_name(spec.background.color); break;
        case BackgroundKind::Gradient: out += "gradient"; break;
        case BackgroundKind::Checker: out += "checker"; break;
    }
    return out;
}

namespace {

using Rng = std::mt19937_64;

int uniform(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

ObjectShape random_shape(Rng& rng) { return static_cast<ObjectShape>(uniform(rng, 0, 2)); }

Texture random_texture(Rng& rng) {
    const int r = uniform(rng, 0, 3);
    return r == 2 ? Texture::Striped : r == 3 ? Texture::Dotted : Texture::Plain;
}

int color_at_least(Rng& rng, int away_from, int min_dist) {
    for (;;) {
        const int c = uniform(rng, 0, kPaletteSize - 1);
        if (palette_distance(c, away_from) >= min_dist) return c;
    }
}

Background random_background(Rng& rng) {
    Background bg;
    bg.kind = static_cast<BackgroundKind>(uniform(rng, 0, 2));
    bg.color = uniform(rng, 0, kPaletteSize - 1);
    bg.color2 = bg.kind == BackgroundKind::Solid ? bg.color : color_at_least(rng, bg.color, 2);
    return bg;
}

// Bounding boxes grown by `gap` pixels do not intersect.
bool apart(const SceneObject& a, const SceneObject& b, int gap) {
    return a.cx + a.scale + gap <= b.cx - b.scale || b.cx + b.scale + gap <= a.cx - a.scale ||
           a.cy + a.scale + gap <= b.cy - b.scale || b.cy + b.scale + gap <= a.cy - a.scale;
}

bool place(Rng& rng, SceneObject& obj, const std::vector<SceneObject>& others, int size, int gap = 1) {
    for (int attempt = 0; attempt < 200; ++attempt) {
        obj.cx = uniform(rng, obj.scale, size - obj.scale);
        obj.cy = uniform(rng, obj.scale, size - obj.scale);
        if (std::all_of(others.begin(), others.end(), [&](const SceneObject& o) { return apart(obj, o, gap); })) {
            return true;
        }
    }
    return false;
}

}  // namespace

std::vector<SceneSpec> sample_training_specs(int n, uint64_t seed, int size) {
    if (n < 1) throw std::invalid_argument("dataset size must be >= 1");
    Rng rng(seed);
    std::vector<SceneSpec> specs;
    specs.reserve(static_cast<size_t>(n));
    while (static_cast<int>(specs.size()) < n) {
        SceneSpec spec;
        spec.seed = seed + specs.size();
        spec.background = random_background(rng);
        const int count = uniform(rng, 0, 3) == 0 ? 2 : 1;
        bool ok = true;
        for (int i = 0; i < count && ok; ++i) {
            SceneObject o;
            o.shape = random_shape(rng);
            o.color = uniform(rng, 0, kPaletteSize - 1);
            o.texture = random_texture(rng);
            o.scale = uniform(rng, 5, count == 1 ? 10 : 7);
            ok = place(rng, o, spec.objects, size);
            spec.objects.push_back(o);
        }
        if (ok) specs.push_back(std::move(spec));
    }
    return specs;
}

std::vector<TrainingExample> make_training_dataset(int n, uint64_t seed, int size) {
    const auto& vocab = Vocabulary::instance();
    std::vector<TrainingExample> out;
    for (const auto& spec : sample_training_specs(n, seed, size)) {
        const RenderedScene scene = render_scene(spec, size);
        Tensor img = image_to_tensor(scene.image);
        img.shape.erase(img.shape.begin());
        out.push_back({std::move(img), vocab.encode(scene_caption(spec))});
    }
    return out;
}

const char* task_name(TaskKind t) {
    switch (t) {
        case TaskKind::Generation: return "generation";
        case TaskKind::Swapping: return "swapping";
        case TaskKind::Addition: return "addition";
    }
    return "?";
}

TaskKind parse_task(std::string_view name) {
    for (auto t : {TaskKind::Generation, TaskKind::Swapping, TaskKind::Addition}) {
        if (name == task_name(t)) return t;
    }
    throw std::invalid_argument("unknown task '" + std::string(name) + "'");
}

const char* variant_name(SceneVariant v) {
    switch (v) {
        case SceneVariant::Clean: return "clean";
        case SceneVariant::MultiObject: return "multi-object";
        case SceneVariant::SimilarColor: return "similar-color";
        case SceneVariant::Occlusion: return "occlusion";
        case SceneVariant::Touching: return "touching";
    }
    return "?";
}

SceneVariant parse_variant(std::string_view name) {
    for (auto v : {SceneVariant::Clean, SceneVariant::MultiObject, SceneVariant::SimilarColor, SceneVariant::Occlusion,
                   SceneVariant::Touching}) {
        if (name == variant_name(v)) return v;
    }
    throw std::invalid_argument("unknown scene variant '" + std::string(name) + "'");
}

namespace {

struct SubjectIdentity {
    ObjectShape shape;
    int color;
    Texture texture;
    int background;
};

SceneSpec subject_scene(const SubjectIdentity& id, int cx, int cy, int scale) {
    SceneSpec spec;
    spec.background = {BackgroundKind::Solid, id.background, id.background};
    spec.objects.push_back({id.shape, id.color, id.texture, cx, cy, scale});
    return spec;
}

ObjectShape other_shape(Rng& rng, ObjectShape s) {
    return static_cast<ObjectShape>((static_cast<int>(s) + uniform(rng, 1, 2)) % 3);
}

// Condition scene for one swapping case; the edited object goes last.
SceneSpec swap_condition(Rng& rng, const SubjectIdentity& id, SceneVariant variant, int size) {
    for (;;) {
        SceneSpec spec;
        SceneObject edit;
        edit.shape = other_shape(rng, id.shape);
        edit.color = color_at_least(rng, id.color, 2);
        edit.scale = uniform(rng, 6, 8);
        spec.background = random_background(rng);
        if (variant == SceneVariant::SimilarColor) {
            const int near = edit.color + (edit.color == 0 ? 1 : edit.color == kPaletteSize - 1 ? -1 : (uniform(rng, 0, 1) ? 1 : -1));
            spec.background = {BackgroundKind::Solid, near, near};
        }
        std::vector<SceneObject> others;
        bool ok = place(rng, edit, {}, size);
        if (variant == SceneVariant::MultiObject) {
            const int extra = uniform(rng, 1, 2);
            for (int i = 0; i < extra && ok; ++i) {
                SceneObject o{random_shape(rng), uniform(rng, 0, kPaletteSize - 1), random_texture(rng), 0, 0,
                              uniform(rng, 4, 6)};
                if (o.color == edit.color) o.color = (o.color + 3) % kPaletteSize;
                std::vector<SceneObject> taken = others;
                taken.push_back(edit);
                ok = place(rng, o, taken, size);
                others.push_back(o);
            }
        } else if (variant == SceneVariant::Occlusion || variant == SceneVariant::Touching) {
            SceneObject o{random_shape(rng), color_at_least(rng, edit.color, 2), Texture::Plain, 0, 0,
                          uniform(rng, 5, 7)};
            // Occlusion overlaps the boxes by a few pixels; touching puts them edge to edge.
            const int reach = edit.scale + o.scale - (variant == SceneVariant::Occlusion ? uniform(rng, 3, 5) : 0);
            const int dir = uniform(rng, 0, 3);
            o.cx = edit.cx + (dir == 0 ? reach : dir == 1 ? -reach : 0);
            o.cy = edit.cy + (dir == 2 ? reach : dir == 3 ? -reach : 0);
            ok = o.cx - o.scale >= 0 && o.cy - o.scale >= 0 && o.cx + o.scale <= size && o.cy + o.scale <= size;
            others.push_back(o);
        }
        if (!ok) continue;
        spec.objects = others;
        spec.objects.push_back(edit);
        return spec;
    }
}

}  // namespace

std::vector<BenchmarkCase> make_benchmark(const BenchmarkConfig& config) {
    if (config.subjects < 0 || config.conditions_per_subject < 0 || config.prompts_per_subject < 0) {
        throw std::invalid_argument("benchmark counts must be non-negative");
    }
    const int size = config.size;
    Rng rng(config.seed);
    std::vector<BenchmarkCase> cases;
    const int k_total = config.conditions_per_subject;
    static const SceneVariant complex_variants[] = {SceneVariant::MultiObject, SceneVariant::SimilarColor,
                                                    SceneVariant::Occlusion, SceneVariant::Touching};
    for (int s = 0; s < config.subjects; ++s) {
        SubjectIdentity id;
        id.shape = random_shape(rng);
        id.color = uniform(rng, 0, kPaletteSize - 1);
        id.texture = random_texture(rng);
        id.background = color_at_least(rng, id.color, 2);
        const std::string prefix = "s" + std::to_string(s) + "_";
        auto number = [](int k) { return (k < 10 ? "0" : "") + std::to_string(k); };

        for (int k = 0; k < k_total; ++k) {
            BenchmarkCase c;
            c.id = prefix + "swap_" + number(k);
            c.task = TaskKind::Swapping;
            c.variant = (k_total >= 5 && k >= k_total - 4) ? complex_variants[k - (k_total - 4)] : SceneVariant::Clean;
            c.condition_spec = swap_condition(rng, id, c.variant, size);
            c.condition_spec.seed = config.seed;
            const SceneObject& edit = c.condition_spec.objects.back();
            c.subject_spec = subject_scene(id, edit.cx, edit.cy, edit.scale);
            c.subject_query = {id.shape, id.color};
            c.edit_query = {edit.shape, edit.color};
            c.prompt = scene_caption(c.condition_spec);
            cases.push_back(std::move(c));
        }
        for (int k = 0; k < k_total; ++k) {
            BenchmarkCase c;
            c.id = prefix + "add_" + number(k);
            c.task = TaskKind::Addition;
            for (;;) {
                SceneSpec spec;
                spec.background = random_background(rng);
                bool ok = true;
                if (uniform(rng, 0, 1)) {
                    SceneObject o{random_shape(rng), color_at_least(rng, id.color, 2), Texture::Plain, 0, 0,
                                  uniform(rng, 4, 6)};
                    ok = place(rng, o, {}, size);
                    spec.objects.push_back(o);
                }
                SceneObject slot{id.shape, id.color, id.texture, 0, 0, 7};
                ok = ok && place(rng, slot, spec.objects, size, 2);
                if (!ok) continue;
                c.condition_spec = spec;
                c.subject_spec = subject_scene(id, slot.cx, slot.cy, slot.scale);
                c.box[0] = std::max(0, slot.cx - slot.scale - 1);
                c.box[1] = std::max(0, slot.cy - slot.scale - 1);
                c.box[2] = std::min(size - 1, slot.cx + slot.scale);
                c.box[3] = std::min(size - 1, slot.cy + slot.scale);
                break;
            }
            c.subject_query = {id.shape, id.color};
            c.prompt = scene_caption(c.condition_spec);
            cases.push_back(std::move(c));
        }
        for (int p = 0; p < config.prompts_per_subject; ++p) {
            BenchmarkCase c;
            c.id = prefix + "gen_" + number(p);
            c.task = TaskKind::Generation;
            c.subject_spec = subject_scene(id, size / 2, size / 2, 7);
            c.subject_query = {id.shape, id.color};
            SceneSpec prompt_spec;
            prompt_spec.background = random_background(rng);
            prompt_spec.objects.push_back({id.shape, uniform(rng, 0, kPaletteSize - 1), Texture::Plain, size / 2,
                                           size / 2, 7});
            c.prompt = scene_caption(prompt_spec);
            cases.push_back(std::move(c));
        }
    }
    return cases;
}

CaseImages render_case(const BenchmarkCase& c, int size) {
    CaseImages out;
    const RenderedScene subject = render_scene(c.subject_spec, size);
    out.subject = subject.image;
    out.subject_mask = subject.masks.at(0);
    if (c.task == TaskKind::Generation) return out;
    const RenderedScene condition = render_scene(c.condition_spec, size);
    out.condition = condition.image;
    if (c.task == TaskKind::Swapping) {
        out.edit_mask = condition.masks.back();
    } else {
        out.edit_mask = box_mask(size, size, c.box[0], c.box[1], c.box[2], c.box[3]);
    }
    return out;
}

void write_benchmark(const std::filesystem::path& dir, const std::vector<BenchmarkCase>& cases, int size) {
    std::vector<ManifestEntry> entries;
    for (const auto& c : cases) {
        const CaseImages img = render_case(c, size);
        ManifestEntry e;
        e.id = c.id;
        e.task = c.task;
        e.variant = c.variant;
        e.subject_image = "images/" + c.id + "_subject.png";
        e.subject_mask = "masks/" + c.id + "_subject.png";
        e.subject_query = c.subject_query.text();
        e.subject_prompt = scene_caption(c.subject_spec);
        save_png(dir / e.subject_image, img.subject);
        save_mask_png(dir / e.subject_mask, img.subject_mask);
        e.condition_image = e.edit_mask = e.edit_query = e.region = "-";
        if (c.task != TaskKind::Generation) {
            e.condition_image = "images/" + c.id + "_condition.png";
            e.edit_mask = "masks/" + c.id + "_edit.png";
            save_png(dir / e.condition_image, img.condition);
            save_mask_png(dir / e.edit_mask, img.edit_mask);
        }
        if (c.task == TaskKind::Swapping) e.edit_query = c.edit_query.text();
        if (c.task == TaskKind::Addition) {
            e.region = "regions/" + c.id + ".txt";
            save_region(dir / e.region, c.box[0], c.box[1], c.box[2], c.box[3]);
        }
        e.prompt = c.prompt;
        e.schedule_overrides = c.schedule_overrides.empty() ? "-" : c.schedule_overrides;
        entries.push_back(std::move(e));
    }
    write_manifest(dir / "manifest.tsv", entries);
}

namespace {

constexpr const char* kManifestHeader =
    "#id\ttask\tvariant\tsubject_image\tsubject_mask\tsubject_query\tsubject_prompt\tcondition_image\tedit_mask\t"
    "edit_query\tregion\tprompt\tschedule_overrides";

}  // namespace

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << kManifestHeader << '\n';
    for (const auto& e : entries) {
        out << e.id << '\t' << task_name(e.task) << '\t' << variant_name(e.variant) << '\t' << e.subject_image << '\t'
            << e.subject_mask << '\t' << e.subject_query << '\t' << e.subject_prompt << '\t' << e.condition_image
            << '\t' << e.edit_mask << '\t' << e.edit_query << '\t' << e.region << '\t' << e.prompt << '\t'
            << e.schedule_overrides << '\n';
    }
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::vector<ManifestEntry> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> f;
        std::istringstream ls(line);
        std::string field;
        while (std::getline(ls, field, '\t')) f.push_back(field);
        if (f.size() != 13) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 13 tab-separated fields, got " +
                              std::to_string(f.size()));
        }
        ManifestEntry e;
        e.id = f[0];
        try {
            e.task = parse_task(f[1]);
            e.variant = parse_variant(f[2]);
        } catch (const std::invalid_argument& err) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + err.what());
        }
        e.subject_image = f[3];
        e.subject_mask = f[4];
        e.subject_query = f[5];
        e.subject_prompt = f[6];
        e.condition_image = f[7];
        e.edit_mask = f[8];
        e.edit_query = f[9];
        e.region = f[10];
        e.prompt = f[11];
        e.schedule_overrides = f[12];
        out.push_back(std::move(e));
    }
    std::sort(out.begin(), out.end(), [](const ManifestEntry& a, const ManifestEntry& b) { return a.id < b.id; });
    return out;
}

}  // namespace mcactrl
