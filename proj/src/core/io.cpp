#include "mcactrl/core/io.hpp"

#include <bit>
#include <cstring>
#include <span>
#include <fstream>
#include <string>

#include "mcactrl/errors.hpp"

namespace mcactrl {

namespace {

uint32_t to_le(uint32_t v) {
    if constexpr (std::endian::native == std::endian::little) {
        return v;
    } else {
        return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
    }
}

void write_u32(std::ostream& out, uint32_t v) {
    const uint32_t le = to_le(v);
    out.write(reinterpret_cast<const char*>(&le), sizeof(le));
}

uint32_t read_u32(std::istream& in) {
    uint32_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(v))) throw FormatError("truncated header");
    return to_le(v);
}

void write_floats(std::ostream& out, std::span<const float> values) {
    for (float f : values) write_u32(out, std::bit_cast<uint32_t>(f));
}

std::vector<float> read_floats(std::istream& in, size_t n) {
    std::vector<float> out(n);
    std::vector<uint32_t> raw(n);
    if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * sizeof(uint32_t)))) {
        throw FormatError("truncated float payload");
    }
    for (size_t i = 0; i < n; ++i) out[i] = std::bit_cast<float>(to_le(raw[i]));
    return out;
}

std::ofstream open_out(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return in;
}

}  // namespace

void save_weights(const std::filesystem::path& path, const ToyDenoiser& model) {
    auto out = open_out(path);
    out << model.config().header() << " params=" << model.parameter_count() << '\n';
    write_floats(out, model.flat_weights());
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

ToyDenoiser load_weights(const std::filesystem::path& path) {
    auto in = open_in(path);
    std::string header;
    if (!std::getline(in, header)) throw FormatError(path.string() + ": missing header line");
    const auto pos = header.rfind(" params=");
    if (pos == std::string::npos) throw FormatError(path.string() + ": header lacks params count");
    const long long count = std::stoll(header.substr(pos + 8));
    ToyDenoiser model(DenoiserConfig::parse_header(header.substr(0, pos)));
    if (count != model.parameter_count()) {
        throw FormatError(path.string() + ": parameter count " + std::to_string(count) +
                          " does not match the architecture in its header");
    }
    model.set_flat_weights(read_floats(in, static_cast<size_t>(count)));
    return model;
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
    auto out = open_out(path);
    out.write("MCT1", 4);
    write_u32(out, static_cast<uint32_t>(t.rank()));
    for (int d : t.shape) write_u32(out, static_cast<uint32_t>(d));
    write_floats(out, t.data);
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

Tensor load_tensor(const std::filesystem::path& path) {
    auto in = open_in(path);
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, "MCT1", 4) != 0) throw FormatError(path.string() + ": bad magic");
    const uint32_t rank = read_u32(in);
    if (rank > 8) throw FormatError(path.string() + ": implausible rank");
    Shape shape;
    for (uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<int>(read_u32(in)));
    const auto n = static_cast<size_t>(shape_numel(shape));
    const std::vector<float> values = read_floats(in, n);
    return Tensor(shape, FloatBuffer(values.begin(), values.end()));
}

}  // namespace mcactrl
