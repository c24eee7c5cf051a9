#include "shd/dump.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "shd/error.hpp"

namespace shd {

namespace {

using nlohmann::json;

void append_f32_le(std::string& out, float value) {
    std::uint32_t bits;
    std::memcpy(&bits, &value, sizeof(bits));
    out.push_back(static_cast<char>(bits & 0xFF));
    out.push_back(static_cast<char>((bits >> 8) & 0xFF));
    out.push_back(static_cast<char>((bits >> 16) & 0xFF));
    out.push_back(static_cast<char>((bits >> 24) & 0xFF));
}

float decode_f32_le(const unsigned char* p) {
    const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) |
                               (static_cast<std::uint32_t>(p[1]) << 8) |
                               (static_cast<std::uint32_t>(p[2]) << 16) |
                               (static_cast<std::uint32_t>(p[3]) << 24);
    float value;
    std::memcpy(&value, &bits, sizeof(value));
    return value;
}

void require_key(const json& j, const char* key, const char* where) {
    if (!j.contains(key)) {
        throw ConfigError(std::string(where) + ": missing key '" + key + "'");
    }
}

}  // namespace

void write_f32_file(const std::filesystem::path& path, const std::vector<Matrix>& mats) {
    std::string blob;
    for (const Matrix& m : mats) {
        for (std::size_t i = 0; i < m.size(); ++i) {
            append_f32_le(blob, static_cast<float>(m.data()[i]));
        }
    }
    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw ConfigError("cannot open '" + path.string() + "' for writing");
    file.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!file) throw ConfigError("write failed for '" + path.string() + "'");
}

std::vector<Matrix> read_f32_file(const std::filesystem::path& path, std::size_t count,
                                  std::size_t rows, std::size_t cols) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw ConfigError("cannot open '" + path.string() + "'");
    std::string blob((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
    const std::size_t expected = count * rows * cols * 4;
    if (blob.size() != expected) {
        throw ConfigError("'" + path.string() + "' holds " + std::to_string(blob.size()) +
                          " bytes, expected " + std::to_string(expected));
    }
    std::vector<Matrix> mats;
    mats.reserve(count);
    const auto* p = reinterpret_cast<const unsigned char*>(blob.data());
    for (std::size_t k = 0; k < count; ++k) {
        Matrix m(rows, cols);
        for (std::size_t i = 0; i < rows * cols; ++i) {
            m.data()[i] = static_cast<double>(decode_f32_le(p));
            p += 4;
        }
        mats.push_back(std::move(m));
    }
    return mats;
}

void write_dump(const std::filesystem::path& dir, const Dump& dump) {
    const DumpManifest& man = dump.manifest;
    if (man.files.size() != man.layers || dump.maps.size() != man.layers ||
        dump.head_values.size() != man.layers) {
        throw ConfigError("write_dump: manifest layer count disagrees with payload");
    }
    std::filesystem::create_directories(dir);

    json j;
    j["version"] = man.version;
    j["layers"] = man.layers;
    j["heads"] = man.heads;
    j["seq_len"] = man.seq_len;
    j["d_model"] = man.d_model;
    j["causal"] = man.causal;
    j["dtype"] = man.dtype;
    j["byte_order"] = man.byte_order;
    j["files"] = json::array();
    for (const auto& lf : man.files) {
        j["files"].push_back({{"maps", lf.maps}, {"head_values", lf.head_values}});
    }
    std::ofstream mf(dir / "manifest.json", std::ios::trunc);
    if (!mf) throw ConfigError("cannot write manifest.json in '" + dir.string() + "'");
    mf << j.dump(2) << "\n";
    mf.close();

    for (std::size_t l = 0; l < man.layers; ++l) {
        write_f32_file(dir / man.files[l].maps, dump.maps[l]);
        write_f32_file(dir / man.files[l].head_values, dump.head_values[l]);
    }
}

Dump read_dump(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    std::ifstream mf(manifest_path);
    if (!mf) throw ConfigError("cannot open '" + manifest_path.string() + "'");
    json j;
    try {
        mf >> j;
    } catch (const json::exception& e) {
        throw ConfigError("manifest.json parse error: " + std::string(e.what()));
    }

    for (const char* key : {"version", "layers", "heads", "seq_len", "d_model", "causal",
                            "dtype", "byte_order", "files"}) {
        require_key(j, key, "manifest.json");
    }

    Dump dump;
    DumpManifest& man = dump.manifest;
    man.version = j["version"].get<int>();
    if (man.version != 1) {
        throw ConfigError("manifest.json: unsupported version " + std::to_string(man.version));
    }
    man.layers = j["layers"].get<std::size_t>();
    man.heads = j["heads"].get<std::size_t>();
    man.seq_len = j["seq_len"].get<std::size_t>();
    man.d_model = j["d_model"].get<std::size_t>();
    man.causal = j["causal"].get<bool>();
    man.dtype = j["dtype"].get<std::string>();
    man.byte_order = j["byte_order"].get<std::string>();
    if (man.dtype != "f32") throw ConfigError("manifest.json: dtype must be \"f32\"");
    if (man.byte_order != "little") {
        throw ConfigError("manifest.json: byte_order must be \"little\"");
    }
    if (man.layers == 0 || man.heads == 0 || man.seq_len == 0 || man.d_model == 0) {
        throw ConfigError("manifest.json: layers, heads, seq_len, d_model must be positive");
    }
    if (!j["files"].is_array() || j["files"].size() != man.layers) {
        throw ConfigError("manifest.json: files must list exactly one entry per layer");
    }
    for (const auto& entry : j["files"]) {
        require_key(entry, "maps", "manifest.json files[]");
        require_key(entry, "head_values", "manifest.json files[]");
        man.files.push_back({entry["maps"].get<std::string>(),
                             entry["head_values"].get<std::string>()});
    }

    for (std::size_t l = 0; l < man.layers; ++l) {
        dump.maps.push_back(
            read_f32_file(dir / man.files[l].maps, man.heads, man.seq_len, man.seq_len));
        dump.head_values.push_back(
            read_f32_file(dir / man.files[l].head_values, man.heads, man.seq_len, man.d_model));
    }
    return dump;
}

Dump random_dump(std::uint64_t seed, std::size_t layers, std::size_t heads, std::size_t seq_len,
                 std::size_t d_model, bool causal) {
    Rng rng(seed);
    Dump dump;
    dump.manifest.layers = layers;
    dump.manifest.heads = heads;
    dump.manifest.seq_len = seq_len;
    dump.manifest.d_model = d_model;
    dump.manifest.causal = causal;
    const std::size_t d_head = std::max<std::size_t>(1, d_model / heads);
    const Matrix mask = causal ? causal_mask(seq_len) : Matrix{};

    for (std::size_t l = 0; l < layers; ++l) {
        dump.manifest.files.push_back(
            {"layer" + std::to_string(l) + "_maps.bin",
             "layer" + std::to_string(l) + "_values.bin"});
        std::vector<Matrix> maps, values;
        for (std::size_t h = 0; h < heads; ++h) {
            const Matrix logits = Matrix::random_normal(seq_len, seq_len, rng, 2.0);
            maps.push_back(softmax_rows(logits, causal ? &mask : nullptr, 1.0));
            // value terms are (N x d)(d x d_model) products, rank <= d
            const Matrix left = Matrix::random_normal(seq_len, d_head, rng, 1.0);
            const Matrix right = Matrix::random_normal(d_head, d_model, rng, 1.0);
            values.push_back(matmul(left, right));
        }
        dump.maps.push_back(std::move(maps));
        dump.head_values.push_back(std::move(values));
    }
    return dump;
}

}  // namespace shd
