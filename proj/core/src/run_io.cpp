#include "shd/run_io.hpp"

#include <charconv>
#include <fstream>

#include <nlohmann/json.hpp>

#include "shd/dump.hpp"
#include "shd/error.hpp"

namespace shd {

namespace {

using nlohmann::json;

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream file(path, std::ios::trunc);
    if (!file) throw ConfigError("cannot open '" + path.string() + "' for writing");
    return file;
}

}  // namespace

std::string format_double(double value) {
    char buf[40];
    const auto res = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, res.ptr);
}

void write_teacher_metrics_csv(const std::filesystem::path& path, const RunMetrics& metrics) {
    std::ofstream file = open_out(path);
    file << "step,task_loss,val_loss\n";
    for (const StepRecord& rec : metrics.steps) {
        file << rec.step << ',' << format_double(rec.task_loss) << ','
             << format_double(rec.val_loss) << '\n';
    }
}

void write_distill_metrics_csv(const std::filesystem::path& path, const RunMetrics& metrics) {
    std::ofstream file = open_out(path);
    file << "step,task_loss,shd_loss,aux_loss,total_loss,val_loss\n";
    for (const StepRecord& rec : metrics.steps) {
        file << rec.step << ',' << format_double(rec.task_loss) << ','
             << format_double(rec.shd_loss) << ',' << format_double(rec.aux_loss) << ','
             << format_double(rec.total_loss) << ',' << format_double(rec.val_loss) << '\n';
    }
}

void write_alphas_csv(const std::filesystem::path& path, const RunMetrics& metrics) {
    std::ofstream file = open_out(path);
    file << "step,layer,group,sample,alpha\n";
    for (const AlphaRecord& rec : metrics.alphas) {
        file << rec.step << ',' << rec.teacher_layer << ',' << rec.group << ',' << rec.sample
             << ',' << format_double(rec.alpha) << '\n';
    }
}

void save_model(const std::filesystem::path& dir, const TinyTransformer& model) {
    std::filesystem::create_directories(dir);
    json j;
    j["version"] = 1;
    j["kind"] = "tiny_transformer";
    j["vocab"] = model.cfg.vocab;
    j["d_model"] = model.cfg.d_model;
    j["heads"] = model.cfg.heads;
    j["layers"] = model.cfg.layers;
    j["max_seq"] = model.cfg.max_seq;
    j["causal"] = model.cfg.causal;
    j["dtype"] = "f32";
    j["byte_order"] = "little";
    j["data_file"] = "model.bin";
    j["tensors"] = json::array();

    std::vector<Matrix> blobs;
    for (const auto& [name, mat] : model.parameters()) {
        j["tensors"].push_back({{"name", name}, {"rows", mat->rows()}, {"cols", mat->cols()}});
        blobs.push_back(*mat);
    }
    std::ofstream jf = open_out(dir / "model.json");
    jf << j.dump(2) << "\n";
    jf.close();
    write_f32_file(dir / "model.bin", blobs);
}

TinyTransformer load_model(const std::filesystem::path& dir) {
    std::ifstream jf(dir / "model.json");
    if (!jf) throw ConfigError("cannot open '" + (dir / "model.json").string() + "'");
    json j;
    try {
        jf >> j;
    } catch (const json::exception& e) {
        throw ConfigError("model.json parse error: " + std::string(e.what()));
    }
    for (const char* key :
         {"version", "kind", "vocab", "d_model", "heads", "layers", "max_seq", "causal",
          "dtype", "byte_order", "data_file", "tensors"}) {
        if (!j.contains(key)) throw ConfigError(std::string("model.json: missing key '") + key + "'");
    }
    if (j["kind"].get<std::string>() != "tiny_transformer" || j["version"].get<int>() != 1) {
        throw ConfigError("model.json: unsupported kind/version");
    }

    TinyTransformerConfig cfg;
    cfg.vocab = j["vocab"].get<std::size_t>();
    cfg.d_model = j["d_model"].get<std::size_t>();
    cfg.heads = j["heads"].get<std::size_t>();
    cfg.layers = j["layers"].get<std::size_t>();
    cfg.max_seq = j["max_seq"].get<std::size_t>();
    cfg.causal = j["causal"].get<bool>();
    cfg.validate();

    // Struct shapes come from the config; the tensor table must agree.
    TinyTransformer model = TinyTransformer::random_init(cfg, 0);
    auto params = model.parameters();
    if (!j["tensors"].is_array() || j["tensors"].size() != params.size()) {
        throw ConfigError("model.json: tensor table size mismatch");
    }

    std::size_t total_floats = 0;
    for (std::size_t k = 0; k < params.size(); ++k) {
        const auto& entry = j["tensors"][k];
        const auto name = entry["name"].get<std::string>();
        const auto rows = entry["rows"].get<std::size_t>();
        const auto cols = entry["cols"].get<std::size_t>();
        if (name != params[k].first || rows != params[k].second->rows() ||
            cols != params[k].second->cols()) {
            throw ConfigError("model.json: tensor '" + name + "' does not match architecture");
        }
        total_floats += rows * cols;
    }

    const auto bin_path = dir / j["data_file"].get<std::string>();
    std::vector<Matrix> flat = read_f32_file(bin_path, 1, 1, total_floats);
    const double* src = flat[0].data();
    for (auto& [name, mat] : params) {
        for (std::size_t i = 0; i < mat->size(); ++i) mat->data()[i] = *src++;
    }
    return model;
}

}  // namespace shd
