// Command-line surface for the squeezing-heads lab: train a toy teacher,
// distill a student with squeezed attention supervision, squeeze dumped
// attention tensors offline, verify merges against the exact oracles, and
// analyze head redundancy.
//
// Exit codes: 0 success, 2 usage/config error, 3 numeric failure.

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "shd/dump.hpp"
#include "shd/error.hpp"
#include "shd/oracle.hpp"
#include "shd/run_io.hpp"
#include "shd/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace shd;

namespace {

// Strict config reader: every key must be consumed, unknown keys are fatal.
class ConfigReader {
public:
    explicit ConfigReader(const fs::path& path) : path_(path.string()) {
        std::ifstream file(path);
        if (!file) throw ConfigError("cannot open config file '" + path_ + "'");
        try {
            file >> doc_;
        } catch (const json::exception& e) {
            throw ConfigError("config '" + path_ + "': " + e.what());
        }
        if (!doc_.is_object()) throw ConfigError("config '" + path_ + "' must be a JSON object");
    }

    template <typename T>
    T require(const std::string& key) {
        if (!doc_.contains(key)) {
            throw ConfigError("config '" + path_ + "': missing required key '" + key + "'");
        }
        seen_.insert(key);
        return read<T>(key);
    }

    template <typename T>
    T get_or(const std::string& key, T fallback) {
        if (!doc_.contains(key)) return fallback;
        seen_.insert(key);
        return read<T>(key);
    }

    // Call after all reads: rejects typos instead of silently ignoring them.
    void reject_unknown_keys() const {
        for (const auto& [key, value] : doc_.items()) {
            if (!seen_.count(key)) {
                throw ConfigError("config '" + path_ + "': unknown key '" + key + "'");
            }
        }
    }

private:
    template <typename T>
    T read(const std::string& key) {
        try {
            return doc_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError("config '" + path_ + "': key '" + key + "': " + e.what());
        }
    }

    std::string path_;
    json doc_;
    std::set<std::string> seen_;
};

struct TaskSpec {
    TaskKind kind = TaskKind::Copy;
    std::size_t vocab = 0;
    std::size_t seq_len = 0;
    std::size_t dataset_size = 0;
    std::uint64_t dataset_seed = 0;
    std::size_t val_size = 0;
    std::string text_path;
};

TaskSpec read_task_spec(ConfigReader& cfg) {
    TaskSpec task;
    task.kind = parse_task_kind(cfg.require<std::string>("task"));
    task.vocab = cfg.require<std::size_t>("vocab");
    task.seq_len = cfg.require<std::size_t>("seq_len");
    task.dataset_size = cfg.get_or<std::size_t>("dataset_size", 4096);
    task.dataset_seed = cfg.get_or<std::uint64_t>("dataset_seed", 1);
    task.val_size = cfg.get_or<std::size_t>("val_size", 64);
    task.text_path = cfg.get_or<std::string>("text_path", "");
    if (task.kind == TaskKind::CharLm && task.text_path.empty()) {
        throw ConfigError("char_lm task requires 'text_path'");
    }
    return task;
}

std::pair<Dataset, Dataset> build_datasets(const TaskSpec& task) {
    Dataset train_set = make_dataset(task.kind, task.dataset_seed, task.dataset_size,
                                     task.seq_len, task.vocab, task.text_path);
    // Validation data comes from a derived stream so it never overlaps the
    // training draw for the generated tasks.
    Dataset val_set = make_dataset(task.kind, Rng::mix(task.dataset_seed, 0x7A11D), task.val_size,
                                   task.seq_len, task.vocab, task.text_path);
    return {std::move(train_set), std::move(val_set)};
}

TrainOptions read_train_options(ConfigReader& cfg) {
    TrainOptions opts;
    opts.steps = cfg.require<std::size_t>("steps");
    opts.lr = cfg.require<double>("lr");
    opts.seed = cfg.require<std::uint64_t>("seed");
    opts.batch_size = cfg.get_or<std::size_t>("batch_size", 8);
    opts.val_every = cfg.get_or<std::size_t>("val_every", 100);
    opts.alpha_log_every = cfg.get_or<std::size_t>("alpha_log_every", 1);
    opts.alpha_hist_every = cfg.get_or<std::size_t>("alpha_hist_every", 100);
    return opts;
}

MergeStrategy parse_strategy(const std::string& name) {
    if (name == "shd") return MergeStrategy::Shd;
    if (name == "constant") return MergeStrategy::ConstantHalf;
    if (name == "hard-select") return MergeStrategy::HardSelect;
    if (name == "head-match") return MergeStrategy::HeadMatch;
    throw ConfigError("unknown strategy '" + name +
                      "' (expected shd, constant, hard-select or head-match)");
}

AttnLossKind parse_attn_loss(const std::string& name) {
    if (name == "kl") return AttnLossKind::KL;
    if (name == "mse") return AttnLossKind::MSE;
    throw ConfigError("unknown attention loss '" + name + "' (expected kl or mse)");
}

BaselineKind parse_baseline(const std::string& name) {
    if (name == "none") return BaselineKind::None;
    if (name == "self_corr") return BaselineKind::SelfCorrelation;
    if (name == "projector") return BaselineKind::Projector;
    throw ConfigError("unknown baseline '" + name + "' (expected none, self_corr or projector)");
}

int cmd_train_teacher(const std::string& config_path, const std::string& out_dir) {
    ConfigReader cfg{fs::path(config_path)};
    const TaskSpec task = read_task_spec(cfg);

    TinyTransformerConfig model_cfg;
    model_cfg.vocab = task.vocab;
    model_cfg.d_model = cfg.require<std::size_t>("d_model");
    model_cfg.heads = cfg.require<std::size_t>("heads");
    model_cfg.layers = cfg.require<std::size_t>("layers");
    model_cfg.max_seq = cfg.get_or<std::size_t>("max_seq", task.seq_len);
    model_cfg.causal = cfg.get_or<bool>("causal", true);
    const TrainOptions opts = read_train_options(cfg);
    cfg.reject_unknown_keys();
    model_cfg.validate();

    const auto [train_set, val_set] = build_datasets(task);
    RunMetrics metrics;
    const TinyTransformer model = train_teacher(model_cfg, train_set, val_set, opts, &metrics);

    fs::create_directories(out_dir);
    save_model(out_dir, model);
    write_teacher_metrics_csv(fs::path(out_dir) / "metrics.csv", metrics);
    std::cout << "teacher trained: " << opts.steps << " steps, final val CE "
              << format_double(metrics.final_val_loss) << "\n";
    return 0;
}

int cmd_distill(const std::string& teacher_dir, const std::string& config_path,
                const std::string& strategy_flag, const std::string& attn_loss_flag,
                const std::string& out_dir) {
    const TinyTransformer teacher = load_model(teacher_dir);

    ConfigReader cfg{fs::path(config_path)};
    const TaskSpec task = read_task_spec(cfg);

    TinyTransformerConfig student_cfg;
    student_cfg.vocab = task.vocab;
    student_cfg.d_model = cfg.require<std::size_t>("student_d_model");
    student_cfg.heads = cfg.require<std::size_t>("student_heads");
    student_cfg.layers = cfg.require<std::size_t>("student_layers");
    student_cfg.max_seq = cfg.get_or<std::size_t>("max_seq", task.seq_len);
    student_cfg.causal = teacher.cfg.causal;

    DistillConfig dcfg;
    dcfg.beta = cfg.get_or<double>("beta", 2.0);
    dcfg.attn_temperature = cfg.get_or<double>("attn_temperature", 2.0);
    dcfg.logit_temperature = cfg.get_or<double>("logit_temperature", 2.0);
    dcfg.use_logit_kd = cfg.get_or<bool>("use_logit_kd", false);
    dcfg.strategy = parse_strategy(
        !strategy_flag.empty() ? strategy_flag : cfg.get_or<std::string>("strategy", "shd"));
    dcfg.attn_loss = parse_attn_loss(
        !attn_loss_flag.empty() ? attn_loss_flag : cfg.get_or<std::string>("attn_loss", "kl"));
    dcfg.baseline = parse_baseline(cfg.get_or<std::string>("baseline", "none"));
    dcfg.hard_select_seed = cfg.get_or<std::uint64_t>("hard_select_seed", 0);
    dcfg.head_match_calibration = cfg.get_or<std::size_t>("head_match_calibration", 8);
    if (dcfg.beta < 0.0) throw ConfigError("beta must be >= 0");
    if (dcfg.attn_temperature <= 0.0) throw ConfigError("attn_temperature must be > 0");
    if (dcfg.attn_temperature < 1.0) {
        std::cerr << "warning: attn_temperature " << dcfg.attn_temperature
                  << " is below 1.0; supervision maps get sharpened, not softened\n";
    }
    const TrainOptions opts = read_train_options(cfg);
    cfg.reject_unknown_keys();
    student_cfg.validate();

    if (task.vocab != teacher.cfg.vocab) {
        throw ConfigError("config vocab " + std::to_string(task.vocab) + " != teacher vocab " +
                          std::to_string(teacher.cfg.vocab));
    }
    if (task.seq_len > teacher.cfg.max_seq) {
        throw ConfigError("seq_len exceeds the teacher's max_seq");
    }

    const auto [train_set, val_set] = build_datasets(task);
    RunMetrics metrics;
    const TinyTransformer student =
        distill_student(teacher, student_cfg, train_set, val_set, dcfg, opts, &metrics);

    fs::create_directories(out_dir);
    save_model(out_dir, student);
    write_distill_metrics_csv(fs::path(out_dir) / "metrics.csv", metrics);
    write_alphas_csv(fs::path(out_dir) / "alphas.csv", metrics);
    std::cout << "student distilled: " << opts.steps << " steps, final val CE "
              << format_double(metrics.final_val_loss) << "\n";
    return 0;
}

int cmd_squeeze(const std::string& dump_dir, std::size_t target_heads,
                const std::string& out_dir) {
    const Dump input = read_dump(dump_dir);
    const std::size_t heads = input.manifest.heads;
    if (target_heads == 0 || target_heads > heads) {
        throw ConfigError("--target-heads must be in [1, " + std::to_string(heads) + "], got " +
                          std::to_string(target_heads));
    }
    MergePlan plan{partition_heads(heads, target_heads), MergeStrategy::Shd, 0};

    Dump output;
    output.manifest = input.manifest;
    output.manifest.heads = target_heads;
    json alphas_doc;
    alphas_doc["target_heads"] = target_heads;
    alphas_doc["layers"] = json::array();

    for (std::size_t l = 0; l < input.manifest.layers; ++l) {
        AttentionBundle bundle;
        bundle.maps = input.maps[l];
        bundle.head_values = input.head_values[l];
        bundle.seq_len = input.manifest.seq_len;
        bundle.causal = input.manifest.causal;
        const MergeResult merged = squeeze_heads(bundle, plan);

        std::vector<Matrix> value_sums;
        for (const auto& group : plan.groups) {
            Matrix acc = input.head_values[l][group[0]];
            for (std::size_t k = 1; k < group.size(); ++k) {
                acc = add(acc, input.head_values[l][group[k]]);
            }
            value_sums.push_back(std::move(acc));
        }
        output.maps.push_back(merged.maps);
        output.head_values.push_back(std::move(value_sums));

        json layer_entry;
        layer_entry["layer"] = l;
        layer_entry["groups"] = json::array();
        for (std::size_t g = 0; g < plan.groups.size(); ++g) {
            layer_entry["groups"].push_back({{"group", g},
                                             {"heads", plan.groups[g]},
                                             {"alphas", merged.alphas[g]},
                                             {"residual", merged.residuals[g]}});
        }
        alphas_doc["layers"].push_back(std::move(layer_entry));
    }

    write_dump(out_dir, output);
    std::ofstream af(fs::path(out_dir) / "alphas.json", std::ios::trunc);
    if (!af) throw ConfigError("cannot write alphas.json in '" + out_dir + "'");
    af << alphas_doc.dump(2) << "\n";
    std::cout << "squeezed " << heads << " heads -> " << target_heads << " across "
              << input.manifest.layers << " layers\n";
    return 0;
}

std::vector<std::size_t> parse_group(const std::string& spec) {
    std::vector<std::size_t> heads;
    std::string token;
    for (char c : spec + ",") {
        if (c == ',') {
            if (!token.empty()) {
                try {
                    heads.push_back(std::stoul(token));
                } catch (const std::exception&) {
                    throw ConfigError("bad head index '" + token + "' in --group");
                }
                token.clear();
            }
        } else {
            token.push_back(c);
        }
    }
    if (heads.empty()) throw ConfigError("--group must list at least one head index");
    return heads;
}

int cmd_oracle(const std::string& dump_dir, std::size_t layer, const std::string& group_spec,
               const std::string& mode, double step) {
    const Dump dump = read_dump(dump_dir);
    if (layer >= dump.manifest.layers) {
        throw ConfigError("--layer " + std::to_string(layer) + " out of range (dump has " +
                          std::to_string(dump.manifest.layers) + " layers)");
    }
    const std::vector<std::size_t> group = parse_group(group_spec);
    std::vector<Matrix> maps, vals;
    for (std::size_t head : group) {
        if (head >= dump.manifest.heads) {
            throw ConfigError("head " + std::to_string(head) + " out of range (dump has " +
                              std::to_string(dump.manifest.heads) + " heads)");
        }
        maps.push_back(dump.maps[layer][head]);
        vals.push_back(dump.head_values[layer][head]);
    }
    const bool pairwise = group.size() == 2;
    if (mode == "grid" && !pairwise) {
        throw ConfigError("--mode grid needs a group of exactly 2 heads");
    }

    const auto inst = CompressionInstance::from_group(maps, vals);
    const double scale_ref = frobenius_norm_sq(inst.target);
    // Dumps are f32; comparisons run at the relaxed tolerance.
    const double tol = 1e-6 * (1.0 + scale_ref);

    auto print_row = [](const char* name, double value) {
        std::cout << "  " << name << " = " << format_double(value) << "\n";
    };
    std::cout << "oracle report (layer " << layer << ", group";
    for (std::size_t head : group) std::cout << ' ' << head;
    std::cout << ", mode " << mode << ")\n";

    bool pass = true;
    double e_closed = std::numeric_limits<double>::quiet_NaN();

    if (pairwise) {
        const auto closed = pairwise_alpha(maps[0], maps[1], vals[0], vals[1]);
        e_closed = closed.energy;
        print_row("alpha_closed", closed.alpha);
        print_row("E(alpha_closed)", closed.energy);
        if (mode == "grid" || mode == "all") {
            const auto grid = grid_search_alpha(maps[0], maps[1], vals[0], vals[1], step);
            print_row("alpha_grid", grid.alpha);
            print_row("E(alpha_grid)", grid.energy);
            pass = pass && closed.energy <= grid.energy + tol;
        }
        const auto paper = pairwise_alpha_paper_form(maps[0], maps[1], vals[0], vals[1]);
        print_row("alpha_paper_form", paper.alpha);
        print_row("E(alpha_paper_form)", paper.energy);
        pass = pass && paper.energy >= closed.energy - tol;
        const double e0 = pair_energy(maps[0], maps[1], vals[0], vals[1], 0.0);
        const double e_half = pair_energy(maps[0], maps[1], vals[0], vals[1], 0.5);
        const double e1 = pair_energy(maps[0], maps[1], vals[0], vals[1], 1.0);
        pass = pass && e_closed <= std::min({e0, e_half, e1}) + tol;
    } else {
        const GroupMerge merged = merge_group(maps, vals);
        e_closed = residual_energy(inst, merged.map);
        print_row("E(shd_fold)", e_closed);
    }

    if (mode == "exact" || mode == "constrained" || mode == "all") {
        double unconstrained = std::numeric_limits<double>::quiet_NaN();
        if (mode != "constrained") {
            unconstrained = exact_unconstrained(inst).residual;
            print_row("residual_unconstrained", unconstrained);
        }
        if (mode == "constrained" || mode == "all") {
            const double constrained = constrained_solve(inst).residual;
            print_row("residual_constrained", constrained);
            if (mode == "all") {
                pass = pass && unconstrained <= constrained + tol;
                pass = pass && constrained <= e_closed + tol;
            }
        }
    }

    std::cout << (pass ? "PASS" : "FAIL") << "\n";
    if (!pass) throw NumericError("oracle sandwich chain violated beyond tolerance");
    return 0;
}

int cmd_analyze(const std::string& dump_dir, const std::string& report_path, bool make_random,
                std::uint64_t seed, std::size_t layers, std::size_t heads, std::size_t seq_len,
                std::size_t d_model, bool causal, const std::string& random_out) {
    if (make_random) {
        if (random_out.empty()) throw ConfigError("--make-random requires --out <dir>");
        const Dump dump = random_dump(seed, layers, heads, seq_len, d_model, causal);
        write_dump(random_out, dump);
        std::cout << "wrote random dump to " << random_out << "\n";
        return 0;
    }
    if (dump_dir.empty()) throw ConfigError("analyze requires --dump <dir>");

    const Dump dump = read_dump(dump_dir);
    json report;
    report["layers"] = json::array();
    const std::size_t h = dump.manifest.heads;
    for (std::size_t l = 0; l < dump.manifest.layers; ++l) {
        json entry;
        entry["layer"] = l;
        double mean_offdiag = 0.0;
        if (h >= 2) {
            const Matrix sim = head_similarity(dump.maps[l]);
            json sim_rows = json::array();
            for (std::size_t i = 0; i < h; ++i) {
                json row = json::array();
                for (std::size_t j = 0; j < h; ++j) {
                    row.push_back(sim(i, j));
                    if (i != j) mean_offdiag += sim(i, j);
                }
                sim_rows.push_back(std::move(row));
            }
            entry["similarity"] = std::move(sim_rows);
            mean_offdiag /= static_cast<double>(h * (h - 1));
        } else {
            entry["similarity"] = json::array({json::array({1.0})});
            mean_offdiag = 1.0;
        }
        entry["mean_offdiag_similarity"] = mean_offdiag;

        // Alpha histogram for the default merge: adjacent heads pairwise.
        AttentionBundle bundle;
        bundle.maps = dump.maps[l];
        bundle.head_values = dump.head_values[l];
        bundle.seq_len = dump.manifest.seq_len;
        bundle.causal = dump.manifest.causal;
        const std::size_t h_s = (h + 1) / 2;
        MergePlan plan{partition_heads(h, h_s), MergeStrategy::Shd, 0};
        const MergeResult merged = squeeze_heads(bundle, plan);
        std::array<std::size_t, 20> counts{};
        std::size_t total = 0;
        for (const auto& group_alphas : merged.alphas) {
            for (const double alpha : group_alphas) {
                auto bin = static_cast<std::size_t>(alpha * 20.0);
                if (bin >= 20) bin = 19;
                ++counts[bin];
                ++total;
            }
        }
        entry["alpha_histogram"] = {{"bins", 20},
                                    {"range", {0.0, 1.0}},
                                    {"counts", counts},
                                    {"alphas_total", total}};
        report["layers"].push_back(std::move(entry));
    }

    if (report_path.empty()) {
        std::cout << report.dump(2) << "\n";
    } else {
        std::ofstream file(report_path, std::ios::trunc);
        if (!file) throw ConfigError("cannot write report to '" + report_path + "'");
        file << report.dump(2) << "\n";
        std::cout << "wrote analysis report to " << report_path << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"squeezing-heads distillation lab"};
    app.require_subcommand(1);

    auto* train_cmd = app.add_subcommand("train-teacher", "train a toy transformer teacher");
    std::string train_config, train_out;
    train_cmd->add_option("--config", train_config, "JSON config path")->required();
    train_cmd->add_option("--out", train_out, "output directory")->required();

    auto* distill_cmd = app.add_subcommand("distill", "train a student against a teacher");
    std::string distill_teacher, distill_config, distill_out;
    std::string strategy_flag, attn_loss_flag;
    distill_cmd->add_option("--teacher", distill_teacher, "teacher model directory")->required();
    distill_cmd->add_option("--config", distill_config, "JSON config path")->required();
    distill_cmd->add_option("--strategy", strategy_flag,
                            "shd|constant|hard-select|head-match (overrides config)");
    distill_cmd->add_option("--attn-loss", attn_loss_flag, "kl|mse (overrides config)");
    distill_cmd->add_option("--out", distill_out, "output directory")->required();

    auto* squeeze_cmd = app.add_subcommand("squeeze", "merge heads of a dumped model offline");
    std::string squeeze_dump, squeeze_out;
    std::size_t target_heads = 0;
    squeeze_cmd->add_option("--dump", squeeze_dump, "input dump directory")->required();
    squeeze_cmd->add_option("--target-heads", target_heads, "merged head count")->required();
    squeeze_cmd->add_option("--out", squeeze_out, "output dump directory")->required();

    auto* oracle_cmd = app.add_subcommand("oracle", "verify merges against exact solvers");
    std::string oracle_dump, oracle_group, oracle_mode = "all";
    std::size_t oracle_layer = 0;
    double oracle_step = 1e-4;
    oracle_cmd->add_option("--dump", oracle_dump, "dump directory")->required();
    oracle_cmd->add_option("--layer", oracle_layer, "layer index (0-based)")->required();
    oracle_cmd->add_option("--group", oracle_group, "comma-separated head indices")->required();
    oracle_cmd->add_option("--mode", oracle_mode, "grid|exact|constrained|all");
    oracle_cmd->add_option("--step", oracle_step, "grid resolution (default 1e-4)");

    auto* analyze_cmd = app.add_subcommand("analyze", "head similarity and alpha statistics");
    std::string analyze_dump, analyze_out;
    bool make_random = false;
    std::uint64_t rng_seed = 0;
    std::size_t rnd_layers = 2, rnd_heads = 8, rnd_seq = 16, rnd_d_model = 32;
    bool rnd_causal = false;
    analyze_cmd->add_option("--dump", analyze_dump, "dump directory");
    analyze_cmd->add_option("--out", analyze_out, "report path (or dump dir with --make-random)");
    analyze_cmd->add_flag("--make-random", make_random, "generate a seeded synthetic dump");
    analyze_cmd->add_option("--seed", rng_seed, "seed for --make-random");
    analyze_cmd->add_option("--layers", rnd_layers, "layers for --make-random");
    analyze_cmd->add_option("--heads", rnd_heads, "heads for --make-random");
    analyze_cmd->add_option("--seq-len", rnd_seq, "sequence length for --make-random");
    analyze_cmd->add_option("--d-model", rnd_d_model, "model width for --make-random");
    analyze_cmd->add_flag("--causal", rnd_causal, "causal maps for --make-random");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (train_cmd->parsed()) return cmd_train_teacher(train_config, train_out);
        if (distill_cmd->parsed()) {
            return cmd_distill(distill_teacher, distill_config, strategy_flag, attn_loss_flag,
                               distill_out);
        }
        if (squeeze_cmd->parsed()) return cmd_squeeze(squeeze_dump, target_heads, squeeze_out);
        if (oracle_cmd->parsed()) {
            if (oracle_mode != "grid" && oracle_mode != "exact" && oracle_mode != "constrained" &&
                oracle_mode != "all") {
                throw ConfigError("unknown --mode '" + oracle_mode + "'");
            }
            return cmd_oracle(oracle_dump, oracle_layer, oracle_group, oracle_mode, oracle_step);
        }
        if (analyze_cmd->parsed()) {
            return cmd_analyze(analyze_dump, make_random ? "" : analyze_out, make_random,
                               rng_seed, rnd_layers, rnd_heads, rnd_seq, rnd_d_model, rnd_causal,
                               make_random ? analyze_out : "");
        }
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "failure: " << e.what() << "\n";
        return 3;
    }
}
