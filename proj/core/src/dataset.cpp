#include "shd/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <stdexcept>

#include "shd/error.hpp"
#include "shd/rng.hpp"

namespace shd {

TaskKind parse_task_kind(const std::string& name) {
    if (name == "copy") return TaskKind::Copy;
    if (name == "sort") return TaskKind::Sort;
    if (name == "char_lm") return TaskKind::CharLm;
    throw ConfigError("unknown task kind '" + name + "' (expected copy, sort or char_lm)");
}

std::string task_kind_name(TaskKind kind) {
    switch (kind) {
        case TaskKind::Copy: return "copy";
        case TaskKind::Sort: return "sort";
        case TaskKind::CharLm: return "char_lm";
    }
    return "?";
}

namespace {

std::vector<int> shifted_targets(const std::vector<int>& input) {
    std::vector<int> targets(input.size());
    for (std::size_t t = 0; t + 1 < input.size(); ++t) targets[t] = input[t + 1];
    targets.back() = -1;
    return targets;
}

std::vector<int> tokenize_text(const std::string& path, std::size_t vocab) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw ConfigError("char_lm: cannot open text file '" + path + "'");
    std::string text((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
    if (text.empty()) throw ConfigError("char_lm: text file '" + path + "' is empty");

    // Distinct bytes in ascending order define the base ids; ids fold into
    // the configured vocab so any vocab >= 2 works with any text.
    std::map<unsigned char, int> ids;
    for (unsigned char c : text) ids.emplace(c, 0);
    int next = 0;
    for (auto& [byte, id] : ids) id = next++;

    std::vector<int> tokens;
    tokens.reserve(text.size());
    for (unsigned char c : text) tokens.push_back(ids[c] % static_cast<int>(vocab));
    return tokens;
}

}  // namespace

Dataset make_dataset(TaskKind kind, std::uint64_t seed, std::size_t size, std::size_t seq_len,
                     std::size_t vocab, const std::string& text_path) {
    if (vocab < 2) throw ConfigError("make_dataset: vocab must be >= 2");
    if (seq_len < 2) throw ConfigError("make_dataset: seq_len must be >= 2");
    if (size == 0) throw ConfigError("make_dataset: size must be >= 1");
    if ((kind == TaskKind::Copy || kind == TaskKind::Sort) && seq_len % 2 != 0) {
        throw ConfigError("make_dataset: " + task_kind_name(kind) + " needs an even seq_len");
    }

    Dataset ds;
    ds.vocab = vocab;
    ds.seq_len = seq_len;
    ds.inputs.reserve(size);
    ds.targets.reserve(size);
    Rng rng(seed);

    switch (kind) {
        case TaskKind::Copy:
        case TaskKind::Sort: {
            const std::size_t half = seq_len / 2;
            for (std::size_t i = 0; i < size; ++i) {
                std::vector<int> seq(seq_len);
                for (std::size_t t = 0; t < half; ++t) {
                    seq[t] = static_cast<int>(rng.uniform_int(vocab));
                }
                std::copy(seq.begin(), seq.begin() + half, seq.begin() + half);
                if (kind == TaskKind::Sort) {
                    std::sort(seq.begin() + half, seq.end());
                }
                ds.targets.push_back(shifted_targets(seq));
                ds.inputs.push_back(std::move(seq));
            }
            break;
        }
        case TaskKind::CharLm: {
            const std::vector<int> tokens = tokenize_text(text_path, vocab);
            if (tokens.size() < seq_len + 1) {
                throw ConfigError("char_lm: text shorter than seq_len + 1");
            }
            const std::size_t max_start = tokens.size() - seq_len - 1;
            for (std::size_t i = 0; i < size; ++i) {
                const std::size_t start = rng.uniform_int(max_start + 1);
                std::vector<int> seq(tokens.begin() + start, tokens.begin() + start + seq_len);
                // next-token targets come from the stream, so even the last
                // position is supervised here
                std::vector<int> tgt(tokens.begin() + start + 1,
                                     tokens.begin() + start + seq_len + 1);
                ds.inputs.push_back(std::move(seq));
                ds.targets.push_back(std::move(tgt));
            }
            break;
        }
    }
    return ds;
}

}  // namespace shd
