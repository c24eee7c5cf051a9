#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace shd {

enum class TaskKind { Copy, Sort, CharLm };

TaskKind parse_task_kind(const std::string& name);  // "copy" | "sort" | "char_lm"
std::string task_kind_name(TaskKind kind);

/// Token sequences with next-token targets: targets[i][t] is the token the
/// model should predict after seeing inputs[i][0..t]. The final position has
/// target -1 (ignored by the loss).
struct Dataset {
    std::vector<std::vector<int>> inputs;
    std::vector<std::vector<int>> targets;
    std::size_t vocab = 0;
    std::size_t seq_len = 0;

    std::size_t size() const { return inputs.size(); }
};

// Deterministic for a fixed seed.
//   copy:    random first half, second half repeats it (seq_len must be even)
//   sort:    random first half, second half is the first half sorted ascending
//   char_lm: sliding windows over the byte stream of text_path; bytes map to
//            token ids by sorted first-occurrence order, then modulo vocab
Dataset make_dataset(TaskKind kind, std::uint64_t seed, std::size_t size, std::size_t seq_len,
                     std::size_t vocab, const std::string& text_path = "");

}  // namespace shd
