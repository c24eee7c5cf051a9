#pragma once

#include <filesystem>
#include <string>

#include "shd/model.hpp"
#include "shd/train.hpp"

namespace shd {

// Shortest round-trip decimal form of a double (std::to_chars), so repeated
// runs serialize bit-identically.
std::string format_double(double value);

// metrics.csv with header "step,task_loss,val_loss"
void write_teacher_metrics_csv(const std::filesystem::path& path, const RunMetrics& metrics);

// metrics.csv with header "step,task_loss,shd_loss,aux_loss,total_loss,val_loss"
void write_distill_metrics_csv(const std::filesystem::path& path, const RunMetrics& metrics);

// alphas.csv with header "step,layer,group,sample,alpha"
void write_alphas_csv(const std::filesystem::path& path, const RunMetrics& metrics);

// Model checkpoint: model.json (architecture + tensor table) next to
// model.bin (little-endian f32 blobs in table order).
void save_model(const std::filesystem::path& dir, const TinyTransformer& model);
TinyTransformer load_model(const std::filesystem::path& dir);

}  // namespace shd
