#pragma once

// Named float tensors in a small binary container: the on-disk form of
// network parameters, optimiser moments and buffered images.

#include <filesystem>
#include <map>
#include <string>

#include "vstain/core/tensor.hpp"
#include "vstain/nets.hpp"

namespace vstain {

using TensorArchive = std::map<std::string, Tensor<float>>;

void write_archive(const TensorArchive& archive, const std::filesystem::path& path);
TensorArchive read_archive(const std::filesystem::path& path);

// Module parameters under `prefix` + parameter name.
void store_parameters(nets::Module<float>& module, const std::string& prefix, TensorArchive& archive);
// Throws IoError on a missing name or a shape mismatch.
void load_parameters(nets::Module<float>& module, const std::string& prefix, const TensorArchive& archive);

// FNV-1a over names, shapes and raw values, for equality checks.
std::string archive_fingerprint(const TensorArchive& archive);

}  // namespace vstain
