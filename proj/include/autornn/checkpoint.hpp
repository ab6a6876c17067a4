#pragma once

#include <string>

#include "autornn/optim.hpp"

namespace autornn {

// Checkpoint format: <path>.bin holds the concatenated little-endian float64
// tensors; <path>.json is a manifest of {name, rows, cols, byte_offset}
// entries in the same order. Entries are sorted by name so reruns are
// byte-identical.
void save_params(const std::string& path_prefix, const ParamMap& params);
ParamMap load_params(const std::string& path_prefix);

}  // namespace autornn
