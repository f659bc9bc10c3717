#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "metacal/nnet.hpp"

namespace metacal {

/// Binary parameter checkpoint. All integers are unsigned 64-bit little
/// endian, all reals IEEE-754 binary64 little endian:
///
///   "METACAL1"                       8 bytes magic
///   input_dim, output_dim            u64, u64
///   hidden_activation, output_activation   u64 codes (0 = ReLU, 1 = Linear)
///   n_hidden, hidden_widths[n_hidden]
///   param_count                      u64
///   values[param_count]              f64, layer_layout() order
inline constexpr char kCheckpointMagic[8] = {'M', 'E', 'T', 'A', 'C', 'A', 'L', '1'};

std::vector<std::byte> serialize_params(const ParamVector& params);
/// Throws DataError on bad magic, truncation, trailing bytes or a header
/// whose param_count disagrees with the described architecture.
ParamVector deserialize_params(std::span<const std::byte> bytes);

void save_checkpoint(const std::filesystem::path& path, const ParamVector& params);
ParamVector load_checkpoint(const std::filesystem::path& path);

}  // namespace metacal
