#pragma once

#include <filesystem>

#include "pyrad/tensor.hpp"

namespace pyrad {

// Little-endian float32 array in the standard ".npy" v1.0 container, so
// exported grids load directly into the usual array tooling.
void write_npy(const std::filesystem::path& file, const Tensor& t);

}  // namespace pyrad
