#pragma once

#include "btks/tensor.hpp"

#include <filesystem>
#include <iosfwd>

namespace btks {

// Binary tensor format: "BTKS", version u8 = 1, rank u8, rank x u32 LE extents,
// then the row-major f32 LE payload.
void write_tensor(std::ostream& os, const Tensor<float>& t);
Tensor<float> read_tensor(std::istream& is);

void save_tensor(const std::filesystem::path& path, const Tensor<float>& t);
Tensor<float> load_tensor(const std::filesystem::path& path);

} // namespace btks
