#pragma once

#include <string>

#include "caspgrid/tensor.hpp"

namespace caspgrid {

/// Debug grid dump: 8-byte magic "CGRDUMP1", u32 dtype (1 = float32),
/// u32 rank, u64 extents[rank], then the row-major float32 payload.
void write_grid_dump(const std::string& path, const GridTensor& grid);
GridTensor read_grid_dump(const std::string& path);

}  // namespace caspgrid
