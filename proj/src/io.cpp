#include "caspgrid/io.hpp"

#include <cstring>
#include <fstream>

namespace caspgrid {

namespace {
constexpr char kMagic[8] = {'C', 'G', 'R', 'D', 'U', 'M', 'P', '1'};
}

void write_grid_dump(const std::string& path, const GridTensor& grid) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw_error(ErrorKind::Io, "cannot write " + path);
  os.write(kMagic, sizeof(kMagic));
  const uint32_t dtype = 1;
  os.write(reinterpret_cast<const char*>(&dtype), sizeof(dtype));
  const uint32_t rank = static_cast<uint32_t>(grid.rank());
  os.write(reinterpret_cast<const char*>(&rank), sizeof(rank));
  for (int64_t d : grid.dims()) {
    const uint64_t e = static_cast<uint64_t>(d);
    os.write(reinterpret_cast<const char*>(&e), sizeof(e));
  }
  os.write(reinterpret_cast<const char*>(grid.data()),
           static_cast<std::streamsize>(grid.numel() * sizeof(float)));
  if (!os) throw_error(ErrorKind::Io, "write failed: " + path);
}

GridTensor read_grid_dump(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw_error(ErrorKind::Io, "cannot open " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw_error(ErrorKind::Data, "grid dump: bad magic");
  uint32_t dtype = 0, rank = 0;
  is.read(reinterpret_cast<char*>(&dtype), sizeof(dtype));
  is.read(reinterpret_cast<char*>(&rank), sizeof(rank));
  if (!is || dtype != 1) throw_error(ErrorKind::Data, "grid dump: unsupported dtype");
  if (rank > 16) throw_error(ErrorKind::Data, "grid dump: implausible rank");
  std::vector<int64_t> dims(rank);
  for (auto& d : dims) {
    uint64_t e = 0;
    is.read(reinterpret_cast<char*>(&e), sizeof(e));
    d = static_cast<int64_t>(e);
  }
  if (!is) throw_error(ErrorKind::Data, "grid dump: truncated header");
  GridTensor grid(dims);
  is.read(reinterpret_cast<char*>(grid.data()),
          static_cast<std::streamsize>(grid.numel() * sizeof(float)));
  if (!is) throw_error(ErrorKind::Data, "grid dump: truncated payload");
  return grid;
}

}  // namespace caspgrid
