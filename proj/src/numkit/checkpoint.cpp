#include "strv/numkit/checkpoint.hpp"

#include <fstream>
#include <string_view>

#include "strv/errors.hpp"
#include "strv/numkit/binary_io.hpp"

namespace strv::numkit {

void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& entries) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  BinaryWriter w(out);
  w.put_bytes(std::string_view(kCheckpointMagic, 4));
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint64_t>(entries.size());
  for (const auto& e : entries) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(e.name.size()));
    w.put_bytes(e.name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(e.tensor.rank()));
    for (auto d : e.tensor.shape()) w.put<std::uint64_t>(d);
    w.put_span(e.tensor.data());
  }
  out.flush();
  w.check(path);
}

std::vector<NamedTensor> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  BinaryReader r(in, path);
  if (r.get_bytes(4) != std::string_view(kCheckpointMagic, 4)) {
    throw FormatError("not a checkpoint (bad magic): " + path);
  }
  const auto version = r.get<std::uint32_t>();
  if (version > kCheckpointVersion) {
    throw UnsupportedVersionError("checkpoint version " + std::to_string(version) +
                                  " is newer than supported " +
                                  std::to_string(kCheckpointVersion));
  }
  if (version == 0) throw FormatError("checkpoint version 0 is invalid: " + path);
  const auto count = r.get<std::uint64_t>();
  std::vector<NamedTensor> entries;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint32_t>();
    NamedTensor e;
    e.name = r.get_bytes(name_len);
    const auto rank = r.get<std::uint32_t>();
    if (rank == 0 || rank > 8) throw FormatError("checkpoint entry has invalid rank: " + e.name);
    std::vector<std::size_t> shape(rank);
    std::uint64_t n = 1;
    for (auto& d : shape) {
      d = r.get<std::uint64_t>();
      if (d == 0 || d > (1ULL << 32)) throw FormatError("checkpoint entry has invalid dims: " + e.name);
      n *= d;
    }
    if (n > (1ULL << 31)) throw FormatError("checkpoint entry too large: " + e.name);
    std::vector<double> data(n);
    r.get_span(std::span<double>(data));
    e.tensor = Tensor(std::move(shape), std::move(data));
    entries.push_back(std::move(e));
  }
  if (!r.at_end()) throw FormatError("trailing bytes after checkpoint table: " + path);
  return entries;
}

}  // namespace strv::numkit
