#pragma once

#include "diffrx/numcore/tensor.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace diffrx::numcore {

// Binary layout: "DIFFRX01", then until EOF one record per tensor:
//   u32 name_len, name bytes (UTF-8), u32 rank, rank x u32 dims,
//   numel x f64 payload. All integers and floats little-endian.
inline constexpr char kCheckpointMagic[] = "DIFFRX01";

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

void write_checkpoint(std::ostream& out, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

const NamedTensor* find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name);

} // namespace diffrx::numcore
