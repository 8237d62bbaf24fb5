#include "diffrx/numcore/checkpoint.hpp"

#include "diffrx/error.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace diffrx::numcore {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");
static_assert(sizeof(Scalar) == 8);

namespace {

void put_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

bool get_u32(std::istream& in, std::uint32_t& v) {
    in.read(reinterpret_cast<char*>(&v), 4);
    return in.gcount() == 4;
}

} // namespace

void write_checkpoint(std::ostream& out, const std::vector<NamedTensor>& tensors) {
    out.write(kCheckpointMagic, 8);
    for (const auto& [name, t] : tensors) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u32(out, static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
        out.write(reinterpret_cast<const char*>(t.data().data()),
                  static_cast<std::streamsize>(t.numel() * sizeof(Scalar)));
    }
    if (!out) throw IoError("checkpoint write failed");
}

std::vector<NamedTensor> read_checkpoint(std::istream& in) {
    char magic[8];
    in.read(magic, 8);
    if (in.gcount() != 8 || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw FormatError("not a checkpoint: bad magic");
    std::vector<NamedTensor> out;
    for (;;) {
        std::uint32_t name_len = 0;
        if (!get_u32(in, name_len)) {
            if (in.gcount() == 0) break;
            throw FormatError("checkpoint truncated in record header");
        }
        if (name_len > 4096) throw FormatError("checkpoint record name too long");
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        std::uint32_t rank = 0;
        if (in.gcount() != name_len || !get_u32(in, rank) || rank == 0 || rank > 4)
            throw FormatError("checkpoint record '" + name + "' has a bad header");
        Shape shape(rank);
        for (auto& d : shape) {
            std::uint32_t v = 0;
            if (!get_u32(in, v) || v == 0) throw FormatError("checkpoint record '" + name + "' has bad dims");
            d = v;
        }
        std::vector<Scalar> data(shape_numel(shape));
        const auto bytes = static_cast<std::streamsize>(data.size() * sizeof(Scalar));
        in.read(reinterpret_cast<char*>(data.data()), bytes);
        if (in.gcount() != bytes) throw FormatError("checkpoint record '" + name + "' truncated");
        out.push_back({std::move(name), Tensor(std::move(shape), std::move(data))});
    }
    return out;
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    write_checkpoint(out, tensors);
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
    return read_checkpoint(in);
}

const NamedTensor* find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name) {
    for (const auto& t : tensors)
        if (t.name == name) return &t;
    return nullptr;
}

} // namespace diffrx::numcore
