#include "diffrx/chansim.hpp"

#include "diffrx/error.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace diffrx::chansim {

static_assert(std::endian::native == std::endian::little, "dataset I/O assumes a little-endian host");

namespace {

Dataset generate_split(const ChannelModelConfig& cfg, std::size_t count, std::uint64_t split_id) {
    Dataset ds;
    ds.config = cfg;
    ds.samples.reserve(count);
    const std::uint64_t split_seed = derive_seed(cfg.seed, split_id);
    for (std::size_t i = 0; i < count; ++i) {
        Rng rng(derive_seed(split_seed, i));
        ds.samples.push_back(draw_channel(cfg, rng));
    }
    return ds;
}

constexpr char kMagic[] = "DIFFRXDS";

template <class T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in, const std::string& what) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (in.gcount() != sizeof(T)) throw FormatError("dataset truncated reading " + what);
    return v;
}

} // namespace

DatasetSplits build_dataset(const ChannelModelConfig& cfg, std::size_t n_train, std::size_t n_val,
                            std::size_t n_test) {
    cfg.validate();
    if (n_train == 0 || n_val == 0 || n_test == 0)
        throw ConfigError("dataset split sizes must all be > 0 (got train=" + std::to_string(n_train) +
                          ", val=" + std::to_string(n_val) + ", test=" + std::to_string(n_test) + ")");
    return {generate_split(cfg, n_train, 0), generate_split(cfg, n_val, 1), generate_split(cfg, n_test, 2)};
}

Dataset normalize_with(const Dataset& ds, double normalization) {
    if (!(normalization > 0.0) || !std::isfinite(normalization))
        throw NumericalError("dataset normalization must be finite and > 0");
    Dataset out = ds;
    out.normalization = ds.normalization * normalization;
    const double inv = 1.0 / normalization;
    for (auto& g : out.samples) {
        for (auto& v : g.re()) v *= inv;
        for (auto& v : g.im()) v *= inv;
    }
    return out;
}

Dataset normalize_dataset(const Dataset& ds) {
    if (ds.samples.empty()) throw ConfigError("cannot normalize an empty dataset");
    double energy = 0.0;
    std::size_t n = 0;
    for (const auto& g : ds.samples) {
        energy += g.energy();
        n += g.size();
    }
    return normalize_with(ds, std::sqrt(energy / static_cast<double>(n)));
}

DatasetSplits normalize_splits(const DatasetSplits& raw) {
    DatasetSplits out;
    out.train = normalize_dataset(raw.train);
    const double scale = out.train.normalization / raw.train.normalization;
    out.val = normalize_with(raw.val, scale);
    out.test = normalize_with(raw.test, scale);
    return out;
}

void save_dataset(const std::filesystem::path& path, const Dataset& ds) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    const std::size_t K = ds.subcarriers(), M = ds.symbols();
    out.write(kMagic, 8);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ds.samples.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(K));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(M));
    put<float>(out, static_cast<float>(ds.normalization));
    std::vector<float> buf(2 * K * M);
    for (const auto& g : ds.samples) {
        if (g.subcarriers() != K || g.symbols() != M) throw DimensionError("dataset samples have mixed dims");
        for (std::size_t i = 0; i < K * M; ++i) {
            buf[2 * i] = static_cast<float>(g.re()[i]);
            buf[2 * i + 1] = static_cast<float>(g.im()[i]);
        }
        out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
    if (!out) throw IoError("write to '" + path.string() + "' failed");
}

Dataset load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open dataset '" + path.string() + "'");
    char magic[8];
    in.read(magic, 8);
    if (in.gcount() != 8 || std::memcmp(magic, kMagic, 8) != 0)
        throw FormatError("'" + path.string() + "' is not a dataset file (bad magic)");
    const auto count = get<std::uint32_t>(in, "count");
    const auto K = get<std::uint32_t>(in, "K");
    const auto M = get<std::uint32_t>(in, "M");
    const auto norm = get<float>(in, "normalization");
    if (K == 0 || M == 0) throw FormatError("dataset header has zero dims");
    Dataset ds;
    ds.normalization = norm;
    ds.config.num_subcarriers = K;
    ds.config.num_symbols = M;
    ds.samples.reserve(count);
    std::vector<float> buf(2 * std::size_t{K} * M);
    for (std::uint32_t s = 0; s < count; ++s) {
        const auto bytes = static_cast<std::streamsize>(buf.size() * sizeof(float));
        in.read(reinterpret_cast<char*>(buf.data()), bytes);
        if (in.gcount() != bytes) throw FormatError("dataset truncated at sample " + std::to_string(s));
        ResourceGrid g(K, M);
        for (std::size_t i = 0; i < g.size(); ++i) g.set(i, {buf[2 * i], buf[2 * i + 1]});
        ds.samples.push_back(std::move(g));
    }
    return ds;
}

} // namespace diffrx::chansim
