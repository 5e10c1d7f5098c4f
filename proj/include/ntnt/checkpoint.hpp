#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <type_traits>
#include <vector>

#include "ntnt/model.hpp"

namespace ntnt {

// Checkpoint file layout (little-endian throughout):
//   magic "NTNT" | u32 version = 1 | u32 config length | canonical config JSON
//   | u32 tensor count | per tensor: u32 name length, name bytes,
//     u8 dtype (0 = f32, 1 = f64), u8 rank, rank x u32 dims, raw scalars.

namespace detail {

inline constexpr char kCheckpointMagic[4] = {'N', 'T', 'N', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
constexpr std::uint8_t dtype_code() {
    if constexpr (std::is_same_v<T, float>)
        return 0;
    else
        return 1;
}

inline void write_u32(std::ostream& os, std::uint32_t v) {
    char buf[4];
    std::memcpy(buf, &v, 4);
    os.write(buf, 4);
}

inline std::uint32_t read_u32(std::istream& is, const char* what) {
    char buf[4];
    if (!is.read(buf, 4)) throw DataError(std::string("checkpoint: truncated while reading ") + what);
    std::uint32_t v;
    std::memcpy(&v, buf, 4);
    return v;
}

inline std::uint8_t read_u8(std::istream& is, const char* what) {
    char c;
    if (!is.read(&c, 1)) throw DataError(std::string("checkpoint: truncated while reading ") + what);
    return static_cast<std::uint8_t>(c);
}

} // namespace detail

template <typename T>
void checkpoint_save(const Model<T>& m, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("checkpoint: cannot open " + path + " for writing");
    os.write(detail::kCheckpointMagic, 4);
    detail::write_u32(os, detail::kCheckpointVersion);
    const std::string cfg = model_config_to_json(m.config);
    detail::write_u32(os, static_cast<std::uint32_t>(cfg.size()));
    os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
    std::uint32_t count = 0;
    visit_params(m, [&](const std::string&, const Tensor<T>&) { ++count; });
    detail::write_u32(os, count);
    visit_params(m, [&](const std::string& name, const Tensor<T>& t) {
        detail::write_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        os.put(static_cast<char>(detail::dtype_code<T>()));
        os.put(static_cast<char>(t.rank()));
        for (std::size_t d : t.shape()) detail::write_u32(os, static_cast<std::uint32_t>(d));
        os.write(reinterpret_cast<const char*>(t.data().data()),
                 static_cast<std::streamsize>(t.size() * sizeof(T)));
    });
    if (!os) throw DataError("checkpoint: write failed for " + path);
}

template <typename T>
Model<T> checkpoint_load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("checkpoint: cannot open " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, detail::kCheckpointMagic, 4) != 0)
        throw DataError("checkpoint: bad magic in " + path);
    const std::uint32_t version = detail::read_u32(is, "version");
    if (version != detail::kCheckpointVersion)
        throw DataError("checkpoint: unsupported version " + std::to_string(version));
    const std::uint32_t cfg_len = detail::read_u32(is, "config length");
    std::string cfg_text(cfg_len, '\0');
    if (!is.read(cfg_text.data(), cfg_len)) throw DataError("checkpoint: truncated config");
    Model<T> m = build_model<T>(model_config_from_json(cfg_text), 0);

    std::map<std::string, Tensor<T>*> slots;
    visit_params(m, [&](const std::string& name, Tensor<T>& t) { slots[name] = &t; });

    const std::uint32_t count = detail::read_u32(is, "tensor count");
    if (count != slots.size())
        throw DataError("checkpoint: tensor count " + std::to_string(count) +
                        " does not match model (" + std::to_string(slots.size()) + ")");
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = detail::read_u32(is, "name length");
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len)) throw DataError("checkpoint: truncated name");
        const std::uint8_t dtype = detail::read_u8(is, "dtype");
        if (dtype != detail::dtype_code<T>())
            throw DataError("checkpoint: dtype mismatch for " + name);
        const std::uint8_t rank = detail::read_u8(is, "rank");
        Shape shape(rank);
        for (auto& d : shape) d = detail::read_u32(is, "dim");
        auto it = slots.find(name);
        if (it == slots.end()) throw DataError("checkpoint: unknown tensor " + name);
        if (it->second->shape() != shape)
            throw DataError("checkpoint: tensor " + name + " has shape " + shape_str(shape) +
                            ", model expects " + shape_str(it->second->shape()));
        std::vector<T> data(numel(shape));
        if (!is.read(reinterpret_cast<char*>(data.data()),
                     static_cast<std::streamsize>(data.size() * sizeof(T))))
            throw DataError("checkpoint: truncated data for " + name);
        *it->second = Tensor<T>(std::move(shape), std::move(data), /*requires_grad=*/true);
    }
    return m;
}

/// Warm start: copies every stored tensor whose name and shape match the
/// already-built model; everything else keeps its fresh initialization (used
/// to fine-tune onto a different class count). Returns the number of tensors
/// copied.
template <typename T>
std::size_t checkpoint_warm_start(Model<T>& m, const std::string& path) {
    Model<T> loaded = checkpoint_load<T>(path);
    std::map<std::string, const Tensor<T>*> source;
    visit_params(loaded, [&](const std::string& name, const Tensor<T>& t) { source[name] = &t; });
    std::size_t copied = 0;
    visit_params(m, [&](const std::string& name, Tensor<T>& t) {
        auto it = source.find(name);
        if (it != source.end() && it->second->shape() == t.shape()) {
            t = *it->second;
            ++copied;
        }
    });
    return copied;
}

} // namespace ntnt
