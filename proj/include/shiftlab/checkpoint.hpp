// Binary checkpoints: magic, version, length-prefixed spec JSON, raw
// little-endian parameters in spec order, FNV-1a checksum trailer.
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "shiftlab/model.hpp"
#include "vendor/json.hpp"

namespace shiftlab {

inline constexpr char checkpoint_magic[8] = {'S', 'H', 'I', 'F', 'T', 'L', 'B', '\0'};
inline constexpr std::uint32_t checkpoint_version = 1;

inline nlohmann::json layer_to_json(const LayerDesc& d) {
    nlohmann::json j;
    switch (d.kind) {
        case LayerKind::conv:
            j = {{"kind", "conv"}, {"out_channels", d.out_channels}, {"kernel", d.kernel},
                 {"stride", d.stride}, {"padding", d.padding}};
            break;
        case LayerKind::maxpool:
            j = {{"kind", "maxpool"}, {"k", d.pool_k}, {"stride", d.pool_stride}};
            break;
        case LayerKind::relu:
            j = {{"kind", "relu"}};
            break;
        case LayerKind::flatten:
            j = {{"kind", "flatten"}};
            break;
        case LayerKind::linear:
            j = {{"kind", "linear"}, {"out_features", d.out_features}};
            break;
    }
    return j;
}

inline LayerDesc layer_from_json(const nlohmann::json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "conv")
        return LayerDesc::make_conv(j.at("out_channels").get<std::int64_t>(), j.at("kernel").get<std::int64_t>(),
                                    j.value("stride", std::int64_t{1}), j.value("padding", std::int64_t{1}));
    if (kind == "maxpool") return LayerDesc::make_pool(j.at("k").get<std::int64_t>(), j.at("stride").get<std::int64_t>());
    if (kind == "relu") return LayerDesc::make_relu();
    if (kind == "flatten") return LayerDesc::make_flatten();
    if (kind == "linear") return LayerDesc::make_linear(j.at("out_features").get<std::int64_t>());
    throw config_error("unknown layer kind '" + kind + "'");
}

inline nlohmann::json spec_to_json(const ModelSpec& s) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& d : s.layers) layers.push_back(layer_to_json(d));
    return {{"name", s.name},
            {"classes", s.classes},
            {"input", {{"channels", s.input.channels}, {"height", s.input.height}, {"width", s.input.width}}},
            {"layers", layers}};
}

inline ModelSpec spec_from_json(const nlohmann::json& j) {
    ModelSpec s;
    s.name = j.value("name", std::string("custom"));
    s.classes = j.at("classes").get<std::int64_t>();
    const auto& in = j.at("input");
    s.input.channels = in.at("channels").get<std::int64_t>();
    s.input.height = in.at("height").get<std::int64_t>();
    s.input.width = in.at("width").get<std::int64_t>();
    for (const auto& l : j.at("layers")) s.layers.push_back(layer_from_json(l));
    s.validate();
    return s;
}

namespace detail {

template <typename T>
void append_raw(std::string& buf, const T* p, std::size_t n) {
    // Little-endian host assumed; asserted once at save/load below.
    buf.append(reinterpret_cast<const char*>(p), n * sizeof(T));
}

inline void require_little_endian() {
    const std::uint16_t probe = 1;
    if (*reinterpret_cast<const std::uint8_t*>(&probe) != 1)
        throw run_error("checkpoint io requires a little-endian host");
}

template <typename T>
constexpr const char* dtype_name() {
    if constexpr (std::is_same_v<T, float>) return "f32";
    else return "f64";
}

}  // namespace detail

template <typename T>
void save_checkpoint(const Model<T>& model, const std::string& path) {
    detail::require_little_endian();
    nlohmann::json meta = {{"version", checkpoint_version},
                           {"dtype", detail::dtype_name<T>()},
                           {"init_seed", model.init_seed},
                           {"spec", spec_to_json(model.spec)}};
    const std::string meta_str = meta.dump();

    std::string buf;
    buf.append(checkpoint_magic, 8);
    const std::uint32_t ver = checkpoint_version;
    detail::append_raw(buf, &ver, 1);
    const std::uint64_t meta_len = meta_str.size();
    detail::append_raw(buf, &meta_len, 1);
    buf.append(meta_str);
    for (const auto& p : model.params) {
        detail::append_raw(buf, p.weight.data(), static_cast<std::size_t>(p.weight.numel()));
        detail::append_raw(buf, p.bias.data(), static_cast<std::size_t>(p.bias.numel()));
    }
    const std::uint64_t sum = fnv1a(buf.data(), buf.size());
    detail::append_raw(buf, &sum, 1);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw run_error("cannot open checkpoint for writing: " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw run_error("short write to checkpoint: " + path);
}

template <typename T>
Model<T> load_checkpoint(const std::string& path) {
    detail::require_little_endian();
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open checkpoint: " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < 8 + sizeof(std::uint32_t) + 2 * sizeof(std::uint64_t))
        throw data_error("checkpoint truncated: " + path + " holds only " + std::to_string(buf.size()) + " bytes");
    if (std::memcmp(buf.data(), checkpoint_magic, 8) != 0)
        throw data_error("not a checkpoint (bad magic): " + path);

    const std::uint64_t sum_stored =
        *reinterpret_cast<const std::uint64_t*>(buf.data() + buf.size() - sizeof(std::uint64_t));
    const std::uint64_t sum_actual = fnv1a(buf.data(), buf.size() - sizeof(std::uint64_t));
    if (sum_stored != sum_actual) throw data_error("checkpoint checksum mismatch (corrupt file): " + path);

    std::size_t off = 8;
    std::uint32_t ver;
    std::memcpy(&ver, buf.data() + off, sizeof ver);
    off += sizeof ver;
    if (ver != checkpoint_version)
        throw data_error("checkpoint version " + std::to_string(ver) + " unsupported; this build reads version " +
                         std::to_string(checkpoint_version));
    std::uint64_t meta_len;
    std::memcpy(&meta_len, buf.data() + off, sizeof meta_len);
    off += sizeof meta_len;
    if (off + meta_len > buf.size()) throw data_error("checkpoint truncated inside header: " + path);
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(buf.substr(off, meta_len));
    } catch (const nlohmann::json::exception& e) {
        throw data_error(std::string("checkpoint metadata is not valid json: ") + e.what());
    }
    off += meta_len;

    const std::string dtype = meta.at("dtype").get<std::string>();
    if (dtype != detail::dtype_name<T>())
        throw data_error("checkpoint dtype " + dtype + " does not match requested " + detail::dtype_name<T>());
    Model<T> model = build_model<T>(spec_from_json(meta.at("spec")));
    model.init_seed = meta.value("init_seed", std::uint64_t{0});

    std::int64_t want = 0;
    for (const auto& p : model.params) want += p.weight.numel() + p.bias.numel();
    const std::size_t payload = buf.size() - sizeof(std::uint64_t) - off;
    if (payload != static_cast<std::size_t>(want) * sizeof(T))
        throw data_error("checkpoint parameter payload is " + std::to_string(payload) + " bytes, expected " +
                         std::to_string(static_cast<std::size_t>(want) * sizeof(T)));
    for (auto& p : model.params) {
        std::memcpy(p.weight.data(), buf.data() + off, static_cast<std::size_t>(p.weight.numel()) * sizeof(T));
        off += static_cast<std::size_t>(p.weight.numel()) * sizeof(T);
        std::memcpy(p.bias.data(), buf.data() + off, static_cast<std::size_t>(p.bias.numel()) * sizeof(T));
        off += static_cast<std::size_t>(p.bias.numel()) * sizeof(T);
    }
    return model;
}

}  // namespace shiftlab
