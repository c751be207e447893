// IDX (big-endian, magic-tagged) ingestion and emission for MNIST-family
// files, plus assembly into class-indexed item banks.
#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "shiftlab/data.hpp"

namespace shiftlab {

inline constexpr std::uint32_t idx_images_magic = 0x00000803;
inline constexpr std::uint32_t idx_labels_magic = 0x00000801;

namespace detail {

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open idx file: " + path);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline std::uint32_t be32(const std::string& buf, std::size_t off) {
    const auto b = [&](std::size_t i) { return static_cast<std::uint32_t>(static_cast<unsigned char>(buf[off + i])); };
    return (b(0) << 24) | (b(1) << 16) | (b(2) << 8) | b(3);
}

inline void put_be32(std::string& buf, std::uint32_t v) {
    buf.push_back(static_cast<char>((v >> 24) & 0xff));
    buf.push_back(static_cast<char>((v >> 16) & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
    buf.push_back(static_cast<char>(v & 0xff));
}

inline std::string hex32(std::uint32_t v) {
    char out[11];
    std::snprintf(out, sizeof out, "0x%08x", v);
    return out;
}

}  // namespace detail

struct IdxImages {
    std::int64_t count = 0, height = 0, width = 0;
    std::vector<std::uint8_t> pixels;  // row-major, count*height*width
};

inline IdxImages read_idx_images(const std::string& path) {
    const std::string buf = detail::read_file(path);
    if (buf.size() < 16) throw data_error("idx images file truncated (header incomplete): " + path);
    const std::uint32_t magic = detail::be32(buf, 0);
    if (magic != idx_images_magic)
        throw data_error("idx images magic mismatch: got " + detail::hex32(magic) + ", expected " +
                         detail::hex32(idx_images_magic) + " in " + path);
    IdxImages out;
    out.count = detail::be32(buf, 4);
    out.height = detail::be32(buf, 8);
    out.width = detail::be32(buf, 12);
    const std::size_t want = 16 + static_cast<std::size_t>(out.count) * out.height * out.width;
    if (buf.size() != want)
        throw data_error("idx images file truncated or padded: " + std::to_string(buf.size()) + " bytes, expected " +
                         std::to_string(want) + " in " + path);
    out.pixels.assign(buf.begin() + 16, buf.end());
    return out;
}

inline std::vector<std::uint8_t> read_idx_labels(const std::string& path) {
    const std::string buf = detail::read_file(path);
    if (buf.size() < 8) throw data_error("idx labels file truncated (header incomplete): " + path);
    const std::uint32_t magic = detail::be32(buf, 0);
    if (magic != idx_labels_magic)
        throw data_error("idx labels magic mismatch: got " + detail::hex32(magic) + ", expected " +
                         detail::hex32(idx_labels_magic) + " in " + path);
    const std::size_t n = detail::be32(buf, 4);
    if (buf.size() != 8 + n)
        throw data_error("idx labels file truncated or padded: " + std::to_string(buf.size()) + " bytes, expected " +
                         std::to_string(8 + n) + " in " + path);
    return std::vector<std::uint8_t>(buf.begin() + 8, buf.end());
}

inline void write_idx_images(const std::string& path, std::int64_t h, std::int64_t w,
                             const std::vector<std::uint8_t>& pixels) {
    if (pixels.size() % static_cast<std::size_t>(h * w) != 0)
        throw data_error("pixel payload is not a whole number of " + std::to_string(h) + "x" + std::to_string(w) +
                         " images");
    std::string buf;
    detail::put_be32(buf, idx_images_magic);
    detail::put_be32(buf, static_cast<std::uint32_t>(pixels.size() / static_cast<std::size_t>(h * w)));
    detail::put_be32(buf, static_cast<std::uint32_t>(h));
    detail::put_be32(buf, static_cast<std::uint32_t>(w));
    buf.append(reinterpret_cast<const char*>(pixels.data()), pixels.size());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw run_error("cannot open for writing: " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw run_error("short write: " + path);
}

inline void write_idx_labels(const std::string& path, const std::vector<std::uint8_t>& labels) {
    std::string buf;
    detail::put_be32(buf, idx_labels_magic);
    detail::put_be32(buf, static_cast<std::uint32_t>(labels.size()));
    buf.append(reinterpret_cast<const char*>(labels.data()), labels.size());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw run_error("cannot open for writing: " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw run_error("short write: " + path);
}

// Loads an image/label pair into a bank. Classes present are remapped densely
// (ascending original label order); an optional filter keeps only the listed
// labels. Pixels are normalized to [0,1].
inline ItemBank load_idx(const std::string& images_path, const std::string& labels_path,
                         const std::vector<std::int64_t>& class_filter = {}) {
    const IdxImages imgs = read_idx_images(images_path);
    const std::vector<std::uint8_t> labels = read_idx_labels(labels_path);
    if (imgs.count != static_cast<std::int64_t>(labels.size()))
        throw data_error("count mismatch: " + std::to_string(imgs.count) + " images in " + images_path + " but " +
                         std::to_string(labels.size()) + " labels in " + labels_path);
    if (imgs.count == 0) throw data_error("idx pair is empty: " + images_path);

    std::set<std::int64_t> keep(class_filter.begin(), class_filter.end());
    std::set<std::int64_t> present;
    for (std::uint8_t l : labels)
        if (keep.empty() || keep.count(l)) present.insert(l);
    if (!keep.empty())
        for (std::int64_t want : keep)
            if (!present.count(want))
                throw data_error("class filter requests label " + std::to_string(want) + " but " + labels_path +
                                 " holds no such samples");
    if (present.empty()) throw data_error("class filter removed every sample");

    std::map<std::int64_t, std::int64_t> remap;
    for (std::int64_t l : present) remap.emplace(l, static_cast<std::int64_t>(remap.size()));

    ItemBank bank;
    bank.provenance = "idx-file";
    bank.items.resize(remap.size());
    const std::int64_t plane = imgs.height * imgs.width;
    for (std::int64_t i = 0; i < imgs.count; ++i) {
        const auto it = remap.find(labels[static_cast<std::size_t>(i)]);
        if (it == remap.end()) continue;
        Tensor<float> im({imgs.height, imgs.width});
        for (std::int64_t p = 0; p < plane; ++p)
            im[p] = static_cast<float>(imgs.pixels[static_cast<std::size_t>(i * plane + p)]) / 255.0f;
        bank.items[static_cast<std::size_t>(it->second)].push_back(std::move(im));
    }
    bank.validate();
    return bank;
}

}  // namespace shiftlab
