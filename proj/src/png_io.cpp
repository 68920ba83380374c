#include "microseg/png_io.hpp"

#include <png.h>

#include <cstdio>
#include <fstream>
#include <memory>

#include <json.hpp>

namespace microseg {
namespace {

struct FileCloser {
    void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
    FilePtr f(std::fopen(path.string().c_str(), mode));
    if (!f) throw ImageError("cannot open " + path.string());
    return f;
}

struct PngReader {
    png_structp png = nullptr;
    png_infop info = nullptr;
    PngReader() {
        png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
        info = png ? png_create_info_struct(png) : nullptr;
        if (!info) throw ImageError("libpng init failed");
    }
    ~PngReader() { png_destroy_read_struct(&png, &info, nullptr); }
};

struct PngWriter {
    png_structp png = nullptr;
    png_infop info = nullptr;
    PngWriter() {
        png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
        info = png ? png_create_info_struct(png) : nullptr;
        if (!info) throw ImageError("libpng init failed");
    }
    ~PngWriter() { png_destroy_write_struct(&png, &info); }
};

struct RawPng {
    int height = 0;
    int width = 0;
    int bit_depth = 0;
    int color_type = 0;
    std::vector<std::vector<png_byte>> rows;
};

RawPng read_png(const std::filesystem::path& path) {
    auto f = open_file(path, "rb");
    PngReader r;
    if (setjmp(png_jmpbuf(r.png))) throw ImageError("unreadable PNG: " + path.string());
    png_init_io(r.png, f.get());
    png_read_info(r.png, r.info);

    RawPng out;
    out.width = static_cast<int>(png_get_image_width(r.png, r.info));
    out.height = static_cast<int>(png_get_image_height(r.png, r.info));
    out.bit_depth = png_get_bit_depth(r.png, r.info);
    out.color_type = png_get_color_type(r.png, r.info);

    if (out.color_type == PNG_COLOR_TYPE_PALETTE)
        png_set_packing(r.png);  // expand sub-byte indices to one byte each
    if (out.bit_depth == 16) png_set_swap(r.png);  // little-endian in memory
    png_read_update_info(r.png, r.info);

    const size_t rowbytes = png_get_rowbytes(r.png, r.info);
    out.rows.assign(out.height, std::vector<png_byte>(rowbytes));
    std::vector<png_bytep> row_ptrs(out.height);
    for (int y = 0; y < out.height; ++y) row_ptrs[y] = out.rows[y].data();
    png_read_image(r.png, row_ptrs.data());
    png_read_end(r.png, nullptr);
    return out;
}

std::optional<double> read_sidecar_scale(const std::filesystem::path& path) {
    std::filesystem::path sidecar = path;
    sidecar += ".json";
    std::ifstream in(sidecar);
    if (!in) return std::nullopt;
    nlohmann::json j;
    in >> j;
    if (j.contains("um_per_px")) return j["um_per_px"].get<double>();
    return std::nullopt;
}

}  // namespace

Micrograph load_micrograph(const std::filesystem::path& path) {
    RawPng raw = read_png(path);
    if (raw.color_type != PNG_COLOR_TYPE_GRAY)
        throw ImageError("expected single-channel grayscale PNG: " + path.string());
    if (raw.bit_depth != 8 && raw.bit_depth != 16)
        throw ImageError("expected 8- or 16-bit PNG: " + path.string());

    Micrograph m(raw.height, raw.width);
    const double denom = raw.bit_depth == 8 ? 255.0 : 65535.0;
    for (int y = 0; y < raw.height; ++y) {
        for (int x = 0; x < raw.width; ++x) {
            double v;
            if (raw.bit_depth == 8) {
                v = raw.rows[y][x];
            } else {
                const png_byte* p = &raw.rows[y][2 * x];
                v = static_cast<double>(p[0] | (p[1] << 8));
            }
            m.at(y, x) = v / denom;
        }
    }
    m.um_per_px = read_sidecar_scale(path);
    return m;
}

void save_micrograph(const Micrograph& m, const std::filesystem::path& path, int bit_depth) {
    if (bit_depth != 8 && bit_depth != 16) throw ImageError("bit depth must be 8 or 16");
    auto f = open_file(path, "wb");
    PngWriter w;
    if (setjmp(png_jmpbuf(w.png))) throw ImageError("PNG write failed: " + path.string());
    png_init_io(w.png, f.get());
    png_set_IHDR(w.png, w.info, m.width, m.height, bit_depth, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(w.png, w.info);

    const double scale = bit_depth == 8 ? 255.0 : 65535.0;
    std::vector<png_byte> row(static_cast<size_t>(m.width) * (bit_depth / 8));
    for (int y = 0; y < m.height; ++y) {
        for (int x = 0; x < m.width; ++x) {
            double v = std::min(1.0, std::max(0.0, m.at(y, x)));
            auto q = static_cast<uint32_t>(v * scale + 0.5);
            if (bit_depth == 8) {
                row[x] = static_cast<png_byte>(q);
            } else {
                row[2 * x] = static_cast<png_byte>(q >> 8);
                row[2 * x + 1] = static_cast<png_byte>(q & 0xff);
            }
        }
        png_write_row(w.png, row.data());
    }
    png_write_end(w.png, nullptr);
}

LabelMap load_labelmap(const std::filesystem::path& path, const ClassTaxonomy& taxonomy) {
    RawPng raw = read_png(path);
    if (raw.color_type != PNG_COLOR_TYPE_PALETTE)
        throw ImageError("expected paletted PNG label map: " + path.string());

    const int k = taxonomy.num_classes();
    LabelMap map(raw.height, raw.width, k);
    for (int y = 0; y < raw.height; ++y) {
        for (int x = 0; x < raw.width; ++x) {
            const int idx = raw.rows[y][x];
            if (idx >= k)
                throw ImageError("label index " + std::to_string(idx) + " >= K=" +
                                 std::to_string(k) + " at pixel (" + std::to_string(y) +
                                 "," + std::to_string(x) + ") in " + path.string());
            map.at(y, x) = static_cast<uint8_t>(idx);
        }
    }
    return map;
}

void save_labelmap(const LabelMap& map, const ClassTaxonomy& taxonomy,
                   const std::filesystem::path& path) {
    const int k = taxonomy.num_classes();
    if (map.num_classes != k) throw ImageError("label map K does not match taxonomy");
    for (uint8_t v : map.labels)
        if (v >= k) throw ImageError("label index out of range for taxonomy");

    auto f = open_file(path, "wb");
    PngWriter w;
    if (setjmp(png_jmpbuf(w.png))) throw ImageError("PNG write failed: " + path.string());
    png_init_io(w.png, f.get());
    png_set_IHDR(w.png, w.info, map.width, map.height, 8, PNG_COLOR_TYPE_PALETTE,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);

    std::vector<png_color> palette(k);
    for (int i = 0; i < k; ++i)
        palette[i] = {taxonomy.palette[i][0], taxonomy.palette[i][1], taxonomy.palette[i][2]};
    png_set_PLTE(w.png, w.info, palette.data(), k);
    png_write_info(w.png, w.info);

    for (int y = 0; y < map.height; ++y)
        png_write_row(w.png, const_cast<png_bytep>(&map.labels[static_cast<size_t>(y) * map.width]));
    png_write_end(w.png, nullptr);
}

}  // namespace microseg
