#include "ntnt/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <vector>

#include <csetjmp>
#include <jpeglib.h>
#include <png.h>

#include "ntnt/errors.hpp"

namespace ntnt {

namespace {

Tensor<float> planes_from_rgb(const std::vector<unsigned char>& rgb, std::size_t h, std::size_t w) {
    std::vector<float> data(3 * h * w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                data[(c * h + y) * w + x] = static_cast<float>(rgb[(y * w + x) * 3 + c]) / 255.0f;
    return Tensor<float>({3, h, w}, std::move(data));
}

int next_token(std::istream& is) {
    // Skips whitespace and '#' comments, then parses one integer.
    for (;;) {
        int c = is.peek();
        if (c == '#') {
            std::string line;
            std::getline(is, line);
        } else if (std::isspace(c)) {
            is.get();
        } else {
            break;
        }
    }
    int value = -1;
    is >> value;
    return value;
}

Tensor<float> decode_ppm(std::istream& is, const std::string& path) {
    char m0 = 0, m1 = 0;
    is.get(m0);
    is.get(m1);
    if (m0 != 'P' || m1 != '6') throw DataError("image: " + path + " is not a binary PPM");
    const int w = next_token(is);
    const int h = next_token(is);
    const int maxval = next_token(is);
    if (w <= 0 || h <= 0 || maxval != 255)
        throw DataError("image: unsupported PPM header in " + path);
    is.get(); // single whitespace after maxval
    std::vector<unsigned char> rgb(static_cast<std::size_t>(w) * h * 3);
    if (!is.read(reinterpret_cast<char*>(rgb.data()), static_cast<std::streamsize>(rgb.size())))
        throw DataError("image: truncated PPM data in " + path);
    return planes_from_rgb(rgb, static_cast<std::size_t>(h), static_cast<std::size_t>(w));
}

Tensor<float> decode_bmp(std::istream& is, const std::string& path) {
    std::vector<unsigned char> header(54);
    if (!is.read(reinterpret_cast<char*>(header.data()), 54))
        throw DataError("image: truncated BMP header in " + path);
    auto u32 = [&](std::size_t off) {
        std::uint32_t v;
        std::memcpy(&v, header.data() + off, 4);
        return v;
    };
    auto u16 = [&](std::size_t off) {
        std::uint16_t v;
        std::memcpy(&v, header.data() + off, 2);
        return v;
    };
    if (header[0] != 'B' || header[1] != 'M') throw DataError("image: " + path + " is not a BMP");
    const std::uint32_t data_offset = u32(10);
    const std::int32_t width = static_cast<std::int32_t>(u32(18));
    std::int32_t height = static_cast<std::int32_t>(u32(22));
    const bool top_down = height < 0;
    if (top_down) height = -height;
    if (u16(28) != 24 || u32(30) != 0)
        throw DataError("image: only uncompressed 24-bit BMP supported: " + path);
    if (width <= 0 || height <= 0) throw DataError("image: bad BMP dimensions in " + path);
    is.seekg(data_offset, std::ios::beg);
    const std::size_t w = static_cast<std::size_t>(width), h = static_cast<std::size_t>(height);
    const std::size_t row_bytes = (w * 3 + 3) / 4 * 4;
    std::vector<unsigned char> row(row_bytes);
    std::vector<unsigned char> rgb(w * h * 3);
    for (std::size_t r = 0; r < h; ++r) {
        if (!is.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row_bytes)))
            throw DataError("image: truncated BMP data in " + path);
        const std::size_t y = top_down ? r : h - 1 - r;
        for (std::size_t x = 0; x < w; ++x) {
            rgb[(y * w + x) * 3 + 0] = row[x * 3 + 2]; // BMP stores BGR
            rgb[(y * w + x) * 3 + 1] = row[x * 3 + 1];
            rgb[(y * w + x) * 3 + 2] = row[x * 3 + 0];
        }
    }
    return planes_from_rgb(rgb, h, w);
}

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

Tensor<float> decode_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw DataError("image: cannot open " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw DataError("image: libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw DataError("image: libpng init failed");
    }
    std::vector<unsigned char> rgb;
    std::size_t w = 0, h = 0;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("image: undecodable PNG " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    w = png_get_image_width(png, info);
    h = png_get_image_height(png, info);
    const png_byte color = png_get_color_type(png, info);
    const png_byte depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    if (png_get_rowbytes(png, info) != w * 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("image: unexpected PNG layout in " + path);
    }
    rgb.resize(w * h * 3);
    std::vector<png_bytep> rows(h);
    for (std::size_t y = 0; y < h; ++y) rows[y] = rgb.data() + y * w * 3;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return planes_from_rgb(rgb, h, w);
}

struct JpegErrorMgr {
    jpeg_error_mgr pub;
    std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
    auto* mgr = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
    std::longjmp(mgr->jump, 1);
}

Tensor<float> decode_jpeg(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw DataError("image: cannot open " + path);
    jpeg_decompress_struct cinfo;
    JpegErrorMgr jerr;
    cinfo.err = jpeg_std_error(&jerr.pub);
    jerr.pub.error_exit = jpeg_error_exit;
    if (setjmp(jerr.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw DataError("image: undecodable JPEG " + path);
    }
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, fp.get());
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    const std::size_t w = cinfo.output_width, h = cinfo.output_height;
    std::vector<unsigned char> rgb(w * h * 3);
    while (cinfo.output_scanline < cinfo.output_height) {
        unsigned char* row = rgb.data() + static_cast<std::size_t>(cinfo.output_scanline) * w * 3;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return planes_from_rgb(rgb, h, w);
}

} // namespace

Tensor<float> decode_image_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("image: cannot open " + path);
    unsigned char magic[8] = {0};
    is.read(reinterpret_cast<char*>(magic), 8);
    if (is.gcount() < 2) throw DataError("image: file too short: " + path);
    is.clear();
    is.seekg(0, std::ios::beg);
    if (magic[0] == 'P' && magic[1] == '6') return decode_ppm(is, path);
    if (magic[0] == 'B' && magic[1] == 'M') return decode_bmp(is, path);
    if (magic[0] == 0x89 && magic[1] == 'P') return decode_png(path);
    if (magic[0] == 0xFF && magic[1] == 0xD8) return decode_jpeg(path);
    throw DataError("image: unrecognized format: " + path);
}

void write_ppm(const std::string& path, const Tensor<float>& img) {
    const Shape& s = img.shape();
    if (s.size() != 3 || s[0] != 3) throw DataError("write_ppm: expected [3, H, W]");
    const std::size_t h = s[1], w = s[2];
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("write_ppm: cannot open " + path);
    os << "P6\n" << w << " " << h << "\n255\n";
    auto d = img.data();
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c) {
                float v = std::clamp(d[(c * h + y) * w + x], 0.0f, 1.0f);
                os.put(static_cast<char>(std::lround(v * 255.0f)));
            }
    if (!os) throw DataError("write_ppm: write failed for " + path);
}

} // namespace ntnt
