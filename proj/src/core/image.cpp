#include "ddimedit/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iterator>

#include "ddimedit/errors.hpp"

namespace ddimedit {

Image::Image(int w, int h, std::uint8_t fill)
    : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, fill) {
    if (w < 0 || h < 0) throw ContractError("negative image dimensions");
}

Image decode_png(std::span<const std::uint8_t> bytes, const std::string& name) {
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
        std::string msg = img.message;
        png_image_free(&img);
        throw InputFormatError(name, "not a decodable PNG (" + msg + ")");
    }
    img.format = PNG_FORMAT_RGB;
    Image out(static_cast<int>(img.width), static_cast<int>(img.height));
    if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
        std::string msg = img.message;
        png_image_free(&img);
        throw InputFormatError(name, "PNG decode failed (" + msg + ")");
    }
    if (out.empty()) throw InputFormatError(name, "image has zero area");
    return out;
}

std::vector<std::uint8_t> encode_png(const Image& image) {
    if (image.empty()) throw ContractError("cannot encode an empty image");
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.width);
    img.height = static_cast<png_uint_32>(image.height);
    img.format = PNG_FORMAT_RGB;
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&img, nullptr, &size, 0, image.pixels.data(), 0, nullptr))
        throw std::runtime_error(std::string("PNG size query failed: ") + img.message);
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&img, out.data(), &size, 0, image.pixels.data(), 0, nullptr))
        throw std::runtime_error(std::string("PNG encode failed: ") + img.message);
    out.resize(size);
    return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputFormatError(path.string(), "cannot open file");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    // write-then-rename so concurrent readers never see a partial file
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw std::runtime_error("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    write_file(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()),
                                                  text.size()));
}

std::string read_text_file(const std::filesystem::path& path) {
    auto bytes = read_file(path);
    return {bytes.begin(), bytes.end()};
}

Image read_png(const std::filesystem::path& path) { return decode_png(read_file(path), path.string()); }

void write_png(const std::filesystem::path& path, const Image& image) { write_file(path, encode_png(image)); }

CropBox center_crop_box(int width, int height, int factor) {
    if (factor < 1) throw ContractError("crop factor must be >= 1");
    CropBox box;
    box.width = width / factor * factor;
    box.height = height / factor * factor;
    if (box.width == 0 || box.height == 0)
        throw ContractError("image " + std::to_string(width) + "x" + std::to_string(height) +
                            " is smaller than the codec factor " + std::to_string(factor));
    box.x = (width - box.width) / 2;
    box.y = (height - box.height) / 2;
    return box;
}

Image crop(const Image& image, const CropBox& box) {
    if (box.x < 0 || box.y < 0 || box.x + box.width > image.width || box.y + box.height > image.height)
        throw ContractError("crop box outside image");
    Image out(box.width, box.height);
    for (int y = 0; y < box.height; ++y)
        std::memcpy(out.at(0, y), image.at(box.x, box.y + y), static_cast<std::size_t>(box.width) * 3);
    return out;
}

Image paste(const Image& base, const Image& patch, const CropBox& box) {
    if (patch.width != box.width || patch.height != box.height) throw ContractError("patch does not match box");
    if (box.x < 0 || box.y < 0 || box.x + box.width > base.width || box.y + box.height > base.height)
        throw ContractError("paste box outside image");
    Image out = base;
    for (int y = 0; y < box.height; ++y)
        std::memcpy(out.at(box.x, box.y + y), patch.at(0, y), static_cast<std::size_t>(box.width) * 3);
    return out;
}

double mean_abs_pixel_error(const Image& a, const Image& b) {
    if (a.width != b.width || a.height != b.height) throw ContractError("image dimensions differ");
    if (a.pixels.empty()) return 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) total += std::abs(int(a.pixels[i]) - int(b.pixels[i]));
    return total / static_cast<double>(a.pixels.size());
}

}  // namespace ddimedit
