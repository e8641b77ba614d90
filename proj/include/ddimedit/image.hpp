#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace ddimedit {

// 8-bit interleaved RGB raster.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // width * height * 3

    Image() = default;
    Image(int w, int h, std::uint8_t fill = 0);

    std::uint8_t* at(int x, int y) { return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
    const std::uint8_t* at(int x, int y) const {
        return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
    }
    bool empty() const noexcept { return width == 0 || height == 0; }

    friend bool operator==(const Image&, const Image&) = default;
};

// PNG codec. Grayscale/alpha/palette/16-bit inputs are converted to RGB8.
// `name` labels errors (usually the file path).
Image decode_png(std::span<const std::uint8_t> bytes, const std::string& name = "<memory>");
std::vector<std::uint8_t> encode_png(const Image& image);

Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

struct CropBox {
    int x = 0;
    int y = 0;
    int width = 0;
    int height = 0;
};

// Largest centered box whose sides are multiples of `factor`.
CropBox center_crop_box(int width, int height, int factor);
Image crop(const Image& image, const CropBox& box);
// Copy of `base` with `patch` written at the box origin.
Image paste(const Image& base, const Image& patch, const CropBox& box);

double mean_abs_pixel_error(const Image& a, const Image& b);

}  // namespace ddimedit
