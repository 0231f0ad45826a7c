#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "agddad/core/image.hpp"

namespace agddad {

// --- PNG (8-bit) ---------------------------------------------------------

// Writes a single-channel image as 8-bit grayscale. Values are mapped from
// [-1, 1] by the caller; this takes raw bytes.
void write_png_gray8(const std::filesystem::path& path, const std::vector<uint8_t>& pixels,
                     int h, int w);

// Interleaved RGB bytes, row major.
void write_png_rgb8(const std::filesystem::path& path, const std::vector<uint8_t>& pixels,
                    int h, int w);

// Reads an 8-bit grayscale PNG (RGB/RGBA inputs are reduced via their first
// channel after a gray conversion check is skipped; corpus files are always
// written as gray).
std::vector<uint8_t> read_png_gray8(const std::filesystem::path& path, int* h, int* w);

// [-1,1] double image <-> gray8 quantization used across the corpus.
std::vector<uint8_t> quantize_unit(const Image& img);
Image dequantize_unit(const std::vector<uint8_t>& px, int h, int w);

Image load_image_gray(const std::filesystem::path& path);       // -> [-1,1], c=1
void save_image_gray(const std::filesystem::path& path, const Image& img);  // clamps to [-1,1]

// Saves a [0,1] map (mask, anomaly heat) as gray8 without the [-1,1] shift.
void save_map_gray(const std::filesystem::path& path, const Image& img);

// --- npy sidecars ---------------------------------------------------------

// float64 .npy, shape (h, w) for c==1 or (c, h, w) otherwise.
void write_npy(const std::filesystem::path& path, const Image& img);
Image read_npy(const std::filesystem::path& path);

// --- misc -----------------------------------------------------------------

uint32_t crc32_bytes(const void* data, size_t n, uint32_t seed = 0);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace agddad
