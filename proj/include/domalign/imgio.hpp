#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "domalign/image.hpp"

namespace domalign {

namespace fs = std::filesystem;

/// Decodes an 8-bit PNG or binary PPM (P6); values become v / 255.
ImageRGB load_image(const fs::path& path);

/// Encodes as PNG or PPM by extension. Values are clamped to [0, 1] and
/// quantized as floor(v * 255 + 0.5).
void save_image(const ImageRGB& img, const fs::path& path);

/// 8-bit single-channel label raster (PNG or binary PGM P5).
LabelMap load_label_map(const fs::path& path);
void save_label_map(const LabelMap& labels, const fs::path& path);

/// 16-bit grayscale PNG; values in [0, 1] are stored as round(v * 65535).
void save_plane_png16(const Plane& plane, const fs::path& path);
Plane load_plane_png16(const fs::path& path);

std::uint8_t quantize_unit(double v);

struct SourceEntry {
    fs::path image;
    std::optional<fs::path> label;

    bool operator==(const SourceEntry&) const = default;
};

struct DatasetManifest {
    std::vector<SourceEntry> source_entries;
    std::vector<fs::path> target_entries;
    int class_count = 2;
};

/// Lists PNG/PPM images in both directories in lexicographic filename order.
/// A source image `stem.ext` is paired with `stem + label_suffix` when that
/// file exists; files ending in label_suffix are never listed as images.
DatasetManifest scan_dataset(const fs::path& source_dir, const fs::path& target_dir,
                             const std::string& label_suffix = "_label.png", int class_count = 2);

/// Image files (PNG/PPM) of one directory, sorted by filename.
std::vector<fs::path> list_images(const fs::path& dir, const std::string& exclude_suffix = {});

}  // namespace domalign
