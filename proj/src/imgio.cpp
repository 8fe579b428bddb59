#include "domalign/imgio.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace domalign {
namespace {

std::string lower_ext(const fs::path& p) {
    std::string e = p.extension().string();
    std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
    return e;
}

struct RawRaster {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<std::uint8_t> bytes;
};

RawRaster read_png(const fs::path& path, int channels) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str())) {
        const bool exists = fs::exists(path);
        std::string msg = image.message;
        png_image_free(&image);
        if (!exists) {
            throw IoError("cannot open " + path.string());
        }
        throw FormatError("corrupt PNG " + path.string() + ": " + msg);
    }
    image.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    RawRaster r;
    r.height = static_cast<int>(image.height);
    r.width = static_cast<int>(image.width);
    r.channels = channels;
    r.bytes.resize(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, r.bytes.data(), 0, nullptr)) {
        std::string msg = image.message;
        png_image_free(&image);
        throw FormatError("corrupt PNG " + path.string() + ": " + msg);
    }
    return r;
}

void write_png(const fs::path& path, int height, int width, png_uint_32 format, const void* buffer) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(width);
    image.height = static_cast<png_uint_32>(height);
    image.format = format;
    if (!png_image_write_to_file(&image, path.c_str(), 0, buffer, 0, nullptr)) {
        std::string msg = image.message;
        png_image_free(&image);
        throw IoError("cannot write " + path.string() + ": " + msg);
    }
}

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string pnm_token(std::istream& in) {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {
            }
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) {
                return tok;
            }
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    return tok;
}

RawRaster read_pnm(const fs::path& path, int channels) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    const std::string magic = pnm_token(in);
    const std::string expected = channels == 3 ? "P6" : "P5";
    if (magic != expected) {
        throw FormatError(path.string() + ": expected " + expected + " header");
    }
    RawRaster r;
    r.channels = channels;
    try {
        r.width = std::stoi(pnm_token(in));
        r.height = std::stoi(pnm_token(in));
        if (std::stoi(pnm_token(in)) != 255) {
            throw FormatError(path.string() + ": only maxval 255 is supported");
        }
    } catch (const std::logic_error&) {
        throw FormatError(path.string() + ": malformed header");
    }
    if (r.width <= 0 || r.height <= 0) {
        throw FormatError(path.string() + ": empty raster");
    }
    r.bytes.resize(static_cast<std::size_t>(r.width) * r.height * channels);
    in.read(reinterpret_cast<char*>(r.bytes.data()), static_cast<std::streamsize>(r.bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(r.bytes.size())) {
        throw FormatError(path.string() + ": truncated pixel data");
    }
    return r;
}

void write_pnm(const fs::path& path, int height, int width, int channels, const std::uint8_t* bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << (channels == 3 ? "P6" : "P5") << '\n' << width << ' ' << height << "\n255\n";
    out.write(reinterpret_cast<const char*>(bytes),
              static_cast<std::streamsize>(static_cast<std::size_t>(height) * width * channels));
    if (!out) {
        throw IoError("write failed for " + path.string());
    }
}

RawRaster read_raster(const fs::path& path, int channels) {
    const std::string ext = lower_ext(path);
    if (ext == ".png") {
        return read_png(path, channels);
    }
    if (ext == ".ppm" || ext == ".pgm" || ext == ".pnm") {
        return read_pnm(path, channels);
    }
    if (!fs::exists(path)) {
        throw IoError("cannot open " + path.string());
    }
    throw FormatError("unsupported image format: " + path.string());
}

void write_raster(const fs::path& path, int height, int width, int channels,
                  const std::vector<std::uint8_t>& bytes) {
    const std::string ext = lower_ext(path);
    if (ext == ".png") {
        write_png(path, height, width, channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY, bytes.data());
    } else if (ext == ".ppm" || ext == ".pgm" || ext == ".pnm") {
        write_pnm(path, height, width, channels, bytes.data());
    } else {
        throw IoError("unsupported output format: " + path.string());
    }
}

}  // namespace

std::uint8_t quantize_unit(double v) {
    return static_cast<std::uint8_t>(std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5));
}

ImageRGB load_image(const fs::path& path) {
    const RawRaster r = read_raster(path, 3);
    ImageRGB img(r.height, r.width);
    for (std::size_t i = 0; i < r.bytes.size(); ++i) {
        img.data[i] = r.bytes[i] / 255.0;
    }
    return img;
}

void save_image(const ImageRGB& img, const fs::path& path) {
    std::vector<std::uint8_t> bytes(img.data.size());
    std::transform(img.data.begin(), img.data.end(), bytes.begin(), quantize_unit);
    write_raster(path, img.height, img.width, 3, bytes);
}

LabelMap load_label_map(const fs::path& path) {
    RawRaster r = read_raster(path, 1);
    LabelMap m;
    m.height = r.height;
    m.width = r.width;
    m.labels = std::move(r.bytes);
    return m;
}

void save_label_map(const LabelMap& labels, const fs::path& path) {
    write_raster(path, labels.height, labels.width, 1, labels.labels);
}

void save_plane_png16(const Plane& plane, const fs::path& path) {
    // The simplified libpng API stores 16-bit gray as PNG_FORMAT_LINEAR_Y
    // without touching the sample values.
    std::vector<std::uint16_t> buf(plane.size());
    for (std::size_t i = 0; i < plane.size(); ++i) {
        buf[i] = static_cast<std::uint16_t>(std::lround(std::clamp(plane.values[i], 0.0, 1.0) * 65535.0));
    }
    write_png(path, plane.height, plane.width, PNG_FORMAT_LINEAR_Y, buf.data());
}

Plane load_plane_png16(const fs::path& path) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str())) {
        png_image_free(&image);
        throw IoError("cannot read " + path.string());
    }
    image.format = PNG_FORMAT_LINEAR_Y;
    std::vector<std::uint16_t> buf(PNG_IMAGE_SIZE(image) / 2);
    Plane p(static_cast<int>(image.height), static_cast<int>(image.width));
    if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
        png_image_free(&image);
        throw FormatError("corrupt PNG " + path.string());
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
        p.values[i] = buf[i] / 65535.0;
    }
    return p;
}

std::vector<fs::path> list_images(const fs::path& dir, const std::string& exclude_suffix) {
    if (!fs::is_directory(dir)) {
        throw IoError("not a directory: " + dir.string());
    }
    std::vector<fs::path> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) {
            continue;
        }
        const std::string ext = lower_ext(entry.path());
        if (ext != ".png" && ext != ".ppm") {
            continue;
        }
        const std::string name = entry.path().filename().string();
        if (!exclude_suffix.empty() && name.size() >= exclude_suffix.size() &&
            name.compare(name.size() - exclude_suffix.size(), exclude_suffix.size(), exclude_suffix) == 0) {
            continue;
        }
        out.push_back(entry.path());
    }
    std::sort(out.begin(), out.end(),
              [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
    return out;
}

DatasetManifest scan_dataset(const fs::path& source_dir, const fs::path& target_dir,
                             const std::string& label_suffix, int class_count) {
    if (class_count < 2) {
        throw ConfigError("class_count must be >= 2");
    }
    DatasetManifest m;
    m.class_count = class_count;
    for (const auto& p : list_images(source_dir, label_suffix)) {
        SourceEntry e{p, std::nullopt};
        if (!label_suffix.empty()) {
            const fs::path label = p.parent_path() / (p.stem().string() + label_suffix);
            if (fs::is_regular_file(label)) {
                e.label = label;
            }
        }
        m.source_entries.push_back(std::move(e));
    }
    m.target_entries = list_images(target_dir, label_suffix);
    if (m.source_entries.empty() || m.target_entries.empty()) {
        throw EmptyDatasetError("dataset side is empty: " +
                                (m.source_entries.empty() ? source_dir : target_dir).string());
    }
    return m;
}

}  // namespace domalign
