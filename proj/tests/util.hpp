#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <unistd.h>

#include "domalign/image.hpp"
#include "domalign/rng.hpp"

namespace testutil {

namespace fs = std::filesystem;

// Scratch directory removed on scope exit.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = fs::temp_directory_path() /
                ("domalign_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& s) const { return path_ / s; }

private:
    fs::path path_;
};

inline std::string read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline domalign::ImageRGB random_image(int h, int w, domalign::Rng& rng) {
    domalign::ImageRGB img(h, w);
    for (double& v : img.data) {
        v = rng.uniform();
    }
    return img;
}

// Random image whose values sit exactly on the 8-bit grid.
inline domalign::ImageRGB random_quantized(int h, int w, domalign::Rng& rng) {
    domalign::ImageRGB img(h, w);
    for (double& v : img.data) {
        v = static_cast<double>(rng.below(256)) / 255.0;
    }
    return img;
}

}  // namespace testutil
