#pragma once

#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>

namespace testutil {

// Unique scratch directory under the system temp dir, removed on destruction.
struct TempDir {
    std::filesystem::path path;

    TempDir() {
        const auto base = std::filesystem::temp_directory_path();
        std::mt19937_64 gen(std::random_device{}());
        for (int attempt = 0; attempt < 64; ++attempt) {
            auto candidate = base / ("mpscope_test_" + std::to_string(gen()));
            std::error_code ec;
            if (std::filesystem::create_directory(candidate, ec)) {
                path = candidate;
                return;
            }
        }
        throw std::runtime_error("TempDir: could not create a scratch directory");
    }

    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }

    std::string str() const { return path.string(); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace testutil
