#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <string_view>

#include <unistd.h>

#include "rescomb/core.hpp"

namespace rescomb::test {

inline Tokens toks(std::string_view text) { return normalize_text(text); }

inline Hypothesis hyp(std::string_view text, ScoreVector scores) { return {toks(text), std::move(scores)}; }

// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("rescomb_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

} // namespace rescomb::test
