#pragma once

#include <filesystem>
#include <string>

namespace test_paths {

inline std::filesystem::path fixtures() { return DDIMEDIT_TEST_FIXTURES; }
inline std::filesystem::path templates() { return DDIMEDIT_TEMPLATES_DIR; }

// Fresh empty directory under the build tree.
inline std::filesystem::path scratch(const std::string& name) {
    const std::filesystem::path p = std::filesystem::path(DDIMEDIT_TEST_SCRATCH) / name;
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace test_paths
