#pragma once

#include <filesystem>
#include <string>

namespace tcem {

std::string read_file(const std::filesystem::path& path);
// Writes to a sibling temp file and renames over the target.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace tcem
