#pragma once

#include <string>
#include <vector>

#include "egcfl/common.hpp"

namespace egcfl::io {

// All output files go through write-temp-then-rename.
void atomic_write_file(const std::string& path, const void* data, size_t size);
void atomic_write_file(const std::string& path, const std::string& content);

std::string read_file(const std::string& path);
bool file_exists(const std::string& path);
void ensure_dir(const std::string& path);

// header + rows, comma separated; no quoting (values are numeric or plain
// identifiers throughout this project).
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

std::string format_real(real_t v);

}  // namespace egcfl::io
