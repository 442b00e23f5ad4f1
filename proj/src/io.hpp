#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "json.hpp"
#include "sheafpc/sheaf.hpp"

namespace sheafpc::io {

/// JSON network description:
///   {"vertices": [{"id": "x", "dim": 2}, ...],
///    "edges": [{"id": "x:h1", "src": "x", "dst": "h1", "weight": [[...], ...]}, ...]}
/// Weights serialize as nested row arrays; scalars are accepted on input as
/// 1x1 shorthand. Doubles survive a save/load round trip bit-exactly.
nlohmann::json sheaf_to_json(const PCSheaf<double>& F);
PCSheaf<double> sheaf_from_json(const nlohmann::json& j);

PCSheaf<double> load_sheaf(const std::filesystem::path& path);
void save_sheaf(const PCSheaf<double>& F, const std::filesystem::path& path);

Matrix<double> matrix_from_json(const nlohmann::json& j, const std::string& where);
nlohmann::json matrix_to_json(const Matrix<double>& W);

/// Parse with the file path prepended to any diagnostic.
nlohmann::json load_json(const std::filesystem::path& path);

/// Doubles formatted for CSV: round-trip exact, locale independent.
std::string g17(double x);

/// Write via a temp file + rename so readers never observe partial content.
void write_text_atomic(const std::filesystem::path& path, const std::string& body);

std::string iso8601_utc_now();

std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace sheafpc::io
