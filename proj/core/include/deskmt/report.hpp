#pragma once

#include <cmath>
#include <string>

#include <nlohmann/json.hpp>

namespace deskmt::report {

/// Rounds half away from zero to `decimals` places.
inline double round_to(double value, int decimals) {
    const double scale = std::pow(10.0, decimals);
    return std::round(value * scale) / scale;
}

/// chrF as stored in score reports (4 decimals).
inline double score_precision(double chrf) { return round_to(chrf, 4); }

/// chrF as shown in comparison tables (1 decimal).
inline double table_precision(double chrf) { return round_to(chrf, 1); }

/// Canonical text for any report: insertion-ordered keys, two-space indent,
/// trailing newline. Identical reports yield identical bytes.
inline std::string emit(const nlohmann::ordered_json& j) {
    return j.dump(2) + "\n";
}

}  // namespace deskmt::report
