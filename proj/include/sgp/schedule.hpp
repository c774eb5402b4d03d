#pragma once

#include <string>
#include <vector>

#include "sgp/common.hpp"

namespace sgp {

enum class ScheduleKind { Geometric, Cosine };

ScheduleKind schedule_kind_from_string(const std::string& s);
std::string schedule_kind_to_string(ScheduleKind k);

// Strictly decreasing positive noise levels sigma_1 > ... > sigma_K, shared
// by score training and annealed planning. Levels are 0-indexed in code.
struct NoiseSchedule {
    std::vector<double> sigmas;
    ScheduleKind kind = ScheduleKind::Geometric;

    std::size_t levels() const { return sigmas.size(); }
    double sigma(std::size_t k) const {
        if (k >= sigmas.size()) {
            throw config_error("NoiseSchedule: level " + std::to_string(k) + " out of range [0," +
                               std::to_string(sigmas.size()) + ")");
        }
        return sigmas[k];
    }
    double sigma_max() const { return sigmas.front(); }
    double sigma_min() const { return sigmas.back(); }
};

NoiseSchedule make_schedule(double sigma_max, double sigma_min, std::size_t levels, ScheduleKind kind);

}  // namespace sgp
