#include "sgp/schedule.hpp"

#include <cmath>

namespace sgp {

ScheduleKind schedule_kind_from_string(const std::string& s) {
    if (s == "geometric") return ScheduleKind::Geometric;
    if (s == "cosine") return ScheduleKind::Cosine;
    throw config_error("unknown schedule kind: " + s);
}

std::string schedule_kind_to_string(ScheduleKind k) {
    return k == ScheduleKind::Geometric ? "geometric" : "cosine";
}

NoiseSchedule make_schedule(double sigma_max, double sigma_min, std::size_t levels, ScheduleKind kind) {
    if (!(sigma_min > 0.0) || sigma_max < sigma_min) {
        throw config_error("make_schedule: need sigma_max >= sigma_min > 0");
    }
    if (levels < 1) {
        throw config_error("make_schedule: need at least one level");
    }
    if (levels == 1 && sigma_max != sigma_min) {
        throw config_error("make_schedule: a single level needs sigma_max == sigma_min");
    }
    NoiseSchedule s;
    s.kind = kind;
    s.sigmas.resize(levels);
    if (levels == 1) {
        s.sigmas[0] = sigma_max;
        return s;
    }
    const double denom = static_cast<double>(levels - 1);
    for (std::size_t k = 0; k < levels; ++k) {
        const double frac = static_cast<double>(k) / denom;
        if (kind == ScheduleKind::Geometric) {
            s.sigmas[k] = sigma_max * std::pow(sigma_min / sigma_max, frac);
        } else {
            s.sigmas[k] = sigma_min + 0.5 * (sigma_max - sigma_min) * (1.0 + std::cos(kPi * frac));
        }
    }
    // endpoints exact regardless of pow/cos rounding
    s.sigmas.front() = sigma_max;
    s.sigmas.back() = sigma_min;
    return s;
}

}  // namespace sgp
