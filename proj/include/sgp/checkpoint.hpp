#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "sgp/common.hpp"

namespace sgp {

// On-disk model format: <stem>.manifest.json describing the parameter blocks
// plus <stem>.weights.bin, a raw little-endian f64 blob concatenated in
// manifest order.
struct Checkpoint {
    nlohmann::json manifest;
    std::vector<double> blob;

    void save(const std::string& stem) const;
    static Checkpoint load(const std::string& stem);
};

}  // namespace sgp
