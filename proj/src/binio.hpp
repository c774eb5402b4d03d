#pragma once

#include <fstream>
#include <span>

namespace sgp {

// Explicit little-endian f64 blobs, independent of host byte order.
void write_f64_le(std::ofstream& out, std::span<const double> xs);
void read_f64_le(std::ifstream& in, std::span<double> xs, std::size_t base_offset);

}  // namespace sgp
