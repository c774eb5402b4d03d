#include "sgp/checkpoint.hpp"

#include <fstream>

#include "binio.hpp"

namespace sgp {

void Checkpoint::save(const std::string& stem) const {
    {
        std::ofstream out(stem + ".manifest.json");
        if (!out) {
            throw io_error("cannot open for writing: " + stem + ".manifest.json");
        }
        out << manifest.dump(2) << "\n";
    }
    std::ofstream out(stem + ".weights.bin", std::ios::binary);
    if (!out) {
        throw io_error("cannot open for writing: " + stem + ".weights.bin");
    }
    write_f64_le(out, blob);
    if (!out) {
        throw io_error("write failed: " + stem + ".weights.bin");
    }
}

Checkpoint Checkpoint::load(const std::string& stem) {
    Checkpoint c;
    {
        std::ifstream in(stem + ".manifest.json");
        if (!in) {
            throw io_error("cannot open: " + stem + ".manifest.json");
        }
        try {
            in >> c.manifest;
        } catch (const nlohmann::json::exception& e) {
            throw io_error("bad manifest " + stem + ".manifest.json: " + e.what());
        }
    }
    if (!c.manifest.contains("param_count")) {
        throw io_error("manifest missing param_count: " + stem);
    }
    const std::size_t count = c.manifest["param_count"].get<std::size_t>();
    std::ifstream in(stem + ".weights.bin", std::ios::binary);
    if (!in) {
        throw io_error("cannot open: " + stem + ".weights.bin");
    }
    c.blob.resize(count);
    read_f64_le(in, c.blob, 0);
    // reject trailing bytes: blob length is part of the contract
    char extra;
    if (in.read(&extra, 1)) {
        throw io_error("weights blob longer than manifest param_count: " + stem);
    }
    if (!all_finite(c.blob)) {
        throw io_error("weights blob contains non-finite values: " + stem);
    }
    return c;
}

}  // namespace sgp
