#include "sgp/dataset.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>

#include "binio.hpp"

namespace sgp {

namespace {

constexpr char kMagic[4] = {'S', 'G', 'P', 'D'};
constexpr std::uint32_t kVersion = 1;
constexpr double kStdFloor = 1e-8;

void write_u32(std::ofstream& out, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ofstream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t read_u32(std::ifstream& in, std::size_t offset) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) {
        throw io_error("dataset: truncated header at byte " + std::to_string(offset));
    }
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

std::uint64_t read_u64(std::ifstream& in, std::size_t offset) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8)) {
        throw io_error("dataset: truncated header at byte " + std::to_string(offset));
    }
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace

void write_f64_le(std::ofstream& out, std::span<const double> xs) {
    for (double x : xs) {
        std::uint64_t bits;
        std::memcpy(&bits, &x, 8);
        unsigned char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
        out.write(reinterpret_cast<const char*>(b), 8);
    }
}

void read_f64_le(std::ifstream& in, std::span<double> xs, std::size_t base_offset) {
    for (std::size_t k = 0; k < xs.size(); ++k) {
        unsigned char b[8];
        if (!in.read(reinterpret_cast<char*>(b), 8)) {
            throw io_error("dataset: truncated payload at byte " + std::to_string(base_offset + 8 * k));
        }
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        double x;
        std::memcpy(&x, &bits, 8);
        xs[k] = x;
    }
}

NormStats NormStats::identity(std::size_t d) {
    NormStats s;
    s.mean.assign(d, 0.0);
    s.std_dev.assign(d, 1.0);
    return s;
}

NormStats NormStats::compute(const Tensor& rows) {
    const std::size_t n = rows.rows();
    const std::size_t d = rows.cols();
    if (n == 0) {
        throw config_error("NormStats::compute: empty data");
    }
    NormStats s;
    s.mean.assign(d, 0.0);
    s.std_dev.assign(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) s.mean[j] += rows(i, j);
    }
    for (double& v : s.mean) v /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            const double c = rows(i, j) - s.mean[j];
            s.std_dev[j] += c * c;
        }
    }
    for (std::size_t j = 0; j < d; ++j) {
        s.std_dev[j] = std::sqrt(s.std_dev[j] / static_cast<double>(n));
        if (s.std_dev[j] < kStdFloor) {
            std::cerr << "[NormStats] dim " << j << " has near-zero variance, flooring std at "
                      << kStdFloor << "\n";
            s.std_dev[j] = kStdFloor;
        }
    }
    return s;
}

NormStats NormStats::concat(const NormStats& a, const NormStats& b) {
    NormStats s = a;
    s.mean.insert(s.mean.end(), b.mean.begin(), b.mean.end());
    s.std_dev.insert(s.std_dev.end(), b.std_dev.begin(), b.std_dev.end());
    return s;
}

std::vector<double> NormStats::normalize(std::span<const double> x) const {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean[i]) / std_dev[i];
    return out;
}

std::vector<double> NormStats::denormalize(std::span<const double> x) const {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * std_dev[i] + mean[i];
    return out;
}

Tensor NormStats::normalize_rows(const Tensor& rows) const {
    Tensor out = rows;
    const std::size_t d = rows.cols();
    for (std::size_t i = 0; i < rows.rows(); ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            out(i, j) = (rows(i, j) - mean[j]) / std_dev[j];
        }
    }
    return out;
}

Tensor NormStats::denormalize_rows(const Tensor& rows) const {
    Tensor out = rows;
    const std::size_t d = rows.cols();
    for (std::size_t i = 0; i < rows.rows(); ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            out(i, j) = rows(i, j) * std_dev[j] + mean[j];
        }
    }
    return out;
}

DatasetStats compute_stats(const TransitionDataset& d) {
    // state stats over current and next states so both normalize consistently
    Tensor all_states(2 * d.count(), d.n);
    std::copy(d.states.values.begin(), d.states.values.end(), all_states.values.begin());
    std::copy(d.next_states.values.begin(), d.next_states.values.end(),
              all_states.values.begin() + static_cast<std::ptrdiff_t>(d.count() * d.n));
    DatasetStats s;
    s.state = NormStats::compute(all_states);
    s.action = d.m > 0 ? NormStats::compute(d.actions) : NormStats::identity(0);
    return s;
}

TransitionDataset normalize(const TransitionDataset& d, const DatasetStats& stats) {
    TransitionDataset out = d;
    out.states = stats.state.normalize_rows(d.states);
    out.actions = d.m > 0 ? stats.action.normalize_rows(d.actions) : d.actions;
    out.next_states = stats.state.normalize_rows(d.next_states);
    return out;
}

TransitionDataset denormalize(const TransitionDataset& d, const DatasetStats& stats) {
    TransitionDataset out = d;
    out.states = stats.state.denormalize_rows(d.states);
    out.actions = d.m > 0 ? stats.action.denormalize_rows(d.actions) : d.actions;
    out.next_states = stats.state.denormalize_rows(d.next_states);
    return out;
}

PointSet PointSet::from_dataset(const TransitionDataset& d) {
    PointSet ps;
    ps.dim = d.n + d.m;
    ps.points = Tensor(d.count(), ps.dim);
    for (std::size_t i = 0; i < d.count(); ++i) {
        for (std::size_t j = 0; j < d.n; ++j) ps.points(i, j) = d.states(i, j);
        for (std::size_t j = 0; j < d.m; ++j) ps.points(i, d.n + j) = d.actions(i, j);
    }
    return ps;
}

PointSet PointSet::from_rows(Tensor rows) {
    PointSet ps;
    ps.dim = rows.cols();
    ps.points = std::move(rows);
    if (ps.count() < 1) {
        throw config_error("PointSet: need at least one point");
    }
    return ps;
}

void save_dataset(const TransitionDataset& d, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw io_error("cannot open for writing: " + path);
    }
    out.write(kMagic, 4);
    write_u32(out, kVersion);
    write_u32(out, static_cast<std::uint32_t>(d.n));
    write_u32(out, static_cast<std::uint32_t>(d.m));
    write_u64(out, static_cast<std::uint64_t>(d.count()));
    for (std::size_t i = 0; i < d.count(); ++i) {
        write_f64_le(out, d.state(i));
        write_f64_le(out, d.action(i));
        write_f64_le(out, d.next_state(i));
    }
    if (!out) {
        throw io_error("write failed: " + path);
    }
}

TransitionDataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw io_error("cannot open: " + path);
    }
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
        throw io_error("dataset: bad magic at byte 0 in " + path);
    }
    const std::uint32_t version = read_u32(in, 4);
    if (version != kVersion) {
        throw io_error("dataset: unsupported version " + std::to_string(version) + " at byte 4");
    }
    TransitionDataset d;
    d.n = read_u32(in, 8);
    d.m = read_u32(in, 12);
    const std::uint64_t count = read_u64(in, 16);
    d.states = Tensor(count, d.n);
    d.actions = Tensor(count, d.m);
    d.next_states = Tensor(count, d.n);
    const std::size_t row = d.n + d.m + d.n;
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::size_t base = 24 + i * row * 8;
        read_f64_le(in, {&d.states.values[i * d.n], d.n}, base);
        read_f64_le(in, {&d.actions.values[i * d.m], d.m}, base + d.n * 8);
        read_f64_le(in, {&d.next_states.values[i * d.n], d.n}, base + (d.n + d.m) * 8);
    }
    if (!d.states.all_finite() || !d.actions.all_finite() || !d.next_states.all_finite()) {
        throw io_error("dataset: non-finite values in " + path);
    }
    return d;
}

void export_csv(const TransitionDataset& d, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw io_error("cannot open for writing: " + path);
    }
    for (std::size_t j = 0; j < d.n; ++j) out << (j ? "," : "") << "x" << j;
    for (std::size_t j = 0; j < d.m; ++j) out << ",u" << j;
    for (std::size_t j = 0; j < d.n; ++j) out << ",xp" << j;
    out << "\n";
    out.precision(17);
    for (std::size_t i = 0; i < d.count(); ++i) {
        for (std::size_t j = 0; j < d.n; ++j) out << (j ? "," : "") << d.states(i, j);
        for (std::size_t j = 0; j < d.m; ++j) out << "," << d.actions(i, j);
        for (std::size_t j = 0; j < d.n; ++j) out << "," << d.next_states(i, j);
        out << "\n";
    }
}

TransitionDataset collect_random(const Env& env, std::size_t count, std::uint64_t seed,
                                 const Box* region) {
    if (count == 0) {
        throw config_error("collect_random: count must be positive");
    }
    TransitionDataset d;
    d.n = env.state_dim();
    d.m = env.action_dim();
    d.states = Tensor(count, d.n);
    d.actions = Tensor(count, d.m);
    d.next_states = Tensor(count, d.n);
    Rng rng(seed, /*stream=*/0xda7a);
    for (std::size_t i = 0; i < count; ++i) {
        const auto x = env.sample_state(rng, region);
        const auto u = env.sample_action(rng);
        const auto xp = env.step(x, u);
        std::copy(x.begin(), x.end(), d.states.values.begin() + static_cast<std::ptrdiff_t>(i * d.n));
        std::copy(u.begin(), u.end(), d.actions.values.begin() + static_cast<std::ptrdiff_t>(i * d.m));
        std::copy(xp.begin(), xp.end(),
                  d.next_states.values.begin() + static_cast<std::ptrdiff_t>(i * d.n));
    }
    return d;
}

}  // namespace sgp
