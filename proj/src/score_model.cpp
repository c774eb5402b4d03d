#include "sgp/score_model.hpp"

#include <cmath>
#include <fstream>
#include <iostream>

#include "sgp/checkpoint.hpp"

namespace sgp {

Conditioning conditioning_from_string(const std::string& s) {
    if (s == "multiplicative") return Conditioning::Multiplicative;
    if (s == "concat") return Conditioning::Concat;
    throw config_error("unknown conditioning mode: " + s);
}

std::string conditioning_to_string(Conditioning c) {
    return c == Conditioning::Multiplicative ? "multiplicative" : "concat";
}

ScoreNet make_score_net(std::size_t dim, const NoiseSchedule& schedule, const ScoreNetConfig& cfg,
                        const NormStats& z_stats) {
    if (cfg.hidden.empty()) {
        throw config_error("make_score_net: need at least one hidden layer");
    }
    ScoreNet net;
    net.conditioning = cfg.conditioning;
    net.schedule = schedule;
    net.z_stats = z_stats;
    net.dim = dim;
    std::vector<std::size_t> widths;
    widths.push_back(cfg.conditioning == Conditioning::Concat ? dim + 1 : dim);
    widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
    widths.push_back(dim);
    net.trunk = mlp_init(widths, cfg.act, cfg.seed);
    if (cfg.conditioning == Conditioning::Multiplicative) {
        for (std::size_t h : cfg.hidden) {
            if (h != cfg.hidden.front()) {
                throw config_error("make_score_net: multiplicative conditioning needs equal hidden widths");
            }
        }
        // unit embeddings: the untrained net starts as a plain trunk
        net.embeddings = Tensor::full(schedule.levels(), cfg.hidden.front(), 1.0);
    }
    return net;
}

namespace {

void check_level(const ScoreNet& net, std::size_t level) {
    if (level >= net.levels()) {
        throw config_error("ScoreNet: level " + std::to_string(level) + " out of range [0," +
                           std::to_string(net.levels()) + ")");
    }
}

Tensor concat_sigma(const Tensor& z, double sigma) {
    Tensor out(z.rows(), z.cols() + 1);
    for (std::size_t i = 0; i < z.rows(); ++i) {
        for (std::size_t j = 0; j < z.cols(); ++j) out(i, j) = z(i, j);
        out(i, z.cols()) = sigma;
    }
    return out;
}

}  // namespace

Tensor ScoreNet::forward(const Tensor& z, std::size_t level) const {
    check_level(*this, level);
    if (z.cols() != dim) {
        throw shape_error("ScoreNet::forward: input dim mismatch");
    }
    const double inv_sigma = 1.0 / schedule.sigma(level);
    if (conditioning == Conditioning::Concat) {
        Tensor out = trunk.forward(concat_sigma(z, schedule.sigma(level)));
        for (double& v : out.values) v *= inv_sigma;
        return out;
    }
    // multiplicative: gate each hidden activation with the level embedding
    const std::size_t batch = z.rows();
    const std::size_t width = embeddings.cols();
    Tensor cur = z;
    for (std::size_t l = 0; l < trunk.layer_count(); ++l) {
        const std::size_t in = trunk.widths[l];
        const std::size_t out_dim = trunk.widths[l + 1];
        Tensor next(batch, out_dim);
        auto ws = trunk.weight(l);
        auto bs = trunk.bias(l);
#pragma omp parallel for schedule(static) if (batch * out_dim * in > 1u << 16)
        for (std::size_t r = 0; r < batch; ++r) {
            const double* xrow = &cur.values[r * in];
            double* yrow = &next.values[r * out_dim];
            for (std::size_t o = 0; o < out_dim; ++o) {
                const double* wrow = ws.data() + o * in;
                double acc = 0.0;
#pragma omp simd reduction(+ : acc)
                for (std::size_t i = 0; i < in; ++i) acc += xrow[i] * wrow[i];
                yrow[o] = bs[o] + acc;
            }
        }
        if (l + 1 < trunk.layer_count()) {
            const double* emb = &embeddings.values[level * width];
            for (std::size_t r = 0; r < batch; ++r) {
                double* yrow = &next.values[r * out_dim];
                for (std::size_t o = 0; o < out_dim; ++o) {
                    double v = yrow[o];
                    switch (trunk.act) {
                        case Activation::Tanh: v = std::tanh(v); break;
                        case Activation::Relu: v = v > 0.0 ? v : 0.0; break;
                        case Activation::Softplus:
                            v = v > 30.0 ? v : std::log1p(std::exp(std::min(v, 30.0)));
                            break;
                    }
                    yrow[o] = v * emb[o];
                }
            }
        }
        cur = std::move(next);
    }
    for (double& v : cur.values) v *= inv_sigma;
    return cur;
}

std::vector<double> ScoreNet::eval(std::span<const double> z, std::size_t level) const {
    Tensor in(1, z.size());
    std::copy(z.begin(), z.end(), in.values.begin());
    Tensor out = forward(in, level);
    return out.values;
}

ScoreNet::TapeParams ScoreNet::register_params(Tape& tape, std::size_t level) const {
    check_level(*this, level);
    TapeParams p;
    p.trunk = trunk.register_params(tape);
    if (conditioning == Conditioning::Multiplicative) {
        Tensor row(1, embeddings.cols());
        for (std::size_t j = 0; j < embeddings.cols(); ++j) row.values[j] = embeddings(level, j);
        p.embedding_row = tape.leaf(std::move(row));
    }
    return p;
}

Tape::Id ScoreNet::forward_on_tape(Tape& tape, Tape::Id input, std::size_t level,
                                   const TapeParams& p) const {
    check_level(*this, level);
    const double inv_sigma = 1.0 / schedule.sigma(level);
    if (conditioning == Conditioning::Concat) {
        const Tensor& in = tape.value(input);
        Tape::Id sig = tape.constant(Tensor::full(in.rows(), 1, schedule.sigma(level)));
        return tape.scale(trunk.forward_on_tape(tape, tape.concat_cols(input, sig), p.trunk), inv_sigma);
    }
    Tape::Id h = input;
    for (std::size_t l = 0; l < trunk.layer_count(); ++l) {
        h = tape.linear(h, p.trunk.weights[l], p.trunk.biases[l]);
        if (l + 1 < trunk.layer_count()) {
            h = tape.activation(h, trunk.act);
            h = tape.mul_row(h, p.embedding_row);
        }
    }
    return tape.scale(h, inv_sigma);
}

namespace {

struct DsmBatch {
    Tensor perturbed;     // z + sigma xi
    Tensor noise_over_s;  // xi / sigma = (z' - z) / sigma^2 * sigma ... kept as xi/sigma
};

DsmBatch make_dsm_batch(const Tensor& z, double sigma, Rng& rng) {
    DsmBatch b;
    b.perturbed = z;
    b.noise_over_s = Tensor(z.rows(), z.cols());
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double xi = rng.normal();
        b.perturbed.values[i] += sigma * xi;
        b.noise_over_s.values[i] = xi / sigma;
    }
    return b;
}

}  // namespace

double dsm_loss(const ScoreNet& net, const Tensor& batch_z, std::size_t level, Rng& rng) {
    check_level(net, level);
    const double sigma = net.schedule.sigma(level);
    const DsmBatch b = make_dsm_batch(batch_z, sigma, rng);
    const Tensor out = net.forward(b.perturbed, level);
    double acc = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double r = out.values[i] + b.noise_over_s.values[i];
        acc += r * r;
    }
    return sigma * sigma * acc / static_cast<double>(batch_z.rows());
}

ScoreNet train_score(const PointSet& points, const NoiseSchedule& schedule, const ScoreNetConfig& net_cfg,
                     const ScoreTrainConfig& train_cfg, const NormStats& z_stats, ScoreNet* resume_from) {
    ScoreNet net = resume_from != nullptr ? *resume_from
                                          : make_score_net(points.dim, schedule, net_cfg, z_stats);
    const std::size_t emb_count = net.conditioning == Conditioning::Multiplicative ? net.embeddings.size() : 0;
    AdamState adam = AdamState::make(net.trunk.params.size() + emb_count, train_cfg.lr);
    Rng rng(train_cfg.seed, /*stream=*/0x5c04e);

    std::ofstream log;
    if (!train_cfg.log_path.empty()) {
        log.open(train_cfg.log_path, train_cfg.start_step > 0 ? std::ios::app : std::ios::out);
        if (train_cfg.start_step == 0) {
            log << "step,level,loss\n";
        }
    }

    // sampling is with replacement: small datasets still get full batches
    const std::size_t batch = train_cfg.batch;
    std::vector<double> grads(adam.m.size(), 0.0);
    for (std::size_t step = 0; step < train_cfg.steps; ++step) {
        if (train_cfg.lr_decay) {
            const double frac = static_cast<double>(step) / static_cast<double>(train_cfg.steps);
            adam.lr = train_cfg.lr * std::max(0.1, 1.0 - frac);
        }
        const std::size_t level = rng.uniform_index(schedule.levels());
        const double sigma = schedule.sigma(level);
        Tensor zb(batch, points.dim);
        for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t idx = rng.uniform_index(points.count());
            const auto p = points.point(idx);
            std::copy(p.begin(), p.end(), zb.values.begin() + static_cast<std::ptrdiff_t>(b * points.dim));
        }
        const DsmBatch db = make_dsm_batch(zb, sigma, rng);

        Tape tape;
        const auto params = net.register_params(tape, level);
        const Tape::Id input = tape.constant(db.perturbed);
        const Tape::Id out = net.forward_on_tape(tape, input, level, params);
        const Tape::Id resid = tape.add(out, tape.constant(db.noise_over_s));
        const Tape::Id loss =
            tape.scale(tape.sum(tape.square(resid)), sigma * sigma / static_cast<double>(batch));
        const double loss_val = tape.value(loss).values[0];
        if (!std::isfinite(loss_val)) {
            throw numeric_error("train_score: non-finite loss (lr=" + std::to_string(train_cfg.lr) +
                                ", level=" + std::to_string(level) +
                                ", step=" + std::to_string(train_cfg.start_step + static_cast<std::int64_t>(step)) + ")");
        }
        tape.backward(loss);

        const auto trunk_grads = net.trunk.collect_grads(tape, params.trunk);
        std::fill(grads.begin(), grads.end(), 0.0);
        std::copy(trunk_grads.begin(), trunk_grads.end(), grads.begin());
        if (net.conditioning == Conditioning::Multiplicative) {
            const Tensor& ge = tape.grad(params.embedding_row);
            const std::size_t width = net.embeddings.cols();
            std::copy(ge.values.begin(), ge.values.end(),
                      grads.begin() + static_cast<std::ptrdiff_t>(net.trunk.params.size() + level * width));
        }
        // one flat parameter vector: trunk params then the embedding table
        std::vector<double> flat(net.trunk.params.size() + emb_count);
        std::copy(net.trunk.params.begin(), net.trunk.params.end(), flat.begin());
        if (emb_count > 0) {
            std::copy(net.embeddings.values.begin(), net.embeddings.values.end(),
                      flat.begin() + static_cast<std::ptrdiff_t>(net.trunk.params.size()));
        }
        adam_step(flat, grads, adam);
        std::copy(flat.begin(), flat.begin() + static_cast<std::ptrdiff_t>(net.trunk.params.size()),
                  net.trunk.params.begin());
        if (emb_count > 0) {
            std::copy(flat.begin() + static_cast<std::ptrdiff_t>(net.trunk.params.size()), flat.end(),
                      net.embeddings.values.begin());
        }

        if (log.is_open() && (step % train_cfg.log_every == 0 || step + 1 == train_cfg.steps)) {
            log << (train_cfg.start_step + static_cast<std::int64_t>(step)) << "," << level << ","
                << loss_val << "\n";
        }
    }
    return net;
}

ScoreValidationReport validate_against_exact(const ScoreNet& net, const PointSet& points,
                                             const NoiseSchedule& schedule, std::size_t n_probes,
                                             std::uint64_t seed) {
    ScoreValidationReport report;
    Rng rng(seed, /*stream=*/0x7a11d);
    const std::size_t d = points.dim;
    for (std::size_t k = 0; k < schedule.levels(); ++k) {
        const double sigma = schedule.sigma(k);
        ScoreValidationLevel lv;
        lv.level = k;
        lv.sigma = sigma;
        double cos_acc = 0.0;
        double wcos_acc = 0.0;
        double weight_acc = 0.0;
        double mag_acc = 0.0;
        double far_cos_acc = 0.0;
        for (std::size_t i = 0; i < n_probes; ++i) {
            const auto base = points.point(rng.uniform_index(points.count()));
            std::vector<double> probe(base.begin(), base.end());
            for (std::size_t j = 0; j < d; ++j) probe[j] += sigma * rng.normal();
            const auto predicted = net.eval(probe, k);
            const auto truth = exact_score(probe, points, sigma);
            const double np = norm(predicted);
            const double nt = norm(truth);
            double dot = 0.0;
            for (std::size_t j = 0; j < d; ++j) dot += predicted[j] * truth[j];
            const double cosine = (np > 0.0 && nt > 0.0) ? dot / (np * nt) : 0.0;
            cos_acc += cosine;
            wcos_acc += nt * cosine;
            weight_acc += nt;
            mag_acc += std::abs(np - nt);

            // far probe: 3..6 sigma from a random data point, random direction
            const auto far_base = points.point(rng.uniform_index(points.count()));
            std::vector<double> dir(d);
            for (std::size_t j = 0; j < d; ++j) dir[j] = rng.normal();
            const double dn = norm(dir);
            const double radius = sigma * rng.uniform(3.0, 6.0);
            std::vector<double> far(d);
            for (std::size_t j = 0; j < d; ++j) far[j] = far_base[j] + radius * dir[j] / dn;
            const auto far_pred = net.eval(far, k);
            const auto far_truth = exact_score(far, points, sigma);
            const double fp = norm(far_pred);
            const double ft = norm(far_truth);
            double fdot = 0.0;
            for (std::size_t j = 0; j < d; ++j) fdot += far_pred[j] * far_truth[j];
            far_cos_acc += (fp > 0.0 && ft > 0.0) ? fdot / (fp * ft) : 0.0;
        }
        lv.mean_cos = cos_acc / static_cast<double>(n_probes);
        lv.weighted_cos = weight_acc > 0.0 ? wcos_acc / weight_acc : 0.0;
        lv.mean_rel_mag_err = weight_acc > 0.0 ? mag_acc / weight_acc : 0.0;
        lv.far_mean_cos = far_cos_acc / static_cast<double>(n_probes);
        report.levels.push_back(lv);
    }
    return report;
}

void save_score_net(const ScoreNet& net, const std::string& stem, std::int64_t trained_steps) {
    Checkpoint c;
    c.manifest["format"] = "sgp-checkpoint";
    c.manifest["version"] = 1;
    c.manifest["kind"] = "score";
    c.manifest["widths"] = net.trunk.widths;
    c.manifest["activation"] = activation_to_string(net.trunk.act);
    c.manifest["conditioning"] = conditioning_to_string(net.conditioning);
    c.manifest["dim"] = net.dim;
    c.manifest["schedule"] = {{"kind", schedule_kind_to_string(net.schedule.kind)},
                              {"sigmas", net.schedule.sigmas}};
    c.manifest["norm"] = {{"mean", net.z_stats.mean}, {"std", net.z_stats.std_dev}};
    c.manifest["trained_steps"] = trained_steps;
    nlohmann::json blocks = nlohmann::json::array();
    blocks.push_back({{"name", "trunk"}, {"count", net.trunk.params.size()}});
    c.blob = net.trunk.params;
    if (net.conditioning == Conditioning::Multiplicative) {
        blocks.push_back({{"name", "embeddings"},
                          {"shape", {net.embeddings.rows(), net.embeddings.cols()}},
                          {"count", net.embeddings.size()}});
        c.blob.insert(c.blob.end(), net.embeddings.values.begin(), net.embeddings.values.end());
    }
    c.manifest["params"] = blocks;
    c.manifest["param_count"] = c.blob.size();
    c.save(stem);
}

ScoreNet load_score_net(const std::string& stem) {
    const Checkpoint c = Checkpoint::load(stem);
    if (c.manifest.value("kind", "") != "score") {
        throw io_error("checkpoint is not a score net: " + stem);
    }
    ScoreNet net;
    net.trunk.widths = c.manifest["widths"].get<std::vector<std::size_t>>();
    net.trunk.act = activation_from_string(c.manifest["activation"].get<std::string>());
    net.conditioning = conditioning_from_string(c.manifest["conditioning"].get<std::string>());
    net.dim = c.manifest["dim"].get<std::size_t>();
    net.schedule.kind = schedule_kind_from_string(c.manifest["schedule"]["kind"].get<std::string>());
    net.schedule.sigmas = c.manifest["schedule"]["sigmas"].get<std::vector<double>>();
    net.z_stats.mean = c.manifest["norm"]["mean"].get<std::vector<double>>();
    net.z_stats.std_dev = c.manifest["norm"]["std"].get<std::vector<double>>();
    const std::size_t trunk_count = mlp_param_count(net.trunk.widths);
    net.trunk.params.assign(c.blob.begin(), c.blob.begin() + static_cast<std::ptrdiff_t>(trunk_count));
    if (net.conditioning == Conditioning::Multiplicative) {
        const std::size_t width = net.trunk.widths[1];
        const std::size_t k = net.schedule.levels();
        if (c.blob.size() != trunk_count + k * width) {
            throw io_error("score checkpoint blob size mismatch: " + stem);
        }
        net.embeddings = Tensor(k, width);
        std::copy(c.blob.begin() + static_cast<std::ptrdiff_t>(trunk_count), c.blob.end(),
                  net.embeddings.values.begin());
    }
    return net;
}

std::int64_t score_net_trained_steps(const std::string& stem) {
    const Checkpoint c = Checkpoint::load(stem);
    return c.manifest.value("trained_steps", static_cast<std::int64_t>(0));
}

}  // namespace sgp
