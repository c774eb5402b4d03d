#include "sgp/dynamics_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "sgp/checkpoint.hpp"

namespace sgp {

std::vector<double> DynamicsModel::predict(std::span<const double> x, std::span<const double> u) const {
    if (x.size() != n || u.size() != m) {
        throw shape_error("DynamicsModel::predict: dimension mismatch");
    }
    Tensor z(1, n + m);
    std::copy(x.begin(), x.end(), z.values.begin());
    std::copy(u.begin(), u.end(), z.values.begin() + static_cast<std::ptrdiff_t>(n));
    const Tensor zn = z_stats.normalize_rows(z);
    const Tensor out_n = net.forward(zn);
    const Tensor out = out_stats.denormalize_rows(out_n);
    std::vector<double> next(out.values);
    if (delta_mode) {
        for (std::size_t j = 0; j < n; ++j) next[j] += x[j];
    }
    return next;
}

Tensor DynamicsModel::predict_batch(const Tensor& x, const Tensor& u) const {
    if (x.cols() != n || u.cols() != m || x.rows() != u.rows()) {
        throw shape_error("DynamicsModel::predict_batch: dimension mismatch");
    }
    Tensor z(x.rows(), n + m);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        for (std::size_t j = 0; j < n; ++j) z(i, j) = x(i, j);
        for (std::size_t j = 0; j < m; ++j) z(i, n + j) = u(i, j);
    }
    const Tensor out = out_stats.denormalize_rows(net.forward(z_stats.normalize_rows(z)));
    Tensor next = out;
    if (delta_mode) {
        for (std::size_t i = 0; i < x.rows(); ++i) {
            for (std::size_t j = 0; j < n; ++j) next(i, j) += x(i, j);
        }
    }
    return next;
}

Tape::Id DynamicsModel::predict_on_tape(Tape& tape, const Mlp::TapeParams& p, Tape::Id x,
                                        Tape::Id u) const {
    Tape::Id z = tape.concat_cols(x, u);
    // normalize: (z - mean) / std
    Tensor in_scale(1, n + m);
    Tensor in_shift(1, n + m);
    for (std::size_t j = 0; j < n + m; ++j) {
        in_scale.values[j] = 1.0 / z_stats.std_dev[j];
        in_shift.values[j] = -z_stats.mean[j] / z_stats.std_dev[j];
    }
    Tape::Id zn = tape.affine_diag(z, in_scale, in_shift);
    Tape::Id out_n = net.forward_on_tape(tape, zn, p);
    Tensor out_scale = Tensor::row(out_stats.std_dev);
    Tensor out_shift = Tensor::row(out_stats.mean);
    Tape::Id out = tape.affine_diag(out_n, out_scale, out_shift);
    return delta_mode ? tape.add(x, out) : out;
}

namespace {

struct PreparedData {
    Tensor inputs;   // normalized (x, u)
    Tensor targets;  // normalized delta or next state
    std::vector<std::size_t> train_idx;
    std::vector<std::size_t> val_idx;
};

PreparedData prepare(const TransitionDataset& raw, const DynamicsModel& model, double val_fraction,
                     std::uint64_t seed) {
    const std::size_t count = raw.count();
    PreparedData pd;
    Tensor z(count, raw.n + raw.m);
    Tensor target_raw(count, raw.n);
    for (std::size_t i = 0; i < count; ++i) {
        for (std::size_t j = 0; j < raw.n; ++j) z(i, j) = raw.states(i, j);
        for (std::size_t j = 0; j < raw.m; ++j) z(i, raw.n + j) = raw.actions(i, j);
        for (std::size_t j = 0; j < raw.n; ++j) {
            target_raw(i, j) = model.delta_mode ? raw.next_states(i, j) - raw.states(i, j)
                                                : raw.next_states(i, j);
        }
    }
    pd.inputs = model.z_stats.normalize_rows(z);
    pd.targets = model.out_stats.normalize_rows(target_raw);

    std::vector<std::size_t> perm(count);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(seed, /*stream=*/0x5b117);
    for (std::size_t i = count; i > 1; --i) {
        std::swap(perm[i - 1], perm[rng.uniform_index(i)]);
    }
    const std::size_t val_count =
        std::min(count > 1 ? count - 1 : 0,
                 static_cast<std::size_t>(val_fraction * static_cast<double>(count)));
    pd.val_idx.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(val_count));
    pd.train_idx.assign(perm.begin() + static_cast<std::ptrdiff_t>(val_count), perm.end());
    return pd;
}

double eval_rmse(const Mlp& net, const PreparedData& pd, const std::vector<std::size_t>& idx) {
    if (idx.empty()) {
        return 0.0;
    }
    const std::size_t d = pd.targets.cols();
    Tensor in(idx.size(), pd.inputs.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        for (std::size_t j = 0; j < pd.inputs.cols(); ++j) in(i, j) = pd.inputs(idx[i], j);
    }
    const Tensor out = net.forward(in);
    double acc = 0.0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            const double r = out(i, j) - pd.targets(idx[i], j);
            acc += r * r;
        }
    }
    return std::sqrt(acc / static_cast<double>(idx.size() * d));
}

DynamicsModel train_dynamics_with(const TransitionDataset& raw, const DynamicsConfig& cfg,
                                  const TrainConfig& train_cfg,
                                  const std::vector<std::size_t>* resample) {
    if (raw.count() < 2) {
        throw config_error("train_dynamics: need at least two transitions");
    }
    TransitionDataset data = raw;
    if (resample != nullptr) {
        data.states = Tensor(resample->size(), raw.n);
        data.actions = Tensor(resample->size(), raw.m);
        data.next_states = Tensor(resample->size(), raw.n);
        for (std::size_t i = 0; i < resample->size(); ++i) {
            const std::size_t src = (*resample)[i];
            for (std::size_t j = 0; j < raw.n; ++j) data.states(i, j) = raw.states(src, j);
            for (std::size_t j = 0; j < raw.m; ++j) data.actions(i, j) = raw.actions(src, j);
            for (std::size_t j = 0; j < raw.n; ++j) data.next_states(i, j) = raw.next_states(src, j);
        }
    }

    DynamicsModel model;
    model.n = data.n;
    model.m = data.m;
    model.delta_mode = cfg.delta_mode;
    const DatasetStats stats = compute_stats(data);
    model.z_stats = stats.point();
    Tensor target_raw(data.count(), data.n);
    for (std::size_t i = 0; i < data.count(); ++i) {
        for (std::size_t j = 0; j < data.n; ++j) {
            target_raw(i, j) = cfg.delta_mode ? data.next_states(i, j) - data.states(i, j)
                                              : data.next_states(i, j);
        }
    }
    model.out_stats = NormStats::compute(target_raw);

    std::vector<std::size_t> widths;
    widths.push_back(data.n + data.m);
    widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
    widths.push_back(data.n);
    model.net = mlp_init(widths, cfg.act, cfg.seed);

    const PreparedData pd = prepare(data, model, train_cfg.val_fraction, train_cfg.seed);
    AdamState adam = AdamState::make(model.net.params.size(), train_cfg.lr);
    Rng rng(train_cfg.seed, /*stream=*/0xd124);

    std::ofstream log;
    if (!train_cfg.log_path.empty()) {
        log.open(train_cfg.log_path);
        log << "step,loss,val_rmse\n";
    }

    const std::size_t batch = std::min(train_cfg.batch, pd.train_idx.size());
    for (std::size_t step = 0; step < train_cfg.steps; ++step) {
        Tensor in(batch, pd.inputs.cols());
        Tensor tgt(batch, pd.targets.cols());
        for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t idx = pd.train_idx[rng.uniform_index(pd.train_idx.size())];
            for (std::size_t j = 0; j < pd.inputs.cols(); ++j) in(b, j) = pd.inputs(idx, j);
            for (std::size_t j = 0; j < pd.targets.cols(); ++j) tgt(b, j) = pd.targets(idx, j);
        }
        Tape tape;
        const auto params = model.net.register_params(tape);
        const Tape::Id out = model.net.forward_on_tape(tape, tape.constant(in), params);
        const Tape::Id resid = tape.sub(out, tape.constant(tgt));
        const Tape::Id loss = tape.mean(tape.square(resid));
        const double loss_val = tape.value(loss).values[0];
        if (!std::isfinite(loss_val)) {
            throw numeric_error("train_dynamics: non-finite loss (lr=" + std::to_string(train_cfg.lr) +
                                ", step=" + std::to_string(step) + ")");
        }
        tape.backward(loss);
        const auto grads = model.net.collect_grads(tape, params);
        adam_step(model.net.params, grads, adam);
        if (log.is_open() && (step % train_cfg.log_every == 0 || step + 1 == train_cfg.steps)) {
            log << step << "," << loss_val << "," << eval_rmse(model.net, pd, pd.val_idx) << "\n";
        }
    }
    model.val_rmse = eval_rmse(model.net, pd, pd.val_idx.empty() ? pd.train_idx : pd.val_idx);
    return model;
}

}  // namespace

DynamicsModel train_dynamics(const TransitionDataset& raw, const DynamicsConfig& cfg,
                             const TrainConfig& train_cfg) {
    return train_dynamics_with(raw, cfg, train_cfg, nullptr);
}

Ensemble train_ensemble(const TransitionDataset& raw, std::size_t members, const DynamicsConfig& cfg,
                        const TrainConfig& train_cfg, EnsembleMode mode) {
    if (members < 2) {
        throw config_error("train_ensemble: need at least two members");
    }
    Ensemble ens;
    ens.mode = mode;
    for (std::size_t i = 0; i < members; ++i) {
        DynamicsConfig member_cfg = cfg;
        member_cfg.seed = cfg.seed + i;
        TrainConfig member_train = train_cfg;
        member_train.seed = train_cfg.seed + i;
        member_train.log_path.clear();
        if (mode == EnsembleMode::Bootstrap) {
            Rng rng(train_cfg.seed + i, /*stream=*/0xb007);
            std::vector<std::size_t> resample(raw.count());
            for (std::size_t j = 0; j < raw.count(); ++j) resample[j] = rng.uniform_index(raw.count());
            ens.members.push_back(train_dynamics_with(raw, member_cfg, member_train, &resample));
        } else {
            ens.members.push_back(train_dynamics_with(raw, member_cfg, member_train, nullptr));
        }
    }
    return ens;
}

std::vector<double> Ensemble::predict_mean(std::span<const double> x, std::span<const double> u) const {
    std::vector<double> acc(members.front().n, 0.0);
    for (const auto& m : members) {
        const auto p = m.predict(x, u);
        for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += p[j];
    }
    for (double& v : acc) v /= static_cast<double>(members.size());
    return acc;
}

std::vector<Mlp::TapeParams> Ensemble::register_params(Tape& tape) const {
    std::vector<Mlp::TapeParams> out;
    out.reserve(members.size());
    for (const auto& m : members) out.push_back(m.register_params(tape));
    return out;
}

Tape::Id Ensemble::predict_mean_on_tape(Tape& tape, const std::vector<Mlp::TapeParams>& p, Tape::Id x,
                                        Tape::Id u) const {
    Tape::Id acc = members[0].predict_on_tape(tape, p[0], x, u);
    for (std::size_t i = 1; i < members.size(); ++i) {
        acc = tape.add(acc, members[i].predict_on_tape(tape, p[i], x, u));
    }
    return tape.scale(acc, 1.0 / static_cast<double>(members.size()));
}

Tape::Id Ensemble::variance_on_tape(Tape& tape, const std::vector<Mlp::TapeParams>& p, Tape::Id x,
                                    Tape::Id u) const {
    const std::size_t count = members.size();
    std::vector<Tape::Id> preds;
    preds.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        preds.push_back(members[i].predict_on_tape(tape, p[i], x, u));
    }
    Tape::Id mean = preds[0];
    for (std::size_t i = 1; i < count; ++i) mean = tape.add(mean, preds[i]);
    mean = tape.scale(mean, 1.0 / static_cast<double>(count));
    Tape::Id acc = -1;
    for (std::size_t i = 0; i < count; ++i) {
        const Tape::Id dev = tape.sum(tape.square(tape.sub(preds[i], mean)));
        acc = i == 0 ? dev : tape.add(acc, dev);
    }
    const double scale = 1.0 / static_cast<double>(count * members.front().n);
    return tape.scale(acc, scale);
}

double ensemble_variance(const Ensemble& ens, std::span<const double> x, std::span<const double> u) {
    const std::size_t count = ens.members.size();
    const std::size_t n = ens.members.front().n;
    std::vector<std::vector<double>> preds;
    preds.reserve(count);
    for (const auto& m : ens.members) preds.push_back(m.predict(x, u));
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        double mean = 0.0;
        for (const auto& p : preds) mean += p[j];
        mean /= static_cast<double>(count);
        double var = 0.0;
        for (const auto& p : preds) {
            const double c = p[j] - mean;
            var += c * c;
        }
        total += var / static_cast<double>(count);
    }
    return total / static_cast<double>(n);
}

namespace {

nlohmann::json norm_to_json(const NormStats& s) {
    return {{"mean", s.mean}, {"std", s.std_dev}};
}

NormStats norm_from_json(const nlohmann::json& j) {
    NormStats s;
    s.mean = j["mean"].get<std::vector<double>>();
    s.std_dev = j["std"].get<std::vector<double>>();
    return s;
}

}  // namespace

void save_dynamics(const DynamicsModel& model, const std::string& stem, std::int64_t trained_steps) {
    Checkpoint c;
    c.manifest["format"] = "sgp-checkpoint";
    c.manifest["version"] = 1;
    c.manifest["kind"] = "dynamics";
    c.manifest["widths"] = model.net.widths;
    c.manifest["activation"] = activation_to_string(model.net.act);
    c.manifest["delta_mode"] = model.delta_mode;
    c.manifest["n"] = model.n;
    c.manifest["m"] = model.m;
    c.manifest["norm_input"] = norm_to_json(model.z_stats);
    c.manifest["norm_output"] = norm_to_json(model.out_stats);
    c.manifest["val_rmse"] = model.val_rmse;
    c.manifest["trained_steps"] = trained_steps;
    c.manifest["params"] = {{{"name", "net"}, {"count", model.net.params.size()}}};
    c.manifest["param_count"] = model.net.params.size();
    c.blob = model.net.params;
    c.save(stem);
}

DynamicsModel load_dynamics(const std::string& stem) {
    const Checkpoint c = Checkpoint::load(stem);
    if (c.manifest.value("kind", "") != "dynamics") {
        throw io_error("checkpoint is not a dynamics model: " + stem);
    }
    DynamicsModel model;
    model.net.widths = c.manifest["widths"].get<std::vector<std::size_t>>();
    model.net.act = activation_from_string(c.manifest["activation"].get<std::string>());
    model.net.params = c.blob;
    model.delta_mode = c.manifest["delta_mode"].get<bool>();
    model.n = c.manifest["n"].get<std::size_t>();
    model.m = c.manifest["m"].get<std::size_t>();
    model.z_stats = norm_from_json(c.manifest["norm_input"]);
    model.out_stats = norm_from_json(c.manifest["norm_output"]);
    model.val_rmse = c.manifest.value("val_rmse", 0.0);
    if (model.net.params.size() != mlp_param_count(model.net.widths)) {
        throw io_error("dynamics checkpoint blob size mismatch: " + stem);
    }
    return model;
}

void save_ensemble(const Ensemble& ens, const std::string& stem) {
    nlohmann::json manifest;
    manifest["format"] = "sgp-ensemble";
    manifest["mode"] = ens.mode == EnsembleMode::Bootstrap ? "bootstrap" : "seed-only";
    nlohmann::json names = nlohmann::json::array();
    for (std::size_t i = 0; i < ens.members.size(); ++i) {
        const std::string member_stem = stem + ".member" + std::to_string(i);
        save_dynamics(ens.members[i], member_stem);
        names.push_back(member_stem);
    }
    manifest["members"] = names;
    std::ofstream out(stem + ".ensemble.json");
    if (!out) {
        throw io_error("cannot open for writing: " + stem + ".ensemble.json");
    }
    out << manifest.dump(2) << "\n";
}

Ensemble load_ensemble(const std::string& stem) {
    std::ifstream in(stem + ".ensemble.json");
    if (!in) {
        throw io_error("cannot open: " + stem + ".ensemble.json");
    }
    nlohmann::json manifest;
    in >> manifest;
    Ensemble ens;
    ens.mode = manifest.value("mode", "seed-only") == "bootstrap" ? EnsembleMode::Bootstrap
                                                                  : EnsembleMode::SeedOnly;
    for (const auto& name : manifest["members"]) {
        ens.members.push_back(load_dynamics(name.get<std::string>()));
    }
    if (ens.members.size() < 2) {
        throw io_error("ensemble manifest lists fewer than two members: " + stem);
    }
    return ens;
}

}  // namespace sgp
