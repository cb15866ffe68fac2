#include "apn/pipeline.hpp"

#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <limits>

namespace apn {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void require_finite(const Mesh& mesh, const char* where) {
    for (const auto& v : mesh.vertices) {
        if (!v.allFinite()) throw Error(std::string(where) + ": non-finite vertex");
    }
}

// ASM displacement of the model, expressed in the frame of `truth` and
// up-sampled to its resolution.
std::vector<Vec3> asm_displacement(const Mesh& truth, const ShapeModel& model, std::span<const double> coeffs) {
    const auto base = model.vertex_count();
    if (truth.topology != model.topology || truth.level < model.level || truth.size() < base) {
        throw Error("augment: truth mesh does not match the shape model topology");
    }
    const auto mean = unflatten(model.mean);
    const Similarity frame = procrustes_align(mean, std::span<const Vec3>(truth.vertices.data(), base));
    const auto disp = model.displacement(coeffs);
    RowMatrix field(static_cast<Eigen::Index>(base), 3);
    for (std::size_t i = 0; i < base; ++i) field.row(static_cast<Eigen::Index>(i)) = (frame.scale * (frame.rotation * disp[i])).transpose();
    Mesh coarse = model.mean_mesh();
    while (static_cast<std::size_t>(field.rows()) < truth.size()) {
        field = upsample_field(coarse, field);
        coarse = subdivide(coarse);
    }
    if (static_cast<std::size_t>(field.rows()) != truth.size()) throw Error("augment: truth resolution is not a pyramid level of the model");
    std::vector<Vec3> out(truth.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = field.row(static_cast<Eigen::Index>(i)).transpose();
    return out;
}

// jitter(affine(asm_deform(truth))). Scales are exponentials of the drawn
// log-scales, so the affine part is always invertible.
Mesh deform(const Mesh& truth, const ShapeModel& model, const AugmentParams& p, std::uint64_t seed) {
    Rng rng(seed);
    Mesh est = truth;
    if (p.asm_range > 0.0 && model.mode_count() > 0) {
        std::vector<double> coeffs(model.mode_count());
        for (auto& c : coeffs) c = rng.uniform(-p.asm_range, p.asm_range);
        const auto d = asm_displacement(truth, model, coeffs);
        for (std::size_t i = 0; i < est.vertices.size(); ++i) est.vertices[i] += d[i];
    }
    if (p.translation > 0.0 || p.rotation > 0.0 || p.log_scale > 0.0) {
        GlobalTransform t;
        for (int k = 0; k < 3; ++k) t.translation[k] = rng.uniform(-p.translation, p.translation);
        for (int k = 0; k < 3; ++k) t.rotation[k] = rng.uniform(-p.rotation, p.rotation);
        for (int k = 0; k < 3; ++k) t.log_scale[k] = rng.uniform(-p.log_scale, p.log_scale);
        est.vertices = t.apply(est.vertices, est.centroid());
    }
    if (p.jitter > 0.0) {
        for (auto& v : est.vertices) {
            for (int k = 0; k < 3; ++k) v[k] += p.jitter * rng.normal();
        }
    }
    return est;
}

double json_double(const io::Json& j, const char* key, double fallback) {
    if (!j.contains(key)) return fallback;
    const auto& v = j.at(key);
    if (v.is_null() || (v.is_string() && (v.get<std::string>() == "inf" || v.get<std::string>() == "infinity"))) {
        return std::numeric_limits<double>::infinity();
    }
    return v.get<double>();
}

}  // namespace

io::Json aperture_to_json(const ApertureConfig& cfg) {
    return {
        {"alpha", cfg.alpha},
        {"beta", cfg.beta},
        {"n_depth", cfg.n_depth},
        {"n_ring", cfg.n_ring},
        {"n_azimuth", cfg.n_azimuth},
        {"two_sided", cfg.two_sided},
        {"intensity_center", cfg.intensity_center},
        {"intensity_scale", cfg.intensity_scale},
    };
}

ApertureConfig aperture_from_json(const io::Json& j) {
    ApertureConfig c;
    c.alpha = j.value("alpha", c.alpha);
    c.beta = j.value("beta", c.beta);
    c.n_depth = j.value("n_depth", c.n_depth);
    c.n_ring = j.value("n_ring", c.alpha == 0.0 ? 0 : c.n_ring);
    c.n_azimuth = j.value("n_azimuth", c.n_azimuth);
    c.two_sided = j.value("two_sided", c.two_sided);
    c.intensity_center = j.value("intensity_center", c.intensity_center);
    c.intensity_scale = j.value("intensity_scale", c.intensity_scale);
    c.validate();
    return c;
}

void AugmentParams::validate() const {
    if (!(asm_range >= 0.0 && translation >= 0.0 && rotation >= 0.0 && log_scale >= 0.0)) throw Error("augment: ranges must be >= 0");
    if (!(jitter >= 0.0)) throw Error("augment: jitter must be >= 0");
    if (samples < 1) throw Error("augment: samples must be >= 1");
}

io::Json AugmentParams::to_json() const {
    return {{"asm_range", asm_range}, {"translation", translation}, {"rotation", rotation},
            {"log_scale", log_scale}, {"jitter", jitter},           {"samples", samples}};
}

AugmentParams AugmentParams::from_json(const io::Json& j) {
    AugmentParams p;
    p.asm_range = j.value("asm_range", p.asm_range);
    p.translation = j.value("translation", p.translation);
    p.rotation = j.value("rotation", p.rotation);
    p.log_scale = j.value("log_scale", p.log_scale);
    p.jitter = j.value("jitter", p.jitter);
    p.samples = j.value("samples", p.samples);
    p.validate();
    return p;
}

AugmentParams AugmentParams::scaled(double factor) const {
    AugmentParams p = *this;
    p.asm_range *= factor;
    p.translation *= factor;
    p.rotation *= factor;
    p.log_scale *= factor;
    p.jitter *= factor;
    return p;
}

AugmentResult augment(const Mesh& truth, const SurfaceQuery& truth_surface, const ShapeModel& model, const AugmentParams& p,
                      std::uint64_t seed, const ApertureConfig& cfg, const OracleOptions& oracle) {
    p.validate();
    AugmentResult r;
    r.estimate = deform(truth, model, p, seed);
    const auto normals = vertex_normals(r.estimate);
    r.labels = ideal_action(r.estimate, normals, truth_surface, cfg, oracle);
    r.global = fit_global_transform(r.estimate.vertices, truth.vertices);
    return r;
}

AugmentResult augment(const Mesh& truth, const ShapeModel& model, const AugmentParams& p, std::uint64_t seed, const ApertureConfig& cfg,
                      const OracleOptions& oracle) {
    const SurfaceQuery surface(truth);
    return augment(truth, surface, model, p, seed, cfg, oracle);
}

void InitProtocol::validate() const {
    if (!(max_translation >= 0.0 && coefficient_range >= 0.0)) throw Error("init: ranges must be >= 0");
    if (mode_count < 0) throw Error("init: mode_count must be >= 0");
    if (trials < 1) throw Error("init: trials must be >= 1");
}

io::Json InitProtocol::to_json() const {
    return {{"max_translation", max_translation}, {"mode_count", mode_count}, {"coefficient_range", coefficient_range}, {"trials", trials}};
}

InitProtocol InitProtocol::from_json(const io::Json& j) {
    InitProtocol p;
    p.max_translation = j.value("max_translation", p.max_translation);
    p.mode_count = j.value("mode_count", p.mode_count);
    p.coefficient_range = j.value("coefficient_range", p.coefficient_range);
    p.trials = j.value("trials", p.trials);
    p.validate();
    return p;
}

InitDraw random_init(const ShapeModel& model, const InitProtocol& proto, std::uint64_t seed) {
    proto.validate();
    if (model.mode_count() < static_cast<std::size_t>(proto.mode_count)) {
        throw Error("random_init: model has " + std::to_string(model.mode_count()) + " modes, protocol needs " +
                    std::to_string(proto.mode_count));
    }
    Rng rng(seed);
    InitDraw d;
    d.coefficients.resize(static_cast<std::size_t>(proto.mode_count));
    for (auto& c : d.coefficients) c = rng.uniform(-proto.coefficient_range, proto.coefficient_range);
    for (int k = 0; k < 3; ++k) d.translation[k] = rng.uniform(-proto.max_translation, proto.max_translation);
    d.mesh = sample_shape(model, d.coefficients);
    for (auto& v : d.mesh.vertices) v += d.translation;
    return d;
}

void SegmentConfig::validate() const {
    if (levels < 1) throw Error("segment: levels must be >= 1");
    if (iterations.translation < 1 || iterations.affine < 1 || iterations.nonrigid < 1) throw Error("segment: iteration caps must be >= 1");
    if (!(epsilon_stop >= 0.0)) throw Error("segment: epsilon_stop must be >= 0");
    if (local_apertures.empty()) throw Error("segment: at least one local aperture is required");
    global_aperture.validate();
    for (const auto& a : local_apertures) a.validate();
}

const ApertureConfig& SegmentConfig::local_aperture(int level) const {
    const auto k = std::min(static_cast<std::size_t>(std::max(level, 0)), local_apertures.size() - 1);
    return local_apertures[k];
}

io::Json SegmentConfig::to_json() const {
    io::Json locals = io::Json::array();
    for (const auto& a : local_apertures) locals.push_back(aperture_to_json(a));
    io::Json eps = std::isfinite(epsilon_stop) ? io::Json(epsilon_stop) : io::Json("inf");
    return {
        {"levels", levels},
        {"iterations", {{"translation", iterations.translation}, {"affine", iterations.affine}, {"nonrigid", iterations.nonrigid}}},
        {"epsilon_stop", eps},
        {"global_aperture", aperture_to_json(global_aperture)},
        {"local_apertures", locals},
        {"batch_seed", batch_seed},
    };
}

SegmentConfig SegmentConfig::from_json(const io::Json& j) {
    SegmentConfig c;
    c.levels = j.value("levels", c.levels);
    if (j.contains("iterations")) {
        const auto& it = j.at("iterations");
        c.iterations.translation = it.value("translation", c.iterations.translation);
        c.iterations.affine = it.value("affine", c.iterations.affine);
        c.iterations.nonrigid = it.value("nonrigid", c.iterations.nonrigid);
    }
    c.epsilon_stop = json_double(j, "epsilon_stop", c.epsilon_stop);
    if (j.contains("global_aperture")) c.global_aperture = aperture_from_json(j.at("global_aperture"));
    if (j.contains("local_apertures")) {
        c.local_apertures.clear();
        for (const auto& a : j.at("local_apertures")) c.local_apertures.push_back(aperture_from_json(a));
    }
    c.batch_seed = j.value("batch_seed", c.batch_seed);
    c.validate();
    return c;
}

std::vector<std::vector<int>> vertex_batches(std::size_t vertex_count, std::size_t base, std::uint64_t seed) {
    if (vertex_count == 0 || base == 0) throw Error("vertex_batches: empty input");
    Rng rng(seed);
    const auto perm = rng.permutation(vertex_count);
    const std::size_t chunks = (vertex_count + base - 1) / base;
    std::vector<std::vector<int>> out(chunks);
    for (std::size_t c = 0; c < chunks; ++c) {
        out[c].reserve(base);
        for (std::size_t k = 0; k < base; ++k) out[c].push_back(static_cast<int>(perm[(c * base + k) % vertex_count]));
    }
    return out;
}

ActionField predict_local(const AgentNetwork& net, const Volume& vol, const Mesh& mesh, std::span<const Vec3> normals,
                          const ApertureConfig& cfg, std::size_t base, std::uint64_t batch_seed, int threads) {
    const auto feats = sample_aperture(vol, mesh, normals, cfg, threads);
    const State state = assemble_state(mesh, feats);
    const auto n = mesh.size();
    if (n <= base || base == 0) return net.forward(state).local;
    const auto batches = vertex_batches(n, base, derive_seed(batch_seed, static_cast<std::uint64_t>(mesh.level)));
    ActionField field = ActionField::zeros(net.config().mode, n);
    parallel_for(batches.size(), threads, [&](std::size_t begin, std::size_t end) {
        for (std::size_t c = begin; c < end; ++c) {
            const auto out = net.forward(state.select(batches[c])).local;
            // Positions past the end of the permutation are wrap-around fill.
            const std::size_t own = std::min(base, n - c * base);
            for (std::size_t k = 0; k < own; ++k) field.values.row(batches[c][k]) = out.values.row(static_cast<Eigen::Index>(k));
        }
    });
    return field;
}

SegmentResult segment(const Volume& vol, const Mesh& init, const Agents& agents, const SegmentConfig& cfg, int threads) {
    cfg.validate();
    if (agents.base_vertices != 0 && init.size() != agents.base_vertices) {
        throw Error("segment: init has " + std::to_string(init.size()) + " vertices, agents expect " + std::to_string(agents.base_vertices));
    }
    if (!agents.local.config().has_local()) throw Error("segment: local agent has no local head");
    const auto t_start = Clock::now();
    SegmentResult result;
    Mesh mesh = init;
    const std::size_t base = agents.base_vertices != 0 ? agents.base_vertices : init.size();

    auto global_stage = [&](const char* name, int cap, bool translation_only) {
        if (!agents.global || cap <= 0) return;
        for (int it = 0; it < cap; ++it) {
            const auto t0 = Clock::now();
            const auto normals = vertex_normals(mesh);
            const auto feats = sample_aperture(vol, mesh, normals, cfg.global_aperture, threads);
            const State state = assemble_state(mesh, feats);
            const auto out = agents.global->forward(state);
            const GlobalTransform t = translation_only ? out.global.translation_only() : out.global;
            const auto moved = t.apply(mesh.vertices, state.centroid);
            double sum = 0.0;
            double mx = 0.0;
            for (std::size_t i = 0; i < moved.size(); ++i) {
                const double d = (moved[i] - mesh.vertices[i]).norm();
                sum += d;
                mx = std::max(mx, d);
            }
            mesh.vertices = moved;
            require_finite(mesh, "segment");
            const double mean = sum / static_cast<double>(moved.size());
            result.trace.push_back({name, 0, it, mean, mx, seconds_since(t0)});
            if (mean < cfg.epsilon_stop) break;
        }
        result.stage_meshes.push_back(mesh);
    };
    global_stage("translation", cfg.iterations.translation, true);
    global_stage("affine", cfg.iterations.affine, false);

    for (int level = 0; level < cfg.levels; ++level) {
        if (level > 0) mesh = subdivide(mesh);
        const auto& ap = cfg.local_aperture(level);
        for (int it = 0; it < cfg.iterations.nonrigid; ++it) {
            const auto t0 = Clock::now();
            const auto normals = vertex_normals(mesh);
            const auto field = predict_local(agents.local, vol, mesh, normals, ap, base, cfg.batch_seed, threads);
            mesh.vertices = apply_action(mesh.vertices, normals, field);
            require_finite(mesh, "segment");
            const double mean = field.mean_magnitude();
            result.trace.push_back({"nonrigid", level, it, mean, field.max_magnitude(), seconds_since(t0)});
            if (mean < cfg.epsilon_stop) break;
        }
        result.stage_meshes.push_back(mesh);
    }
    result.mesh = std::move(mesh);
    result.seconds = seconds_since(t_start);
    return result;
}

Metrics evaluate(const Mesh& pred, const Mesh& truth, const Grid& grid, double seconds) {
    Metrics m;
    m.dice = dice(voxelize_mesh(pred, grid), voxelize_mesh(truth, grid));
    m.hausdorff_mm = hausdorff(pred.vertices, truth.vertices);
    m.seconds = seconds;
    return m;
}

TrainingPhantom::TrainingPhantom(const Volume& vol, const PhantomSpec& spec, int levels) : volume(&vol) {
    for (int l = 0; l < levels; ++l) {
        truth.push_back(phantom_mesh(spec, l));
        surfaces.emplace_back(truth.back());
    }
}

TrainingSample make_training_sample(const AgentTrainingSpec& spec, const SegmentConfig& seg, const std::vector<TrainingPhantom>& phantoms,
                                    const ShapeModel& model, std::size_t phantom, std::size_t aug_index, std::uint64_t seed) {
    const auto& ph = phantoms.at(phantom);
    const std::uint64_t s = derive_seed(derive_seed(seed, 0x5a17 + phantom), aug_index);
    TrainingSample sample;
    if (spec.role == AgentRole::global) {
        const auto& truth = ph.truth.at(0);
        const AugmentParams params = (aug_index % 2 == 1) ? spec.augment.scaled(spec.fine_scale) : spec.augment;
        const Mesh est = deform(truth, model, params, s);
        const auto normals = vertex_normals(est);
        sample.state = assemble_state(est, sample_aperture(*ph.volume, est, normals, seg.global_aperture));
        sample.target_global = fit_global_transform(est.vertices, truth.vertices);
        return sample;
    }
    const int level = static_cast<int>(aug_index % static_cast<std::size_t>(std::max(seg.levels, 1)));
    if (static_cast<std::size_t>(level) >= ph.truth.size()) throw Error("training phantom lacks pyramid level " + std::to_string(level));
    const auto& truth = ph.truth[static_cast<std::size_t>(level)];
    const bool fine = (aug_index / static_cast<std::size_t>(std::max(seg.levels, 1))) % 2 == 1;
    const Mesh est = deform(truth, model, fine ? spec.augment.scaled(spec.fine_scale) : spec.augment, s);
    const auto normals = vertex_normals(est);
    const auto& ap = seg.local_aperture(level);
    const State state = assemble_state(est, sample_aperture(*ph.volume, est, normals, ap));
    OracleOptions oracle = spec.oracle;
    oracle.mode = spec.network.mode;
    const auto labels = ideal_action(est, normals, ph.surfaces[static_cast<std::size_t>(level)], ap, oracle);

    const std::size_t base = ph.truth[0].size();
    std::vector<int> ids;
    if (est.size() > base) {
        const auto batches = vertex_batches(est.size(), base, derive_seed(s, 7));
        Rng pick(derive_seed(s, 8));
        ids = batches[pick.index(batches.size())];
    } else {
        ids.resize(est.size());
        for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
    }
    sample.state = state.select(ids);
    sample.target_local.resize(static_cast<Eigen::Index>(ids.size()), labels.values.cols());
    for (std::size_t k = 0; k < ids.size(); ++k) {
        const auto i = static_cast<std::size_t>(ids[k]);
        sample.target_local.row(static_cast<Eigen::Index>(k)) = labels.values.row(ids[k]);
        sample.estimate_vertices.push_back(est.vertices[i]);
        sample.normals.push_back(normals[i]);
        sample.truth_vertices.push_back(truth.vertices[i]);
    }
    return sample;
}

double validation_reward(const AgentNetwork& net, const AgentTrainingSpec& spec, const SegmentConfig& seg,
                         const std::vector<TrainingPhantom>& phantoms, const ShapeModel& model, int threads) {
    const auto n = static_cast<std::size_t>(std::max(spec.validation_samples, 0));
    if (n == 0) return 0.0;
    std::vector<double> rewards(n, 0.0);
    const std::size_t ph = phantoms.size() - 1;
    const auto& w = spec.train.weights;
    parallel_for(n, threads, [&](std::size_t begin, std::size_t end) {
        for (std::size_t k = begin; k < end; ++k) {
            const auto idx = static_cast<std::size_t>(spec.augment.samples) + k;
            const auto sample = make_training_sample(spec, seg, phantoms, model, ph, idx, spec.train.seed);
            const auto out = net.forward(sample.state);
            double r = 0.0;
            if (spec.role == AgentRole::local) {
                ActionField target;
                target.mode = out.local.mode;
                target.values = sample.target_local;
                const auto deformed = apply_action(sample.estimate_vertices, sample.normals, out.local);
                r = reward(target, out.local, deformed, sample.truth_vertices, w.lambda_h);
            } else {
                const auto& t = sample.target_global;
                const double radius = sample.state.radius;
                r = -(w.trs[0] * ((out.global.translation - t.translation) / radius).squaredNorm() +
                      w.trs[1] * (out.global.rotation - t.rotation).squaredNorm() + w.trs[2] * (out.global.log_scale - t.log_scale).squaredNorm());
            }
            rewards[k] = r;
        }
    });
    double sum = 0.0;
    for (double r : rewards) sum += r;
    return sum / static_cast<double>(n);
}

TrainResult train_agent(const AgentTrainingSpec& spec, const SegmentConfig& seg, const std::vector<TrainingPhantom>& phantoms,
                        const ShapeModel& model, int threads, const ProgressFn& progress) {
    spec.train.validate();
    spec.augment.validate();
    seg.validate();
    if (phantoms.size() < 2) throw Error("train: need at least two phantoms");
    if (spec.role == AgentRole::global && !spec.network.has_global()) throw Error("train: global role needs a global head");
    if (spec.role == AgentRole::local && !spec.network.has_local()) throw Error("train: local role needs a local head");

    TrainResult result;
    result.network = AgentNetwork(spec.network);
    result.network.initialize(derive_seed(spec.train.seed, 1));
    auto adam = AdamState::for_network(result.network);
    Rng rng(derive_seed(spec.train.seed, 2));
    const std::size_t per_phantom = static_cast<std::size_t>(spec.augment.samples);
    const std::size_t pool = phantoms.size() * per_phantom;
    const auto batch = static_cast<std::size_t>(spec.train.batch_size);

    result.initial_validation_reward = validation_reward(result.network, spec, seg, phantoms, model, threads);
    std::vector<TrainingSample> samples(batch);
    std::vector<const TrainingSample*> ptrs(batch);
    for (int step = 0; step < spec.train.steps; ++step) {
        std::vector<std::size_t> picks(batch);
        for (auto& p : picks) p = rng.index(pool);
        parallel_for(batch, threads, [&](std::size_t begin, std::size_t end) {
            for (std::size_t b = begin; b < end; ++b) {
                samples[b] = make_training_sample(spec, seg, phantoms, model, picks[b] / per_phantom, picks[b] % per_phantom, spec.train.seed);
            }
        });
        for (std::size_t b = 0; b < batch; ++b) ptrs[b] = &samples[b];
        LossLogEntry entry;
        entry.step = step;
        try {
            entry.loss = train_step(result.network, ptrs, adam, spec.train, threads);
        } catch (const Error& e) {
            throw Error("training diverged at step " + std::to_string(step) + ": " + e.what());
        }
        const bool last = step + 1 == spec.train.steps;
        if (last || (spec.log_every > 0 && (step + 1) % spec.log_every == 0)) {
            entry.validation_reward = validation_reward(result.network, spec, seg, phantoms, model, threads);
        }
        result.log.push_back(entry);
        if (progress) progress(entry);
    }
    result.final_validation_reward = spec.train.steps > 0 ? *result.log.back().validation_reward : result.initial_validation_reward;
    return result;
}

}  // namespace apn
