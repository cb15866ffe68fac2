#include "apn/experiment.hpp"

#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace apn {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fixed(double v, int digits = 6) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string exact(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::array<int, 3> json_dims(const io::Json& j) {
    if (!j.is_array() || j.size() != 3) throw Error("dims must be an array of 3 integers");
    return {j[0].get<int>(), j[1].get<int>(), j[2].get<int>()};
}

io::Json mean_std(const std::vector<double>& xs) {
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(std::max<std::size_t>(xs.size(), 1));
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    const double sd = xs.size() > 1 ? std::sqrt(var / static_cast<double>(xs.size() - 1)) : 0.0;
    return {{"mean", mean}, {"std", sd}};
}

double vertex_diameter(const Mesh& mesh) {
    double d2 = 0.0;
    for (std::size_t i = 0; i < mesh.size(); ++i) {
        for (std::size_t j = i + 1; j < mesh.size(); ++j) d2 = std::max(d2, (mesh.vertices[i] - mesh.vertices[j]).squaredNorm());
    }
    return std::sqrt(d2);
}

std::string organ_name(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "phantom_%02zu", index);
    return buf;
}

ExperimentConfig default_experiment() {
    ExperimentConfig c;
    return c;
}

}  // namespace

io::Json phantom_spec_to_json(const PhantomSpec& s) {
    return {
        {"family", s.family == ShapeFamily::ellipsoid ? "ellipsoid" : "lobed_blob"},
        {"center", io::vec3_json(s.center)},
        {"semi_axes", io::vec3_json(s.semi_axes)},
        {"interior", s.interior},
        {"exterior", s.exterior},
        {"softness", s.softness},
        {"noise", s.noise},
        {"seed", s.seed},
        {"lobes", s.lobes},
        {"lobe_amplitude", s.lobe_amplitude},
        {"lobe_width", s.lobe_width},
        {"dims", s.grid.dims},
        {"spacing", io::vec3_json(s.grid.spacing)},
        {"origin", io::vec3_json(s.grid.origin)},
        {"mesh_subdivisions", s.mesh_subdivisions},
    };
}

PhantomSpec phantom_spec_from_json(const io::Json& j) {
    PhantomSpec s;
    const auto family = j.value("family", std::string("ellipsoid"));
    if (family == "ellipsoid") {
        s.family = ShapeFamily::ellipsoid;
    } else if (family == "lobed_blob") {
        s.family = ShapeFamily::lobed_blob;
    } else {
        throw Error("unknown phantom family " + family);
    }
    if (j.contains("center")) s.center = io::json_vec3(j.at("center"));
    if (j.contains("semi_axes")) s.semi_axes = io::json_vec3(j.at("semi_axes"));
    s.interior = j.value("interior", s.interior);
    s.exterior = j.value("exterior", s.exterior);
    s.softness = j.value("softness", s.softness);
    s.noise = j.value("noise", s.noise);
    s.seed = j.value("seed", s.seed);
    s.lobes = j.value("lobes", s.lobes);
    s.lobe_amplitude = j.value("lobe_amplitude", s.lobe_amplitude);
    s.lobe_width = j.value("lobe_width", s.lobe_width);
    const auto dims = j.contains("dims") ? json_dims(j.at("dims")) : s.grid.dims;
    const Vec3 spacing = j.contains("spacing") ? io::json_vec3(j.at("spacing")) : s.grid.spacing;
    s.grid = Grid::centered(dims, spacing);
    if (j.contains("origin")) s.grid.origin = io::json_vec3(j.at("origin"));
    s.mesh_subdivisions = j.value("mesh_subdivisions", s.mesh_subdivisions);
    s.validate();
    return s;
}

void PhantomSetConfig::validate() const {
    if (family != "ellipsoid" && family != "lobed_blob" && family != "mixed") throw Error("phantoms: unknown family " + family);
    if (train < 0 || test < 0 || train + test < 1) throw Error("phantoms: need at least one phantom");
    if (!(semi_axis_min > 0.0 && semi_axis_max >= semi_axis_min)) throw Error("phantoms: invalid semi-axis range");
    if (!(center_jitter >= 0.0 && interior_max >= interior_min && exterior_max >= exterior_min)) throw Error("phantoms: invalid ranges");
    if (!(lobe_amplitude_max >= lobe_amplitude_min && lobe_amplitude_min >= 0.0)) throw Error("phantoms: invalid lobe amplitude range");
    Grid::centered(dims, spacing).validate();
}

io::Json PhantomSetConfig::to_json() const {
    return {
        {"family", family},
        {"train", train},
        {"test", test},
        {"dims", dims},
        {"spacing", io::vec3_json(spacing)},
        {"semi_axis_range", {semi_axis_min, semi_axis_max}},
        {"center_jitter", center_jitter},
        {"interior_range", {interior_min, interior_max}},
        {"exterior_range", {exterior_min, exterior_max}},
        {"softness", softness},
        {"noise", noise},
        {"lobes", lobes},
        {"lobe_amplitude_range", {lobe_amplitude_min, lobe_amplitude_max}},
        {"lobe_width", lobe_width},
        {"mesh_subdivisions", mesh_subdivisions},
    };
}

PhantomSetConfig PhantomSetConfig::from_json(const io::Json& j) {
    PhantomSetConfig c;
    auto range = [&](const char* key, double& lo, double& hi) {
        if (!j.contains(key)) return;
        const auto& r = j.at(key);
        if (!r.is_array() || r.size() != 2) throw Error(std::string("phantoms: ") + key + " must be [min, max]");
        lo = r[0].get<double>();
        hi = r[1].get<double>();
    };
    c.family = j.value("family", c.family);
    c.train = j.value("train", c.train);
    c.test = j.value("test", c.test);
    if (j.contains("dims")) c.dims = json_dims(j.at("dims"));
    if (j.contains("spacing")) c.spacing = io::json_vec3(j.at("spacing"));
    range("semi_axis_range", c.semi_axis_min, c.semi_axis_max);
    c.center_jitter = j.value("center_jitter", c.center_jitter);
    range("interior_range", c.interior_min, c.interior_max);
    range("exterior_range", c.exterior_min, c.exterior_max);
    c.softness = j.value("softness", c.softness);
    c.noise = j.value("noise", c.noise);
    c.lobes = j.value("lobes", c.lobes);
    range("lobe_amplitude_range", c.lobe_amplitude_min, c.lobe_amplitude_max);
    c.lobe_width = j.value("lobe_width", c.lobe_width);
    c.mesh_subdivisions = j.value("mesh_subdivisions", c.mesh_subdivisions);
    c.validate();
    return c;
}

std::vector<PhantomSpec> PhantomSetConfig::specs(std::uint64_t seed) const {
    Rng rng(derive_seed(seed, 11));
    std::vector<PhantomSpec> out;
    const int n = train + test;
    for (int i = 0; i < n; ++i) {
        PhantomSpec s;
        if (family == "ellipsoid") {
            s.family = ShapeFamily::ellipsoid;
        } else if (family == "lobed_blob") {
            s.family = ShapeFamily::lobed_blob;
        } else {
            s.family = i % 2 == 0 ? ShapeFamily::ellipsoid : ShapeFamily::lobed_blob;
        }
        for (int k = 0; k < 3; ++k) s.semi_axes[k] = rng.uniform(semi_axis_min, semi_axis_max);
        for (int k = 0; k < 3; ++k) s.center[k] = rng.uniform(-center_jitter, center_jitter);
        s.interior = rng.uniform(interior_min, interior_max);
        s.exterior = rng.uniform(exterior_min, exterior_max);
        s.lobe_amplitude = rng.uniform(lobe_amplitude_min, lobe_amplitude_max);
        s.softness = softness;
        s.noise = noise;
        s.lobes = lobes;
        s.lobe_width = lobe_width;
        s.mesh_subdivisions = mesh_subdivisions;
        s.grid = Grid::centered(dims, spacing);
        s.seed = derive_seed(seed, 100 + static_cast<std::uint64_t>(i));
        s.validate();
        out.push_back(s);
    }
    return out;
}

io::Json AgentSection::to_json() const {
    return {{"enabled", enabled},
            {"network", network.to_json()},
            {"train", train.to_json()},
            {"augment", augment.to_json()},
            {"fine_scale", fine_scale},
            {"validation_samples", validation_samples},
            {"log_every", log_every}};
}

AgentSection AgentSection::from_json(const io::Json& j, const AgentSection& defaults) {
    AgentSection a = defaults;
    a.enabled = j.value("enabled", a.enabled);
    if (j.contains("network")) {
        io::Json merged = a.network.to_json();
        merged.update(j.at("network"));
        a.network = NetworkConfig::from_json(merged);
    }
    if (j.contains("train")) {
        io::Json merged = a.train.to_json();
        const auto& t = j.at("train");
        for (auto it = t.begin(); it != t.end(); ++it) {
            if (it.key() == "weights") {
                merged["weights"].update(it.value());
            } else {
                merged[it.key()] = it.value();
            }
        }
        a.train = TrainConfig::from_json(merged);
    }
    if (j.contains("augment")) {
        io::Json merged = a.augment.to_json();
        merged.update(j.at("augment"));
        a.augment = AugmentParams::from_json(merged);
    }
    a.fine_scale = j.value("fine_scale", a.fine_scale);
    a.validation_samples = j.value("validation_samples", a.validation_samples);
    a.log_every = j.value("log_every", a.log_every);
    if (!(a.fine_scale >= 0.0)) throw Error("agent: fine_scale must be >= 0");
    return a;
}

ExperimentConfig::ExperimentConfig() {
    ApertureConfig g = ApertureConfig::degenerate(150.0, 30);
    g.intensity_center = 50.0;
    g.intensity_scale = 50.0;
    ApertureConfig l = ApertureConfig::degenerate(20.0, 8);
    l.intensity_center = 50.0;
    l.intensity_scale = 50.0;
    segment.levels = 1;
    segment.global_aperture = g;
    segment.local_apertures = {l};

    global_agent.network.encoder = {32, 64, 128};
    global_agent.network.decoder = {128, 64, 32};
    global_agent.network.global_hidden = {64};
    global_agent.network.heads = Heads::global;
    global_agent.train.steps = 1500;
    global_agent.train.batch_size = 8;
    global_agent.train.weights.lambda_h = 0.0;
    global_agent.augment = {2.0, 90.0, 0.25, 0.15, 0.5, 200};
    global_agent.fine_scale = 0.15;

    local_agent.network.encoder = {32, 64, 128};
    local_agent.network.decoder = {128, 64, 32};
    local_agent.network.heads = Heads::local;
    local_agent.train.steps = 1500;
    local_agent.train.batch_size = 8;
    local_agent.augment = {2.0, 6.0, 0.05, 0.05, 1.0, 200};
    local_agent.fine_scale = 0.3;
    // Refreezing at the moved positions sharpens normal-mode labels where the
    // estimate is tangentially offset from the truth.
    oracle.refreezes = 2;
}

void ExperimentConfig::validate() const {
    phantoms.validate();
    segment.validate();
    init.validate();
    if (oracle.lambda < 0.0 || oracle.refreezes < 0) throw Error("oracle: lambda and refreezes must be >= 0");
    if (!checkpoints && phantoms.train < 2) throw Error("training needs at least two training phantoms");
    const int width = segment.local_aperture(0).state_width();
    for (const auto& a : segment.local_apertures) {
        if (a.state_width() != width) throw Error("segment: all local apertures must produce the same state width");
        if (action_mode_for(a) != action_mode_for(segment.local_aperture(0))) throw Error("segment: local apertures mix action modes");
    }
    global_spec();
    local_spec();
}

io::Json ExperimentConfig::to_json() const {
    io::Json j = {
        {"seed", seed},
        {"phantoms", phantoms.to_json()},
        {"oracle", {{"lambda", oracle.lambda}, {"refreezes", oracle.refreezes}}},
        {"global_agent", global_agent.to_json()},
        {"local_agent", local_agent.to_json()},
        {"segment", segment.to_json()},
        {"init", init.to_json()},
    };
    if (checkpoints) j["checkpoints"] = checkpoints->string();
    return j;
}

ExperimentConfig ExperimentConfig::from_json(const io::Json& j, const std::filesystem::path& base_dir) {
    try {
        if (!j.is_object()) throw Error("config must be a JSON object");
        ExperimentConfig c = default_experiment();
        c.seed = j.value("seed", c.seed);
        if (j.contains("phantoms")) c.phantoms = PhantomSetConfig::from_json(j.at("phantoms"));
        if (j.contains("oracle")) {
            c.oracle.lambda = j.at("oracle").value("lambda", c.oracle.lambda);
            c.oracle.refreezes = j.at("oracle").value("refreezes", c.oracle.refreezes);
        }
        if (j.contains("global_agent")) c.global_agent = AgentSection::from_json(j.at("global_agent"), c.global_agent);
        if (j.contains("local_agent")) c.local_agent = AgentSection::from_json(j.at("local_agent"), c.local_agent);
        if (j.contains("segment")) {
            io::Json merged = c.segment.to_json();
            merged.update(j.at("segment"));
            c.segment = SegmentConfig::from_json(merged);
        }
        if (j.contains("init")) {
            io::Json merged = c.init.to_json();
            merged.update(j.at("init"));
            c.init = InitProtocol::from_json(merged);
        }
        if (j.contains("checkpoints") && !j.at("checkpoints").is_null()) {
            std::filesystem::path p = j.at("checkpoints").get<std::string>();
            c.checkpoints = p.is_absolute() ? p : base_dir / p;
        }
        c.validate();
        return c;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(std::string("invalid config: ") + e.what());
    }
}

AgentTrainingSpec ExperimentConfig::global_spec() const {
    AgentTrainingSpec s;
    s.role = AgentRole::global;
    s.network = global_agent.network;
    s.network.input_dim = segment.global_aperture.state_width();
    s.network.heads = Heads::global;
    s.network.beta = segment.global_aperture.beta;
    s.network.validate();
    s.train = global_agent.train;
    s.train.seed = derive_seed(seed, 21);
    s.augment = global_agent.augment;
    s.fine_scale = global_agent.fine_scale;
    s.oracle = oracle;
    s.validation_samples = global_agent.validation_samples;
    s.log_every = global_agent.log_every;
    return s;
}

AgentTrainingSpec ExperimentConfig::local_spec() const {
    AgentTrainingSpec s;
    const auto& ap = segment.local_aperture(0);
    s.role = AgentRole::local;
    s.network = local_agent.network;
    s.network.input_dim = ap.state_width();
    s.network.heads = Heads::local;
    s.network.mode = action_mode_for(ap);
    s.network.beta = ap.beta;
    s.network.validate();
    s.train = local_agent.train;
    s.train.seed = derive_seed(seed, 22);
    s.augment = local_agent.augment;
    s.fine_scale = local_agent.fine_scale;
    s.oracle = oracle;
    s.oracle.mode = s.network.mode;
    s.validation_samples = local_agent.validation_samples;
    s.log_every = local_agent.log_every;
    return s;
}

io::Json load_config_json(const std::filesystem::path& path) {
    if (!std::filesystem::is_regular_file(path)) throw ConfigError("config not found: " + path.string());
    try {
        return io::read_json(path);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("invalid JSON config: ") + e.what());
    }
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
    return ExperimentConfig::from_json(load_config_json(path), path.parent_path());
}

PhantomSet generate_phantom_set(const PhantomSetConfig& cfg, std::uint64_t seed, int threads) {
    PhantomSet set;
    set.specs = cfg.specs(seed);
    set.train = cfg.train;
    set.phantoms.resize(set.specs.size());
    parallel_for(set.specs.size(), threads, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) set.phantoms[i] = generate_phantom(set.specs[i]);
    });
    return set;
}

void save_agents(const Agents& agents, const SegmentConfig& seg, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    io::Json j = {
        {"format", kCheckpointFormat},
        {"base_vertices", agents.base_vertices},
        {"local", "local"},
        {"global", nullptr},
        {"segment", seg.to_json()},
    };
    write_checkpoint(agents.local, dir / "local");
    if (agents.global) {
        write_checkpoint(*agents.global, dir / "global");
        j["global"] = "global";
    }
    io::write_json(j, dir / "agents.json");
}

Agents load_agents(const std::filesystem::path& dir, SegmentConfig* seg) {
    const auto j = io::read_json(dir / "agents.json");
    if (j.value("format", 0) != kCheckpointFormat) throw Error("agents.json: unsupported format");
    Agents a;
    a.base_vertices = j.at("base_vertices").get<std::size_t>();
    a.local = read_checkpoint(dir / j.at("local").get<std::string>());
    if (!j.at("global").is_null()) a.global = read_checkpoint(dir / j.at("global").get<std::string>());
    if (seg && j.contains("segment")) *seg = SegmentConfig::from_json(j.at("segment"));
    return a;
}

ShapeModel fit_training_ssm(const PhantomSet& set) {
    std::vector<Mesh> meshes;
    for (int i = 0; i < set.train; ++i) meshes.push_back(set.phantoms[static_cast<std::size_t>(i)].mesh);
    return fit_ssm(meshes);
}

TrainedAgents train_agents(const ExperimentConfig& cfg, const PhantomSet& set, const ShapeModel& model, int threads) {
    std::vector<TrainingPhantom> phantoms;
    for (int i = 0; i < set.train; ++i) {
        const auto k = static_cast<std::size_t>(i);
        phantoms.emplace_back(set.phantoms[k].volume, set.specs[k], cfg.segment.levels);
    }
    auto progress = [](const char* name) {
        return [name](const LossLogEntry& e) {
            if (e.validation_reward) spdlog::info("{} step {} loss {:.6g} validation reward {:.6g}", name, e.step + 1, e.loss, *e.validation_reward);
        };
    };
    TrainedAgents out;
    out.agents.base_vertices = phantoms.front().truth.front().size();
    if (cfg.global_agent.enabled) {
        const auto t0 = Clock::now();
        out.global = train_agent(cfg.global_spec(), cfg.segment, phantoms, model, threads, progress("global"));
        out.agents.global = out.global->network;
        spdlog::info("global agent trained in {:.1f} s", seconds_since(t0));
    }
    const auto t0 = Clock::now();
    out.local = train_agent(cfg.local_spec(), cfg.segment, phantoms, model, threads, progress("local"));
    out.agents.local = out.local.network;
    spdlog::info("local agent trained in {:.1f} s", seconds_since(t0));
    return out;
}

std::string results_csv(const std::vector<TrialResult>& trials) {
    std::string s = "trial,organ,dice,hausdorff_mm\n";
    for (const auto& t : trials) s += std::to_string(t.trial) + "," + t.organ + "," + fixed(t.final.dice) + "," + fixed(t.final.hausdorff_mm) + "\n";
    return s;
}

void write_loss_log(const std::vector<LossLogEntry>& log, const std::filesystem::path& path) {
    std::string s = "step,loss,validation_reward\n";
    for (const auto& e : log) {
        s += std::to_string(e.step) + "," + exact(e.loss) + "," + (e.validation_reward ? exact(*e.validation_reward) : std::string()) + "\n";
    }
    io::write_text(s, path);
}

std::string trace_csv(const std::vector<TraceEntry>& trace, bool with_seconds) {
    std::string s = with_seconds ? "stage,level,iteration,mean_action_mm,max_action_mm,seconds\n" : "stage,level,iteration,mean_action_mm,max_action_mm\n";
    for (const auto& t : trace) {
        s += t.stage + "," + std::to_string(t.level) + "," + std::to_string(t.iteration) + "," + fixed(t.mean_action) + "," + fixed(t.max_action);
        s += with_seconds ? "," + fixed(t.seconds) + "\n" : "\n";
    }
    return s;
}

BenchResult run_bench(const ExperimentConfig& cfg, const std::filesystem::path& out_dir, int threads) {
    cfg.validate();
    const auto t_start = Clock::now();
    std::filesystem::create_directories(out_dir);
    const int nthreads = resolve_threads(threads);

    auto t0 = Clock::now();
    const auto set = generate_phantom_set(cfg.phantoms, derive_seed(cfg.seed, 1), nthreads);
    const double phantom_seconds = seconds_since(t0);
    spdlog::info("generated {} phantoms in {:.1f} s", set.specs.size(), phantom_seconds);
    const auto model = fit_training_ssm(set);
    write_shape_model(model, out_dir / "ssm");

    t0 = Clock::now();
    Agents agents;
    SegmentConfig seg = cfg.segment;
    io::Json train_summary = nullptr;
    if (cfg.checkpoints) {
        agents = load_agents(*cfg.checkpoints);
    } else {
        auto trained = train_agents(cfg, set, model, nthreads);
        agents = trained.agents;
        save_agents(agents, seg, out_dir / "agents");
        train_summary = io::Json::object();
        if (trained.global) {
            write_loss_log(trained.global->log, out_dir / "train_global.csv");
            train_summary["global"] = {{"initial_validation_reward", trained.global->initial_validation_reward},
                                       {"final_validation_reward", trained.global->final_validation_reward}};
        }
        write_loss_log(trained.local.log, out_dir / "train_local.csv");
        train_summary["local"] = {{"initial_validation_reward", trained.local.initial_validation_reward},
                                  {"final_validation_reward", trained.local.final_validation_reward}};
    }
    const double train_seconds = seconds_since(t0);

    const int trials = cfg.init.trials;
    const std::size_t test_count = set.specs.size() - static_cast<std::size_t>(set.train);
    if (test_count == 0) throw Error("bench: no held-out phantoms");
    const std::size_t total = test_count * static_cast<std::size_t>(trials);
    std::vector<TrialResult> results(total);
    std::vector<std::vector<TraceEntry>> traces(total);
    std::vector<double> diameters(test_count);
    std::vector<Mesh> final_truth(test_count);
    for (std::size_t p = 0; p < test_count; ++p) {
        const auto idx = static_cast<std::size_t>(set.train) + p;
        diameters[p] = vertex_diameter(set.phantoms[idx].mesh);
        final_truth[p] = phantom_mesh(set.specs[idx], seg.levels - 1);
    }

    t0 = Clock::now();
    const std::uint64_t init_seed = derive_seed(cfg.seed, 5);
    parallel_for(total, nthreads, [&](std::size_t begin, std::size_t end) {
        for (std::size_t k = begin; k < end; ++k) {
            const std::size_t p = k / static_cast<std::size_t>(trials);
            const int t = static_cast<int>(k % static_cast<std::size_t>(trials));
            const auto idx = static_cast<std::size_t>(set.train) + p;
            const auto& ph = set.phantoms[idx];
            const auto init = random_init(model, cfg.init, derive_seed(init_seed, k));
            auto seg_result = segment(ph.volume, init.mesh, agents, seg, 1);
            TrialResult r;
            r.trial = t;
            r.organ = organ_name(idx);
            r.diameter = diameters[p];
            r.initial = evaluate(init.mesh, ph.mesh, ph.volume.grid);
            r.final = evaluate(seg_result.mesh, final_truth[p], ph.volume.grid, seg_result.seconds);
            for (const auto& m : seg_result.stage_meshes) {
                const Mesh truth = m.level == 0 ? ph.mesh : phantom_mesh(set.specs[idx], m.level);
                r.stage_dice.push_back(evaluate(m, truth, ph.volume.grid).dice);
            }
            traces[k] = std::move(seg_result.trace);
            results[k] = std::move(r);
        }
    });
    const double eval_seconds = seconds_since(t0);

    std::vector<double> dices;
    std::vector<double> hds;
    std::vector<double> fractions;
    std::vector<double> init_dices;
    int monotone = 0;
    for (const auto& r : results) {
        dices.push_back(r.final.dice);
        hds.push_back(r.final.hausdorff_mm);
        fractions.push_back(r.final.hausdorff_mm / r.diameter);
        init_dices.push_back(r.initial.dice);
        bool mono = r.initial.dice <= r.stage_dice.front() + 1e-12;
        for (std::size_t s = 1; s < r.stage_dice.size(); ++s) mono = mono && r.stage_dice[s - 1] <= r.stage_dice[s] + 1e-12;
        monotone += mono ? 1 : 0;
    }
    io::Json per_organ = io::Json::array();
    for (std::size_t p = 0; p < test_count; ++p) {
        std::vector<double> d;
        std::vector<double> h;
        for (const auto& r : results) {
            if (r.organ == organ_name(static_cast<std::size_t>(set.train) + p)) {
                d.push_back(r.final.dice);
                h.push_back(r.final.hausdorff_mm);
            }
        }
        per_organ.push_back({{"organ", organ_name(static_cast<std::size_t>(set.train) + p)},
                             {"diameter_mm", diameters[p]},
                             {"dice", mean_std(d)},
                             {"hausdorff_mm", mean_std(h)}});
    }
    BenchResult bench;
    bench.trials = results;
    bench.summary = {
        {"trials", total},
        {"dice", mean_std(dices)},
        {"hausdorff_mm", mean_std(hds)},
        {"hausdorff_fraction_of_diameter", mean_std(fractions)},
        {"initial_dice", mean_std(init_dices)},
        {"monotone_stage_dice_fraction", static_cast<double>(monotone) / static_cast<double>(total)},
        {"per_organ", per_organ},
        {"training", train_summary},
    };
    std::vector<double> secs;
    for (const auto& r : results) secs.push_back(r.final.seconds);
    bench.timing = {
        {"phantom_seconds", phantom_seconds},
        {"train_seconds", train_seconds},
        {"evaluation_seconds", eval_seconds},
        {"segment_seconds", mean_std(secs)},
        {"total_seconds", seconds_since(t_start)},
        {"threads", nthreads},
    };

    io::write_text(results_csv(results), out_dir / "results.csv");
    io::write_json(bench.summary, out_dir / "summary.json");
    std::string timing_csv = "trial,organ,seconds\n";
    for (const auto& r : results) timing_csv += std::to_string(r.trial) + "," + r.organ + "," + fixed(r.final.seconds) + "\n";
    io::write_text(timing_csv, out_dir / "timing.csv");
    io::write_json(bench.timing, out_dir / "timing.json");
    std::filesystem::create_directories(out_dir / "traces");
    for (std::size_t k = 0; k < total; ++k) {
        io::write_text(trace_csv(traces[k], false), out_dir / "traces" / (results[k].organ + "_trial" + std::to_string(results[k].trial) + ".csv"));
    }
    spdlog::info("bench: dice {:.4f} +- {:.4f}, hausdorff {:.2f} +- {:.2f} mm over {} trials ({:.1f} s)", bench.summary["dice"]["mean"].get<double>(),
                 bench.summary["dice"]["std"].get<double>(), bench.summary["hausdorff_mm"]["mean"].get<double>(),
                 bench.summary["hausdorff_mm"]["std"].get<double>(), total, seconds_since(t_start));
    return bench;
}

}  // namespace apn
