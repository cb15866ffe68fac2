#include "apn/cli.hpp"

#include "apn/experiment.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <iostream>

namespace apn::cli {

namespace {

namespace fs = std::filesystem;

struct Options {
    fs::path config;
    fs::path out;
    std::optional<std::uint64_t> seed;
    int threads = 1;
};

void setup_logging() {
    if (!spdlog::get("apn")) {
        auto logger = spdlog::stderr_logger_mt("apn");
        logger->set_pattern("[%H:%M:%S] %v");
        spdlog::set_default_logger(logger);
    }
}

fs::path resolve(const fs::path& base, const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() ? path : base / path;
}

std::string require_string(const io::Json& j, const char* key) {
    if (!j.contains(key) || !j.at(key).is_string()) throw ConfigError(std::string("config: missing string field '") + key + "'");
    return j.at(key).get<std::string>();
}

ExperimentConfig experiment_from(const io::Json& raw, const Options& opt) {
    io::Json j = raw;
    if (opt.seed) j["seed"] = *opt.seed;
    return ExperimentConfig::from_json(j, opt.config.parent_path());
}

int cmd_phantom_gen(const io::Json& raw, const Options& opt) {
    const auto cfg = experiment_from(raw, opt);
    const int threads = resolve_threads(opt.threads);
    fs::create_directories(opt.out);
    const auto set = generate_phantom_set(cfg.phantoms, derive_seed(cfg.seed, 1), threads);
    io::Json manifest = {{"seed", cfg.seed}, {"train", set.train}, {"phantoms", io::Json::array()}};
    for (std::size_t i = 0; i < set.specs.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "phantom_%02zu", i);
        write_volume(set.phantoms[i].volume, opt.out / name);
        write_obj(set.phantoms[i].mesh, opt.out / (std::string(name) + ".obj"));
        manifest["phantoms"].push_back({{"name", name},
                                        {"split", static_cast<int>(i) < set.train ? "train" : "test"},
                                        {"volume", std::string(name) + ".vol.json"},
                                        {"mesh", std::string(name) + ".obj"},
                                        {"spec", phantom_spec_to_json(set.specs[i])}});
    }
    io::write_json(manifest, opt.out / "phantoms.json");
    spdlog::info("wrote {} phantoms to {}", set.specs.size(), opt.out.string());
    return 0;
}

int cmd_ssm_fit(const io::Json& raw, const Options& opt) {
    std::vector<Mesh> meshes;
    if (raw.contains("meshes")) {
        if (!raw.at("meshes").is_array()) throw ConfigError("config: 'meshes' must be an array of paths");
        std::vector<fs::path> paths;
        for (const auto& m : raw.at("meshes")) {
            if (!m.is_string()) throw ConfigError("config: 'meshes' must be an array of paths");
            paths.push_back(resolve(opt.config.parent_path(), m.get<std::string>()));
        }
        for (const auto& p : paths) meshes.push_back(read_obj(p));
    } else {
        const auto cfg = experiment_from(raw, opt);
        for (const auto& spec : cfg.phantoms.specs(derive_seed(cfg.seed, 1))) {
            if (static_cast<int>(meshes.size()) == cfg.phantoms.train) break;
            meshes.push_back(phantom_mesh(spec));
        }
    }
    const auto model = fit_ssm(meshes);
    fs::create_directories(opt.out);
    write_shape_model(model, opt.out / "model");
    spdlog::info("shape model: {} vertices, {} modes", model.vertex_count(), model.mode_count());
    return 0;
}

int cmd_train(const io::Json& raw, const Options& opt) {
    auto cfg = experiment_from(raw, opt);
    cfg.checkpoints.reset();
    const int threads = resolve_threads(opt.threads);
    fs::create_directories(opt.out);
    const auto set = generate_phantom_set(cfg.phantoms, derive_seed(cfg.seed, 1), threads);
    const auto model = fit_training_ssm(set);
    const auto trained = train_agents(cfg, set, model, threads);
    write_shape_model(model, opt.out / "ssm");
    save_agents(trained.agents, cfg.segment, opt.out / "agents");
    io::Json summary = io::Json::object();
    if (trained.global) {
        write_loss_log(trained.global->log, opt.out / "train_global.csv");
        summary["global"] = {{"initial_validation_reward", trained.global->initial_validation_reward},
                             {"final_validation_reward", trained.global->final_validation_reward}};
    }
    write_loss_log(trained.local.log, opt.out / "train_local.csv");
    summary["local"] = {{"initial_validation_reward", trained.local.initial_validation_reward},
                        {"final_validation_reward", trained.local.final_validation_reward}};
    io::write_json(summary, opt.out / "train.json");
    io::write_json(cfg.to_json(), opt.out / "config.json");
    return 0;
}

int cmd_segment(const io::Json& raw, const Options& opt) {
    const auto base = opt.config.parent_path();
    const auto volume_path = resolve(base, require_string(raw, "volume"));
    const auto agents_dir = resolve(base, require_string(raw, "agents"));
    if (!raw.contains("init")) throw ConfigError("config: missing 'init'");
    const auto& init_cfg = raw.at("init");
    SegmentConfig seg;
    std::optional<io::Json> seg_override;
    if (raw.contains("segment")) seg_override = raw.at("segment");

    const Volume vol = read_volume(volume_path);
    Agents agents = load_agents(agents_dir, &seg);
    if (seg_override) {
        try {
            io::Json merged = seg.to_json();
            merged.update(*seg_override);
            seg = SegmentConfig::from_json(merged);
        } catch (const std::exception& e) {
            throw ConfigError(std::string("invalid config: ") + e.what());
        }
    }
    Mesh init;
    if (init_cfg.is_string()) {
        init = read_obj(resolve(base, init_cfg.get<std::string>()));
    } else {
        const auto model = read_shape_model(resolve(base, require_string(init_cfg, "ssm")));
        const auto proto = InitProtocol::from_json(init_cfg.value("protocol", io::Json::object()));
        const std::uint64_t seed = opt.seed.value_or(init_cfg.value("seed", std::uint64_t{0}));
        init = random_init(model, proto, seed).mesh;
    }
    const auto result = segment(vol, init, agents, seg, resolve_threads(opt.threads));
    fs::create_directories(opt.out);
    write_obj(result.mesh, opt.out / "segmented.obj");
    io::write_text(trace_csv(result.trace), opt.out / "trace.csv");
    io::write_json({{"seconds", result.seconds}, {"iterations", result.trace.size()}, {"vertices", result.mesh.size()}},
                   opt.out / "segment.json");
    spdlog::info("segmented in {:.3f} s ({} iterations)", result.seconds, result.trace.size());
    return 0;
}

int cmd_eval(const io::Json& raw, const Options& opt) {
    const auto base = opt.config.parent_path();
    const auto pred = read_obj(resolve(base, require_string(raw, "pred")));
    const auto truth = read_obj(resolve(base, require_string(raw, "truth")));
    const auto vol = read_volume(resolve(base, require_string(raw, "volume")));
    const auto m = evaluate(pred, truth, vol.grid, raw.value("seconds", 0.0));
    const io::Json out = {{"dice", m.dice}, {"hausdorff_mm", m.hausdorff_mm}, {"seconds", m.seconds}};
    fs::create_directories(opt.out);
    io::write_json(out, opt.out / "metrics.json");
    std::cout << out.dump() << "\n";
    return 0;
}

int cmd_bench(const io::Json& raw, const Options& opt) {
    const auto cfg = experiment_from(raw, opt);
    fs::create_directories(opt.out);
    io::write_json(cfg.to_json(), opt.out / "config.json");
    const auto result = run_bench(cfg, opt.out, opt.threads);
    std::cout << result.summary.dump() << "\n";
    return 0;
}

std::string one_line(std::string s) {
    for (auto& c : s) {
        if (c == '\n' || c == '\r') c = ' ';
    }
    return s;
}

}  // namespace

int run(const std::vector<std::string>& args) {
    setup_logging();
    CLI::App app{"Active point net segmentation on synthetic phantoms", args.empty() ? "apn" : args[0]};
    app.require_subcommand(1);
    Options opt;
    std::uint64_t seed = 0;
    using Handler = int (*)(const io::Json&, const Options&);
    const std::vector<std::pair<std::string, std::pair<std::string, Handler>>> commands = {
        {"phantom-gen", {"generate the phantom set (volumes, meshes, manifest)", cmd_phantom_gen}},
        {"ssm-fit", {"fit a statistical shape model", cmd_ssm_fit}},
        {"train", {"train the global and local agents", cmd_train}},
        {"segment", {"segment one volume from an initial mesh", cmd_segment}},
        {"eval", {"Dice and Hausdorff of a predicted mesh", cmd_eval}},
        {"bench", {"train and run the random-initialization benchmark", cmd_bench}},
    };
    std::vector<std::pair<CLI::App*, Handler>> subs;
    for (const auto& [name, info] : commands) {
        auto* sub = app.add_subcommand(name, info.first);
        sub->add_option("--config", opt.config, "JSON config file")->required();
        sub->add_option("--out", opt.out, "output directory")->required();
        sub->add_option("--seed", seed, "overrides the config seed");
        sub->add_option("--threads", opt.threads, "worker threads (0 = auto)")->check(CLI::NonNegativeNumber);
        subs.emplace_back(sub, info.second);
    }

    std::vector<std::string> rev(args.rbegin(), args.rend());
    if (!rev.empty()) rev.pop_back();
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << one_line(e.what()) << "\n";
        return 2;
    }

    for (const auto& [sub, handler] : subs) {
        if (!sub->parsed()) continue;
        if (sub->count("--seed") > 0) opt.seed = seed;
        try {
            const auto raw = load_config_json(opt.config);
            return handler(raw, opt);
        } catch (const ConfigError& e) {
            std::cerr << "error: " << one_line(e.what()) << "\n";
            return 2;
        } catch (const std::exception& e) {
            std::cerr << "error: " << one_line(e.what()) << "\n";
            return 1;
        }
    }
    return 2;
}

int run(int argc, const char* const* argv) {
    std::vector<std::string> args(argv, argv + argc);
    return run(args);
}

}  // namespace apn::cli
