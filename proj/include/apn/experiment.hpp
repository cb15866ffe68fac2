#pragma once

#include "apn/io.hpp"
#include "apn/pipeline.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace apn {

// Bad or missing configuration. The CLI maps it to exit code 2.
class ConfigError : public Error {
public:
    using Error::Error;
};

io::Json phantom_spec_to_json(const PhantomSpec& spec);
PhantomSpec phantom_spec_from_json(const io::Json& j);

// Randomized family of phantoms; the first `train` specs are the training
// set, the remaining `test` specs are held out.
struct PhantomSetConfig {
    std::string family = "lobed_blob";  // ellipsoid | lobed_blob | mixed
    int train = 8;
    int test = 2;
    std::array<int, 3> dims{128, 128, 128};
    Vec3 spacing = Vec3::Constant(2.5);
    double semi_axis_min = 45.0;
    double semi_axis_max = 70.0;
    double center_jitter = 10.0;
    double interior_min = 80.0;
    double interior_max = 120.0;
    double exterior_min = 0.0;
    double exterior_max = 20.0;
    double softness = 2.0;
    double noise = 2.0;
    int lobes = 3;
    double lobe_amplitude_min = 0.1;
    double lobe_amplitude_max = 0.2;
    double lobe_width = 0.3;
    int mesh_subdivisions = 3;

    void validate() const;
    io::Json to_json() const;
    static PhantomSetConfig from_json(const io::Json& j);
    std::vector<PhantomSpec> specs(std::uint64_t seed) const;
};

struct AgentSection {
    bool enabled = true;
    NetworkConfig network;
    TrainConfig train;
    AugmentParams augment;
    double fine_scale = 1.0;
    int validation_samples = 16;
    int log_every = 50;

    io::Json to_json() const;
    static AgentSection from_json(const io::Json& j, const AgentSection& defaults);
};

// Every random stream is derived from `seed`.
struct ExperimentConfig {
    std::uint64_t seed = 0;
    PhantomSetConfig phantoms;
    OracleOptions oracle;
    AgentSection global_agent;
    AgentSection local_agent;
    SegmentConfig segment;
    InitProtocol init;
    std::optional<std::filesystem::path> checkpoints;  // pretrained agents directory

    ExperimentConfig();
    void validate() const;
    io::Json to_json() const;
    // Relative paths resolve against base_dir.
    static ExperimentConfig from_json(const io::Json& j, const std::filesystem::path& base_dir = {});

    // Training specs with input widths, modes, ranges and seeds filled in.
    AgentTrainingSpec global_spec() const;
    AgentTrainingSpec local_spec() const;
};

// Reads and validates a JSON config; any failure is a ConfigError.
io::Json load_config_json(const std::filesystem::path& path);
ExperimentConfig load_experiment(const std::filesystem::path& path);

struct PhantomSet {
    std::vector<PhantomSpec> specs;
    std::vector<Phantom> phantoms;
    int train = 0;
};

PhantomSet generate_phantom_set(const PhantomSetConfig& cfg, std::uint64_t seed, int threads = 1);

// Checkpoint directory: agents.json + global/local checkpoint pairs.
void save_agents(const Agents& agents, const SegmentConfig& seg, const std::filesystem::path& dir);
Agents load_agents(const std::filesystem::path& dir, SegmentConfig* seg = nullptr);

struct TrainedAgents {
    Agents agents;
    std::optional<TrainResult> global;
    TrainResult local;
};

TrainedAgents train_agents(const ExperimentConfig& cfg, const PhantomSet& set, const ShapeModel& model, int threads = 1);
ShapeModel fit_training_ssm(const PhantomSet& set);

struct TrialResult {
    int trial = 0;
    std::string organ;
    Metrics initial;
    Metrics final;
    std::vector<double> stage_dice;  // after each stage, for the monotone-trend report
    double diameter = 0.0;
};

struct BenchResult {
    std::vector<TrialResult> trials;
    io::Json summary;
    io::Json timing;
};

// Full protocol: phantoms, shape model, agents (trained or loaded), then
// `init.trials` random initializations per held-out phantom. Writes
// results.csv, summary.json (deterministic) and timing.csv / timing.json
// (wall clock) into out_dir along with the trained artifacts. Everything
// except the timing files is byte-identical across runs with equal seeds.
BenchResult run_bench(const ExperimentConfig& cfg, const std::filesystem::path& out_dir, int threads = 1);

std::string results_csv(const std::vector<TrialResult>& trials);
void write_loss_log(const std::vector<LossLogEntry>& log, const std::filesystem::path& path);
std::string trace_csv(const std::vector<TraceEntry>& trace, bool with_seconds = true);

}  // namespace apn
