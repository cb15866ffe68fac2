#pragma once

#include "apn/agent.hpp"
#include "apn/aperture.hpp"
#include "apn/io.hpp"
#include "apn/mesh.hpp"
#include "apn/oracle.hpp"
#include "apn/ssm.hpp"
#include "apn/volume.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace apn {

io::Json aperture_to_json(const ApertureConfig& cfg);
ApertureConfig aperture_from_json(const io::Json& j);

struct AugmentParams {
    double asm_range = 2.0;      // uniform coefficients in [-r, r] sigma units, all modes
    double translation = 10.0;   // per-axis uniform, mm
    double rotation = 0.1;       // per-component axis-angle uniform, radians
    double log_scale = 0.05;     // per-axis uniform
    double jitter = 0.5;         // Gaussian per-vertex stddev, mm
    int samples = 200;           // augmentations per ground truth

    void validate() const;
    io::Json to_json() const;
    static AugmentParams from_json(const io::Json& j);
    AugmentParams scaled(double factor) const;
};

struct AugmentResult {
    Mesh estimate;
    ActionField labels;      // A* against the original truth
    GlobalTransform global;  // transform taking the estimate onto the truth (about the estimate centroid)
};

// estimate = jitter(affine(asm_deform(truth))). Local labels come from the
// oracle; the global label is fitted from vertex correspondence with the
// truth. Models fitted at a coarser level than `truth` have their
// displacements up-sampled through the subdivision pyramid.
AugmentResult augment(const Mesh& truth, const SurfaceQuery& truth_surface, const ShapeModel& model, const AugmentParams& p,
                      std::uint64_t seed, const ApertureConfig& cfg, const OracleOptions& oracle = {});
AugmentResult augment(const Mesh& truth, const ShapeModel& model, const AugmentParams& p, std::uint64_t seed,
                      const ApertureConfig& cfg, const OracleOptions& oracle = {});

struct InitProtocol {
    double max_translation = 80.0;  // per axis, mm
    int mode_count = 5;
    double coefficient_range = 1.0;  // sigma units
    int trials = 10;

    void validate() const;
    io::Json to_json() const;
    static InitProtocol from_json(const io::Json& j);
};

struct InitDraw {
    Mesh mesh;
    std::vector<double> coefficients;
    Vec3 translation = Vec3::Zero();
};

// Mean shape + uniform coefficients on the first mode_count modes + uniform
// translation within +-max_translation per axis.
InitDraw random_init(const ShapeModel& model, const InitProtocol& proto, std::uint64_t seed);

struct StageIterations {
    int translation = 5;
    int affine = 5;
    int nonrigid = 10;
};

struct SegmentConfig {
    int levels = 2;  // 1 = single resolution, >= 2 = multi-resolution pyramid
    StageIterations iterations;
    double epsilon_stop = 0.05;  // mm, mean action magnitude
    ApertureConfig global_aperture = ApertureConfig::degenerate(150.0, 30);
    std::vector<ApertureConfig> local_apertures{ApertureConfig::degenerate(20.0, 8)};  // per level, last entry reused
    std::uint64_t batch_seed = 0;  // vertex permutation for sub-sampled batches

    void validate() const;
    const ApertureConfig& local_aperture(int level) const;
    io::Json to_json() const;
    static SegmentConfig from_json(const io::Json& j);
};

// Partition of a level's vertices into batches of exactly `base` rows: a
// seeded permutation cut into chunks, the last chunk topped up by wrapping
// around to the start of the permutation.
std::vector<std::vector<int>> vertex_batches(std::size_t vertex_count, std::size_t base, std::uint64_t seed);

struct Agents {
    std::optional<AgentNetwork> global;
    AgentNetwork local;
    std::size_t base_vertices = 0;  // level-0 vertex count the agents were trained on
};

struct TraceEntry {
    std::string stage;  // translation | affine | nonrigid
    int level = 0;
    int iteration = 0;
    double mean_action = 0.0;  // mm
    double max_action = 0.0;   // mm
    double seconds = 0.0;
};

struct SegmentResult {
    Mesh mesh;
    std::vector<TraceEntry> trace;
    std::vector<Mesh> stage_meshes;  // estimate after each executed stage / level
    double seconds = 0.0;
};

// Marginal inference: translation, then full T/R/S with the global agent,
// then per pyramid level the local agent, subdividing between levels.
SegmentResult segment(const Volume& vol, const Mesh& init, const Agents& agents, const SegmentConfig& cfg, int threads = 1);

// Local actions for every vertex of `mesh`, evaluated in base-size batches
// when the mesh is finer than the base resolution.
ActionField predict_local(const AgentNetwork& net, const Volume& vol, const Mesh& mesh, std::span<const Vec3> normals,
                          const ApertureConfig& cfg, std::size_t base, std::uint64_t batch_seed, int threads = 1);

struct Metrics {
    double dice = 0.0;
    double hausdorff_mm = 0.0;
    double seconds = 0.0;
};

Metrics evaluate(const Mesh& pred, const Mesh& truth, const Grid& grid, double seconds = 0.0);

// Training of one agent. The global role uses the global aperture and T/R/S
// labels at level 0; the local role uses per-level local apertures and A*
// labels, cycling augmentation indices over the pyramid levels.
enum class AgentRole { global, local };

struct TrainingPhantom {
    const Volume* volume = nullptr;
    std::vector<Mesh> truth;  // per pyramid level
    std::vector<SurfaceQuery> surfaces;

    TrainingPhantom(const Volume& vol, const PhantomSpec& spec, int levels);
};

struct AgentTrainingSpec {
    AgentRole role = AgentRole::local;
    NetworkConfig network;
    TrainConfig train;
    AugmentParams augment;
    // Every other augmentation (per pyramid level for the local role) uses
    // ranges scaled by this factor so that the near-converged regime is
    // sampled as densely as the far one.
    double fine_scale = 1.0;
    OracleOptions oracle;
    int validation_samples = 16;
    int log_every = 50;
};

struct LossLogEntry {
    int step = 0;
    double loss = 0.0;
    std::optional<double> validation_reward;
};

struct TrainResult {
    AgentNetwork network;
    std::vector<LossLogEntry> log;
    double initial_validation_reward = 0.0;
    double final_validation_reward = 0.0;
};

using ProgressFn = std::function<void(const LossLogEntry&)>;

// Samples are generated deterministically from (phantom, augmentation index)
// so any subset can be regenerated without storing the pool.
TrainingSample make_training_sample(const AgentTrainingSpec& spec, const SegmentConfig& seg, const std::vector<TrainingPhantom>& phantoms,
                                    const ShapeModel& model, std::size_t phantom, std::size_t aug_index, std::uint64_t seed);

TrainResult train_agent(const AgentTrainingSpec& spec, const SegmentConfig& seg, const std::vector<TrainingPhantom>& phantoms,
                        const ShapeModel& model, int threads = 1, const ProgressFn& progress = {});

// Mean reward of the network over a fixed validation pool (the last phantom,
// augmentation indices disjoint from training).
double validation_reward(const AgentNetwork& net, const AgentTrainingSpec& spec, const SegmentConfig& seg,
                         const std::vector<TrainingPhantom>& phantoms, const ShapeModel& model, int threads = 1);

}  // namespace apn
