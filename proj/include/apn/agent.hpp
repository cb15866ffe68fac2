#pragma once

#include "apn/aperture.hpp"
#include "apn/common.hpp"
#include "apn/io.hpp"
#include "apn/oracle.hpp"

#include <filesystem>
#include <span>
#include <vector>

namespace apn {

enum class Pooling { max, mean };
enum class Heads { both, local, global };

std::string to_string(Pooling p);
std::string to_string(Heads h);

struct NetworkConfig {
    int input_dim = 26;
    std::vector<int> encoder{64, 128, 256};
    std::vector<int> decoder{256, 128, 64};
    std::vector<int> global_hidden{64};
    ActionMode mode = ActionMode::normal;
    double beta = 20.0;  // local outputs are beta * tanh(z), mm
    Pooling pooling = Pooling::max;
    Heads heads = Heads::both;

    void validate() const;
    bool has_local() const { return heads != Heads::global; }
    bool has_global() const { return heads != Heads::local; }
    io::Json to_json() const;
    static NetworkConfig from_json(const io::Json& j);
};

// Fully connected layer y = x W + b applied row-wise (shared across vertices).
struct Dense {
    RowMatrix w;  // in x out
    Eigen::RowVectorXd b;

    Eigen::Index in() const { return w.rows(); }
    Eigen::Index out() const { return w.cols(); }
    std::size_t parameter_count() const { return static_cast<std::size_t>(w.size() + b.size()); }
    static Dense zeros(Eigen::Index in, Eigen::Index out);
};

// Differentiable building blocks. Each backward takes the forward inputs
// and the upstream gradient and returns the gradient w.r.t. the inputs.
namespace nn {

RowMatrix dense_forward(const RowMatrix& x, const Dense& layer);
// Accumulates parameter gradients into grad and returns dL/dx.
RowMatrix dense_backward(const RowMatrix& x, const Dense& layer, const RowMatrix& dy, Dense& grad);

RowMatrix relu_forward(const RowMatrix& x);
RowMatrix relu_backward(const RowMatrix& x, const RowMatrix& dy);

RowMatrix tanh_clamp_forward(const RowMatrix& z, double beta);
RowMatrix tanh_clamp_backward(const RowMatrix& z, const RowMatrix& dy, double beta);

struct Pooled {
    Eigen::RowVectorXd values;
    std::vector<int> argmax;  // per column, lowest row index on ties (max pooling only)
};
Pooled pool_forward(const RowMatrix& x, Pooling mode);
RowMatrix pool_backward(const Pooled& pooled, Eigen::Index rows, const Eigen::RowVectorXd& dy, Pooling mode);

RowMatrix concat_forward(std::span<const RowMatrix* const> parts);
std::vector<RowMatrix> concat_backward(std::span<const RowMatrix* const> parts, const RowMatrix& dy);

// Dense layer over [parts..., broadcast(row)] without materializing the
// concatenation; equal to dense_forward(concat(parts, repeat(row)), layer).
RowMatrix concat_dense_forward(std::span<const RowMatrix* const> parts, const Eigen::RowVectorXd& row, const Dense& layer);
// Returns gradients for each part followed by the broadcast row (as 1 x d).
std::vector<RowMatrix> concat_dense_backward(std::span<const RowMatrix* const> parts, const Eigen::RowVectorXd& row,
                                             const Dense& layer, const RowMatrix& dy, Dense& grad);

}  // namespace nn

// Global head raw outputs map to a transform as
//   translation = radius * raw[0:3], rotation = c * tanh(raw[3:6] / c) with
//   c = pi / sqrt(3) (so the angle stays below pi), log_scale = raw[6:9].
GlobalTransform global_from_raw(const Eigen::RowVectorXd& raw, double radius);

struct AgentOutput {
    ActionField local;                 // N x width, mm (empty without a local head)
    GlobalTransform global;            // identity without a global head
    Eigen::RowVectorXd global_raw;     // 9 raw outputs
};

// Per-vertex shared MLP encoder, pooled global feature, decoder over the
// concatenation of every encoder level plus the pooled feature, and two
// heads: per-vertex action and a pooled translation/rotation/scale head.
class AgentNetwork {
public:
    AgentNetwork() = default;
    explicit AgentNetwork(const NetworkConfig& config);

    // He-normal hidden layers, small output layers, zero biases.
    void initialize(std::uint64_t seed);

    const NetworkConfig& config() const { return config_; }
    std::vector<Dense>& layers() { return layers_; }
    const std::vector<Dense>& layers() const { return layers_; }

    std::size_t parameter_count() const;
    Eigen::VectorXd parameters() const;
    void set_parameters(const Eigen::VectorXd& flat);

    AgentOutput forward(const State& state) const;

    struct Cache;
    AgentOutput forward(const State& state, Cache& cache) const;
    // dlocal: dL/d(local output, mm); dglobal_raw: dL/d(raw global outputs).
    std::vector<Dense> backward(const Cache& cache, const RowMatrix& dlocal, const Eigen::RowVectorXd& dglobal_raw) const;

    std::vector<Dense> zero_like() const;

    // Layer index layout.
    std::size_t encoder_index(std::size_t k) const { return k; }
    std::size_t decoder_index(std::size_t k) const { return config_.encoder.size() + k; }
    std::size_t local_head_index() const { return config_.encoder.size() + config_.decoder.size(); }
    std::size_t global_index(std::size_t k) const { return local_head_index() + (config_.has_local() ? 1 : 0) + k; }

private:
    NetworkConfig config_;
    std::vector<Dense> layers_;
};

struct AgentNetwork::Cache {
    RowMatrix input;
    std::vector<RowMatrix> enc_pre;
    std::vector<RowMatrix> enc_act;
    nn::Pooled pooled;
    std::vector<RowMatrix> dec_pre;
    std::vector<RowMatrix> dec_act;
    RowMatrix local_pre;
    nn::Pooled pooled2;
    std::vector<RowMatrix> glob_in;   // inputs of each global dense layer (1 x d)
    std::vector<RowMatrix> glob_pre;  // pre-activations
    double radius = 1.0;
};

struct LossWeights {
    double action = 1.0;
    double lambda_h = 0.01;
    Vec3 trs{1.0, 1.0, 1.0};
};

struct TrainingSample {
    State state;
    RowMatrix target_local;              // N x width (local head)
    GlobalTransform target_global;       // global head
    std::vector<Vec3> estimate_vertices; // v-hat, mm
    std::vector<Vec3> normals;
    std::vector<Vec3> truth_vertices;
};

struct LossResult {
    double loss = 0.0;
    double action_term = 0.0;
    double hausdorff_term = 0.0;
    double global_term = 0.0;
    std::vector<Dense> grads;
};

// loss = w_a * ||A* - A~||^2 / N + lambda_h * H(v-hat + A~, v)
//      + w_t ||t/radius - t*/radius||^2 + w_r ||r - r*||^2 + w_s ||s - s*||^2
// The Hausdorff term contributes its subgradient through the maximal pair.
LossResult loss_and_grad(const AgentNetwork& net, const TrainingSample& sample, const LossWeights& weights);
double loss_only(const AgentNetwork& net, const TrainingSample& sample, const LossWeights& weights);

struct TrainConfig {
    double learning_rate = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    int batch_size = 8;
    int steps = 2000;
    std::uint64_t seed = 0;
    double clip_norm = 10.0;
    LossWeights weights;

    void validate() const;
    io::Json to_json() const;
    static TrainConfig from_json(const io::Json& j);
};

struct AdamState {
    std::vector<Dense> m;
    std::vector<Dense> v;
    long step = 0;

    static AdamState for_network(const AgentNetwork& net);
};

// One clipped Adam update on the mean loss over the batch. Per-sample
// gradients are summed in batch order, so the result is independent of the
// thread count.
double train_step(AgentNetwork& net, std::span<const TrainingSample* const> batch, AdamState& adam, const TrainConfig& cfg,
                  int threads = 1);

// `<stem>.ckpt.json` architecture + `<stem>.ckpt.raw` float64 parameters.
inline constexpr int kCheckpointFormat = 1;
void write_checkpoint(const AgentNetwork& net, const std::filesystem::path& stem);
AgentNetwork read_checkpoint(const std::filesystem::path& header_or_stem);

}  // namespace apn
