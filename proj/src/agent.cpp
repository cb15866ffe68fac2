#include "apn/agent.hpp"

#include <cmath>
#include <numbers>

namespace apn {

namespace {

constexpr double kRotationLimit = std::numbers::pi / 1.7320508075688772;  // pi / sqrt(3)

bool all_finite(const std::vector<Dense>& layers) {
    for (const auto& l : layers) {
        if (!l.w.allFinite() || !l.b.allFinite()) return false;
    }
    return true;
}

}  // namespace

std::string to_string(Pooling p) { return p == Pooling::max ? "max" : "mean"; }

std::string to_string(Heads h) {
    switch (h) {
        case Heads::both: return "both";
        case Heads::local: return "local";
        case Heads::global: return "global";
    }
    return "both";
}

void NetworkConfig::validate() const {
    if (input_dim < 1) throw Error("network: input_dim must be >= 1");
    if (encoder.empty() || decoder.empty()) throw Error("network: encoder and decoder need at least one layer");
    for (int w : encoder) {
        if (w < 1) throw Error("network: layer widths must be >= 1");
    }
    for (int w : decoder) {
        if (w < 1) throw Error("network: layer widths must be >= 1");
    }
    for (int w : global_hidden) {
        if (w < 1) throw Error("network: layer widths must be >= 1");
    }
    if (!(beta > 0.0)) throw Error("network: beta must be > 0");
}

io::Json NetworkConfig::to_json() const {
    return {
        {"input_dim", input_dim},
        {"encoder", encoder},
        {"decoder", decoder},
        {"global_hidden", global_hidden},
        {"mode", apn::to_string(mode)},
        {"beta", beta},
        {"pooling", apn::to_string(pooling)},
        {"heads", apn::to_string(heads)},
    };
}

NetworkConfig NetworkConfig::from_json(const io::Json& j) {
    NetworkConfig c;
    c.input_dim = j.value("input_dim", c.input_dim);
    c.encoder = j.value("encoder", c.encoder);
    c.decoder = j.value("decoder", c.decoder);
    c.global_hidden = j.value("global_hidden", c.global_hidden);
    c.mode = parse_action_mode(j.value("mode", std::string("normal")));
    c.beta = j.value("beta", c.beta);
    const auto pooling = j.value("pooling", std::string("max"));
    if (pooling == "max") {
        c.pooling = Pooling::max;
    } else if (pooling == "mean") {
        c.pooling = Pooling::mean;
    } else {
        throw Error("network: unknown pooling " + pooling);
    }
    const auto heads = j.value("heads", std::string("both"));
    if (heads == "both") {
        c.heads = Heads::both;
    } else if (heads == "local") {
        c.heads = Heads::local;
    } else if (heads == "global") {
        c.heads = Heads::global;
    } else {
        throw Error("network: unknown heads " + heads);
    }
    c.validate();
    return c;
}

Dense Dense::zeros(Eigen::Index in, Eigen::Index out) {
    return {RowMatrix::Zero(in, out), Eigen::RowVectorXd::Zero(out)};
}

namespace nn {

RowMatrix dense_forward(const RowMatrix& x, const Dense& layer) {
    if (x.cols() != layer.in()) throw Error("dense: input width mismatch");
    RowMatrix y = x * layer.w;
    y.rowwise() += layer.b;
    return y;
}

RowMatrix dense_backward(const RowMatrix& x, const Dense& layer, const RowMatrix& dy, Dense& grad) {
    grad.w.noalias() += x.transpose() * dy;
    grad.b += dy.colwise().sum();
    return dy * layer.w.transpose();
}

RowMatrix relu_forward(const RowMatrix& x) { return x.cwiseMax(0.0); }

RowMatrix relu_backward(const RowMatrix& x, const RowMatrix& dy) {
    return (x.array() > 0.0).select(dy, RowMatrix::Zero(dy.rows(), dy.cols()));
}

RowMatrix tanh_clamp_forward(const RowMatrix& z, double beta) { return beta * z.array().tanh(); }

RowMatrix tanh_clamp_backward(const RowMatrix& z, const RowMatrix& dy, double beta) {
    const auto t = z.array().tanh();
    return (dy.array() * beta * (1.0 - t * t)).matrix();
}

Pooled pool_forward(const RowMatrix& x, Pooling mode) {
    if (x.rows() == 0) throw Error("pool: empty input");
    Pooled p;
    if (mode == Pooling::mean) {
        p.values = x.colwise().mean();
        return p;
    }
    p.values = x.row(0);
    p.argmax.assign(static_cast<std::size_t>(x.cols()), 0);
    for (Eigen::Index r = 1; r < x.rows(); ++r) {
        for (Eigen::Index c = 0; c < x.cols(); ++c) {
            if (x(r, c) > p.values[c]) {
                p.values[c] = x(r, c);
                p.argmax[static_cast<std::size_t>(c)] = static_cast<int>(r);
            }
        }
    }
    return p;
}

RowMatrix pool_backward(const Pooled& pooled, Eigen::Index rows, const Eigen::RowVectorXd& dy, Pooling mode) {
    if (mode == Pooling::mean) {
        RowMatrix dx(rows, dy.size());
        dx.rowwise() = dy / static_cast<double>(rows);
        return dx;
    }
    RowMatrix dx = RowMatrix::Zero(rows, dy.size());
    for (Eigen::Index c = 0; c < dy.size(); ++c) dx(pooled.argmax[static_cast<std::size_t>(c)], c) += dy[c];
    return dx;
}

RowMatrix concat_forward(std::span<const RowMatrix* const> parts) {
    if (parts.empty()) throw Error("concat: no inputs");
    Eigen::Index cols = 0;
    for (const auto* p : parts) {
        if (p->rows() != parts.front()->rows()) throw Error("concat: row count mismatch");
        cols += p->cols();
    }
    RowMatrix out(parts.front()->rows(), cols);
    Eigen::Index at = 0;
    for (const auto* p : parts) {
        out.middleCols(at, p->cols()) = *p;
        at += p->cols();
    }
    return out;
}

std::vector<RowMatrix> concat_backward(std::span<const RowMatrix* const> parts, const RowMatrix& dy) {
    std::vector<RowMatrix> out;
    Eigen::Index at = 0;
    for (const auto* p : parts) {
        out.push_back(dy.middleCols(at, p->cols()));
        at += p->cols();
    }
    return out;
}

RowMatrix concat_dense_forward(std::span<const RowMatrix* const> parts, const Eigen::RowVectorXd& row, const Dense& layer) {
    Eigen::Index at = 0;
    const Eigen::Index n = parts.front()->rows();
    RowMatrix y = RowMatrix::Zero(n, layer.out());
    for (const auto* p : parts) {
        if (p->rows() != n) throw Error("concat_dense: row count mismatch");
        y.noalias() += *p * layer.w.middleRows(at, p->cols());
        at += p->cols();
    }
    if (at + row.size() != layer.in()) throw Error("concat_dense: input width mismatch");
    const Eigen::RowVectorXd shared = row * layer.w.middleRows(at, row.size()) + layer.b;
    y.rowwise() += shared;
    return y;
}

std::vector<RowMatrix> concat_dense_backward(std::span<const RowMatrix* const> parts, const Eigen::RowVectorXd& row,
                                             const Dense& layer, const RowMatrix& dy, Dense& grad) {
    std::vector<RowMatrix> out;
    Eigen::Index at = 0;
    for (const auto* p : parts) {
        grad.w.middleRows(at, p->cols()).noalias() += p->transpose() * dy;
        out.push_back(dy * layer.w.middleRows(at, p->cols()).transpose());
        at += p->cols();
    }
    const Eigen::RowVectorXd dsum = dy.colwise().sum();
    grad.w.middleRows(at, row.size()).noalias() += row.transpose() * dsum;
    grad.b += dsum;
    out.push_back(dsum * layer.w.middleRows(at, row.size()).transpose());
    return out;
}

}  // namespace nn

GlobalTransform global_from_raw(const Eigen::RowVectorXd& raw, double radius) {
    GlobalTransform t;
    for (int k = 0; k < 3; ++k) {
        t.translation[k] = radius * raw[k];
        t.rotation[k] = kRotationLimit * std::tanh(raw[3 + k] / kRotationLimit);
        t.log_scale[k] = raw[6 + k];
    }
    return t;
}

AgentNetwork::AgentNetwork(const NetworkConfig& config) : config_(config) {
    config_.validate();
    Eigen::Index in = config_.input_dim;
    Eigen::Index concat_width = 0;
    for (int w : config_.encoder) {
        layers_.push_back(Dense::zeros(in, w));
        concat_width += w;
        in = w;
    }
    in = concat_width + config_.encoder.back();
    for (int w : config_.decoder) {
        layers_.push_back(Dense::zeros(in, w));
        in = w;
    }
    const Eigen::Index dec_out = config_.decoder.back();
    if (config_.has_local()) layers_.push_back(Dense::zeros(dec_out, action_width(config_.mode)));
    if (config_.has_global()) {
        in = dec_out;
        for (int w : config_.global_hidden) {
            layers_.push_back(Dense::zeros(in, w));
            in = w;
        }
        layers_.push_back(Dense::zeros(in, 9));
    }
}

void AgentNetwork::initialize(std::uint64_t seed) {
    Rng rng(seed);
    std::vector<bool> is_output(layers_.size(), false);
    if (config_.has_local()) is_output[local_head_index()] = true;
    if (config_.has_global()) is_output.back() = true;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        auto& layer = layers_[l];
        const double fan_in = static_cast<double>(layer.in());
        const double stddev = is_output[l] ? 0.1 / std::sqrt(fan_in) : std::sqrt(2.0 / fan_in);
        for (Eigen::Index r = 0; r < layer.w.rows(); ++r) {
            for (Eigen::Index c = 0; c < layer.w.cols(); ++c) layer.w(r, c) = stddev * rng.normal();
        }
        layer.b.setZero();
    }
}

std::size_t AgentNetwork::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.parameter_count();
    return n;
}

Eigen::VectorXd AgentNetwork::parameters() const {
    Eigen::VectorXd flat(static_cast<Eigen::Index>(parameter_count()));
    Eigen::Index at = 0;
    for (const auto& l : layers_) {
        for (Eigen::Index r = 0; r < l.w.rows(); ++r) {
            for (Eigen::Index c = 0; c < l.w.cols(); ++c) flat[at++] = l.w(r, c);
        }
        for (Eigen::Index c = 0; c < l.b.size(); ++c) flat[at++] = l.b[c];
    }
    return flat;
}

void AgentNetwork::set_parameters(const Eigen::VectorXd& flat) {
    if (flat.size() != static_cast<Eigen::Index>(parameter_count())) throw Error("set_parameters: size mismatch");
    Eigen::Index at = 0;
    for (auto& l : layers_) {
        for (Eigen::Index r = 0; r < l.w.rows(); ++r) {
            for (Eigen::Index c = 0; c < l.w.cols(); ++c) l.w(r, c) = flat[at++];
        }
        for (Eigen::Index c = 0; c < l.b.size(); ++c) l.b[c] = flat[at++];
    }
}

std::vector<Dense> AgentNetwork::zero_like() const {
    std::vector<Dense> out;
    out.reserve(layers_.size());
    for (const auto& l : layers_) out.push_back(Dense::zeros(l.in(), l.out()));
    return out;
}

AgentOutput AgentNetwork::forward(const State& state) const {
    Cache cache;
    return forward(state, cache);
}

AgentOutput AgentNetwork::forward(const State& state, Cache& cache) const {
    if (state.rows.cols() != config_.input_dim) {
        throw Error("agent: state width " + std::to_string(state.rows.cols()) + " does not match network input " +
                    std::to_string(config_.input_dim));
    }
    if (state.rows.rows() == 0) throw Error("agent: empty state");
    const auto n_enc = config_.encoder.size();
    const auto n_dec = config_.decoder.size();
    cache = Cache{};
    cache.radius = state.radius;
    cache.input = state.rows;
    const RowMatrix* x = &cache.input;
    for (std::size_t k = 0; k < n_enc; ++k) {
        cache.enc_pre.push_back(nn::dense_forward(*x, layers_[encoder_index(k)]));
        cache.enc_act.push_back(nn::relu_forward(cache.enc_pre.back()));
        x = &cache.enc_act.back();
    }
    cache.pooled = nn::pool_forward(cache.enc_act.back(), config_.pooling);

    std::vector<const RowMatrix*> parts;
    for (const auto& a : cache.enc_act) parts.push_back(&a);
    cache.dec_pre.push_back(nn::concat_dense_forward(parts, cache.pooled.values, layers_[decoder_index(0)]));
    cache.dec_act.push_back(nn::relu_forward(cache.dec_pre.back()));
    for (std::size_t k = 1; k < n_dec; ++k) {
        cache.dec_pre.push_back(nn::dense_forward(cache.dec_act.back(), layers_[decoder_index(k)]));
        cache.dec_act.push_back(nn::relu_forward(cache.dec_pre.back()));
    }

    AgentOutput out;
    if (config_.has_local()) {
        cache.local_pre = nn::dense_forward(cache.dec_act.back(), layers_[local_head_index()]);
        out.local.mode = config_.mode;
        out.local.values = nn::tanh_clamp_forward(cache.local_pre, config_.beta);
    }
    out.global_raw = Eigen::RowVectorXd::Zero(9);
    if (config_.has_global()) {
        cache.pooled2 = nn::pool_forward(cache.dec_act.back(), config_.pooling);
        RowMatrix g = cache.pooled2.values;
        const auto n_hidden = config_.global_hidden.size();
        for (std::size_t k = 0; k <= n_hidden; ++k) {
            cache.glob_in.push_back(g);
            cache.glob_pre.push_back(nn::dense_forward(g, layers_[global_index(k)]));
            g = k < n_hidden ? nn::relu_forward(cache.glob_pre.back()) : cache.glob_pre.back();
        }
        out.global_raw = g.row(0);
    }
    out.global = global_from_raw(out.global_raw, state.radius);
    return out;
}

std::vector<Dense> AgentNetwork::backward(const Cache& cache, const RowMatrix& dlocal, const Eigen::RowVectorXd& dglobal_raw) const {
    auto grads = zero_like();
    const auto n_enc = config_.encoder.size();
    const auto n_dec = config_.decoder.size();
    const Eigen::Index n = cache.input.rows();
    RowMatrix d_dec = RowMatrix::Zero(n, config_.decoder.back());

    if (config_.has_local()) {
        const RowMatrix dz = nn::tanh_clamp_backward(cache.local_pre, dlocal, config_.beta);
        d_dec += nn::dense_backward(cache.dec_act.back(), layers_[local_head_index()], dz, grads[local_head_index()]);
    }
    if (config_.has_global()) {
        RowMatrix d = dglobal_raw;
        const auto n_hidden = config_.global_hidden.size();
        for (std::size_t k = n_hidden + 1; k-- > 0;) {
            if (k < n_hidden) d = nn::relu_backward(cache.glob_pre[k], d);
            d = nn::dense_backward(cache.glob_in[k], layers_[global_index(k)], d, grads[global_index(k)]);
        }
        d_dec += nn::pool_backward(cache.pooled2, n, d.row(0), config_.pooling);
    }

    for (std::size_t k = n_dec; k-- > 1;) {
        const RowMatrix dpre = nn::relu_backward(cache.dec_pre[k], d_dec);
        d_dec = nn::dense_backward(cache.dec_act[k - 1], layers_[decoder_index(k)], dpre, grads[decoder_index(k)]);
    }
    const RowMatrix dpre0 = nn::relu_backward(cache.dec_pre[0], d_dec);
    std::vector<const RowMatrix*> parts;
    for (const auto& a : cache.enc_act) parts.push_back(&a);
    auto d_parts = nn::concat_dense_backward(parts, cache.pooled.values, layers_[decoder_index(0)], dpre0, grads[decoder_index(0)]);
    d_parts[n_enc - 1] += nn::pool_backward(cache.pooled, n, d_parts.back().row(0), config_.pooling);

    RowMatrix d_act = d_parts[n_enc - 1];
    for (std::size_t k = n_enc; k-- > 0;) {
        const RowMatrix dpre = nn::relu_backward(cache.enc_pre[k], d_act);
        const RowMatrix& input = k == 0 ? cache.input : cache.enc_act[k - 1];
        RowMatrix dx = nn::dense_backward(input, layers_[encoder_index(k)], dpre, grads[encoder_index(k)]);
        if (k > 0) d_act = dx + d_parts[k - 1];
    }
    return grads;
}

namespace {

struct LossEval {
    double loss = 0.0;
    double action_term = 0.0;
    double hausdorff_term = 0.0;
    double global_term = 0.0;
    RowMatrix dlocal;
    Eigen::RowVectorXd dglobal;
};

LossEval evaluate_loss(const AgentNetwork& net, const TrainingSample& sample, const LossWeights& w, const AgentOutput& out) {
    const auto& cfg = net.config();
    LossEval e;
    const Eigen::Index n = sample.state.rows.rows();
    e.dlocal = RowMatrix::Zero(n, action_width(cfg.mode));
    e.dglobal = Eigen::RowVectorXd::Zero(9);
    if (cfg.has_local()) {
        if (sample.target_local.rows() != n || sample.target_local.cols() != out.local.values.cols()) {
            throw Error("loss: local target shape mismatch");
        }
        const RowMatrix diff = out.local.values - sample.target_local;
        e.action_term = w.action * diff.squaredNorm() / static_cast<double>(n);
        e.dlocal = (2.0 * w.action / static_cast<double>(n)) * diff;
        if (w.lambda_h > 0.0) {
            if (sample.estimate_vertices.size() != static_cast<std::size_t>(n) || sample.truth_vertices.empty()) {
                throw Error("loss: Hausdorff term needs estimate and truth vertices");
            }
            const auto deformed = apply_action(sample.estimate_vertices, sample.normals, out.local);
            const auto pair = hausdorff_pair(deformed, sample.truth_vertices);
            e.hausdorff_term = w.lambda_h * pair.distance;
            if (pair.distance > 0.0) {
                const Vec3 g = w.lambda_h * (deformed[pair.a_index] - sample.truth_vertices[pair.b_index]) / pair.distance;
                if (cfg.mode == ActionMode::normal) {
                    e.dlocal(pair.a_index, 0) += g.dot(sample.normals[pair.a_index]);
                } else {
                    e.dlocal.row(pair.a_index) += g.transpose();
                }
            }
        }
    }
    if (cfg.has_global()) {
        const double radius = sample.state.radius;
        const auto& t = sample.target_global;
        for (int k = 0; k < 3; ++k) {
            const double dt = out.global_raw[k] - t.translation[k] / radius;
            const double dr = out.global.rotation[k] - t.rotation[k];
            const double ds = out.global.log_scale[k] - t.log_scale[k];
            e.global_term += w.trs[0] * dt * dt + w.trs[1] * dr * dr + w.trs[2] * ds * ds;
            e.dglobal[k] = 2.0 * w.trs[0] * dt;
            const double th = std::tanh(out.global_raw[3 + k] / kRotationLimit);
            e.dglobal[3 + k] = 2.0 * w.trs[1] * dr * (1.0 - th * th);
            e.dglobal[6 + k] = 2.0 * w.trs[2] * ds;
        }
    }
    e.loss = e.action_term + e.hausdorff_term + e.global_term;
    if (!std::isfinite(e.loss)) throw Error("loss is not finite (training diverged)");
    return e;
}

}  // namespace

LossResult loss_and_grad(const AgentNetwork& net, const TrainingSample& sample, const LossWeights& weights) {
    AgentNetwork::Cache cache;
    const auto out = net.forward(sample.state, cache);
    auto e = evaluate_loss(net, sample, weights, out);
    LossResult r;
    r.loss = e.loss;
    r.action_term = e.action_term;
    r.hausdorff_term = e.hausdorff_term;
    r.global_term = e.global_term;
    r.grads = net.backward(cache, e.dlocal, e.dglobal);
    return r;
}

double loss_only(const AgentNetwork& net, const TrainingSample& sample, const LossWeights& weights) {
    return evaluate_loss(net, sample, weights, net.forward(sample.state)).loss;
}

void TrainConfig::validate() const {
    if (!(learning_rate >= 0.0)) throw Error("train: learning_rate must be >= 0");
    if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0 && adam_beta2 > 0.0 && adam_beta2 < 1.0 && adam_epsilon > 0.0)) {
        throw Error("train: invalid Adam hyperparameters");
    }
    if (batch_size < 1 || steps < 0) throw Error("train: batch_size must be >= 1 and steps >= 0");
    if (clip_norm < 0.0) throw Error("train: clip_norm must be >= 0");
    if (weights.action < 0.0 || weights.lambda_h < 0.0 || (weights.trs.array() < 0.0).any()) throw Error("train: negative loss weight");
}

io::Json TrainConfig::to_json() const {
    return {
        {"learning_rate", learning_rate},
        {"adam_beta1", adam_beta1},
        {"adam_beta2", adam_beta2},
        {"adam_epsilon", adam_epsilon},
        {"batch_size", batch_size},
        {"steps", steps},
        {"seed", seed},
        {"clip_norm", clip_norm},
        {"weights", {{"action", weights.action}, {"lambda_h", weights.lambda_h}, {"trs", io::vec3_json(weights.trs)}}},
    };
}

TrainConfig TrainConfig::from_json(const io::Json& j) {
    TrainConfig c;
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
    c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
    c.adam_epsilon = j.value("adam_epsilon", c.adam_epsilon);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.steps = j.value("steps", c.steps);
    c.seed = j.value("seed", c.seed);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    if (j.contains("weights")) {
        const auto& w = j.at("weights");
        c.weights.action = w.value("action", c.weights.action);
        c.weights.lambda_h = w.value("lambda_h", c.weights.lambda_h);
        if (w.contains("trs")) c.weights.trs = io::json_vec3(w.at("trs"));
    }
    c.validate();
    return c;
}

AdamState AdamState::for_network(const AgentNetwork& net) {
    AdamState s;
    s.m = net.zero_like();
    s.v = net.zero_like();
    return s;
}

double train_step(AgentNetwork& net, std::span<const TrainingSample* const> batch, AdamState& adam, const TrainConfig& cfg, int threads) {
    if (batch.empty()) throw Error("train_step: empty batch");
    std::vector<LossResult> results(batch.size());
    parallel_for(batch.size(), threads, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) results[i] = loss_and_grad(net, *batch[i], cfg.weights);
    });
    auto grads = net.zero_like();
    double loss = 0.0;
    for (const auto& r : results) {
        loss += r.loss;
        for (std::size_t l = 0; l < grads.size(); ++l) {
            grads[l].w += r.grads[l].w;
            grads[l].b += r.grads[l].b;
        }
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    loss *= inv;
    double norm2 = 0.0;
    for (auto& g : grads) {
        g.w *= inv;
        g.b *= inv;
        norm2 += g.w.squaredNorm() + g.b.squaredNorm();
    }
    if (!std::isfinite(loss) || !std::isfinite(norm2)) throw Error("train_step: non-finite loss or gradient");
    const double norm = std::sqrt(norm2);
    if (cfg.clip_norm > 0.0 && norm > cfg.clip_norm) {
        const double s = cfg.clip_norm / norm;
        for (auto& g : grads) {
            g.w *= s;
            g.b *= s;
        }
    }

    ++adam.step;
    const double b1 = cfg.adam_beta1;
    const double b2 = cfg.adam_beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(adam.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(adam.step));
    auto& layers = net.layers();
    std::vector<Dense> next = layers;
    auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
        param.array() -= cfg.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.adam_epsilon);
    };
    for (std::size_t l = 0; l < layers.size(); ++l) {
        update(next[l].w, adam.m[l].w, adam.v[l].w, grads[l].w);
        update(next[l].b, adam.m[l].b, adam.v[l].b, grads[l].b);
    }
    if (!all_finite(next)) throw Error("train_step: non-finite parameters after update");
    layers = std::move(next);
    return loss;
}

namespace {

std::filesystem::path strip_ckpt_suffix(const std::filesystem::path& p) {
    std::string s = p.string();
    for (const std::string suf : {".ckpt.json", ".ckpt.raw"}) {
        if (s.size() > suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0) return s.substr(0, s.size() - suf.size());
    }
    return p;
}

}  // namespace

void write_checkpoint(const AgentNetwork& net, const std::filesystem::path& stem_in) {
    const auto stem = strip_ckpt_suffix(stem_in);
    const std::filesystem::path raw = stem.string() + ".ckpt.raw";
    const Eigen::VectorXd params = net.parameters();
    io::Json header = {
        {"format", kCheckpointFormat},
        {"architecture", net.config().to_json()},
        {"parameter_count", net.parameter_count()},
        {"dtype", "float64"},
        {"byte_order", "little"},
        {"data_file", raw.filename().string()},
    };
    io::write_raw_le<double>(std::span<const double>(params.data(), static_cast<std::size_t>(params.size())), raw);
    io::write_json(header, stem.string() + ".ckpt.json");
}

AgentNetwork read_checkpoint(const std::filesystem::path& header_or_stem) {
    const auto stem = strip_ckpt_suffix(header_or_stem);
    const std::filesystem::path header_path = stem.string() + ".ckpt.json";
    const auto header = io::read_json(header_path);
    if (header.value("format", 0) != kCheckpointFormat) throw Error("checkpoint: unsupported format version");
    AgentNetwork net(NetworkConfig::from_json(header.at("architecture")));
    const auto count = header.at("parameter_count").get<std::size_t>();
    if (count != net.parameter_count()) throw Error("checkpoint: parameter count does not match architecture");
    const auto values = io::read_raw_le<double>(header_path.parent_path() / header.at("data_file").get<std::string>(), count);
    net.set_parameters(Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(count)));
    return net;
}

}  // namespace apn
