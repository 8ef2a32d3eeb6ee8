#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "ddad/bn.hpp"
#include "ddad/ops.hpp"
#include "ddad/random.hpp"
#include "ddad/tensor.hpp"

// Declarative network construction and execution for the three players
// (teacher, student, generator). A NetworkSpec is a validated layer list; a
// NetworkState owns the parameters, BN records, and execution mode. States
// are single-owner: copying is disabled, use clone() for a deep copy.

namespace ddad {

class SpecError : public Error {
public:
    using Error::Error;
};

enum class LayerKind { Linear, Conv2d, Deconv2d, BatchNorm, Relu, Tanh, Upsample2x, AvgPool2x2, Reshape };

inline const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Linear: return "linear";
        case LayerKind::Conv2d: return "conv2d";
        case LayerKind::Deconv2d: return "deconv2d";
        case LayerKind::BatchNorm: return "batchnorm";
        case LayerKind::Relu: return "relu";
        case LayerKind::Tanh: return "tanh";
        case LayerKind::Upsample2x: return "upsample2x";
        case LayerKind::AvgPool2x2: return "avgpool2x2";
        case LayerKind::Reshape: return "reshape";
    }
    return "?";
}

inline LayerKind layer_kind_from_name(const std::string& s) {
    for (LayerKind k : {LayerKind::Linear, LayerKind::Conv2d, LayerKind::Deconv2d,
                        LayerKind::BatchNorm, LayerKind::Relu, LayerKind::Tanh,
                        LayerKind::Upsample2x, LayerKind::AvgPool2x2, LayerKind::Reshape})
        if (s == layer_kind_name(k)) return k;
    throw SpecError("unknown layer kind '" + s + "'");
}

struct LayerSpec {
    LayerKind kind;
    int in = 0, out = 0, kernel = 0, stride = 1, pad = 0;
    Shape target;  // Reshape only, per-sample shape

    static LayerSpec linear(int in, int out) { return {LayerKind::Linear, in, out}; }
    static LayerSpec conv2d(int in, int out, int k, int stride = 1, int pad = 0) {
        return {LayerKind::Conv2d, in, out, k, stride, pad};
    }
    static LayerSpec deconv2d(int in, int out, int k, int stride = 1, int pad = 0) {
        return {LayerKind::Deconv2d, in, out, k, stride, pad};
    }
    static LayerSpec batchnorm(int channels) { return {LayerKind::BatchNorm, channels, channels}; }
    static LayerSpec relu() { return {LayerKind::Relu}; }
    static LayerSpec tanh() { return {LayerKind::Tanh}; }
    static LayerSpec upsample2x() { return {LayerKind::Upsample2x}; }
    static LayerSpec avgpool2x2() { return {LayerKind::AvgPool2x2}; }
    static LayerSpec reshape(Shape target) {
        LayerSpec s{LayerKind::Reshape};
        s.target = std::move(target);
        return s;
    }
};

struct NetworkSpec {
    std::string name;
    Shape input_shape;  // per-sample, no batch axis
    std::vector<LayerSpec> layers;

    // Per-sample output shape of every layer; throws SpecError naming the
    // first inconsistent layer.
    std::vector<Shape> infer_shapes() const {
        auto fail = [&](std::size_t i, const std::string& why) -> Shape {
            throw SpecError("network '" + name + "' layer " + std::to_string(i) + " (" +
                            layer_kind_name(layers[i].kind) + "): " + why);
        };
        if (input_shape.empty()) throw SpecError("network '" + name + "': empty input shape");
        std::vector<Shape> out;
        Shape cur = input_shape;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const LayerSpec& l = layers[i];
            switch (l.kind) {
                case LayerKind::Linear:
                    if (cur.size() != 1 || cur[0] != l.in)
                        fail(i, "expects [" + std::to_string(l.in) + "], got " + shape_str(cur));
                    cur = {l.out};
                    break;
                case LayerKind::Conv2d: {
                    if (cur.size() != 3 || cur[0] != l.in)
                        fail(i, "expects [" + std::to_string(l.in) + ", H, W], got " + shape_str(cur));
                    int ho = (cur[1] + 2 * l.pad - l.kernel) / l.stride + 1;
                    int wo = (cur[2] + 2 * l.pad - l.kernel) / l.stride + 1;
                    if (l.kernel < 1 || l.stride < 1 || l.pad < 0 || ho < 1 || wo < 1)
                        fail(i, "kernel " + std::to_string(l.kernel) + " does not fit " + shape_str(cur));
                    cur = {l.out, ho, wo};
                    break;
                }
                case LayerKind::Deconv2d: {
                    if (cur.size() != 3 || cur[0] != l.in)
                        fail(i, "expects [" + std::to_string(l.in) + ", H, W], got " + shape_str(cur));
                    int ho = (cur[1] - 1) * l.stride - 2 * l.pad + l.kernel;
                    int wo = (cur[2] - 1) * l.stride - 2 * l.pad + l.kernel;
                    if (l.kernel < 1 || l.stride < 1 || l.pad < 0 || ho < 1 || wo < 1)
                        fail(i, "output collapses for " + shape_str(cur));
                    cur = {l.out, ho, wo};
                    break;
                }
                case LayerKind::BatchNorm:
                    if (cur.empty() || cur[0] != l.in)
                        fail(i, "expects " + std::to_string(l.in) + " channels, got " + shape_str(cur));
                    break;
                case LayerKind::Relu:
                case LayerKind::Tanh:
                    break;
                case LayerKind::Upsample2x:
                    if (cur.size() != 3) fail(i, "expects [C, H, W], got " + shape_str(cur));
                    cur = {cur[0], cur[1] * 2, cur[2] * 2};
                    break;
                case LayerKind::AvgPool2x2:
                    if (cur.size() != 3 || cur[1] % 2 != 0 || cur[2] % 2 != 0)
                        fail(i, "expects [C, even H, even W], got " + shape_str(cur));
                    cur = {cur[0], cur[1] / 2, cur[2] / 2};
                    break;
                case LayerKind::Reshape:
                    if (l.target.empty() || shape_numel(l.target) != shape_numel(cur))
                        fail(i, "cannot view " + shape_str(cur) + " as " + shape_str(l.target));
                    cur = l.target;
                    break;
            }
            out.push_back(cur);
        }
        if (out.empty()) throw SpecError("network '" + name + "': no layers");
        return out;
    }

    Shape output_shape() const { return infer_shapes().back(); }
};

inline void to_json(nlohmann::json& j, const LayerSpec& l) {
    j = nlohmann::json{{"kind", layer_kind_name(l.kind)}};
    switch (l.kind) {
        case LayerKind::Linear:
            j["in"] = l.in;
            j["out"] = l.out;
            break;
        case LayerKind::Conv2d:
        case LayerKind::Deconv2d:
            j["in"] = l.in;
            j["out"] = l.out;
            j["kernel"] = l.kernel;
            j["stride"] = l.stride;
            j["pad"] = l.pad;
            break;
        case LayerKind::BatchNorm:
            j["channels"] = l.in;
            break;
        case LayerKind::Reshape:
            j["target"] = l.target;
            break;
        default:
            break;
    }
}

inline void from_json(const nlohmann::json& j, LayerSpec& l) {
    l = LayerSpec{layer_kind_from_name(j.at("kind").get<std::string>())};
    switch (l.kind) {
        case LayerKind::Linear:
            l.in = j.at("in").get<int>();
            l.out = j.at("out").get<int>();
            break;
        case LayerKind::Conv2d:
        case LayerKind::Deconv2d:
            l.in = j.at("in").get<int>();
            l.out = j.at("out").get<int>();
            l.kernel = j.at("kernel").get<int>();
            l.stride = j.at("stride").get<int>();
            l.pad = j.at("pad").get<int>();
            break;
        case LayerKind::BatchNorm:
            l.in = l.out = j.at("channels").get<int>();
            break;
        case LayerKind::Reshape:
            l.target = j.at("target").get<Shape>();
            break;
        default:
            break;
    }
}

inline void to_json(nlohmann::json& j, const NetworkSpec& s) {
    j = nlohmann::json{{"name", s.name}, {"input_shape", s.input_shape}, {"layers", s.layers}};
}

inline void from_json(const nlohmann::json& j, NetworkSpec& s) {
    s.name = j.at("name").get<std::string>();
    s.input_shape = j.at("input_shape").get<Shape>();
    s.layers = j.at("layers").get<std::vector<LayerSpec>>();
}

enum class Mode { Training, Inference };

class NetworkState {
public:
    NetworkState() = default;
    NetworkState(NetworkSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
        spec_.infer_shapes();  // validate before allocating anything
        Rng rng(seed, /*stream=*/1);
        states_.resize(spec_.layers.size());
        for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
            const LayerSpec& l = spec_.layers[i];
            LayerState& st = states_[i];
            // a bias directly before batch norm is mathematically dead (the
            // mean subtraction cancels it), so such layers get none
            bool bn_next = i + 1 < spec_.layers.size() &&
                           spec_.layers[i + 1].kind == LayerKind::BatchNorm;
            switch (l.kind) {
                case LayerKind::Linear: {
                    st.weight = Tensor({l.in, l.out}, 0.0, true);
                    kaiming_uniform(st.weight, l.in, rng);
                    if (!bn_next) {
                        st.bias = Tensor({l.out}, 0.0, true);
                        bias_uniform(st.bias, l.in, rng);
                    }
                    break;
                }
                case LayerKind::Conv2d: {
                    st.weight = Tensor({l.out, l.in, l.kernel, l.kernel}, 0.0, true);
                    int fan_in = l.in * l.kernel * l.kernel;
                    kaiming_uniform(st.weight, fan_in, rng);
                    if (!bn_next) {
                        st.bias = Tensor({l.out}, 0.0, true);
                        bias_uniform(st.bias, fan_in, rng);
                    }
                    break;
                }
                case LayerKind::Deconv2d: {
                    st.weight = Tensor({l.in, l.out, l.kernel, l.kernel}, 0.0, true);
                    int fan_in = l.out * l.kernel * l.kernel;
                    kaiming_uniform(st.weight, fan_in, rng);
                    if (!bn_next) {
                        st.bias = Tensor({l.out}, 0.0, true);
                        bias_uniform(st.bias, fan_in, rng);
                    }
                    break;
                }
                case LayerKind::BatchNorm:
                    st.bn = BNLayerRecord::make(l.in);
                    break;
                default:
                    break;
            }
        }
    }

    NetworkState(const NetworkState&) = delete;
    NetworkState& operator=(const NetworkState&) = delete;
    NetworkState(NetworkState&&) = default;
    NetworkState& operator=(NetworkState&&) = default;

    NetworkState clone() const {
        NetworkState c;
        c.spec_ = spec_;
        c.mode_ = mode_;
        c.frozen_ = frozen_;
        c.states_.resize(states_.size());
        for (std::size_t i = 0; i < states_.size(); ++i) {
            const LayerState& s = states_[i];
            LayerState& d = c.states_[i];
            if (s.weight.defined()) d.weight = s.weight.clone();
            if (s.bias.defined()) d.bias = s.bias.clone();
            if (s.bn.channels > 0) {
                d.bn.channels = s.bn.channels;
                d.bn.stored_mean = s.bn.stored_mean.clone();
                d.bn.stored_var = s.bn.stored_var.clone();
                d.bn.scale = s.bn.scale.clone();
                d.bn.shift = s.bn.shift.clone();
            }
        }
        return c;
    }

    Tensor forward(const Tensor& x) {
        if (x.shape().empty() || x.shape().size() != spec_.input_shape.size() + 1)
            throw ShapeError("network '" + spec_.name + "': input " + shape_str(x.shape()) +
                             " does not extend per-sample shape " + shape_str(spec_.input_shape) +
                             " with a batch axis");
        for (std::size_t d = 0; d < spec_.input_shape.size(); ++d)
            if (x.shape()[d + 1] != spec_.input_shape[d])
                throw ShapeError("network '" + spec_.name + "': input " + shape_str(x.shape()) +
                                 " does not match per-sample shape " + shape_str(spec_.input_shape));
        for (LayerState& st : states_)
            if (st.bn.channels > 0) st.bn.batch_fresh = false;

        const int n = x.shape()[0];
        Tensor cur = x;
        for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
            const LayerSpec& l = spec_.layers[i];
            LayerState& st = states_[i];
            switch (l.kind) {
                case LayerKind::Linear:
                    cur = matmul(cur, st.weight);
                    if (st.bias.defined())
                        cur = add(cur, broadcast_channel(st.bias, {n, l.out}));
                    break;
                case LayerKind::Conv2d:
                    cur = conv2d(cur, st.weight, l.stride, l.pad);
                    if (st.bias.defined())
                        cur = add(cur, broadcast_channel(st.bias, cur.shape()));
                    break;
                case LayerKind::Deconv2d:
                    cur = conv2d_transpose(cur, st.weight, l.stride, l.pad);
                    if (st.bias.defined())
                        cur = add(cur, broadcast_channel(st.bias, cur.shape()));
                    break;
                case LayerKind::BatchNorm:
                    cur = batchnorm_forward(cur, st.bn, mode_ == Mode::Training, frozen_);
                    break;
                case LayerKind::Relu:
                    cur = relu(cur);
                    break;
                case LayerKind::Tanh:
                    cur = ddad::tanh(cur);
                    break;
                case LayerKind::Upsample2x:
                    cur = upsample_nearest2x(cur);
                    break;
                case LayerKind::AvgPool2x2:
                    cur = avgpool2x2(cur);
                    break;
                case LayerKind::Reshape: {
                    Shape t{n};
                    t.insert(t.end(), l.target.begin(), l.target.end());
                    cur = reshape(cur, t);
                    break;
                }
            }
        }
        return cur;
    }

    // Forward that also promises fresh per-layer batch statistics; only
    // meaningful in training mode, where BN layers recompute them.
    std::pair<Tensor, std::vector<BNLayerRecord*>> forward_with_bn_capture(const Tensor& x) {
        if (mode_ != Mode::Training)
            throw ModeError("network '" + spec_.name +
                            "': batch-statistic capture requires training mode");
        Tensor out = forward(x);
        return {out, bn_records()};
    }

    std::vector<BNLayerRecord*> bn_records() {
        std::vector<BNLayerRecord*> r;
        for (LayerState& st : states_)
            if (st.bn.channels > 0) r.push_back(&st.bn);
        return r;
    }

    std::vector<Tensor> params() {
        std::vector<Tensor> p;
        for (auto& [name, t] : named_params()) p.push_back(t);
        return p;
    }

    std::vector<std::pair<std::string, Tensor>> named_params() {
        std::vector<std::pair<std::string, Tensor>> p;
        for (std::size_t i = 0; i < states_.size(); ++i) {
            std::string prefix = "layer" + std::to_string(i) + ".";
            LayerState& st = states_[i];
            if (st.weight.defined()) p.emplace_back(prefix + "weight", st.weight);
            if (st.bias.defined()) p.emplace_back(prefix + "bias", st.bias);
            if (st.bn.channels > 0) {
                p.emplace_back(prefix + "scale", st.bn.scale);
                p.emplace_back(prefix + "shift", st.bn.shift);
            }
        }
        return p;
    }

    std::vector<std::pair<std::string, Tensor>> named_buffers() {
        std::vector<std::pair<std::string, Tensor>> b;
        for (std::size_t i = 0; i < states_.size(); ++i) {
            LayerState& st = states_[i];
            if (st.bn.channels > 0) {
                std::string prefix = "layer" + std::to_string(i) + ".";
                b.emplace_back(prefix + "stored_mean", st.bn.stored_mean);
                b.emplace_back(prefix + "stored_var", st.bn.stored_var);
            }
        }
        return b;
    }

    std::int64_t param_count() {
        std::int64_t n = 0;
        for (auto& [name, t] : named_params()) n += t.numel();
        return n;
    }

    void set_requires_grad(bool rg) {
        for (auto& [name, t] : named_params()) t.set_requires_grad(rg);
    }

    void zero_grad() {
        for (auto& [name, t] : named_params()) t.zero_grad();
    }

    const NetworkSpec& spec() const { return spec_; }
    Mode mode() const { return mode_; }
    void set_mode(Mode m) { mode_ = m; }
    bool frozen() const { return frozen_; }
    void set_frozen(bool f) { frozen_ = f; }

private:
    struct LayerState {
        Tensor weight, bias;  // undefined for parameterless layers
        BNLayerRecord bn;     // channels == 0 when not a BN layer
    };

    NetworkSpec spec_;
    std::vector<LayerState> states_;
    Mode mode_ = Mode::Training;
    bool frozen_ = false;
};

// ---- standard builders ----
// Teacher/student pairs share class count; the student halves every width.
// Vector task: MLP with two BN blocks. Image task: two conv/BN blocks, a
// pool, and a linear head on 16x16 inputs.

inline NetworkSpec teacher_vector_spec(int input_dim, int num_classes) {
    NetworkSpec s;
    s.name = "teacher";
    s.input_shape = {input_dim};
    s.layers = {LayerSpec::linear(input_dim, 64), LayerSpec::batchnorm(64), LayerSpec::relu(),
                LayerSpec::linear(64, 64),        LayerSpec::batchnorm(64), LayerSpec::relu(),
                LayerSpec::linear(64, num_classes)};
    return s;
}

inline NetworkSpec student_vector_spec(int input_dim, int num_classes) {
    NetworkSpec s;
    s.name = "student";
    s.input_shape = {input_dim};
    s.layers = {LayerSpec::linear(input_dim, 32), LayerSpec::batchnorm(32), LayerSpec::relu(),
                LayerSpec::linear(32, 32),        LayerSpec::batchnorm(32), LayerSpec::relu(),
                LayerSpec::linear(32, num_classes)};
    return s;
}

inline NetworkSpec generator_vector_spec(int noise_dim, int output_dim) {
    NetworkSpec s;
    s.name = "generator";
    s.input_shape = {noise_dim};
    s.layers = {LayerSpec::linear(noise_dim, 64), LayerSpec::batchnorm(64), LayerSpec::relu(),
                LayerSpec::linear(64, 64),        LayerSpec::batchnorm(64), LayerSpec::relu(),
                LayerSpec::linear(64, output_dim), LayerSpec::tanh()};
    return s;
}

inline NetworkSpec teacher_image_spec(int channels, int num_classes) {
    NetworkSpec s;
    s.name = "teacher";
    s.input_shape = {channels, 16, 16};
    s.layers = {LayerSpec::conv2d(channels, 16, 3, 1, 1),
                LayerSpec::batchnorm(16),
                LayerSpec::relu(),
                LayerSpec::conv2d(16, 32, 3, 1, 1),
                LayerSpec::batchnorm(32),
                LayerSpec::relu(),
                LayerSpec::avgpool2x2(),
                LayerSpec::reshape({32 * 8 * 8}),
                LayerSpec::linear(32 * 8 * 8, num_classes)};
    return s;
}

inline NetworkSpec student_image_spec(int channels, int num_classes) {
    NetworkSpec s;
    s.name = "student";
    s.input_shape = {channels, 16, 16};
    s.layers = {LayerSpec::conv2d(channels, 8, 3, 1, 1),
                LayerSpec::batchnorm(8),
                LayerSpec::relu(),
                LayerSpec::conv2d(8, 16, 3, 1, 1),
                LayerSpec::batchnorm(16),
                LayerSpec::relu(),
                LayerSpec::avgpool2x2(),
                LayerSpec::reshape({16 * 8 * 8}),
                LayerSpec::linear(16 * 8 * 8, num_classes)};
    return s;
}

// Noise -> 4x4 feature map -> two upscale+conv+BN+relu blocks -> tanh image.
// `use_deconv` swaps nearest-neighbor upsample+conv for strided deconvolution.
inline NetworkSpec generator_image_spec(int noise_dim, int channels, bool use_deconv = false) {
    NetworkSpec s;
    s.name = "generator";
    s.input_shape = {noise_dim};
    s.layers = {LayerSpec::linear(noise_dim, 32 * 4 * 4), LayerSpec::reshape({32, 4, 4})};
    if (use_deconv) {
        s.layers.push_back(LayerSpec::deconv2d(32, 16, 4, 2, 1));
        s.layers.push_back(LayerSpec::batchnorm(16));
        s.layers.push_back(LayerSpec::relu());
        s.layers.push_back(LayerSpec::deconv2d(16, 8, 4, 2, 1));
        s.layers.push_back(LayerSpec::batchnorm(8));
        s.layers.push_back(LayerSpec::relu());
    } else {
        s.layers.push_back(LayerSpec::upsample2x());
        s.layers.push_back(LayerSpec::conv2d(32, 16, 3, 1, 1));
        s.layers.push_back(LayerSpec::batchnorm(16));
        s.layers.push_back(LayerSpec::relu());
        s.layers.push_back(LayerSpec::upsample2x());
        s.layers.push_back(LayerSpec::conv2d(16, 8, 3, 1, 1));
        s.layers.push_back(LayerSpec::batchnorm(8));
        s.layers.push_back(LayerSpec::relu());
    }
    s.layers.push_back(LayerSpec::conv2d(8, channels, 3, 1, 1));
    s.layers.push_back(LayerSpec::tanh());
    return s;
}

}  // namespace ddad
