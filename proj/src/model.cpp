#include "engage/model.hpp"

#include <cmath>
#include <fstream>

#include "engage/errors.hpp"
#include "engage/losses.hpp"
#include "engage/rng.hpp"

namespace engage {

using nlohmann::json;

void ModelConfig::validate() const {
    if (input_dim == 0) throw ConfigError("model input_dim must be positive");
    if (embedding_dim == 0) throw ConfigError("model embedding_dim must be positive");
    for (auto h : hidden_dims)
        if (h == 0) throw ConfigError("model hidden dims must be positive");
    if (k_comment == 0) throw ConfigError("model k_comment must be positive");
    if (k_reaction == 0) throw ConfigError("model k_reaction must be positive");
    if (!(head_bias_prior > 0.0) || !(head_bias_prior < 1.0))
        throw ConfigError("head bias prior must lie strictly between 0 and 1");
}

json ModelConfig::to_json() const {
    json j;
    j["input_dim"] = input_dim;
    j["hidden_dims"] = hidden_dims;
    j["embedding_dim"] = embedding_dim;
    j["k_comment"] = k_comment;
    j["k_reaction"] = k_reaction;
    j["head_bias_prior"] = head_bias_prior;
    return j;
}

ModelConfig ModelConfig::from_json(const json& j) {
    ModelConfig c;
    c.input_dim = j.at("input_dim").get<std::size_t>();
    c.hidden_dims = j.at("hidden_dims").get<std::vector<std::size_t>>();
    c.embedding_dim = j.at("embedding_dim").get<std::size_t>();
    c.k_comment = j.at("k_comment").get<std::size_t>();
    c.k_reaction = j.at("k_reaction").get<std::size_t>();
    c.head_bias_prior = j.at("head_bias_prior").get<double>();
    c.validate();
    return c;
}

double head_bias_init(double prior) {
    if (!(prior > 0.0) || !(prior < 1.0))
        throw ConfigError("head bias prior must lie strictly between 0 and 1");
    return -std::log((1.0 - prior) / prior);
}

namespace {

DenseLayer make_layer(std::size_t in, std::size_t out) {
    DenseLayer layer;
    layer.in = in;
    layer.out = out;
    layer.weights.assign(in * out, 0.0);
    layer.bias.assign(out, 0.0);
    return layer;
}

void fill_uniform_weights(DenseLayer& layer, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer.in));
    for (double& w : layer.weights) w = rng.uniform(-bound, bound);
}

}  // namespace

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    ModelParams params;
    params.config = config;

    std::size_t prev = config.input_dim;
    for (auto h : config.hidden_dims) {
        params.encoder.push_back(make_layer(prev, h));
        prev = h;
    }
    params.encoder.push_back(make_layer(prev, config.embedding_dim));

    params.comment_head = make_layer(config.embedding_dim, config.k_comment);
    params.reaction_head = make_layer(config.embedding_dim, config.k_reaction);

    Rng rng(seed);
    for (auto& layer : params.encoder) fill_uniform_weights(layer, rng);
    fill_uniform_weights(params.comment_head, rng);
    fill_uniform_weights(params.reaction_head, rng);

    const double head_bias = head_bias_init(config.head_bias_prior);
    for (double& b : params.comment_head.bias) b = head_bias;
    for (double& b : params.reaction_head.bias) b = head_bias;
    return params;
}

std::vector<double> dense_forward(const DenseLayer& layer, std::span<const double> input) {
    if (input.size() != layer.in)
        throw InputError("dense layer expects " + std::to_string(layer.in) + " inputs, got " +
                         std::to_string(input.size()));
    std::vector<double> out(layer.out);
    for (std::size_t r = 0; r < layer.out; ++r) {
        const double* row = layer.weights.data() + r * layer.in;
        double acc = layer.bias[r];
        for (std::size_t c = 0; c < layer.in; ++c) acc += row[c] * input[c];
        out[r] = acc;
    }
    return out;
}

EncoderTrace encode_traced(const ModelParams& params, std::span<const double> input) {
    EncoderTrace trace;
    trace.layer_inputs.reserve(params.encoder.size());
    trace.pre_acts.reserve(params.encoder.size());
    std::vector<double> current(input.begin(), input.end());
    for (const auto& layer : params.encoder) {
        trace.layer_inputs.push_back(current);
        auto pre = dense_forward(layer, current);
        current.resize(pre.size());
        for (std::size_t i = 0; i < pre.size(); ++i) current[i] = pre[i] > 0.0 ? pre[i] : 0.0;
        trace.pre_acts.push_back(std::move(pre));
    }
    trace.embedding = current;
    return trace;
}

std::vector<double> encode(const ModelParams& params, std::span<const double> input) {
    std::vector<double> current(input.begin(), input.end());
    for (const auto& layer : params.encoder) {
        auto pre = dense_forward(layer, current);
        current.resize(pre.size());
        for (std::size_t i = 0; i < pre.size(); ++i) current[i] = pre[i] > 0.0 ? pre[i] : 0.0;
    }
    return current;
}

ForwardResult forward(const ModelParams& params, std::span<const double> input) {
    ForwardResult result;
    result.embedding = encode(params, input);
    result.comment_logits = dense_forward(params.comment_head, result.embedding);
    result.reaction_logits = dense_forward(params.reaction_head, result.embedding);
    return result;
}

ModelGrads zero_grads_like(const ModelParams& params) {
    ModelGrads grads;
    for (const auto& layer : params.encoder) grads.encoder.push_back(make_layer(layer.in, layer.out));
    grads.comment_head = make_layer(params.comment_head.in, params.comment_head.out);
    grads.reaction_head = make_layer(params.reaction_head.in, params.reaction_head.out);
    return grads;
}

namespace {

template <typename Encoder>
std::vector<TensorRef> refs_impl(Encoder& encoder, DenseLayer& comment_head,
                                 DenseLayer& reaction_head) {
    std::vector<TensorRef> refs;
    for (std::size_t i = 0; i < encoder.size(); ++i) {
        refs.push_back({"encoder." + std::to_string(i) + ".weight", &encoder[i].weights});
        refs.push_back({"encoder." + std::to_string(i) + ".bias", &encoder[i].bias});
    }
    refs.push_back({"comment_head.weight", &comment_head.weights});
    refs.push_back({"comment_head.bias", &comment_head.bias});
    refs.push_back({"reaction_head.weight", &reaction_head.weights});
    refs.push_back({"reaction_head.bias", &reaction_head.bias});
    return refs;
}

}  // namespace

std::vector<TensorRef> tensor_refs(ModelParams& params) {
    return refs_impl(params.encoder, params.comment_head, params.reaction_head);
}

std::vector<TensorRef> tensor_refs(ModelGrads& grads) {
    return refs_impl(grads.encoder, grads.comment_head, grads.reaction_head);
}

void encoder_backward(const ModelParams& params, const EncoderTrace& trace,
                      std::span<const double> embedding_grad,
                      std::vector<DenseLayer>& enc_grads) {
    std::vector<double> grad_out(embedding_grad.begin(), embedding_grad.end());
    for (std::size_t li = params.encoder.size(); li-- > 0;) {
        const auto& layer = params.encoder[li];
        const auto& pre = trace.pre_acts[li];
        const auto& in = trace.layer_inputs[li];
        auto& g = enc_grads[li];

        // ReLU gate, then the usual dense backward.
        std::vector<double> grad_pre(layer.out);
        for (std::size_t r = 0; r < layer.out; ++r)
            grad_pre[r] = pre[r] > 0.0 ? grad_out[r] : 0.0;

        for (std::size_t r = 0; r < layer.out; ++r) {
            double* grow = g.weights.data() + r * layer.in;
            const double gp = grad_pre[r];
            if (gp == 0.0) continue;
            for (std::size_t c = 0; c < layer.in; ++c) grow[c] += gp * in[c];
            g.bias[r] += gp;
        }

        if (li == 0) break;
        std::vector<double> grad_in(layer.in, 0.0);
        for (std::size_t r = 0; r < layer.out; ++r) {
            const double gp = grad_pre[r];
            if (gp == 0.0) continue;
            const double* row = layer.weights.data() + r * layer.in;
            for (std::size_t c = 0; c < layer.in; ++c) grad_in[c] += gp * row[c];
        }
        grad_out = std::move(grad_in);
    }
}

namespace {

// dL/dlogits for (soft) cross entropy is softmax minus target; accumulates
// head grads and returns the embedding gradient contribution.
void head_backward(const DenseLayer& head, std::span<const double> logits,
                   std::span<const double> embedding,
                   const std::map<std::uint32_t, double>& target, double scale,
                   DenseLayer& head_grads, std::vector<double>& embedding_grad) {
    auto probs = softmax(logits);
    for (const auto& [cls, w] : target) probs[cls] -= w;
    for (std::size_t r = 0; r < head.out; ++r) {
        const double g = probs[r] * scale;
        if (g == 0.0) continue;
        double* grow = head_grads.weights.data() + r * head.in;
        for (std::size_t c = 0; c < head.in; ++c) grow[c] += g * embedding[c];
        head_grads.bias[r] += g;
        const double* row = head.weights.data() + r * head.in;
        for (std::size_t c = 0; c < head.in; ++c) embedding_grad[c] += g * row[c];
    }
}

}  // namespace

BatchLossResult batch_loss_and_grads(const ModelParams& params,
                                     std::span<const std::vector<double>> inputs,
                                     std::span<const PseudoLabels> targets,
                                     const LossOptions& opts, ModelGrads* grads) {
    if (inputs.empty()) throw InputError("batch is empty");
    if (inputs.size() != targets.size())
        throw InputError("batch inputs and targets differ in length");

    BatchLossResult result;
    for (const auto& t : targets) {
        if (t.comment_target) ++result.n_comment;
        if (t.reaction_label) ++result.n_reaction;
    }
    if (result.n_comment == 0 && result.n_reaction == 0)
        throw InputError("batch carries no comment or reaction targets");

    const double comment_scale =
        result.n_comment > 0 ? opts.lambda_comment / static_cast<double>(result.n_comment) : 0.0;
    const double reaction_scale =
        result.n_reaction > 0 ? opts.lambda_reaction / static_cast<double>(result.n_reaction) : 0.0;

    double comment_sum = 0.0;
    double reaction_sum = 0.0;

    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const auto& target = targets[i];
        auto trace = encode_traced(params, inputs[i]);

        std::vector<double> embedding_grad;
        if (grads) embedding_grad.assign(params.config.embedding_dim, 0.0);

        if (target.comment_target) {
            auto logits = dense_forward(params.comment_head, trace.embedding);
            comment_sum += soft_cross_entropy(logits, *target.comment_target);
            if (grads)
                head_backward(params.comment_head, logits, trace.embedding,
                              *target.comment_target, comment_scale, grads->comment_head,
                              embedding_grad);
        }
        if (target.reaction_label) {
            auto logits = dense_forward(params.reaction_head, trace.embedding);
            reaction_sum += cross_entropy(logits, *target.reaction_label);
            if (grads) {
                const std::map<std::uint32_t, double> one_hot{{*target.reaction_label, 1.0}};
                head_backward(params.reaction_head, logits, trace.embedding, one_hot,
                              reaction_scale, grads->reaction_head, embedding_grad);
            }
        }

        if (grads && !opts.freeze_encoder)
            encoder_backward(params, trace, embedding_grad, grads->encoder);
    }

    if (result.n_comment > 0) result.comment = comment_sum / static_cast<double>(result.n_comment);
    if (result.n_reaction > 0)
        result.reaction = reaction_sum / static_cast<double>(result.n_reaction);
    result.total = opts.lambda_comment * result.comment + opts.lambda_reaction * result.reaction;
    return result;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
    json j;
    j["version"] = 1;
    j["config"] = params.config.to_json();
    j["step"] = params.step;
    json tensors = json::object();
    auto refs = tensor_refs(const_cast<ModelParams&>(params));
    for (const auto& ref : refs) tensors[ref.name] = *ref.data;
    j["tensors"] = std::move(tensors);
    std::ofstream out(path);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw IoError("failed writing checkpoint: " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open checkpoint: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw InputError("malformed checkpoint " + path.string() + ": " + e.what());
    }
    for (const char* key : {"config", "step", "tensors"})
        if (!j.contains(key))
            throw InputError("checkpoint missing field '" + std::string(key) + "': " + path.string());

    ModelParams params;
    params.config = ModelConfig::from_json(j.at("config"));
    // Rebuild the layer layout from the config, then fill tensors by name.
    ModelParams shaped = init_params(params.config, 0);
    shaped.step = j.at("step").get<std::uint64_t>();

    const auto& tensors = j.at("tensors");
    for (auto& ref : tensor_refs(shaped)) {
        if (!tensors.contains(ref.name))
            throw InputError("checkpoint missing tensor '" + ref.name + "': " + path.string());
        auto values = tensors.at(ref.name).get<std::vector<double>>();
        if (values.size() != ref.data->size())
            throw InputError("checkpoint tensor '" + ref.name + "' has " +
                             std::to_string(values.size()) + " values, expected " +
                             std::to_string(ref.data->size()));
        *ref.data = std::move(values);
    }
    return shaped;
}

}  // namespace engage
