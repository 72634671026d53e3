#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "engage/labeling.hpp"

namespace engage {

struct ModelConfig {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden_dims = {64, 64};
    std::size_t embedding_dim = 32;
    std::size_t k_comment = 0;
    std::size_t k_reaction = 0;
    double head_bias_prior = 0.01;

    void validate() const;
    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

// Fully connected layer, weights stored row major (out x in).
struct DenseLayer {
    std::size_t in = 0;
    std::size_t out = 0;
    std::vector<double> weights;
    std::vector<double> bias;
};

struct ModelParams {
    ModelConfig config;
    std::vector<DenseLayer> encoder;  // hidden layers plus the embedding layer
    DenseLayer comment_head;
    DenseLayer reaction_head;
    std::uint64_t step = 0;
};

// Bias that makes a fresh head predict each class with roughly the given
// prior probability: -log((1 - prior) / prior).
double head_bias_init(double prior);

// Weights U(-1/sqrt(fan_in), +1/sqrt(fan_in)); encoder biases zero, head
// biases from head_bias_init. Draw order is fixed: encoder layers front to
// back, then comment head, then reaction head.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

// ReLU follows every encoder layer, the embedding layer included.
std::vector<double> encode(const ModelParams& params, std::span<const double> input);

struct ForwardResult {
    std::vector<double> embedding;
    std::vector<double> comment_logits;
    std::vector<double> reaction_logits;
};
ForwardResult forward(const ModelParams& params, std::span<const double> input);

// Gradients mirror the parameter layout exactly.
struct ModelGrads {
    std::vector<DenseLayer> encoder;
    DenseLayer comment_head;
    DenseLayer reaction_head;
};
ModelGrads zero_grads_like(const ModelParams& params);

struct TensorRef {
    std::string name;
    std::vector<double>* data;
};
// Stable enumeration of all tensors ("encoder.0.weight", ...,
// "reaction_head.bias"); params and grads enumerate in the same order.
std::vector<TensorRef> tensor_refs(ModelParams& params);
std::vector<TensorRef> tensor_refs(ModelGrads& grads);

struct LossOptions {
    double lambda_comment = 1.0;
    double lambda_reaction = 1.0;
    bool freeze_encoder = false;
};

struct BatchLossResult {
    double total = 0.0;
    double comment = 0.0;   // mean over samples that carry a comment target
    double reaction = 0.0;  // mean over samples that carry a reaction label
    std::size_t n_comment = 0;
    std::size_t n_reaction = 0;
};

// Fused forward plus backward over one batch. Each task term is averaged
// over the samples that actually carry that target, then weighted by its
// lambda; samples missing a target simply do not contribute to that term.
// A batch where no sample carries either target is an error. Pass null
// grads to evaluate the loss without backprop. Weight decay is the
// optimizer's business and never appears in the reported loss.
BatchLossResult batch_loss_and_grads(const ModelParams& params,
                                     std::span<const std::vector<double>> inputs,
                                     std::span<const PseudoLabels> targets,
                                     const LossOptions& opts, ModelGrads* grads);

// Low-level single-layer helpers shared with the transfer code, which
// trains its own heads on top of the encoder.
std::vector<double> dense_forward(const DenseLayer& layer, std::span<const double> input);

struct EncoderTrace {
    std::vector<std::vector<double>> layer_inputs;  // input to each layer
    std::vector<std::vector<double>> pre_acts;      // pre-ReLU outputs
    std::vector<double> embedding;
};
EncoderTrace encode_traced(const ModelParams& params, std::span<const double> input);

// Accumulates layer gradients into enc_grads and returns nothing useful to
// callers beyond that; embedding_grad is d(loss)/d(embedding).
void encoder_backward(const ModelParams& params, const EncoderTrace& trace,
                      std::span<const double> embedding_grad,
                      std::vector<DenseLayer>& enc_grads);

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace engage
