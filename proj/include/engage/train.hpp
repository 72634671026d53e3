#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <variant>
#include <vector>

#include "engage/augment.hpp"
#include "engage/corpus.hpp"
#include "engage/labeling.hpp"
#include "engage/model.hpp"

namespace engage {

struct TrainConfig {
    std::size_t batch_size = 64;
    std::uint64_t total_iterations = 1000;
    double base_lr = 0.1;  // reference rate at batch size 256
    double warmup_fraction = 0.05;
    std::vector<std::uint64_t> decay_milestones;
    double decay_factor = 0.5;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    double lambda_comment = 1.0;
    double lambda_reaction = 1.0;
    bool augment_rasters = false;
    AugmentConfig augment;
    std::uint64_t seed = 1;

    void validate() const;
};

// Linear batch-size scaling: the configured rate is defined at batch 256.
double base_lr_for_batch(double base_lr, std::size_t batch_size);

// Warmup ramps linearly over the first ceil(warmup_fraction * T) iterations
// ending exactly at the base rate; afterwards each passed milestone
// multiplies the rate by decay_factor.
double lr_at(const TrainConfig& config, std::uint64_t iteration);

struct OptimizerState {
    std::vector<std::vector<double>> velocity;  // one buffer per tensor
    static OptimizerState make(ModelParams& params);
};

// SGD with momentum and coupled weight decay:
//   g <- grad + wd * theta;  v <- mu * v + g;  theta <- theta - lr * v
void sgd_step(ModelParams& params, ModelGrads& grads, OptimizerState& state, double lr,
              double momentum, double weight_decay);

struct TrainExample {
    std::string id;
    std::variant<Raster, FeatureVec> image;
    PseudoLabels labels;
};

// Joins labeled examples back to their posts' images.
std::vector<TrainExample> make_training_examples(std::span<const Post> corpus,
                                                 const LabeledDataset& dataset);

struct TrainLogEntry {
    std::uint64_t iteration = 0;
    double lr = 0.0;
    double total_loss = 0.0;
    double comment_loss = 0.0;
    double reaction_loss = 0.0;
    std::size_t n_comment = 0;
    std::size_t n_reaction = 0;
};

struct PretrainResult {
    ModelParams params;
    std::vector<TrainLogEntry> log;
};

// Multi-task pretraining loop. Each epoch reshuffles the example order with
// its own derived seed; batches never straddle an epoch boundary, so the
// last batch of an epoch may run short. Loss is logged before the parameter
// update it triggers.
PretrainResult pretrain(std::span<const TrainExample> examples, const ModelConfig& model_config,
                        const TrainConfig& train_config);

void write_train_log_csv(const std::filesystem::path& path,
                         std::span<const TrainLogEntry> entries);

}  // namespace engage
