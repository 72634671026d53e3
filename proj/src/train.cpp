#include "engage/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <unordered_map>

#include "engage/errors.hpp"
#include "engage/rng.hpp"

namespace engage {

void TrainConfig::validate() const {
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    if (total_iterations == 0) throw ConfigError("total iterations must be positive");
    if (!(base_lr > 0.0)) throw ConfigError("base learning rate must be positive");
    if (warmup_fraction < 0.0 || warmup_fraction >= 1.0)
        throw ConfigError("warmup fraction must lie in [0, 1)");
    if (!(decay_factor > 0.0) || decay_factor >= 1.0)
        throw ConfigError("decay factor must lie strictly between 0 and 1");
    if (!(momentum >= 0.0) || momentum >= 1.0)
        throw ConfigError("momentum must lie in [0, 1)");
    if (weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
    if (lambda_comment < 0.0 || lambda_reaction < 0.0)
        throw ConfigError("task weights must be non-negative");

    const auto warmup =
        static_cast<std::uint64_t>(std::ceil(warmup_fraction * static_cast<double>(total_iterations)));
    std::uint64_t prev = 0;
    bool first = true;
    for (auto m : decay_milestones) {
        if (m < warmup) throw ConfigError("decay milestones must come after warmup");
        if (!first && m <= prev) throw ConfigError("decay milestones must strictly increase");
        prev = m;
        first = false;
    }
    if (augment_rasters) augment.validate();
}

double base_lr_for_batch(double base_lr, std::size_t batch_size) {
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    return base_lr / 256.0 * static_cast<double>(batch_size);
}

double lr_at(const TrainConfig& config, std::uint64_t iteration) {
    if (iteration >= config.total_iterations)
        throw InputError("learning rate queried past the end of the schedule");
    const double lr0 = base_lr_for_batch(config.base_lr, config.batch_size);
    const auto warmup = static_cast<std::uint64_t>(
        std::ceil(config.warmup_fraction * static_cast<double>(config.total_iterations)));
    if (iteration < warmup)
        return lr0 * static_cast<double>(iteration + 1) / static_cast<double>(warmup);
    std::size_t passed = 0;
    for (auto m : config.decay_milestones)
        if (m <= iteration) ++passed;
    double lr = lr0;
    for (std::size_t i = 0; i < passed; ++i) lr *= config.decay_factor;
    return lr;
}

OptimizerState OptimizerState::make(ModelParams& params) {
    OptimizerState state;
    for (const auto& ref : tensor_refs(params))
        state.velocity.emplace_back(ref.data->size(), 0.0);
    return state;
}

void sgd_step(ModelParams& params, ModelGrads& grads, OptimizerState& state, double lr,
              double momentum, double weight_decay) {
    auto prefs = tensor_refs(params);
    auto grefs = tensor_refs(grads);
    if (prefs.size() != grefs.size() || prefs.size() != state.velocity.size())
        throw StateError("optimizer state does not match the model layout");

    for (std::size_t t = 0; t < prefs.size(); ++t) {
        auto& theta = *prefs[t].data;
        const auto& grad = *grefs[t].data;
        auto& vel = state.velocity[t];
        if (grad.size() != theta.size() || vel.size() != theta.size())
            throw StateError("tensor '" + prefs[t].name + "' changed shape mid-training");
        for (std::size_t i = 0; i < theta.size(); ++i) {
            if (!std::isfinite(grad[i]))
                throw TrainError("non-finite gradient in tensor '" + prefs[t].name + "'");
            const double g = grad[i] + weight_decay * theta[i];
            vel[i] = momentum * vel[i] + g;
            theta[i] -= lr * vel[i];
        }
    }
}

std::vector<TrainExample> make_training_examples(std::span<const Post> corpus,
                                                 const LabeledDataset& dataset) {
    std::vector<TrainExample> examples;
    examples.reserve(dataset.examples.size());
    for (const auto& labeled : dataset.examples) {
        if (labeled.post_index >= corpus.size())
            throw InputError("labeled example '" + labeled.id + "' points past the corpus");
        const Post& post = corpus[labeled.post_index];
        if (post.id != labeled.id)
            throw IntegrityError("labeled example '" + labeled.id + "' resolves to post '" +
                                 post.id + "'");
        examples.push_back({labeled.id, post.image, labeled.labels});
    }
    return examples;
}

namespace {

std::vector<double> example_input(const TrainExample& example, const TrainConfig& config,
                                  std::size_t input_dim, std::uint64_t iteration,
                                  std::size_t slot) {
    if (std::holds_alternative<FeatureVec>(example.image)) {
        const auto& feats = std::get<FeatureVec>(example.image);
        if (feats.size() != input_dim)
            throw InputError("example '" + example.id + "' has " + std::to_string(feats.size()) +
                             " features, model expects " + std::to_string(input_dim));
        return feats;
    }
    const auto& raster = std::get<Raster>(example.image);
    if (config.augment_rasters) {
        Rng rng(derive_seed(config.seed, "augment", iteration, slot));
        Raster view = augment(raster, config.augment, rng);
        if (view.pixels.size() != input_dim)
            throw InputError("augmented view of '" + example.id + "' has " +
                             std::to_string(view.pixels.size()) + " values, model expects " +
                             std::to_string(input_dim));
        return std::move(view.pixels);
    }
    if (raster.pixels.size() != input_dim)
        throw InputError("raster '" + example.id + "' flattens to " +
                         std::to_string(raster.pixels.size()) + " values, model expects " +
                         std::to_string(input_dim));
    return raster.pixels;
}

}  // namespace

PretrainResult pretrain(std::span<const TrainExample> examples, const ModelConfig& model_config,
                        const TrainConfig& train_config) {
    model_config.validate();
    train_config.validate();
    if (examples.empty()) throw InputError("no training examples");

    PretrainResult result;
    result.params = init_params(model_config, derive_seed(train_config.seed, "init"));
    auto state = OptimizerState::make(result.params);
    auto grads = zero_grads_like(result.params);

    const LossOptions loss_opts{train_config.lambda_comment, train_config.lambda_reaction, false};

    std::vector<std::size_t> order(examples.size());
    std::uint64_t iteration = 0;
    std::uint64_t epoch = 0;
    result.log.reserve(train_config.total_iterations);

    while (iteration < train_config.total_iterations) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng epoch_rng(derive_seed(train_config.seed, "epoch", epoch));
        epoch_rng.shuffle(order);

        std::size_t cursor = 0;
        while (cursor < order.size() && iteration < train_config.total_iterations) {
            const std::size_t take = std::min(train_config.batch_size, order.size() - cursor);
            std::vector<std::vector<double>> inputs;
            std::vector<PseudoLabels> targets;
            inputs.reserve(take);
            targets.reserve(take);
            for (std::size_t slot = 0; slot < take; ++slot) {
                const auto& ex = examples[order[cursor + slot]];
                inputs.push_back(
                    example_input(ex, train_config, model_config.input_dim, iteration, slot));
                targets.push_back(ex.labels);
            }
            cursor += take;

            for (auto& ref : tensor_refs(grads)) std::fill(ref.data->begin(), ref.data->end(), 0.0);
            const auto loss = batch_loss_and_grads(result.params, inputs, targets, loss_opts, &grads);
            const double lr = lr_at(train_config, iteration);

            result.log.push_back({iteration, lr, loss.total, loss.comment, loss.reaction,
                                  loss.n_comment, loss.n_reaction});
            sgd_step(result.params, grads, state, lr, train_config.momentum,
                     train_config.weight_decay);
            ++iteration;
        }
        ++epoch;
    }

    result.params.step = train_config.total_iterations;
    return result;
}

void write_train_log_csv(const std::filesystem::path& path,
                         std::span<const TrainLogEntry> entries) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open train log for writing: " + path.string());
    out << "iteration,lr,total_loss,comment_loss,reaction_loss,n_comment,n_reaction\n";
    char buf[512];
    for (const auto& e : entries) {
        std::snprintf(buf, sizeof(buf), "%llu,%.17g,%.17g,%.17g,%.17g,%zu,%zu\n",
                      static_cast<unsigned long long>(e.iteration), e.lr, e.total_loss,
                      e.comment_loss, e.reaction_loss, e.n_comment, e.n_reaction);
        out << buf;
    }
    if (!out) throw IoError("failed writing train log: " + path.string());
}

}  // namespace engage
