#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "engage/corpus.hpp"
#include "engage/model.hpp"

namespace engage {

enum class Protocol { LinearEval, FineTune };
enum class Metric { Accuracy, MacroAuc };

std::string to_string(Protocol p);
std::string to_string(Metric m);
Protocol protocol_from_string(const std::string& s);
Metric metric_from_string(const std::string& s);

struct DownstreamExample {
    std::string id;
    std::string split;  // "train" | "val" | "test"
    std::variant<Raster, FeatureVec> image;
    std::uint32_t label = 0;
    std::optional<std::vector<double>> text_features;
};

struct DownstreamDataset {
    std::vector<DownstreamExample> examples;
    std::size_t n_classes() const;  // max label + 1
};

DownstreamDataset load_downstream(const std::filesystem::path& path);
void save_downstream(const std::filesystem::path& path, const DownstreamDataset& dataset);

struct TransferConfig {
    Protocol protocol = Protocol::LinearEval;
    Metric metric = Metric::Accuracy;
    std::vector<double> lr_grid = {0.025, 0.0025, 0.00025};
    std::vector<double> wd_grid = {0.01, 0.001, 0.0001};
    std::size_t batch_size = 64;
    std::size_t epochs = 5;
    double momentum = 0.9;
    bool multimodal = false;
    std::uint64_t seed = 1;

    void validate() const;
    nlohmann::json to_json() const;
    static TransferConfig from_json(const nlohmann::json& j);
};

struct GridCellResult {
    std::size_t lr_index = 0;
    std::size_t wd_index = 0;
    double base_lr = 0.0;
    double weight_decay = 0.0;
    double val_metric = 0.0;
};

// Index into grid of the winning cell: highest val metric, ties broken by
// smaller base LR value, then smaller weight decay value.
std::size_t select_best_cell(std::span<const GridCellResult> grid);

struct SensitivityResult {
    double s_lr = 0.0;
    double s_wd = 0.0;
};
// Population standard deviation of val metrics along one hyperparameter
// axis while the other axis is held at the chosen value. The grid must
// contain exactly one cell per (lr, wd) pair.
SensitivityResult sensitivity(std::span<const GridCellResult> grid, std::size_t n_lr,
                              std::size_t n_wd, std::size_t chosen_lr_index,
                              std::size_t chosen_wd_index);

// Ordered concatenation, image embedding first.
std::vector<double> concat_features(std::span<const double> image_embedding,
                                    std::span<const double> text_features);

struct TransferReport {
    Protocol protocol = Protocol::LinearEval;
    Metric metric = Metric::Accuracy;
    std::vector<GridCellResult> grid;
    std::size_t chosen_lr_index = 0;
    std::size_t chosen_wd_index = 0;
    double chosen_base_lr = 0.0;
    double chosen_weight_decay = 0.0;
    double test_metric = 0.0;
    double s_lr = 0.0;
    double s_wd = 0.0;

    void save(const std::filesystem::path& path) const;
    static TransferReport load(const std::filesystem::path& path);
};

// Trains a fresh linear head per grid cell on frozen encoder embeddings
// (concatenated with text features on multimodal tasks); never touches the
// encoder weights.
TransferReport linear_eval(const ModelParams& encoder, const DownstreamDataset& dataset,
                           const TransferConfig& config);

// End-to-end training of a per-cell encoder copy plus head. Image-only
// tasks use SGD with momentum, multimodal tasks use Adam with decoupled
// weight decay; linear_eval follows the same optimizer split.
TransferReport fine_tune(const ModelParams& encoder, const DownstreamDataset& dataset,
                         const TransferConfig& config);

}  // namespace engage
