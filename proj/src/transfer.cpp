#include "engage/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <unordered_set>

#include "engage/errors.hpp"
#include "engage/losses.hpp"
#include "engage/metrics.hpp"
#include "engage/rng.hpp"
#include "engage/train.hpp"

namespace engage {

using nlohmann::json;

std::string to_string(Protocol p) {
    return p == Protocol::LinearEval ? "linear_eval" : "fine_tune";
}

std::string to_string(Metric m) { return m == Metric::Accuracy ? "accuracy" : "macro_auc"; }

Protocol protocol_from_string(const std::string& s) {
    if (s == "linear_eval") return Protocol::LinearEval;
    if (s == "fine_tune") return Protocol::FineTune;
    throw ConfigError("unknown protocol '" + s + "'");
}

Metric metric_from_string(const std::string& s) {
    if (s == "accuracy") return Metric::Accuracy;
    if (s == "macro_auc") return Metric::MacroAuc;
    throw ConfigError("unknown metric '" + s + "'");
}

std::size_t DownstreamDataset::n_classes() const {
    std::uint32_t max_label = 0;
    for (const auto& ex : examples) max_label = std::max(max_label, ex.label);
    return examples.empty() ? 0 : static_cast<std::size_t>(max_label) + 1;
}

DownstreamDataset load_downstream(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read downstream dataset: " + path.string());
    DownstreamDataset dataset;
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::string context = "downstream line " + std::to_string(line_no);
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw InputError(context + ": " + e.what());
        }
        DownstreamExample ex;
        if (!j.contains("id") || !j.at("id").is_string())
            throw InputError(context + ": missing string field 'id'");
        ex.id = j.at("id").get<std::string>();
        if (!seen.insert(ex.id).second)
            throw InputError(context + ": duplicate example id '" + ex.id + "'");
        if (!j.contains("split") || !j.at("split").is_string())
            throw InputError(context + ": missing string field 'split'");
        ex.split = j.at("split").get<std::string>();
        if (ex.split != "train" && ex.split != "val" && ex.split != "test")
            throw InputError(context + ": split must be train, val, or test");
        if (!j.contains("image")) throw InputError(context + ": missing field 'image'");
        ex.image = image_from_json(j.at("image"), context);
        if (!j.contains("label") || !j.at("label").is_number_unsigned())
            throw InputError(context + ": missing unsigned field 'label'");
        ex.label = j.at("label").get<std::uint32_t>();
        if (j.contains("text_features") && !j.at("text_features").is_null())
            ex.text_features = j.at("text_features").get<std::vector<double>>();
        dataset.examples.push_back(std::move(ex));
    }
    return dataset;
}

void save_downstream(const std::filesystem::path& path, const DownstreamDataset& dataset) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write downstream dataset: " + path.string());
    for (const auto& ex : dataset.examples) {
        json j;
        j["id"] = ex.id;
        j["split"] = ex.split;
        j["image"] = image_to_json(ex.image);
        j["label"] = ex.label;
        if (ex.text_features) j["text_features"] = *ex.text_features;
        out << j.dump() << '\n';
    }
    if (!out) throw IoError("failed writing downstream dataset: " + path.string());
}

void TransferConfig::validate() const {
    if (lr_grid.empty() || wd_grid.empty()) throw ConfigError("hyperparameter grid must be non-empty");
    for (double lr : lr_grid)
        if (!(lr > 0.0)) throw ConfigError("grid learning rates must be positive");
    for (double wd : wd_grid)
        if (wd < 0.0) throw ConfigError("grid weight decays must be non-negative");
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    if (!(momentum >= 0.0) || momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
}

json TransferConfig::to_json() const {
    json j;
    j["protocol"] = engage::to_string(protocol);
    j["metric"] = engage::to_string(metric);
    j["lr_grid"] = lr_grid;
    j["wd_grid"] = wd_grid;
    j["batch_size"] = batch_size;
    j["epochs"] = epochs;
    j["momentum"] = momentum;
    j["multimodal"] = multimodal;
    j["seed"] = seed;
    return j;
}

TransferConfig TransferConfig::from_json(const json& j) {
    TransferConfig c;
    if (j.contains("protocol")) c.protocol = protocol_from_string(j.at("protocol").get<std::string>());
    if (j.contains("metric")) c.metric = metric_from_string(j.at("metric").get<std::string>());
    c.lr_grid = j.value("lr_grid", c.lr_grid);
    c.wd_grid = j.value("wd_grid", c.wd_grid);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.momentum = j.value("momentum", c.momentum);
    c.multimodal = j.value("multimodal", c.multimodal);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
}

std::size_t select_best_cell(std::span<const GridCellResult> grid) {
    if (grid.empty()) throw InputError("cannot select from an empty grid");
    std::size_t best = 0;
    for (std::size_t i = 1; i < grid.size(); ++i) {
        const auto& cand = grid[i];
        const auto& cur = grid[best];
        const bool better = cand.val_metric > cur.val_metric ||
                            (cand.val_metric == cur.val_metric &&
                             (cand.base_lr < cur.base_lr ||
                              (cand.base_lr == cur.base_lr && cand.weight_decay < cur.weight_decay)));
        if (better) best = i;
    }
    return best;
}

namespace {

double population_std(std::span<const double> values) {
    if (values.empty()) throw InputError("standard deviation of an empty axis");
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(values.size());
    return std::sqrt(var);
}

}  // namespace

SensitivityResult sensitivity(std::span<const GridCellResult> grid, std::size_t n_lr,
                              std::size_t n_wd, std::size_t chosen_lr_index,
                              std::size_t chosen_wd_index) {
    if (n_lr == 0 || n_wd == 0) throw InputError("grid axes must be non-empty");
    if (chosen_lr_index >= n_lr || chosen_wd_index >= n_wd)
        throw InputError("chosen cell lies outside the grid");
    std::vector<std::vector<int>> seen(n_lr, std::vector<int>(n_wd, 0));
    std::vector<std::vector<double>> vals(n_lr, std::vector<double>(n_wd, 0.0));
    for (const auto& cell : grid) {
        if (cell.lr_index >= n_lr || cell.wd_index >= n_wd)
            throw InputError("grid cell indices exceed the declared grid shape");
        if (seen[cell.lr_index][cell.wd_index]++)
            throw InputError("duplicate grid cell in sensitivity input");
        vals[cell.lr_index][cell.wd_index] = cell.val_metric;
    }
    if (grid.size() != n_lr * n_wd) throw InputError("incomplete grid in sensitivity input");

    std::vector<double> lr_axis;
    lr_axis.reserve(n_lr);
    for (std::size_t i = 0; i < n_lr; ++i) lr_axis.push_back(vals[i][chosen_wd_index]);
    std::vector<double> wd_axis;
    wd_axis.reserve(n_wd);
    for (std::size_t j = 0; j < n_wd; ++j) wd_axis.push_back(vals[chosen_lr_index][j]);

    return {population_std(lr_axis), population_std(wd_axis)};
}

std::vector<double> concat_features(std::span<const double> image_embedding,
                                    std::span<const double> text_features) {
    std::vector<double> out;
    out.reserve(image_embedding.size() + text_features.size());
    out.insert(out.end(), image_embedding.begin(), image_embedding.end());
    out.insert(out.end(), text_features.begin(), text_features.end());
    return out;
}

void TransferReport::save(const std::filesystem::path& path) const {
    json j;
    j["version"] = 1;
    j["protocol"] = engage::to_string(protocol);
    j["metric"] = engage::to_string(metric);
    json cells = json::array();
    for (const auto& cell : grid) {
        cells.push_back({{"lr_index", cell.lr_index},
                         {"wd_index", cell.wd_index},
                         {"base_lr", cell.base_lr},
                         {"weight_decay", cell.weight_decay},
                         {"val_metric", cell.val_metric}});
    }
    j["grid"] = std::move(cells);
    j["chosen"] = {{"lr_index", chosen_lr_index},
                   {"wd_index", chosen_wd_index},
                   {"base_lr", chosen_base_lr},
                   {"weight_decay", chosen_weight_decay}};
    j["test_metric"] = test_metric;
    j["s_lr"] = s_lr;
    j["s_wd"] = s_wd;
    std::ofstream out(path);
    if (!out) throw IoError("cannot write transfer report: " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw IoError("failed writing transfer report: " + path.string());
}

TransferReport TransferReport::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read transfer report: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw InputError("malformed transfer report " + path.string() + ": " + e.what());
    }
    TransferReport report;
    report.protocol = protocol_from_string(j.at("protocol").get<std::string>());
    report.metric = metric_from_string(j.at("metric").get<std::string>());
    for (const auto& cell : j.at("grid")) {
        report.grid.push_back({cell.at("lr_index").get<std::size_t>(),
                               cell.at("wd_index").get<std::size_t>(),
                               cell.at("base_lr").get<double>(),
                               cell.at("weight_decay").get<double>(),
                               cell.at("val_metric").get<double>()});
    }
    const auto& chosen = j.at("chosen");
    report.chosen_lr_index = chosen.at("lr_index").get<std::size_t>();
    report.chosen_wd_index = chosen.at("wd_index").get<std::size_t>();
    report.chosen_base_lr = chosen.at("base_lr").get<double>();
    report.chosen_weight_decay = chosen.at("weight_decay").get<double>();
    report.test_metric = j.at("test_metric").get<double>();
    report.s_lr = j.at("s_lr").get<double>();
    report.s_wd = j.at("s_wd").get<double>();
    return report;
}

namespace {

struct TaskData {
    std::size_t n_classes = 0;
    std::size_t text_dim = 0;
    std::vector<std::vector<double>> inputs;                // flattened image inputs
    std::vector<const std::vector<double>*> text;           // null when unused
    std::vector<std::uint32_t> labels;
    std::vector<std::size_t> train, val, test;
};

TaskData prepare_task(const ModelParams& encoder, const DownstreamDataset& dataset,
                      const TransferConfig& config) {
    if (dataset.examples.empty()) throw InputError("downstream dataset is empty");

    TaskData task;
    task.inputs.reserve(dataset.examples.size());
    task.text.assign(dataset.examples.size(), nullptr);
    task.labels.reserve(dataset.examples.size());

    const std::size_t input_dim = encoder.config.input_dim;
    bool text_dim_known = false;

    for (std::size_t i = 0; i < dataset.examples.size(); ++i) {
        const auto& ex = dataset.examples[i];
        if (ex.split == "train")
            task.train.push_back(i);
        else if (ex.split == "val")
            task.val.push_back(i);
        else
            task.test.push_back(i);

        if (std::holds_alternative<FeatureVec>(ex.image)) {
            const auto& feats = std::get<FeatureVec>(ex.image);
            if (feats.size() != input_dim)
                throw InputError("example '" + ex.id + "' has " + std::to_string(feats.size()) +
                                 " features, encoder expects " + std::to_string(input_dim));
            task.inputs.push_back(feats);
        } else {
            const auto& raster = std::get<Raster>(ex.image);
            if (raster.pixels.size() != input_dim)
                throw InputError("raster '" + ex.id + "' flattens to " +
                                 std::to_string(raster.pixels.size()) +
                                 " values, encoder expects " + std::to_string(input_dim));
            task.inputs.push_back(raster.pixels);
        }

        task.labels.push_back(ex.label);

        if (config.multimodal) {
            if (!ex.text_features)
                throw InputError("multimodal task but example '" + ex.id +
                                 "' has no text features");
            if (!text_dim_known) {
                task.text_dim = ex.text_features->size();
                text_dim_known = true;
            } else if (ex.text_features->size() != task.text_dim) {
                throw InputError("inconsistent text feature width at example '" + ex.id + "'");
            }
            task.text[i] = &*ex.text_features;
        }
    }

    if (task.train.empty() || task.val.empty() || task.test.empty())
        throw InputError("downstream dataset needs non-empty train, val, and test splits");

    task.n_classes = dataset.n_classes();
    if (task.n_classes < 2) throw InputError("downstream task needs at least two classes");
    return task;
}

// Same weight scheme as the encoder but zero bias: the downstream task
// carries no class-prior assumption.
DenseLayer init_head(std::size_t in, std::size_t out, std::uint64_t seed) {
    DenseLayer head;
    head.in = in;
    head.out = out;
    head.weights.resize(in * out);
    head.bias.assign(out, 0.0);
    Rng rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    for (double& w : head.weights) w = rng.uniform(-bound, bound);
    return head;
}

struct TensorBinding {
    std::string name;
    std::vector<double>* theta;
    const std::vector<double>* grad;
};

void check_finite(const TensorBinding& b) {
    for (double g : *b.grad)
        if (!std::isfinite(g)) throw TrainError("non-finite gradient in tensor '" + b.name + "'");
}

struct SgdState {
    std::vector<std::vector<double>> velocity;
};

void sgd_update(std::vector<TensorBinding>& tensors, SgdState& state, double lr, double momentum,
                double wd) {
    if (state.velocity.empty())
        for (const auto& b : tensors) state.velocity.emplace_back(b.theta->size(), 0.0);
    for (std::size_t t = 0; t < tensors.size(); ++t) {
        check_finite(tensors[t]);
        auto& theta = *tensors[t].theta;
        const auto& grad = *tensors[t].grad;
        auto& vel = state.velocity[t];
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double g = grad[i] + wd * theta[i];
            vel[i] = momentum * vel[i] + g;
            theta[i] -= lr * vel[i];
        }
    }
}

// Adam with decoupled weight decay: the decay term bypasses the moment
// estimates entirely.
struct AdamState {
    std::vector<std::vector<double>> m, v;
    std::uint64_t t = 0;
};

void adamw_update(std::vector<TensorBinding>& tensors, AdamState& state, double lr, double wd) {
    constexpr double kBeta1 = 0.9;
    constexpr double kBeta2 = 0.999;
    constexpr double kEps = 1e-8;
    if (state.m.empty()) {
        for (const auto& b : tensors) {
            state.m.emplace_back(b.theta->size(), 0.0);
            state.v.emplace_back(b.theta->size(), 0.0);
        }
    }
    ++state.t;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(state.t));
    for (std::size_t t = 0; t < tensors.size(); ++t) {
        check_finite(tensors[t]);
        auto& theta = *tensors[t].theta;
        const auto& grad = *tensors[t].grad;
        auto& m = state.m[t];
        auto& v = state.v[t];
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double g = grad[i];
            m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g;
            v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g * g;
            const double m_hat = m[i] / c1;
            const double v_hat = v[i] / c2;
            theta[i] -= lr * (m_hat / (std::sqrt(v_hat) + kEps) + wd * theta[i]);
        }
    }
}

// One optimizer instance per grid cell, switched on modality per the
// training recipe: plain SGD with momentum for image-only tasks, decoupled
// Adam for multimodal ones.
struct CellOptimizer {
    bool multimodal;
    double lr, momentum, wd;
    SgdState sgd;
    AdamState adam;

    void step(std::vector<TensorBinding>& tensors) {
        if (multimodal)
            adamw_update(tensors, adam, lr, wd);
        else
            sgd_update(tensors, sgd, lr, momentum, wd);
    }
};

// dL/dlogits of mean-batch cross entropy for one sample, already scaled.
std::vector<double> scaled_logit_grad(std::span<const double> logits, std::uint32_t label,
                                      double scale) {
    auto probs = softmax(logits);
    probs[label] -= 1.0;
    for (double& p : probs) p *= scale;
    return probs;
}

void accumulate_head(const std::vector<double>& dlogits, std::span<const double> input,
                     DenseLayer& head_grads) {
    for (std::size_t r = 0; r < head_grads.out; ++r) {
        const double g = dlogits[r];
        if (g == 0.0) continue;
        double* row = head_grads.weights.data() + r * head_grads.in;
        for (std::size_t c = 0; c < head_grads.in; ++c) row[c] += g * input[c];
        head_grads.bias[r] += g;
    }
}

std::vector<double> head_input_grad(const DenseLayer& head, const std::vector<double>& dlogits) {
    std::vector<double> grad(head.in, 0.0);
    for (std::size_t r = 0; r < head.out; ++r) {
        const double g = dlogits[r];
        if (g == 0.0) continue;
        const double* row = head.weights.data() + r * head.in;
        for (std::size_t c = 0; c < head.in; ++c) grad[c] += g * row[c];
    }
    return grad;
}

void zero_layer(DenseLayer& layer) {
    std::fill(layer.weights.begin(), layer.weights.end(), 0.0);
    std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
}

double metric_value(Metric metric, std::span<const std::vector<double>> scores,
                    std::span<const std::uint32_t> labels) {
    return metric == Metric::Accuracy ? accuracy(scores, labels) : macro_auc(scores, labels);
}

// Linear protocol: head trained on precomputed frozen features.
DenseLayer train_linear_cell(const std::vector<std::vector<double>>& feats, const TaskData& task,
                             const TransferConfig& config, std::uint64_t cell_seed,
                             double scaled_lr, double wd) {
    DenseLayer head = init_head(feats[task.train.front()].size(), task.n_classes,
                                derive_seed(cell_seed, "head"));
    DenseLayer grads = head;
    zero_layer(grads);
    CellOptimizer opt{config.multimodal, scaled_lr, config.momentum, wd, {}, {}};

    std::vector<std::size_t> order = task.train;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        order = task.train;
        Rng rng(derive_seed(cell_seed, "epoch", epoch));
        rng.shuffle(order);
        std::size_t cursor = 0;
        while (cursor < order.size()) {
            const std::size_t take = std::min(config.batch_size, order.size() - cursor);
            zero_layer(grads);
            const double scale = 1.0 / static_cast<double>(take);
            for (std::size_t s = 0; s < take; ++s) {
                const std::size_t idx = order[cursor + s];
                const auto logits = dense_forward(head, feats[idx]);
                const auto dlogits = scaled_logit_grad(logits, task.labels[idx], scale);
                accumulate_head(dlogits, feats[idx], grads);
            }
            cursor += take;
            std::vector<TensorBinding> bindings = {
                {"head.weight", &head.weights, &grads.weights},
                {"head.bias", &head.bias, &grads.bias}};
            opt.step(bindings);
        }
    }
    return head;
}

struct FineTuneCell {
    ModelParams params;
    DenseLayer head;
};

std::vector<double> fine_tune_features(const TaskData& task, std::size_t idx,
                                       const std::vector<double>& embedding, bool multimodal) {
    if (!multimodal) return embedding;
    return concat_features(embedding, *task.text[idx]);
}

FineTuneCell train_fine_tune_cell(const ModelParams& encoder, const TaskData& task,
                                  const TransferConfig& config, std::uint64_t cell_seed,
                                  double scaled_lr, double wd) {
    FineTuneCell cell{encoder, init_head(encoder.config.embedding_dim + task.text_dim,
                                         task.n_classes, derive_seed(cell_seed, "head"))};
    ModelGrads enc_grads = zero_grads_like(cell.params);
    DenseLayer head_grads = cell.head;
    zero_layer(head_grads);
    CellOptimizer opt{config.multimodal, scaled_lr, config.momentum, wd, {}, {}};
    const std::size_t embed_dim = encoder.config.embedding_dim;

    std::vector<std::size_t> order;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        order = task.train;
        Rng rng(derive_seed(cell_seed, "epoch", epoch));
        rng.shuffle(order);
        std::size_t cursor = 0;
        while (cursor < order.size()) {
            const std::size_t take = std::min(config.batch_size, order.size() - cursor);
            for (auto& layer : enc_grads.encoder) zero_layer(layer);
            zero_layer(head_grads);
            const double scale = 1.0 / static_cast<double>(take);
            for (std::size_t s = 0; s < take; ++s) {
                const std::size_t idx = order[cursor + s];
                const auto trace = encode_traced(cell.params, task.inputs[idx]);
                const auto feat =
                    fine_tune_features(task, idx, trace.embedding, config.multimodal);
                const auto logits = dense_forward(cell.head, feat);
                const auto dlogits = scaled_logit_grad(logits, task.labels[idx], scale);
                accumulate_head(dlogits, feat, head_grads);
                auto feat_grad = head_input_grad(cell.head, dlogits);
                // text features carry no parameters; only the embedding
                // slice flows back into the encoder
                encoder_backward(cell.params, trace,
                                 std::span<const double>(feat_grad.data(), embed_dim),
                                 enc_grads.encoder);
            }
            cursor += take;
            std::vector<TensorBinding> bindings;
            for (std::size_t li = 0; li < cell.params.encoder.size(); ++li) {
                const std::string base = "encoder." + std::to_string(li);
                bindings.push_back({base + ".weight", &cell.params.encoder[li].weights,
                                    &enc_grads.encoder[li].weights});
                bindings.push_back(
                    {base + ".bias", &cell.params.encoder[li].bias, &enc_grads.encoder[li].bias});
            }
            bindings.push_back({"head.weight", &cell.head.weights, &head_grads.weights});
            bindings.push_back({"head.bias", &cell.head.bias, &head_grads.bias});
            opt.step(bindings);
        }
    }
    return cell;
}

std::vector<std::vector<double>> collect_scores(
    const std::vector<std::size_t>& indices,
    const std::function<std::vector<double>(std::size_t)>& score_fn) {
    std::vector<std::vector<double>> scores;
    scores.reserve(indices.size());
    for (auto idx : indices) scores.push_back(score_fn(idx));
    return scores;
}

std::vector<std::uint32_t> collect_labels(const std::vector<std::size_t>& indices,
                                          const TaskData& task) {
    std::vector<std::uint32_t> labels;
    labels.reserve(indices.size());
    for (auto idx : indices) labels.push_back(task.labels[idx]);
    return labels;
}

TransferReport run_transfer(const ModelParams& encoder, const DownstreamDataset& dataset,
                            const TransferConfig& config) {
    config.validate();
    encoder.config.validate();
    const TaskData task = prepare_task(encoder, dataset, config);

    // Frozen-protocol embeddings are computed once; the grid only retrains
    // the head.
    std::vector<std::vector<double>> frozen_feats;
    if (config.protocol == Protocol::LinearEval) {
        frozen_feats.reserve(task.inputs.size());
        for (std::size_t i = 0; i < task.inputs.size(); ++i) {
            auto emb = encode(encoder, task.inputs[i]);
            frozen_feats.push_back(config.multimodal ? concat_features(emb, *task.text[i])
                                                     : std::move(emb));
        }
    }

    TransferReport report;
    report.protocol = config.protocol;
    report.metric = config.metric;

    std::vector<DenseLayer> linear_heads;
    std::vector<FineTuneCell> tuned_cells;

    for (std::size_t i = 0; i < config.lr_grid.size(); ++i) {
        for (std::size_t j = 0; j < config.wd_grid.size(); ++j) {
            const auto cell_seed = derive_seed(config.seed, "cell", i, j);
            const double scaled_lr = base_lr_for_batch(config.lr_grid[i], config.batch_size);
            const double wd = config.wd_grid[j];

            std::function<std::vector<double>(std::size_t)> score_fn;
            if (config.protocol == Protocol::LinearEval) {
                linear_heads.push_back(
                    train_linear_cell(frozen_feats, task, config, cell_seed, scaled_lr, wd));
                const DenseLayer& head = linear_heads.back();
                score_fn = [&](std::size_t idx) { return dense_forward(head, frozen_feats[idx]); };
            } else {
                tuned_cells.push_back(
                    train_fine_tune_cell(encoder, task, config, cell_seed, scaled_lr, wd));
                const FineTuneCell& cell = tuned_cells.back();
                score_fn = [&](std::size_t idx) {
                    const auto emb = encode(cell.params, task.inputs[idx]);
                    return dense_forward(cell.head,
                                         fine_tune_features(task, idx, emb, config.multimodal));
                };
            }

            const auto val_scores = collect_scores(task.val, score_fn);
            const auto val_labels = collect_labels(task.val, task);
            const double val = metric_value(config.metric, val_scores, val_labels);
            report.grid.push_back({i, j, config.lr_grid[i], wd, val});
        }
    }

    const std::size_t best = select_best_cell(report.grid);
    report.chosen_lr_index = report.grid[best].lr_index;
    report.chosen_wd_index = report.grid[best].wd_index;
    report.chosen_base_lr = report.grid[best].base_lr;
    report.chosen_weight_decay = report.grid[best].weight_decay;

    std::function<std::vector<double>(std::size_t)> test_fn;
    if (config.protocol == Protocol::LinearEval) {
        const DenseLayer& head = linear_heads[best];
        test_fn = [&](std::size_t idx) { return dense_forward(head, frozen_feats[idx]); };
    } else {
        const FineTuneCell& cell = tuned_cells[best];
        test_fn = [&](std::size_t idx) {
            const auto emb = encode(cell.params, task.inputs[idx]);
            return dense_forward(cell.head, fine_tune_features(task, idx, emb, config.multimodal));
        };
    }
    const auto test_scores = collect_scores(task.test, test_fn);
    const auto test_labels = collect_labels(task.test, task);
    report.test_metric = metric_value(config.metric, test_scores, test_labels);

    const auto sens = sensitivity(report.grid, config.lr_grid.size(), config.wd_grid.size(),
                                  report.chosen_lr_index, report.chosen_wd_index);
    report.s_lr = sens.s_lr;
    report.s_wd = sens.s_wd;
    return report;
}

}  // namespace

TransferReport linear_eval(const ModelParams& encoder, const DownstreamDataset& dataset,
                           const TransferConfig& config) {
    TransferConfig c = config;
    c.protocol = Protocol::LinearEval;
    return run_transfer(encoder, dataset, c);
}

TransferReport fine_tune(const ModelParams& encoder, const DownstreamDataset& dataset,
                         const TransferConfig& config) {
    TransferConfig c = config;
    c.protocol = Protocol::FineTune;
    return run_transfer(encoder, dataset, c);
}

}  // namespace engage
