#include "engage/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <fstream>
#include <unordered_map>

#include "engage/errors.hpp"
#include "engage/labeling.hpp"
#include "engage/log.hpp"
#include "engage/rng.hpp"

namespace engage {

using nlohmann::json;

namespace {

json vocab_config_to_json(const VocabConfig& c) {
    return {{"min_token_length", c.min_token_length},
            {"min_df", c.min_df},
            {"max_terms", c.max_terms}};
}

VocabConfig vocab_config_from_json(const json& j) {
    VocabConfig c;
    c.min_token_length = j.value("min_token_length", c.min_token_length);
    c.min_df = j.value("min_df", c.min_df);
    c.max_terms = j.value("max_terms", c.max_terms);
    return c;
}

json kmeans_config_to_json(const KmeansConfig& c) {
    return {{"max_iters", c.max_iters},
            {"tol", c.tol},
            {"restarts", c.restarts},
            {"minibatch_size", c.minibatch_size},
            {"check_monotonic", c.check_monotonic}};
}

KmeansConfig kmeans_config_from_json(const json& j) {
    KmeansConfig c;
    c.max_iters = j.value("max_iters", c.max_iters);
    c.tol = j.value("tol", c.tol);
    c.restarts = j.value("restarts", c.restarts);
    c.minibatch_size = j.value("minibatch_size", c.minibatch_size);
    c.check_monotonic = j.value("check_monotonic", c.check_monotonic);
    return c;
}

json augment_config_to_json(const AugmentConfig& c) {
    return {{"scale_min", c.scale_min},   {"scale_max", c.scale_max},
            {"aspect_min", c.aspect_min}, {"aspect_max", c.aspect_max},
            {"hflip_prob", c.hflip_prob}, {"out_height", c.out_height},
            {"out_width", c.out_width}};
}

AugmentConfig augment_config_from_json(const json& j) {
    AugmentConfig c;
    c.scale_min = j.value("scale_min", c.scale_min);
    c.scale_max = j.value("scale_max", c.scale_max);
    c.aspect_min = j.value("aspect_min", c.aspect_min);
    c.aspect_max = j.value("aspect_max", c.aspect_max);
    c.hflip_prob = j.value("hflip_prob", c.hflip_prob);
    c.out_height = j.value("out_height", c.out_height);
    c.out_width = j.value("out_width", c.out_width);
    return c;
}

json train_config_to_json(const TrainConfig& c) {
    json j;
    j["batch_size"] = c.batch_size;
    j["total_iterations"] = c.total_iterations;
    j["base_lr"] = c.base_lr;
    j["warmup_fraction"] = c.warmup_fraction;
    j["decay_milestones"] = c.decay_milestones;
    j["decay_factor"] = c.decay_factor;
    j["momentum"] = c.momentum;
    j["weight_decay"] = c.weight_decay;
    j["lambda_comment"] = c.lambda_comment;
    j["lambda_reaction"] = c.lambda_reaction;
    j["augment_rasters"] = c.augment_rasters;
    j["augment"] = augment_config_to_json(c.augment);
    return j;
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig c;
    c.batch_size = j.value("batch_size", c.batch_size);
    c.total_iterations = j.value("total_iterations", c.total_iterations);
    c.base_lr = j.value("base_lr", c.base_lr);
    c.warmup_fraction = j.value("warmup_fraction", c.warmup_fraction);
    c.decay_milestones = j.value("decay_milestones", c.decay_milestones);
    c.decay_factor = j.value("decay_factor", c.decay_factor);
    c.momentum = j.value("momentum", c.momentum);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.lambda_comment = j.value("lambda_comment", c.lambda_comment);
    c.lambda_reaction = j.value("lambda_reaction", c.lambda_reaction);
    c.augment_rasters = j.value("augment_rasters", c.augment_rasters);
    if (j.contains("augment")) c.augment = augment_config_from_json(j.at("augment"));
    return c;
}

}  // namespace

void PipelineConfig::validate() const {
    if (!(holdout_fraction > 0.0) || !(holdout_fraction < 1.0))
        throw ConfigError("holdout fraction must lie strictly between 0 and 1");
    if (max_comments == 0) throw ConfigError("per-post comment cap must be positive");
    if (k_comment == 0 || k_reaction == 0) throw ConfigError("cluster counts must be positive");
    if (vocab.min_token_length == 0) throw ConfigError("minimum token length must be positive");
    if (vocab.min_df == 0) throw ConfigError("minimum document frequency must be positive");
    if (projection.enabled && projection.dim == 0)
        throw ConfigError("projection dimension must be positive");
    if (kmeans.max_iters == 0) throw ConfigError("kmeans iteration cap must be positive");
    if (kmeans.tol < 0.0) throw ConfigError("kmeans tolerance must be non-negative");
    if (kmeans.restarts == 0) throw ConfigError("kmeans needs at least one restart");
    if (embedding_dim == 0) throw ConfigError("embedding dimension must be positive");
    for (auto h : hidden_dims)
        if (h == 0) throw ConfigError("hidden dims must be positive");
    if (!(head_bias_prior > 0.0) || !(head_bias_prior < 1.0))
        throw ConfigError("head bias prior must lie strictly between 0 and 1");
    train.validate();
    transfer.validate();
    synth.validate();
    downstream.validate();
}

json PipelineConfig::to_json() const {
    json j;
    j["seed"] = seed;
    j["holdout_fraction"] = holdout_fraction;
    j["max_comments"] = max_comments;
    j["k_comment"] = k_comment;
    j["k_reaction"] = k_reaction;
    j["vocab"] = vocab_config_to_json(vocab);
    j["projection"] = {{"enabled", projection.enabled}, {"dim", projection.dim}};
    j["kmeans"] = kmeans_config_to_json(kmeans);
    j["model"] = {{"hidden_dims", hidden_dims},
                  {"embedding_dim", embedding_dim},
                  {"head_bias_prior", head_bias_prior}};
    j["train"] = train_config_to_json(train);
    j["transfer"] = transfer.to_json();
    j["synth"] = synth.to_json();
    j["downstream"] = downstream.to_json();
    return j;
}

PipelineConfig PipelineConfig::from_json(const json& j) {
    PipelineConfig c;
    c.seed = j.value("seed", c.seed);
    c.holdout_fraction = j.value("holdout_fraction", c.holdout_fraction);
    c.max_comments = j.value("max_comments", c.max_comments);
    c.k_comment = j.value("k_comment", c.k_comment);
    c.k_reaction = j.value("k_reaction", c.k_reaction);
    if (j.contains("vocab")) c.vocab = vocab_config_from_json(j.at("vocab"));
    if (j.contains("projection")) {
        c.projection.enabled = j.at("projection").value("enabled", c.projection.enabled);
        c.projection.dim = j.at("projection").value("dim", c.projection.dim);
    }
    if (j.contains("kmeans")) c.kmeans = kmeans_config_from_json(j.at("kmeans"));
    if (j.contains("model")) {
        const auto& m = j.at("model");
        c.hidden_dims = m.value("hidden_dims", c.hidden_dims);
        c.embedding_dim = m.value("embedding_dim", c.embedding_dim);
        c.head_bias_prior = m.value("head_bias_prior", c.head_bias_prior);
    }
    if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
    if (j.contains("transfer")) c.transfer = TransferConfig::from_json(j.at("transfer"));
    if (j.contains("synth")) c.synth = SynthConfig::from_json(j.at("synth"));
    if (j.contains("downstream"))
        c.downstream = DownstreamSynthConfig::from_json(j.at("downstream"));
    c.validate();
    return c;
}

void PipelineConfig::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write config: " + path.string());
    out << to_json().dump(2) << '\n';
    if (!out) throw IoError("failed writing config: " + path.string());
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("malformed config " + path.string() + ": " + e.what());
    }
    return from_json(j);
}

DirLock::DirLock(const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    path_ = dir / ".engage.lock";
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0)
        throw StateError("output directory is locked by another run (remove " + path_.string() +
                         " if stale)");
}

DirLock::~DirLock() {
    if (fd_ >= 0) {
        ::close(fd_);
        ::unlink(path_.c_str());
    }
}

void run_synth(const PipelineConfig& config, const PipelinePaths& paths) {
    config.validate();
    DirLock lock(paths.out_dir);

    const auto corpus = generate_corpus(config.synth, derive_seed(config.seed, "synth"));
    save_corpus(paths.corpus(), corpus.posts);
    save_classes(paths.classes(), corpus);
    const auto downstream =
        make_downstream(corpus, config.downstream, derive_seed(config.seed, "downstream"));
    save_downstream(paths.downstream(), downstream);

    // Schema validation: every artifact must read back cleanly.
    const auto posts = load_corpus(paths.corpus());
    load_classes(paths.classes());
    load_downstream(paths.downstream());
    log_info("synth wrote " + std::to_string(posts.size()) + " posts and " +
             std::to_string(downstream.examples.size()) + " downstream examples");
}

namespace {

std::unordered_map<std::string, std::size_t> index_posts(std::span<const Post> posts) {
    std::unordered_map<std::string, std::size_t> by_id;
    by_id.reserve(posts.size());
    for (std::size_t i = 0; i < posts.size(); ++i) by_id[posts[i].id] = i;
    return by_id;
}

std::uint32_t clamped_k(std::size_t requested, std::size_t distinct, const char* what) {
    if (distinct < requested) {
        log_warn(std::string(what) + " clusters clamped from " + std::to_string(requested) +
                 " to " + std::to_string(distinct) + " (distinct feature count at this scale)");
        return static_cast<std::uint32_t>(distinct);
    }
    return static_cast<std::uint32_t>(requested);
}

}  // namespace

void run_cluster_fit(const PipelineConfig& config, const PipelinePaths& paths) {
    config.validate();
    DirLock lock(paths.out_dir);

    const auto posts = load_corpus(paths.corpus());
    const auto split =
        split_corpus(posts, config.holdout_fraction, derive_seed(config.seed, "split"));
    split.save(paths.split(), config.holdout_fraction, config.seed);

    const auto by_id = index_posts(posts);
    const auto sample_seed = derive_seed(config.seed, "cluster_fit");

    // The same per-post comment cap used at labeling time applies here, so
    // vocabulary and clusters see the sampled view of each post.
    std::vector<std::vector<std::string>> sampled_per_post;
    std::vector<std::string> fit_comments;
    sampled_per_post.reserve(split.cluster_fit_ids.size());
    for (const auto& id : split.cluster_fit_ids) {
        const Post& post = posts[by_id.at(id)];
        auto sampled =
            sample_comments(post, config.max_comments, derive_seed(sample_seed, post.id));
        fit_comments.insert(fit_comments.end(), sampled.begin(), sampled.end());
        sampled_per_post.push_back(std::move(sampled));
    }

    Vocabulary vocab = fit_vocabulary(fit_comments, config.vocab);
    vocab.fit_post_ids = split.cluster_fit_ids;
    if (vocab.size() == 0) throw FitError("holdout comments produced an empty vocabulary");

    RandomProjection projection;
    const RandomProjection* proj_ptr = nullptr;
    if (config.projection.enabled) {
        projection = RandomProjection::make(vocab.size(), config.projection.dim,
                                            derive_seed(config.seed, "projection"));
        proj_ptr = &projection;
    }

    std::vector<EngagementVector> comment_vecs;
    for (const auto& sampled : sampled_per_post) {
        for (const auto& text : sampled) {
            auto vec = embed_comment(text, vocab, proj_ptr);
            if (!zero_embedding(vec)) comment_vecs.push_back(std::move(vec));
        }
    }
    if (comment_vecs.empty())
        throw FitError("no holdout comment produced a nonzero embedding");

    std::vector<EngagementVector> reaction_vecs;
    for (const auto& id : split.cluster_fit_ids) {
        const Post& post = posts[by_id.at(id)];
        if (auto vec = normalize_reactions(post.reactions)) reaction_vecs.push_back(std::move(*vec));
    }
    if (reaction_vecs.empty()) throw FitError("no holdout post carries reactions");

    const auto k_c = clamped_k(config.k_comment, count_distinct(comment_vecs), "comment");
    auto comment_model =
        fit_clusters(comment_vecs, k_c, derive_seed(config.seed, "comment_kmeans"), config.kmeans);
    comment_model.fit_post_ids = split.cluster_fit_ids;

    const auto k_r = clamped_k(config.k_reaction, count_distinct(reaction_vecs), "reaction");
    auto reaction_model = fit_clusters(reaction_vecs, k_r,
                                       derive_seed(config.seed, "reaction_kmeans"), config.kmeans);
    reaction_model.fit_post_ids = split.cluster_fit_ids;

    vocab.save(paths.vocab());
    comment_model.save(paths.comment_clusters());
    reaction_model.save(paths.reaction_clusters());

    Vocabulary::load(paths.vocab());
    ClusterModel::load(paths.comment_clusters());
    ClusterModel::load(paths.reaction_clusters());
    CorpusSplit::load(paths.split());
    log_info("cluster fit: vocabulary " + std::to_string(vocab.size()) + " terms, " +
             std::to_string(comment_model.k) + " comment clusters, " +
             std::to_string(reaction_model.k) + " reaction clusters");
}

void run_label(const PipelineConfig& config, const PipelinePaths& paths) {
    config.validate();
    DirLock lock(paths.out_dir);

    const auto posts = load_corpus(paths.corpus());
    const auto split = CorpusSplit::load(paths.split());
    const auto vocab = Vocabulary::load(paths.vocab());
    const auto comment_model = ClusterModel::load(paths.comment_clusters());
    const auto reaction_model = ClusterModel::load(paths.reaction_clusters());

    RandomProjection projection;
    const RandomProjection* proj_ptr = nullptr;
    if (config.projection.enabled) {
        projection = RandomProjection::make(vocab.size(), config.projection.dim,
                                            derive_seed(config.seed, "projection"));
        proj_ptr = &projection;
    }

    const auto dataset =
        build_dataset(posts, split, comment_model, reaction_model, vocab,
                      derive_seed(config.seed, "labeling"), config.max_comments, proj_ptr);
    if (dataset.examples.empty())
        throw FitError("labeling excluded every training post; nothing to pretrain on");
    save_labels(paths.labels(), dataset);

    load_labels(paths.labels());
    log_info("labeled " + std::to_string(dataset.examples.size()) + " posts (" +
             std::to_string(dataset.excluded_posts) + " excluded)");
}

void run_pretrain(const PipelineConfig& config, const PipelinePaths& paths) {
    config.validate();
    DirLock lock(paths.out_dir);

    const auto posts = load_corpus(paths.corpus());
    const auto records = load_labels(paths.labels());
    if (records.empty()) throw InputError("label file is empty");
    const auto comment_model = ClusterModel::load(paths.comment_clusters());
    const auto reaction_model = ClusterModel::load(paths.reaction_clusters());

    const auto by_id = index_posts(posts);
    LabeledDataset dataset;
    dataset.examples.reserve(records.size());
    for (const auto& rec : records) {
        auto it = by_id.find(rec.id);
        if (it == by_id.end())
            throw InputError("label record '" + rec.id + "' has no matching corpus post");
        dataset.examples.push_back({rec.id, it->second, rec.labels});
    }
    const auto examples = make_training_examples(posts, dataset);

    ModelConfig model_config;
    model_config.hidden_dims = config.hidden_dims;
    model_config.embedding_dim = config.embedding_dim;
    model_config.head_bias_prior = config.head_bias_prior;
    model_config.k_comment = comment_model.k;
    model_config.k_reaction = reaction_model.k;

    // Input width comes from the data: feature posts use their vector size,
    // raster posts their flattened size (after augmentation if enabled).
    const auto& first = examples.front();
    if (std::holds_alternative<FeatureVec>(first.image)) {
        model_config.input_dim = std::get<FeatureVec>(first.image).size();
    } else {
        const auto& raster = std::get<Raster>(first.image);
        model_config.input_dim =
            config.train.augment_rasters
                ? config.train.augment.out_height * config.train.augment.out_width *
                      raster.channels
                : raster.pixels.size();
    }

    TrainConfig train_config = config.train;
    train_config.seed = derive_seed(config.seed, "pretrain");

    const auto result = pretrain(examples, model_config, train_config);
    save_checkpoint(paths.checkpoint(), result.params);
    write_train_log_csv(paths.train_log(), result.log);

    load_checkpoint(paths.checkpoint());
    log_info("pretrained for " + std::to_string(train_config.total_iterations) +
             " iterations over " + std::to_string(examples.size()) + " examples");
}

void run_transfer(const PipelineConfig& config, const PipelinePaths& paths) {
    config.validate();
    DirLock lock(paths.out_dir);

    const auto params = load_checkpoint(paths.checkpoint());
    const auto dataset = load_downstream(paths.downstream());

    TransferConfig transfer_config = config.transfer;
    transfer_config.seed = derive_seed(config.seed, "transfer");

    const auto report = transfer_config.protocol == Protocol::LinearEval
                            ? linear_eval(params, dataset, transfer_config)
                            : fine_tune(params, dataset, transfer_config);
    report.save(paths.report());

    TransferReport::load(paths.report());
    log_info("transfer " + to_string(transfer_config.protocol) + ": test " +
             to_string(transfer_config.metric) + " = " + std::to_string(report.test_metric));
}

}  // namespace engage
