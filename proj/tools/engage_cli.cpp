#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "engage/pipeline.hpp"

int main(int argc, char** argv) {
    CLI::App app{"engagement-supervised pretraining pipeline"};
    app.fallthrough();
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = "out";
    std::uint64_t seed = 1;
    auto* config_opt = app.add_option("--config", config_path, "pipeline config file (JSON)");
    auto* seed_opt = app.add_option("--seed", seed, "global seed override");
    app.add_option("--out", out_dir, "output directory for all artifacts");

    auto* synth_cmd =
        app.add_subcommand("synth", "generate a synthetic corpus, class sidecar, and downstream task");
    std::uint64_t n_posts = 0, n_classes = 0;
    double noise = 0.0;
    auto* posts_opt = synth_cmd->add_option("--posts", n_posts, "number of posts");
    auto* classes_opt = synth_cmd->add_option("--classes", n_classes, "number of latent classes");
    auto* noise_opt = synth_cmd->add_option("--noise", noise, "noise level");

    auto* fit_cmd = app.add_subcommand(
        "cluster-fit", "split the corpus and fit vocabulary plus cluster models on the holdout");
    std::uint64_t k_comment = 0, k_reaction = 0;
    auto* kc_opt = fit_cmd->add_option("--k-comment", k_comment, "comment cluster count");
    auto* kr_opt = fit_cmd->add_option("--k-reaction", k_reaction, "reaction cluster count");

    app.add_subcommand("label", "pseudo-label the training split with cluster assignments");

    auto* pretrain_cmd =
        app.add_subcommand("pretrain", "train the encoder on pseudo-labels, write a checkpoint");
    std::uint64_t iterations = 0, batch_size = 0;
    auto* iters_opt = pretrain_cmd->add_option("--iterations", iterations, "total iterations");
    auto* batch_opt = pretrain_cmd->add_option("--batch-size", batch_size, "batch size");

    auto* transfer_cmd =
        app.add_subcommand("transfer", "evaluate the checkpoint on the downstream task");
    std::string protocol, metric;
    std::uint64_t epochs = 0;
    auto* protocol_opt =
        transfer_cmd->add_option("--protocol", protocol, "linear_eval or fine_tune");
    auto* metric_opt = transfer_cmd->add_option("--metric", metric, "accuracy or macro_auc");
    auto* epochs_opt = transfer_cmd->add_option("--epochs", epochs, "training epochs per grid cell");

    CLI11_PARSE(app, argc, argv);

    try {
        engage::PipelineConfig config;
        if (config_opt->count()) config = engage::PipelineConfig::load(config_path);
        if (seed_opt->count()) config.seed = seed;

        if (posts_opt->count()) config.synth.n_posts = n_posts;
        if (classes_opt->count()) config.synth.n_classes = n_classes;
        if (noise_opt->count()) config.synth.noise = noise;
        if (kc_opt->count()) config.k_comment = k_comment;
        if (kr_opt->count()) config.k_reaction = k_reaction;
        if (iters_opt->count()) config.train.total_iterations = iterations;
        if (batch_opt->count()) config.train.batch_size = batch_size;
        if (protocol_opt->count())
            config.transfer.protocol = engage::protocol_from_string(protocol);
        if (metric_opt->count()) config.transfer.metric = engage::metric_from_string(metric);
        if (epochs_opt->count()) config.transfer.epochs = epochs;
        config.validate();

        const engage::PipelinePaths paths{out_dir};
        const std::string stage = app.get_subcommands().front()->get_name();
        if (stage == "synth")
            engage::run_synth(config, paths);
        else if (stage == "cluster-fit")
            engage::run_cluster_fit(config, paths);
        else if (stage == "label")
            engage::run_label(config, paths);
        else if (stage == "pretrain")
            engage::run_pretrain(config, paths);
        else
            engage::run_transfer(config, paths);
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
