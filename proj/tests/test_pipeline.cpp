#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "engage/errors.hpp"
#include "engage/pipeline.hpp"
#include "engage/synth.hpp"
#include "helpers.hpp"

using namespace engage;

namespace {

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE_MESSAGE(bool(in), "missing file " << path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct CliResult {
    int code = -1;
    std::string out;
    std::string err;
};

CliResult run_cli(const std::string& args, const TmpDir& scratch) {
    const auto out_path = scratch / "cli_stdout.txt";
    const auto err_path = scratch / "cli_stderr.txt";
    const std::string cmd = std::string(ENGAGE_CLI_PATH) + " " + args + " >" + out_path.string() +
                            " 2>" + err_path.string();
    const int raw = std::system(cmd.c_str());
    CliResult result;
    if (raw != -1 && WIFEXITED(raw)) result.code = WEXITSTATUS(raw);
    result.out = read_file(out_path);
    result.err = read_file(err_path);
    return result;
}

SynthConfig small_synth() {
    SynthConfig cfg;
    cfg.n_posts = 100;
    cfg.n_classes = 3;
    cfg.feature_dim = 8;
    cfg.min_reactions = 5;
    cfg.max_reactions = 30;
    return cfg;
}

PipelineConfig small_pipeline() {
    PipelineConfig cfg;
    cfg.seed = 11;
    cfg.synth = small_synth();
    cfg.holdout_fraction = 0.15;
    cfg.k_comment = 6;
    cfg.k_reaction = 3;
    cfg.kmeans.restarts = 2;
    cfg.hidden_dims = {16, 16};
    cfg.embedding_dim = 8;
    cfg.train.batch_size = 16;
    cfg.train.total_iterations = 30;
    cfg.train.base_lr = 0.4;
    cfg.transfer.lr_grid = {0.256, 0.0256};
    cfg.transfer.wd_grid = {0.0};
    cfg.transfer.batch_size = 16;
    cfg.transfer.epochs = 2;
    return cfg;
}

}  // namespace

TEST_CASE("synthetic corpora have the advertised shape") {
    auto cfg = small_synth();
    auto corpus = generate_corpus(cfg, 5);

    REQUIRE(corpus.posts.size() == 100);
    REQUIRE(corpus.classes.size() == 100);
    for (std::size_t i = 0; i < corpus.posts.size(); ++i) {
        const auto& post = corpus.posts[i];
        CHECK(post.id.rfind("post", 0) == 0);
        CHECK(std::get<FeatureVec>(post.image).size() == 8);
        CHECK(corpus.classes[i] < 3);
        CHECK(post.comments.size() <= cfg.max_comments);
        std::uint64_t total = 0;
        for (auto c : post.reactions.counts) total += c;
        // non-empty posts respect both engagement ranges
        CHECK(post.comments.size() >= cfg.min_comments);
        CHECK(total >= cfg.min_reactions);
        CHECK(total <= cfg.max_reactions);
    }
    // ids ascend with the post index
    for (std::size_t i = 1; i < corpus.posts.size(); ++i)
        CHECK(corpus.posts[i - 1].id < corpus.posts[i].id);
}

TEST_CASE("synthetic generation is deterministic in the seed") {
    auto cfg = small_synth();
    auto a = generate_corpus(cfg, 9);
    auto b = generate_corpus(cfg, 9);
    auto c = generate_corpus(cfg, 10);

    TmpDir dir("synthdet");
    save_corpus(dir / "a.jsonl", a.posts);
    save_corpus(dir / "b.jsonl", b.posts);
    save_corpus(dir / "c.jsonl", c.posts);
    CHECK(read_file(dir / "a.jsonl") == read_file(dir / "b.jsonl"));
    CHECK(read_file(dir / "a.jsonl") != read_file(dir / "c.jsonl"));
    CHECK(a.classes == b.classes);
}

TEST_CASE("empty-engagement posts carry no comments and no reactions") {
    auto cfg = small_synth();
    cfg.empty_engagement_fraction = 1.0;
    auto corpus = generate_corpus(cfg, 3);
    for (const auto& post : corpus.posts) {
        CHECK(post.comments.empty());
        CHECK(post.reactions.all_zero());
    }

    cfg.empty_engagement_fraction = 0.3;
    auto mixed = generate_corpus(cfg, 3);
    std::size_t empty = 0;
    for (const auto& post : mixed.posts)
        if (post.comments.empty() && post.reactions.all_zero()) ++empty;
    CHECK(empty > 10);
    CHECK(empty < 60);
}

TEST_CASE("class sidecar round-trips") {
    auto corpus = generate_corpus(small_synth(), 7);
    TmpDir dir("classes");
    save_classes(dir / "classes.jsonl", corpus);
    auto loaded = load_classes(dir / "classes.jsonl");
    REQUIRE(loaded.size() == corpus.posts.size());
    for (std::size_t i = 0; i < loaded.size(); ++i) {
        CHECK(loaded[i].first == corpus.posts[i].id);
        CHECK(loaded[i].second == corpus.classes[i]);
    }
}

TEST_CASE("synth config validation") {
    auto cfg = small_synth();
    CHECK_NOTHROW(cfg.validate());
    auto bad = cfg;
    bad.n_posts = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.n_classes = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.min_comments = 5;
    bad.max_comments = 4;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.empty_engagement_fraction = 1.5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    auto j = cfg.to_json();
    auto back = SynthConfig::from_json(j);
    CHECK(back.n_posts == cfg.n_posts);
    CHECK(back.feature_dim == cfg.feature_dim);
    CHECK(back.max_reactions == cfg.max_reactions);
}

TEST_CASE("downstream construction splits by rounded fractions, sorted by id") {
    auto corpus = generate_corpus(small_synth(), 13);
    DownstreamSynthConfig cfg;
    cfg.train_fraction = 0.7;
    cfg.val_fraction = 0.1;
    auto ds = make_downstream(corpus, cfg, 21);

    REQUIRE(ds.examples.size() == 100);
    std::size_t n_train = 0, n_val = 0, n_test = 0;
    for (const auto& ex : ds.examples) {
        if (ex.split == "train") ++n_train;
        if (ex.split == "val") ++n_val;
        if (ex.split == "test") ++n_test;
    }
    CHECK(n_train == 70);
    CHECK(n_val == 10);
    CHECK(n_test == 20);

    for (std::size_t i = 1; i < ds.examples.size(); ++i)
        CHECK(ds.examples[i - 1].id < ds.examples[i].id);

    // labels come from the class sidecar
    std::map<std::string, std::uint32_t> truth;
    for (std::size_t i = 0; i < corpus.posts.size(); ++i)
        truth[corpus.posts[i].id] = corpus.classes[i];
    for (const auto& ex : ds.examples) {
        CHECK(ex.label == truth.at(ex.id));
        CHECK(!ex.text_features.has_value());
    }
}

TEST_CASE("downstream text features are noisy one-hot class encodings") {
    auto corpus = generate_corpus(small_synth(), 17);
    DownstreamSynthConfig cfg;
    cfg.text_features = true;
    cfg.text_noise = 0.05;
    auto ds = make_downstream(corpus, cfg, 23);

    for (const auto& ex : ds.examples) {
        REQUIRE(ex.text_features.has_value());
        REQUIRE(ex.text_features->size() == 3);
        // the hot coordinate dominates at low noise
        std::size_t argmax = 0;
        for (std::size_t i = 1; i < 3; ++i)
            if ((*ex.text_features)[i] > (*ex.text_features)[argmax]) argmax = i;
        CHECK(argmax == ex.label);
    }

    auto again = make_downstream(corpus, cfg, 23);
    for (std::size_t i = 0; i < ds.examples.size(); ++i)
        CHECK(ds.examples[i].text_features == again.examples[i].text_features);
}

TEST_CASE("pipeline config round-trips through its file form") {
    auto cfg = small_pipeline();
    TmpDir dir("cfg");
    auto path = dir / "config.json";
    cfg.save(path);
    auto loaded = PipelineConfig::load(path);

    CHECK(loaded.seed == cfg.seed);
    CHECK(loaded.holdout_fraction == cfg.holdout_fraction);
    CHECK(loaded.k_comment == cfg.k_comment);
    CHECK(loaded.k_reaction == cfg.k_reaction);
    CHECK(loaded.hidden_dims == cfg.hidden_dims);
    CHECK(loaded.embedding_dim == cfg.embedding_dim);
    CHECK(loaded.train.total_iterations == cfg.train.total_iterations);
    CHECK(loaded.transfer.lr_grid == cfg.transfer.lr_grid);
    CHECK(loaded.synth.n_posts == cfg.synth.n_posts);

    auto bad = cfg;
    bad.holdout_fraction = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.k_comment = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.projection.enabled = true;
    bad.projection.dim = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    CHECK_THROWS_AS(PipelineConfig::load(dir / "nope.json"), IoError);
}

TEST_CASE("an output directory can only be locked once") {
    TmpDir dir("lock");
    auto acquire = [&] { DirLock lock(dir.path()); };

    {
        DirLock held(dir.path());
        CHECK(std::filesystem::exists(dir / ".engage.lock"));
        CHECK_THROWS_AS(acquire(), StateError);
    }
    // released on destruction: the file is gone and the lock is free again
    CHECK(!std::filesystem::exists(dir / ".engage.lock"));
    CHECK_NOTHROW(acquire());
}

TEST_CASE("pipeline stages write their artifacts and rerun byte-identically") {
    auto cfg = small_pipeline();
    TmpDir dir("stages");
    PipelinePaths paths{dir.path()};

    run_synth(cfg, paths);
    CHECK(std::filesystem::exists(paths.corpus()));
    CHECK(std::filesystem::exists(paths.classes()));
    CHECK(std::filesystem::exists(paths.downstream()));

    run_cluster_fit(cfg, paths);
    CHECK(std::filesystem::exists(paths.split()));
    CHECK(std::filesystem::exists(paths.vocab()));
    CHECK(std::filesystem::exists(paths.comment_clusters()));
    CHECK(std::filesystem::exists(paths.reaction_clusters()));

    run_label(cfg, paths);
    CHECK(std::filesystem::exists(paths.labels()));

    run_pretrain(cfg, paths);
    CHECK(std::filesystem::exists(paths.checkpoint()));
    CHECK(std::filesystem::exists(paths.train_log()));

    run_transfer(cfg, paths);
    CHECK(std::filesystem::exists(paths.report()));

    // snapshot, rerun every stage on the same inputs, compare bytes
    const std::vector<std::filesystem::path> artifacts = {
        paths.split(),          paths.vocab(),     paths.comment_clusters(),
        paths.reaction_clusters(), paths.labels(), paths.checkpoint(),
        paths.train_log(),      paths.report()};
    std::vector<std::string> snapshot;
    for (const auto& p : artifacts) snapshot.push_back(read_file(p));

    run_cluster_fit(cfg, paths);
    run_label(cfg, paths);
    run_pretrain(cfg, paths);
    run_transfer(cfg, paths);
    for (std::size_t i = 0; i < artifacts.size(); ++i)
        CHECK_MESSAGE(read_file(artifacts[i]) == snapshot[i],
                      "artifact differs: " << artifacts[i].string());

    // a reaction model with k=3 over 5-dimensional unit count vectors
    auto reaction_model = ClusterModel::load(paths.reaction_clusters());
    CHECK(reaction_model.kind == FeatureKind::Reaction);
    CHECK(reaction_model.dim == 5);

    // label targets only reference valid cluster indices
    auto comment_model = ClusterModel::load(paths.comment_clusters());
    for (const auto& rec : load_labels(paths.labels())) {
        if (rec.labels.comment_target)
            for (const auto& [cls, w] : *rec.labels.comment_target) CHECK(cls < comment_model.k);
        if (rec.labels.reaction_label) CHECK(*rec.labels.reaction_label < reaction_model.k);
    }
}

TEST_CASE("label stage rejects a missing corpus via the CLI with a clear error") {
    TmpDir dir("cli_err");
    auto result = run_cli("--out " + (dir / "work").string() + " cluster-fit", dir);
    CHECK(result.code == 1);
    CHECK(result.err.find("error:") != std::string::npos);
}

TEST_CASE("unknown subcommands fail parsing") {
    TmpDir dir("cli_bad");
    auto result = run_cli("frobnicate", dir);
    CHECK(result.code != 0);
}

TEST_CASE("the full CLI chain runs green on a small config") {
    TmpDir dir("cli_chain");
    auto cfg = small_pipeline();
    const auto cfg_path = dir / "config.json";
    cfg.save(cfg_path);
    const auto work = (dir / "work").string();
    const std::string base = "--config " + cfg_path.string() + " --out " + work + " ";

    for (const char* stage : {"synth", "cluster-fit", "label", "pretrain", "transfer"}) {
        auto result = run_cli(base + stage, dir);
        CHECK_MESSAGE(result.code == 0, "stage " << stage << " failed: " << result.err);
    }
    CHECK(std::filesystem::exists(std::filesystem::path(work) / "report.json"));

    // seed override changes the artifacts
    const auto work2 = (dir / "work2").string();
    const std::string base2 = "--config " + cfg_path.string() + " --seed 99 --out " + work2 + " ";
    for (const char* stage : {"synth", "cluster-fit", "label", "pretrain", "transfer"}) {
        auto result = run_cli(base2 + stage, dir);
        REQUIRE(result.code == 0);
    }
    CHECK(read_file(std::filesystem::path(work) / "checkpoint.json") !=
          read_file(std::filesystem::path(work2) / "checkpoint.json"));
}
