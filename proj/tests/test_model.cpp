#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <vector>

#include "engage/errors.hpp"
#include "engage/losses.hpp"
#include "engage/model.hpp"
#include "engage/rng.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace engage;

namespace {

ModelConfig small_config() {
    ModelConfig cfg;
    cfg.input_dim = 5;
    cfg.hidden_dims = {4};
    cfg.embedding_dim = 3;
    cfg.k_comment = 3;
    cfg.k_reaction = 2;
    return cfg;
}

PseudoLabels comment_only(std::map<std::uint32_t, double> t) {
    PseudoLabels l;
    l.comment_target = std::move(t);
    return l;
}

PseudoLabels reaction_only(std::uint32_t label) {
    PseudoLabels l;
    l.reaction_label = label;
    return l;
}

PseudoLabels both(std::map<std::uint32_t, double> t, std::uint32_t label) {
    PseudoLabels l;
    l.comment_target = std::move(t);
    l.reaction_label = label;
    return l;
}

std::vector<std::vector<double>> random_inputs(std::size_t n, std::size_t dim, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::vector<double>> out(n, std::vector<double>(dim));
    for (auto& row : out)
        for (auto& x : row) x = rng.uniform(-1.0, 1.0);
    return out;
}

}  // namespace

TEST_CASE("log_sum_exp and softmax basics") {
    std::vector<double> logits = {1.0, 2.0, 3.0};
    double expect = 3.0 + std::log(std::exp(-2.0) + std::exp(-1.0) + 1.0);
    CHECK(log_sum_exp(logits) == doctest::Approx(expect).epsilon(1e-15));

    // huge values survive the max shift
    std::vector<double> big = {1000.0, 1000.0};
    CHECK(log_sum_exp(big) == doctest::Approx(1000.0 + std::log(2.0)).epsilon(1e-15));

    auto p = softmax(logits);
    double sum = p[0] + p[1] + p[2];
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(p[2] > p[1]);
    CHECK(p[1] > p[0]);
}

TEST_CASE("uniform logits cost exactly ln k") {
    for (std::size_t k : {2, 128, 5000}) {
        std::vector<double> logits(k, 0.7);
        CHECK(cross_entropy(logits, 0) == doctest::Approx(std::log(static_cast<double>(k)))
                                              .epsilon(1e-12));
        std::map<std::uint32_t, double> onehot = {{static_cast<std::uint32_t>(k / 2), 1.0}};
        CHECK(soft_cross_entropy(logits, onehot) ==
              doctest::Approx(std::log(static_cast<double>(k))).epsilon(1e-12));
    }
}

TEST_CASE("one-hot soft target reproduces the hard loss bit for bit") {
    Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        std::size_t k = 2 + rng.uniform_int(10);
        std::vector<double> logits(k);
        for (auto& x : logits) x = rng.uniform(-5.0, 5.0);
        auto label = static_cast<std::uint32_t>(rng.uniform_int(k));
        std::map<std::uint32_t, double> onehot = {{label, 1.0}};
        CHECK(soft_cross_entropy(logits, onehot) == cross_entropy(logits, label));
    }
}

TEST_CASE("two-logit hard loss matches the closed form") {
    std::vector<double> logits = {10.0, -10.0};
    CHECK(cross_entropy(logits, 0) ==
          doctest::Approx(std::log(1.0 + std::exp(-20.0))).epsilon(1e-12));
    CHECK(cross_entropy(logits, 1) == doctest::Approx(20.0 + std::log(1.0 + std::exp(-20.0)))
                                          .epsilon(1e-12));
}

TEST_CASE("malformed soft targets are rejected") {
    std::vector<double> logits = {0.0, 0.0, 0.0};
    CHECK_THROWS_AS(soft_cross_entropy(logits, {}), InputError);
    CHECK_THROWS_AS(soft_cross_entropy(logits, {{5, 1.0}}), InputError);       // out of range
    CHECK_THROWS_AS(soft_cross_entropy(logits, {{0, 0.5}, {1, 0.6}}), InputError);  // sums to 1.1
    CHECK_THROWS_AS(soft_cross_entropy(logits, {{0, -0.5}, {1, 1.5}}), InputError);  // negative
    CHECK_THROWS_AS(cross_entropy(logits, 3), InputError);
    // a sum within 1e-9 of one is accepted
    CHECK_NOTHROW(soft_cross_entropy(logits, {{0, 0.5}, {1, 0.5 + 5e-10}}));
}

TEST_CASE("head bias init matches the prior") {
    CHECK(head_bias_init(0.01) == doctest::Approx(-std::log(99.0)).epsilon(1e-12));
    CHECK(head_bias_init(0.5) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK_THROWS_AS(head_bias_init(0.0), ConfigError);
    CHECK_THROWS_AS(head_bias_init(1.0), ConfigError);
}

TEST_CASE("parameter init is deterministic and respects the documented ranges") {
    auto cfg = small_config();
    auto a = init_params(cfg, 99);
    auto b = init_params(cfg, 99);
    auto c = init_params(cfg, 100);

    auto ra = tensor_refs(a);
    auto rb = tensor_refs(b);
    auto rc = tensor_refs(c);
    REQUIRE(ra.size() == rb.size());
    bool any_diff = false;
    for (std::size_t t = 0; t < ra.size(); ++t) {
        CHECK(*ra[t].data == *rb[t].data);
        if (*ra[t].data != *rc[t].data) any_diff = true;
    }
    CHECK(any_diff);

    // encoder: 5 -> 4 -> 3, heads 3 -> 3 and 3 -> 2
    REQUIRE(a.encoder.size() == 2);
    CHECK(a.encoder[0].in == 5);
    CHECK(a.encoder[0].out == 4);
    CHECK(a.encoder[1].in == 4);
    CHECK(a.encoder[1].out == 3);
    CHECK(a.comment_head.in == 3);
    CHECK(a.comment_head.out == 3);
    CHECK(a.reaction_head.in == 3);
    CHECK(a.reaction_head.out == 2);

    for (const auto& layer : a.encoder) {
        double bound = 1.0 / std::sqrt(static_cast<double>(layer.in));
        for (double w : layer.weights) CHECK(std::abs(w) <= bound);
        for (double bv : layer.bias) CHECK(bv == 0.0);
    }
    double head_bias = head_bias_init(cfg.head_bias_prior);
    for (double bv : a.comment_head.bias) CHECK(bv == head_bias);
    for (double bv : a.reaction_head.bias) CHECK(bv == head_bias);
}

TEST_CASE("tensor enumeration order is stable and complete") {
    auto params = init_params(small_config(), 1);
    auto refs = tensor_refs(params);
    REQUIRE(refs.size() == 8);
    CHECK(refs[0].name == "encoder.0.weight");
    CHECK(refs[1].name == "encoder.0.bias");
    CHECK(refs[2].name == "encoder.1.weight");
    CHECK(refs[3].name == "encoder.1.bias");
    CHECK(refs[4].name == "comment_head.weight");
    CHECK(refs[5].name == "comment_head.bias");
    CHECK(refs[6].name == "reaction_head.weight");
    CHECK(refs[7].name == "reaction_head.bias");

    auto grads = zero_grads_like(params);
    auto grefs = tensor_refs(grads);
    REQUIRE(grefs.size() == refs.size());
    for (std::size_t t = 0; t < refs.size(); ++t) {
        CHECK(grefs[t].name == refs[t].name);
        CHECK(grefs[t].data->size() == refs[t].data->size());
        for (double g : *grefs[t].data) CHECK(g == 0.0);
    }
}

TEST_CASE("zeroed weights forward the head biases") {
    auto params = init_params(small_config(), 1);
    for (auto& layer : params.encoder) std::fill(layer.weights.begin(), layer.weights.end(), 0.0);
    std::fill(params.comment_head.weights.begin(), params.comment_head.weights.end(), 0.0);
    std::fill(params.reaction_head.weights.begin(), params.reaction_head.weights.end(), 0.0);

    std::vector<double> input(5, 0.3);
    auto out = forward(params, input);
    for (double e : out.embedding) CHECK(e == 0.0);
    for (double x : out.comment_logits) CHECK(x == params.comment_head.bias[0]);
    for (double x : out.reaction_logits) CHECK(x == params.reaction_head.bias[0]);
}

TEST_CASE("embeddings pass through a final ReLU") {
    auto params = init_params(small_config(), 5);
    Rng rng(2);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<double> input(5);
        for (auto& x : input) x = rng.uniform(-2.0, 2.0);
        auto emb = encode(params, input);
        REQUIRE(emb.size() == 3);
        for (double e : emb) CHECK(e >= 0.0);

        auto trace = encode_traced(params, input);
        CHECK(trace.embedding == emb);
        CHECK(trace.layer_inputs.size() == params.encoder.size());
        CHECK(trace.pre_acts.size() == params.encoder.size());
    }
}

TEST_CASE("uniform-logit batches cost ln k per task") {
    auto params = init_params(small_config(), 1);
    for (auto& layer : params.encoder) std::fill(layer.weights.begin(), layer.weights.end(), 0.0);
    std::fill(params.comment_head.weights.begin(), params.comment_head.weights.end(), 0.0);
    std::fill(params.reaction_head.weights.begin(), params.reaction_head.weights.end(), 0.0);

    std::vector<std::vector<double>> inputs = {{1, 2, 3, 4, 5}, {0, 0, 0, 0, 0}};
    std::vector<PseudoLabels> targets = {comment_only({{1, 1.0}}), reaction_only(0)};
    LossOptions opts;
    auto res = batch_loss_and_grads(params, inputs, targets, opts, nullptr);

    CHECK(res.n_comment == 1);
    CHECK(res.n_reaction == 1);
    CHECK(res.comment == doctest::Approx(std::log(3.0)).epsilon(1e-12));
    CHECK(res.reaction == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(res.total == doctest::Approx(std::log(3.0) + std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("task means ignore samples that lack the target") {
    auto params = init_params(small_config(), 3);
    auto inputs = random_inputs(4, 5, 11);
    std::vector<PseudoLabels> targets = {
        reaction_only(0), reaction_only(1), reaction_only(0), reaction_only(1)};
    LossOptions opts;
    auto res = batch_loss_and_grads(params, inputs, targets, opts, nullptr);
    CHECK(res.n_comment == 0);
    CHECK(res.comment == 0.0);
    CHECK(res.n_reaction == 4);
    CHECK(res.total == doctest::Approx(res.reaction).epsilon(1e-15));

    // comment-head gradients are exactly zero when nothing feeds that head
    auto grads = zero_grads_like(params);
    batch_loss_and_grads(params, inputs, targets, opts, &grads);
    for (double g : grads.comment_head.weights) CHECK(g == 0.0);
    for (double g : grads.comment_head.bias) CHECK(g == 0.0);
}

TEST_CASE("a zero task weight silences that head's gradients exactly") {
    auto params = init_params(small_config(), 3);
    auto inputs = random_inputs(3, 5, 13);
    std::vector<PseudoLabels> targets = {
        both({{0, 0.5}, {2, 0.5}}, 1), comment_only({{1, 1.0}}), reaction_only(0)};

    LossOptions opts;
    opts.lambda_comment = 0.0;
    auto grads = zero_grads_like(params);
    auto res = batch_loss_and_grads(params, inputs, targets, opts, &grads);

    for (double g : grads.comment_head.weights) CHECK(g == 0.0);
    for (double g : grads.comment_head.bias) CHECK(g == 0.0);
    CHECK(res.total == doctest::Approx(res.reaction).epsilon(1e-15));
    // the comment mean is still reported for logging
    CHECK(res.comment > 0.0);

    // and the encoder gradient equals the reaction-only gradient
    LossOptions reaction_opts;
    reaction_opts.lambda_comment = 0.0;
    reaction_opts.lambda_reaction = 1.0;
    auto grads2 = zero_grads_like(params);
    batch_loss_and_grads(params, inputs, targets, reaction_opts, &grads2);
    for (std::size_t l = 0; l < grads.encoder.size(); ++l)
        CHECK(grads.encoder[l].weights == grads2.encoder[l].weights);
}

TEST_CASE("duplicating a batch leaves the means unchanged") {
    auto params = init_params(small_config(), 7);
    auto inputs = random_inputs(3, 5, 29);
    std::vector<PseudoLabels> targets = {
        both({{0, 1.0}}, 1), comment_only({{2, 0.25}, {0, 0.75}}), reaction_only(1)};

    auto doubled_inputs = inputs;
    doubled_inputs.insert(doubled_inputs.end(), inputs.begin(), inputs.end());
    auto doubled_targets = targets;
    doubled_targets.insert(doubled_targets.end(), targets.begin(), targets.end());

    LossOptions opts;
    auto a = batch_loss_and_grads(params, inputs, targets, opts, nullptr);
    auto b = batch_loss_and_grads(params, doubled_inputs, doubled_targets, opts, nullptr);
    CHECK(a.total == doctest::Approx(b.total).epsilon(1e-12));
    CHECK(a.comment == doctest::Approx(b.comment).epsilon(1e-12));
    CHECK(a.reaction == doctest::Approx(b.reaction).epsilon(1e-12));
}

TEST_CASE("a batch with no targets at all is rejected") {
    auto params = init_params(small_config(), 1);
    auto inputs = random_inputs(2, 5, 31);
    std::vector<PseudoLabels> targets(2);
    LossOptions opts;
    CHECK_THROWS_AS(batch_loss_and_grads(params, inputs, targets, opts, nullptr), InputError);

    std::vector<std::vector<double>> none;
    std::vector<PseudoLabels> empty;
    CHECK_THROWS_AS(batch_loss_and_grads(params, none, empty, opts, nullptr), InputError);

    auto bad_inputs = random_inputs(2, 5, 31);
    std::vector<PseudoLabels> short_targets = {reaction_only(0)};
    CHECK_THROWS_AS(batch_loss_and_grads(params, bad_inputs, short_targets, opts, nullptr),
                    InputError);
}

TEST_CASE("analytic gradients match finite differences") {
    auto cfg = small_config();
    auto params = init_params(cfg, 41);
    auto inputs = random_inputs(4, 5, 43);
    std::vector<PseudoLabels> targets = {
        both({{0, 0.5}, {1, 0.5}}, 0), comment_only({{2, 1.0}}), reaction_only(1),
        both({{1, 0.2}, {2, 0.8}}, 0)};

    LossOptions opts;
    opts.lambda_comment = 0.7;
    opts.lambda_reaction = 1.3;
    auto check = oracles::finite_diff_check(params, inputs, targets, opts, 1e-5);
    CHECK(check.max_rel_err < 1e-4);
}

TEST_CASE("freezing the encoder zeroes its gradients but not the heads'") {
    auto cfg = small_config();
    auto params = init_params(cfg, 47);
    auto inputs = random_inputs(3, 5, 53);
    std::vector<PseudoLabels> targets = {
        both({{0, 1.0}}, 1), reaction_only(0), comment_only({{1, 1.0}})};

    LossOptions opts;
    opts.freeze_encoder = true;
    auto grads = zero_grads_like(params);
    batch_loss_and_grads(params, inputs, targets, opts, &grads);
    for (const auto& layer : grads.encoder) {
        for (double g : layer.weights) CHECK(g == 0.0);
        for (double g : layer.bias) CHECK(g == 0.0);
    }
    bool head_nonzero = false;
    for (double g : grads.comment_head.weights) head_nonzero = head_nonzero || g != 0.0;
    CHECK(head_nonzero);

    // head gradients still agree with finite differences
    auto check = oracles::finite_diff_check(params, inputs, targets, opts, 1e-5);
    CHECK(check.max_rel_err < 1e-4);
}

TEST_CASE("model config validation rejects bad shapes") {
    auto cfg = small_config();
    CHECK_NOTHROW(cfg.validate());
    auto bad = cfg;
    bad.input_dim = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.embedding_dim = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.hidden_dims = {8, 0};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.k_comment = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.head_bias_prior = 1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    auto j = cfg.to_json();
    auto back = ModelConfig::from_json(j);
    CHECK(back.input_dim == cfg.input_dim);
    CHECK(back.hidden_dims == cfg.hidden_dims);
    CHECK(back.embedding_dim == cfg.embedding_dim);
    CHECK(back.k_comment == cfg.k_comment);
    CHECK(back.k_reaction == cfg.k_reaction);
    CHECK(back.head_bias_prior == cfg.head_bias_prior);
}

TEST_CASE("checkpoints restore every tensor bit for bit") {
    auto params = init_params(small_config(), 61);
    params.step = 1234;

    TmpDir dir("ckpt");
    auto path = dir / "checkpoint.json";
    save_checkpoint(path, params);
    auto loaded = load_checkpoint(path);

    CHECK(loaded.step == 1234);
    CHECK(loaded.config.input_dim == params.config.input_dim);
    auto ra = tensor_refs(params);
    auto rb = tensor_refs(loaded);
    REQUIRE(ra.size() == rb.size());
    for (std::size_t t = 0; t < ra.size(); ++t) {
        CHECK(ra[t].name == rb[t].name);
        CHECK(*ra[t].data == *rb[t].data);
    }

    CHECK_THROWS_AS(load_checkpoint(dir / "absent.json"), IoError);
}
