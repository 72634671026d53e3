#include "engage/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <unordered_map>

#include "engage/errors.hpp"
#include "engage/rng.hpp"

namespace engage {

using nlohmann::json;

void SynthConfig::validate() const {
    if (n_posts == 0) throw ConfigError("synth corpus needs at least one post");
    if (n_classes == 0) throw ConfigError("synth corpus needs at least one class");
    if (noise < 0.0) throw ConfigError("synth noise must be non-negative");
    if (feature_dim == 0) throw ConfigError("synth feature dimension must be positive");
    if (!(class_separation > 0.0)) throw ConfigError("class separation must be positive");
    if (words_per_class == 0 || shared_words == 0)
        throw ConfigError("synth vocabulary sizes must be positive");
    if (min_comments == 0 || min_comments > max_comments)
        throw ConfigError("synth comment count range is invalid");
    if (min_words == 0 || min_words > max_words)
        throw ConfigError("synth comment length range is invalid");
    if (empty_engagement_fraction < 0.0 || empty_engagement_fraction > 1.0)
        throw ConfigError("empty engagement fraction must lie in [0, 1]");
    if (min_reactions == 0 || min_reactions > max_reactions)
        throw ConfigError("synth reaction count range is invalid");
}

json SynthConfig::to_json() const {
    json j;
    j["n_posts"] = n_posts;
    j["n_classes"] = n_classes;
    j["noise"] = noise;
    j["feature_dim"] = feature_dim;
    j["class_separation"] = class_separation;
    j["words_per_class"] = words_per_class;
    j["shared_words"] = shared_words;
    j["min_comments"] = min_comments;
    j["max_comments"] = max_comments;
    j["min_words"] = min_words;
    j["max_words"] = max_words;
    j["empty_engagement_fraction"] = empty_engagement_fraction;
    j["min_reactions"] = min_reactions;
    j["max_reactions"] = max_reactions;
    return j;
}

SynthConfig SynthConfig::from_json(const json& j) {
    SynthConfig c;
    c.n_posts = j.value("n_posts", c.n_posts);
    c.n_classes = j.value("n_classes", c.n_classes);
    c.noise = j.value("noise", c.noise);
    c.feature_dim = j.value("feature_dim", c.feature_dim);
    c.class_separation = j.value("class_separation", c.class_separation);
    c.words_per_class = j.value("words_per_class", c.words_per_class);
    c.shared_words = j.value("shared_words", c.shared_words);
    c.min_comments = j.value("min_comments", c.min_comments);
    c.max_comments = j.value("max_comments", c.max_comments);
    c.min_words = j.value("min_words", c.min_words);
    c.max_words = j.value("max_words", c.max_words);
    c.empty_engagement_fraction =
        j.value("empty_engagement_fraction", c.empty_engagement_fraction);
    c.min_reactions = j.value("min_reactions", c.min_reactions);
    c.max_reactions = j.value("max_reactions", c.max_reactions);
    c.validate();
    return c;
}

namespace {

std::vector<std::vector<double>> class_means(const SynthConfig& config, std::uint64_t seed) {
    Rng rng(derive_seed(seed, "means"));
    std::vector<std::vector<double>> means(config.n_classes);
    for (auto& mean : means) {
        mean.resize(config.feature_dim);
        double norm = 0.0;
        for (double& v : mean) {
            v = rng.normal();
            norm += v * v;
        }
        norm = std::sqrt(norm);
        // A zero draw is essentially impossible; guard anyway so the mean
        // stays well defined.
        if (norm == 0.0) {
            mean[0] = 1.0;
            norm = 1.0;
        }
        for (double& v : mean) v = v / norm * config.class_separation;
    }
    return means;
}

std::string class_word(std::uint32_t cls, std::uint64_t j) {
    return "cls" + std::to_string(cls) + "tok" + std::to_string(j);
}

std::string shared_word(std::uint64_t j) { return "common" + std::to_string(j); }

}  // namespace

SynthCorpus generate_corpus(const SynthConfig& config, std::uint64_t seed) {
    config.validate();
    const auto means = class_means(config, seed);
    Rng rng(derive_seed(seed, "posts"));

    // Comments drift off-topic as noise grows: each word flips to shared
    // filler vocabulary with this probability.
    const double corrupt_p = std::min(0.95, 0.2 * config.noise);
    // Reaction profiles blend the class signature button with uniform
    // background clicks.
    const double alpha = std::min(1.0, 0.3 * config.noise);

    SynthCorpus corpus;
    corpus.posts.reserve(config.n_posts);
    corpus.classes.reserve(config.n_posts);

    char id_buf[32];
    for (std::size_t p = 0; p < config.n_posts; ++p) {
        const auto cls = static_cast<std::uint32_t>(rng.uniform_int(config.n_classes));
        const bool empty_engagement = rng.uniform() < config.empty_engagement_fraction;

        Post post;
        std::snprintf(id_buf, sizeof(id_buf), "post%06zu", p);
        post.id = id_buf;

        FeatureVec features(config.feature_dim);
        for (std::size_t d = 0; d < config.feature_dim; ++d)
            features[d] = means[cls][d] + config.noise * rng.normal();
        post.image = std::move(features);

        if (!empty_engagement) {
            const std::size_t n_comments =
                config.min_comments +
                rng.uniform_int(config.max_comments - config.min_comments + 1);
            for (std::size_t ci = 0; ci < n_comments; ++ci) {
                const std::size_t n_words =
                    config.min_words + rng.uniform_int(config.max_words - config.min_words + 1);
                std::string comment;
                for (std::size_t w = 0; w < n_words; ++w) {
                    if (!comment.empty()) comment += ' ';
                    if (rng.uniform() < corrupt_p)
                        comment += shared_word(rng.uniform_int(config.shared_words));
                    else
                        comment += class_word(cls, rng.uniform_int(config.words_per_class));
                }
                post.comments.push_back(std::move(comment));
            }

            const std::uint64_t total =
                config.min_reactions +
                rng.uniform_int(config.max_reactions - config.min_reactions + 1);
            for (std::uint64_t t = 0; t < total; ++t) {
                std::size_t bucket;
                if (rng.uniform() < alpha)
                    bucket = rng.uniform_int(5);
                else
                    bucket = cls % 5;
                ++post.reactions.counts[bucket];
            }
        }

        corpus.posts.push_back(std::move(post));
        corpus.classes.push_back(cls);
    }
    return corpus;
}

void save_classes(const std::filesystem::path& path, const SynthCorpus& corpus) {
    if (corpus.posts.size() != corpus.classes.size())
        throw InputError("posts and classes are misaligned");
    std::ofstream out(path);
    if (!out) throw IoError("cannot write class sidecar: " + path.string());
    for (std::size_t i = 0; i < corpus.posts.size(); ++i) {
        json j;
        j["id"] = corpus.posts[i].id;
        j["class"] = corpus.classes[i];
        out << j.dump() << '\n';
    }
    if (!out) throw IoError("failed writing class sidecar: " + path.string());
}

std::vector<std::pair<std::string, std::uint32_t>> load_classes(
    const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read class sidecar: " + path.string());
    std::vector<std::pair<std::string, std::uint32_t>> classes;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw InputError("class sidecar line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!j.contains("id") || !j.at("id").is_string() || !j.contains("class") ||
            !j.at("class").is_number_unsigned())
            throw InputError("class sidecar line " + std::to_string(line_no) +
                             ": expected {\"id\", \"class\"}");
        classes.emplace_back(j.at("id").get<std::string>(), j.at("class").get<std::uint32_t>());
    }
    return classes;
}

void DownstreamSynthConfig::validate() const {
    if (!(train_fraction > 0.0) || !(val_fraction > 0.0) ||
        !(train_fraction + val_fraction < 1.0))
        throw ConfigError("downstream split fractions must be positive and leave room for test");
    if (text_noise < 0.0) throw ConfigError("text noise must be non-negative");
}

json DownstreamSynthConfig::to_json() const {
    json j;
    j["train_fraction"] = train_fraction;
    j["val_fraction"] = val_fraction;
    j["text_features"] = text_features;
    j["text_noise"] = text_noise;
    return j;
}

DownstreamSynthConfig DownstreamSynthConfig::from_json(const json& j) {
    DownstreamSynthConfig c;
    c.train_fraction = j.value("train_fraction", c.train_fraction);
    c.val_fraction = j.value("val_fraction", c.val_fraction);
    c.text_features = j.value("text_features", c.text_features);
    c.text_noise = j.value("text_noise", c.text_noise);
    c.validate();
    return c;
}

DownstreamDataset make_downstream(const SynthCorpus& corpus, const DownstreamSynthConfig& config,
                                  std::uint64_t seed) {
    config.validate();
    if (corpus.posts.size() != corpus.classes.size())
        throw InputError("posts and classes are misaligned");
    const std::size_t n = corpus.posts.size();
    if (n < 3) throw InputError("downstream task needs at least three posts");

    const auto n_train =
        static_cast<std::size_t>(std::llround(config.train_fraction * static_cast<double>(n)));
    const auto n_val =
        static_cast<std::size_t>(std::llround(config.val_fraction * static_cast<double>(n)));
    if (n_train == 0 || n_val == 0 || n_train + n_val >= n)
        throw ConfigError("downstream split fractions leave an empty split");

    std::unordered_map<std::string, std::size_t> index_by_id;
    std::vector<std::string> ids;
    ids.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        ids.push_back(corpus.posts[i].id);
        index_by_id[corpus.posts[i].id] = i;
    }
    std::sort(ids.begin(), ids.end());
    Rng rng(derive_seed(seed, "downstream_split"));
    rng.shuffle(ids);

    const std::uint32_t max_class =
        *std::max_element(corpus.classes.begin(), corpus.classes.end());
    const std::size_t n_classes = static_cast<std::size_t>(max_class) + 1;
    const auto text_seed = derive_seed(seed, "text");

    DownstreamDataset dataset;
    dataset.examples.reserve(n);
    for (std::size_t rank = 0; rank < n; ++rank) {
        const std::size_t i = index_by_id.at(ids[rank]);
        DownstreamExample ex;
        ex.id = corpus.posts[i].id;
        ex.split = rank < n_train ? "train" : (rank < n_train + n_val ? "val" : "test");
        ex.image = corpus.posts[i].image;
        ex.label = corpus.classes[i];
        if (config.text_features) {
            Rng text_rng(derive_seed(text_seed, ex.id));
            std::vector<double> text(n_classes, 0.0);
            text[ex.label] = 1.0;
            for (double& v : text) v += config.text_noise * text_rng.normal();
            ex.text_features = std::move(text);
        }
        dataset.examples.push_back(std::move(ex));
    }
    // File order follows post ids, not shuffle order, so output bytes stay
    // stable however the split landed.
    std::sort(dataset.examples.begin(), dataset.examples.end(),
              [](const DownstreamExample& a, const DownstreamExample& b) { return a.id < b.id; });
    return dataset;
}

}  // namespace engage
