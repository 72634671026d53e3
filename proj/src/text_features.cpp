#include "engage/text_features.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>

#include "json.hpp"

#include "engage/errors.hpp"
#include "engage/rng.hpp"

namespace engage {

using nlohmann::json;

std::vector<std::string> tokenize(std::string_view text, std::size_t min_token_length) {
    std::vector<std::string> tokens;
    std::string cur;
    auto flush = [&] {
        if (cur.size() >= min_token_length) tokens.push_back(cur);
        cur.clear();
    };
    for (char ch : text) {
        unsigned char c = static_cast<unsigned char>(ch);
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else {
            flush();
        }
    }
    flush();
    return tokens;
}

Vocabulary Vocabulary::fit(std::span<const std::string> corpus, const VocabConfig& cfg) {
    if (corpus.empty()) throw ConfigError("vocabulary fit requires a non-empty corpus");

    // document frequencies; std::map keeps term order deterministic
    std::map<std::string, std::uint32_t> df;
    for (const auto& doc : corpus) {
        auto tokens = tokenize(doc, cfg.min_token_length);
        std::sort(tokens.begin(), tokens.end());
        tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
        for (auto& t : tokens) ++df[t];
    }

    std::vector<TermEntry> retained;
    retained.reserve(df.size());
    for (auto& [term, count] : df) {
        if (count >= cfg.min_df) retained.push_back({term, 0, count});
    }

    if (cfg.max_terms > 0 && retained.size() > cfg.max_terms) {
        std::sort(retained.begin(), retained.end(), [](const TermEntry& a, const TermEntry& b) {
            if (a.df != b.df) return a.df > b.df;
            return a.term < b.term;
        });
        retained.resize(cfg.max_terms);
        std::sort(retained.begin(), retained.end(),
                  [](const TermEntry& a, const TermEntry& b) { return a.term < b.term; });
    }

    Vocabulary v;
    v.cfg_ = cfg;
    v.corpus_size_ = corpus.size();
    v.terms_ = std::move(retained);
    for (std::uint32_t i = 0; i < v.terms_.size(); ++i) {
        v.terms_[i].index = i;
        v.lookup_.emplace(v.terms_[i].term, i);
    }
    return v;
}

const TermEntry* Vocabulary::find(std::string_view term) const {
    auto it = lookup_.find(std::string(term));
    if (it == lookup_.end()) return nullptr;
    return &terms_[it->second];
}

double Vocabulary::idf(const TermEntry& e) const {
    return std::log((1.0 + static_cast<double>(corpus_size_)) / (1.0 + static_cast<double>(e.df))) +
           1.0;
}

void Vocabulary::save(const std::filesystem::path& path) const {
    json j;
    j["version"] = 1;
    j["config"] = {{"min_token_length", cfg_.min_token_length},
                   {"min_df", cfg_.min_df},
                   {"max_terms", cfg_.max_terms}};
    j["corpus_size"] = corpus_size_;
    json terms = json::array();
    for (const auto& e : terms_) {
        terms.push_back({{"term", e.term}, {"index", e.index}, {"df", e.df}});
    }
    j["terms"] = std::move(terms);
    if (!fit_post_ids.empty()) j["fit_post_ids"] = fit_post_ids;

    std::ofstream out(path);
    if (!out) throw IoError("cannot write vocabulary file: " + path.string());
    out << j.dump(2) << "\n";
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read vocabulary file: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw IoError("invalid vocabulary file " + path.string() + ": " + e.what());
    }
    if (!j.contains("version") || !j.contains("terms") || !j.contains("corpus_size"))
        throw IoError("vocabulary file missing required fields: " + path.string());

    Vocabulary v;
    const auto& c = j.at("config");
    v.cfg_.min_token_length = c.at("min_token_length").get<std::size_t>();
    v.cfg_.min_df = c.at("min_df").get<std::uint32_t>();
    v.cfg_.max_terms = c.at("max_terms").get<std::size_t>();
    v.corpus_size_ = j.at("corpus_size").get<std::uint64_t>();
    for (const auto& t : j.at("terms")) {
        TermEntry e;
        e.term = t.at("term").get<std::string>();
        e.index = t.at("index").get<std::uint32_t>();
        e.df = t.at("df").get<std::uint32_t>();
        v.terms_.push_back(std::move(e));
    }
    std::sort(v.terms_.begin(), v.terms_.end(),
              [](const TermEntry& a, const TermEntry& b) { return a.index < b.index; });
    for (std::uint32_t i = 0; i < v.terms_.size(); ++i) {
        if (v.terms_[i].index != i)
            throw IoError("vocabulary indices are not contiguous: " + path.string());
        v.lookup_.emplace(v.terms_[i].term, i);
    }
    if (j.contains("fit_post_ids")) v.fit_post_ids = j.at("fit_post_ids").get<std::vector<std::string>>();
    return v;
}

Vocabulary fit_vocabulary(std::span<const std::string> corpus, const VocabConfig& cfg) {
    return Vocabulary::fit(corpus, cfg);
}

RandomProjection RandomProjection::make(std::size_t in_dim, std::size_t out_dim,
                                        std::uint64_t seed) {
    if (in_dim == 0 || out_dim == 0) throw ConfigError("projection dimensions must be positive");
    RandomProjection p;
    p.in_dim_ = in_dim;
    p.out_dim_ = out_dim;
    p.weights_.resize(in_dim * out_dim);
    Rng rng(seed);
    double scale = 1.0 / std::sqrt(static_cast<double>(out_dim));
    for (auto& w : p.weights_) w = rng.normal() * scale;
    return p;
}

std::vector<double> RandomProjection::apply(std::span<const double> v) const {
    if (v.size() != in_dim_) throw InputError("projection input dimension mismatch");
    std::vector<double> out(out_dim_, 0.0);
    for (std::size_t r = 0; r < out_dim_; ++r) {
        const double* row = &weights_[r * in_dim_];
        double s = 0.0;
        for (std::size_t c = 0; c < in_dim_; ++c) s += row[c] * v[c];
        out[r] = s;
    }
    return out;
}

EngagementVector embed_comment(const std::string& comment, const Vocabulary& vocab,
                               const RandomProjection* projection) {
    std::vector<double> tf(vocab.size(), 0.0);
    for (const auto& token : tokenize(comment, vocab.config().min_token_length)) {
        const TermEntry* e = vocab.find(token);
        if (e != nullptr) tf[e->index] += 1.0;  // out-of-vocabulary tokens ignored
    }
    std::vector<double> v(vocab.size(), 0.0);
    for (const auto& e : vocab.terms()) {
        if (tf[e.index] > 0.0) v[e.index] = tf[e.index] * vocab.idf(e);
    }
    if (projection != nullptr) v = projection->apply(v);

    double norm = l2_norm(v);
    if (norm > 0.0) {
        for (auto& x : v) x /= norm;
    }
    EngagementVector out;
    out.kind = FeatureKind::Comment;
    out.values = std::move(v);
    return out;
}

}  // namespace engage
