// SPDX-License-Identifier: Apache-2.0

#include "ptum/synthetic.hpp"

#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace ptum {

void SyntheticWorldConfig::validate() const {
    auto positive = [](int v, const char* name) {
        if (v < 1) throw std::invalid_argument(std::string("synthetic: ") + name + " must be positive");
    };
    positive(n_groups, "n_groups");
    positive(n_topics, "n_topics");
    positive(vocab_size, "vocab_size");
    positive(words_per_topic, "words_per_topic");
    positive(min_behaviors, "min_behaviors");
    positive(min_title_len, "min_title_len");
    positive(n_pretrain_users, "n_pretrain_users");
    positive(n_demo_users, "n_demo_users");
    positive(n_ctr_users, "n_ctr_users");
    positive(impressions_per_ctr_user, "impressions_per_ctr_user");
    if (max_behaviors < min_behaviors || max_title_len < min_title_len)
        throw std::invalid_argument("synthetic: inverted range");
    if (n_topics < n_groups)
        throw std::invalid_argument("synthetic: need at least one topic per group");
    if (vocab_size < n_topics * words_per_topic)
        throw std::invalid_argument("synthetic: vocab_size smaller than topic blocks");
    if (mixture_concentration < 0.0 || mixture_concentration > 1.0)
        throw std::invalid_argument("synthetic: mixture_concentration must be in [0, 1]");
    if (topic_word_mass <= 0.0 || topic_word_mass > 1.0)
        throw std::invalid_argument("synthetic: topic_word_mass must be in (0, 1]");
    if (!ctr_affinity.empty() &&
        ctr_affinity.size() != static_cast<std::size_t>(n_groups * n_topics))
        throw std::invalid_argument("synthetic: ctr_affinity must be G x T");
}

namespace {

// Topics are partitioned into G nearly equal consecutive blocks.
int topic_block_of(int topic, int n_groups, int n_topics) {
    return topic * n_groups / n_topics;
}

int draw_int(std::mt19937_64& rng, int lo, int hi) {  // inclusive
    return std::uniform_int_distribution<int>(lo, hi)(rng);
}

double draw_unit(std::mt19937_64& rng) {
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

int draw_from_row(std::mt19937_64& rng, const std::vector<double>& matrix, int row, int cols) {
    double u = draw_unit(rng);
    double acc = 0.0;
    for (int j = 0; j < cols; ++j) {
        acc += matrix[row * cols + j];
        if (u < acc) return j;
    }
    return cols - 1;
}

}  // namespace

std::vector<double> SyntheticWorldConfig::group_topic_mixture() const {
    std::vector<double> mix(static_cast<std::size_t>(n_groups) * n_topics, 0.0);
    std::vector<int> block_size(n_groups, 0);
    for (int t = 0; t < n_topics; ++t) ++block_size[topic_block_of(t, n_groups, n_topics)];
    for (int g = 0; g < n_groups; ++g) {
        for (int t = 0; t < n_topics; ++t) {
            double p = mixture_concentration / n_topics;
            if (topic_block_of(t, n_groups, n_topics) == g)
                p += (1.0 - mixture_concentration) / block_size[g];
            mix[g * n_topics + t] = p;
        }
    }
    return mix;
}

std::vector<double> SyntheticWorldConfig::effective_affinity() const {
    if (!ctr_affinity.empty()) return ctr_affinity;
    std::vector<double> aff(static_cast<std::size_t>(n_groups) * n_topics);
    for (int g = 0; g < n_groups; ++g)
        for (int t = 0; t < n_topics; ++t)
            aff[g * n_topics + t] =
                topic_block_of(t, n_groups, n_topics) == g ? affinity_scale : -affinity_scale;
    return aff;
}

SyntheticWorld generate_synthetic(const SyntheticWorldConfig& cfg) {
    cfg.validate();
    const std::vector<double> mixture = cfg.group_topic_mixture();
    for (int g = 0; g < cfg.n_groups; ++g) {
        double row = 0.0;
        for (int t = 0; t < cfg.n_topics; ++t) row += mixture[g * cfg.n_topics + t];
        if (std::abs(row - 1.0) > 1e-9)
            throw std::logic_error("synthetic: mixture row does not sum to 1");
    }
    const std::vector<double> affinity = cfg.effective_affinity();
    const int shared_words = cfg.vocab_size - cfg.n_topics * cfg.words_per_topic;

    std::mt19937_64 rng(cfg.seed);

    auto draw_title = [&](int topic, int lo, int hi) {
        const int len = draw_int(rng, lo, hi);
        std::string title;
        for (int i = 0; i < len; ++i) {
            int word;
            if (shared_words > 0 && draw_unit(rng) >= cfg.topic_word_mass)
                word = cfg.n_topics * cfg.words_per_topic + draw_int(rng, 0, shared_words - 1);
            else
                word = topic * cfg.words_per_topic + draw_int(rng, 0, cfg.words_per_topic - 1);
            if (i) title += ' ';
            title += 'w' + std::to_string(word);
        }
        return title;
    };

    auto draw_user = [&](const std::string& id) {
        SyntheticUser u;
        u.user_id = id;
        u.group = draw_int(rng, 0, cfg.n_groups - 1);
        const int n = draw_int(rng, cfg.min_behaviors, cfg.max_behaviors);
        u.titles.reserve(n);
        for (int i = 0; i < n; ++i) {
            const int topic = draw_from_row(rng, mixture, u.group, cfg.n_topics);
            u.titles.push_back(draw_title(topic, cfg.min_title_len, cfg.max_title_len));
        }
        return u;
    };

    SyntheticWorld world;
    world.pretrain_users.reserve(cfg.n_pretrain_users);
    for (int i = 0; i < cfg.n_pretrain_users; ++i)
        world.pretrain_users.push_back(draw_user("pretrain_u" + std::to_string(i)));
    world.demo_users.reserve(cfg.n_demo_users);
    for (int i = 0; i < cfg.n_demo_users; ++i)
        world.demo_users.push_back(draw_user("demo_u" + std::to_string(i)));
    world.ctr_users.reserve(cfg.n_ctr_users);
    for (int i = 0; i < cfg.n_ctr_users; ++i)
        world.ctr_users.push_back(draw_user("ctr_u" + std::to_string(i)));

    // Impressions: ad topic comes from the user's own block half the time
    // (targeted ads), else uniformly; clicks are Bernoulli over the
    // affinity logit.
    std::vector<std::vector<int>> block_topics(cfg.n_groups);
    for (int t = 0; t < cfg.n_topics; ++t)
        block_topics[topic_block_of(t, cfg.n_groups, cfg.n_topics)].push_back(t);
    for (const SyntheticUser& u : world.ctr_users) {
        for (int i = 0; i < cfg.impressions_per_ctr_user; ++i) {
            SyntheticImpression imp;
            imp.user_id = u.user_id;
            const auto& own = block_topics[u.group];
            imp.ad_topic = (!own.empty() && draw_unit(rng) < 0.5)
                               ? own[draw_int(rng, 0, static_cast<int>(own.size()) - 1)]
                               : draw_int(rng, 0, cfg.n_topics - 1);
            imp.ad_title = draw_title(imp.ad_topic, cfg.min_title_len, cfg.max_title_len);
            imp.ad_desc = draw_title(imp.ad_topic, cfg.min_title_len, cfg.max_title_len);
            const double logit = affinity[u.group * cfg.n_topics + imp.ad_topic];
            const double p = 1.0 / (1.0 + std::exp(-logit));
            imp.click = draw_unit(rng) < p ? 1 : 0;
            world.impressions.push_back(std::move(imp));
        }
    }
    return world;
}

std::string behavior_jsonl(const std::vector<SyntheticUser>& users, const std::string& label_key) {
    std::ostringstream out;
    for (const SyntheticUser& u : users) {
        nlohmann::json j;
        j["user_id"] = u.user_id;
        j["behaviors"] = u.titles;
        if (!label_key.empty()) j["labels"] = {{label_key, u.group}};
        out << j.dump() << '\n';
    }
    return out.str();
}

std::string ctr_jsonl(const std::vector<SyntheticImpression>& impressions) {
    std::ostringstream out;
    for (const SyntheticImpression& imp : impressions) {
        nlohmann::json j;
        j["user_id"] = imp.user_id;
        j["ad_title"] = imp.ad_title;
        j["ad_desc"] = imp.ad_desc;
        j["click"] = imp.click;
        out << j.dump() << '\n';
    }
    return out.str();
}

}  // namespace ptum
