// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "ptum/data.hpp"
#include "ptum/synthetic.hpp"

using namespace ptum;

namespace {

SyntheticWorldConfig small_world() {
    SyntheticWorldConfig cfg;
    cfg.n_groups = 4;
    cfg.n_topics = 8;
    cfg.vocab_size = 400;
    cfg.words_per_topic = 40;
    cfg.n_pretrain_users = 60;
    cfg.n_demo_users = 200;
    cfg.n_ctr_users = 40;
    cfg.impressions_per_ctr_user = 3;
    cfg.seed = 5;
    return cfg;
}

}  // namespace

TEST_CASE("mixture rows sum to one and config validates") {
    SyntheticWorldConfig cfg = small_world();
    auto mix = cfg.group_topic_mixture();
    for (int g = 0; g < cfg.n_groups; ++g) {
        double row = 0.0;
        for (int t = 0; t < cfg.n_topics; ++t) row += mix[g * cfg.n_topics + t];
        CHECK(std::abs(row - 1.0) < 1e-9);
    }
    SyntheticWorldConfig bad = cfg;
    bad.vocab_size = 10;
    CHECK_THROWS_AS(generate_synthetic(bad), std::invalid_argument);
}

TEST_CASE("same seed yields byte-identical corpora") {
    SyntheticWorldConfig cfg = small_world();
    SyntheticWorld a = generate_synthetic(cfg);
    SyntheticWorld b = generate_synthetic(cfg);
    CHECK(behavior_jsonl(a.pretrain_users, "") == behavior_jsonl(b.pretrain_users, ""));
    CHECK(behavior_jsonl(a.demo_users, "group") == behavior_jsonl(b.demo_users, "group"));
    CHECK(ctr_jsonl(a.impressions) == ctr_jsonl(b.impressions));

    cfg.seed = 6;
    SyntheticWorld c = generate_synthetic(cfg);
    CHECK(behavior_jsonl(a.pretrain_users, "") != behavior_jsonl(c.pretrain_users, ""));
}

TEST_CASE("single group means a single demographic label") {
    SyntheticWorldConfig cfg = small_world();
    cfg.n_groups = 1;
    SyntheticWorld world = generate_synthetic(cfg);
    for (const auto& u : world.demo_users) CHECK(u.group == 0);
}

TEST_CASE("zero affinity gives chance-level click rate") {
    SyntheticWorldConfig cfg = small_world();
    cfg.n_ctr_users = 2000;
    cfg.impressions_per_ctr_user = 5;
    cfg.ctr_affinity.assign(static_cast<std::size_t>(cfg.n_groups) * cfg.n_topics, 0.0);
    SyntheticWorld world = generate_synthetic(cfg);
    REQUIRE(world.impressions.size() == 10000);
    double clicks = 0;
    for (const auto& imp : world.impressions) clicks += imp.click;
    CHECK(std::abs(clicks / 10000.0 - 0.5) < 0.02);
}

TEST_CASE("user id namespaces are disjoint between pretrain and labeled sets") {
    SyntheticWorld world = generate_synthetic(small_world());
    std::set<std::string> pretrain_ids;
    for (const auto& u : world.pretrain_users) pretrain_ids.insert(u.user_id);
    for (const auto& u : world.demo_users) CHECK(pretrain_ids.count(u.user_id) == 0);
    for (const auto& u : world.ctr_users) CHECK(pretrain_ids.count(u.user_id) == 0);
    for (const auto& imp : world.impressions) CHECK(pretrain_ids.count(imp.user_id) == 0);
}

// Generator validation: planted structure is recoverable by a trivial
// bag-of-words classifier (multinomial naive Bayes, add-one smoothing).
TEST_CASE("bag of words classifier beats chance by a wide margin") {
    SyntheticWorldConfig cfg = small_world();
    cfg.n_demo_users = 400;
    SyntheticWorld world = generate_synthetic(cfg);

    std::istringstream corpus(behavior_jsonl(world.demo_users, "group"));
    Vocabulary vocab = Vocabulary::build(count_tokens(corpus, "<mem>"), 1);
    std::istringstream again(behavior_jsonl(world.demo_users, "group"));
    auto records = ingest_jsonl(again, "<mem>", vocab, {30, 100});
    REQUIRE(records.size() == 400);

    const std::size_t n_train = 320;
    const int G = cfg.n_groups;
    const std::size_t V = vocab.table_rows();
    std::vector<std::vector<double>> counts(G, std::vector<double>(V, 1.0));
    std::vector<double> class_counts(G, 0.0);
    for (std::size_t i = 0; i < n_train; ++i) {
        const int g = records[i].labels.at("group");
        class_counts[g] += 1.0;
        for (const auto& b : records[i].behaviors)
            for (int t : b.tokens) counts[g][t] += 1.0;
    }
    std::vector<std::vector<double>> log_prob(G, std::vector<double>(V));
    for (int g = 0; g < G; ++g) {
        double total = 0.0;
        for (double c : counts[g]) total += c;
        for (std::size_t t = 0; t < V; ++t) log_prob[g][t] = std::log(counts[g][t] / total);
    }
    std::size_t hits = 0;
    for (std::size_t i = n_train; i < records.size(); ++i) {
        int best = 0;
        double best_score = -1e300;
        for (int g = 0; g < G; ++g) {
            double score = std::log(std::max(class_counts[g], 1.0));
            for (const auto& b : records[i].behaviors)
                for (int t : b.tokens) score += log_prob[g][t];
            if (score > best_score) {
                best_score = score;
                best = g;
            }
        }
        hits += best == records[i].labels.at("group");
    }
    const double acc = static_cast<double>(hits) / static_cast<double>(records.size() - n_train);
    CHECK(acc > 1.0 / G + 0.2);
}
