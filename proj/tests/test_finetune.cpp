// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "ptum/config.hpp"
#include "ptum/finetune.hpp"

using namespace ptum;

namespace {

// A small labeled world loaded through the standard synthetic path.
ExperimentConfig small_experiment(std::uint64_t seed) {
    ExperimentConfig cfg = ExperimentConfig::defaults("desk");
    SyntheticWorldConfig world;
    world.n_groups = 3;
    world.n_topics = 6;
    world.vocab_size = 300;
    world.words_per_topic = 40;
    world.min_behaviors = 4;
    world.max_behaviors = 8;
    world.min_title_len = 3;
    world.max_title_len = 6;
    world.n_pretrain_users = 50;
    world.n_demo_users = 300;
    world.n_ctr_users = 150;
    world.impressions_per_ctr_user = 4;
    world.seed = seed;
    cfg.data.synthetic = world;
    cfg.seed = seed;
    cfg.model.behavior_encoder.word_dim = 8;
    cfg.model.behavior_encoder.n_heads = 2;
    cfg.model.behavior_encoder.head_dim = 4;
    cfg.model.behavior_encoder.attn_query_dim = 8;
    cfg.model.user_encoder.n_heads = 2;
    cfg.model.user_encoder.head_dim = 4;
    cfg.model.user_encoder.attn_query_dim = 8;
    cfg.finetune.epochs = 3;
    return cfg;
}

}  // namespace

TEST_CASE("stratified split is 80/10/10 per class and fraction subsets exactly") {
    std::vector<int> labels;
    for (int c = 0; c < 4; ++c) labels.insert(labels.end(), 100, c);
    SplitIndices split = stratified_split(labels, 7);
    CHECK(split.train.size() == 320);
    CHECK(split.val.size() == 40);
    CHECK(split.test.size() == 40);
    for (int c = 0; c < 4; ++c) {
        const auto in_class = [&](const std::vector<std::size_t>& v) {
            return std::count_if(v.begin(), v.end(), [&](std::size_t i) { return labels[i] == c; });
        };
        CHECK(in_class(split.train) == 80);
        CHECK(in_class(split.val) == 10);
        CHECK(in_class(split.test) == 10);
    }

    auto fifth = stratified_fraction(split.train, labels, 0.2);
    CHECK(fifth.size() == 64);  // floor(0.2 * 320)
    for (int c = 0; c < 4; ++c)
        CHECK(std::count_if(fifth.begin(), fifth.end(),
                            [&](std::size_t i) { return labels[i] == c; }) == 16);

    // splits are deterministic in the seed
    SplitIndices again = stratified_split(labels, 7);
    CHECK(again.train == split.train);
    SplitIndices other = stratified_split(labels, 8);
    CHECK(other.train != split.train);
}

TEST_CASE("fraction one returns the train split unchanged") {
    std::vector<int> labels = {0, 0, 0, 1, 1, 1};
    std::vector<std::size_t> idx = {0, 1, 2, 3, 4, 5};
    CHECK(stratified_fraction(idx, labels, 1.0) == idx);
    CHECK_THROWS_AS(stratified_fraction(idx, labels, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(stratified_fraction(idx, labels, 1.5), std::invalid_argument);
}

TEST_CASE("classification head produces per-class logits") {
    ClassificationHead head(6, 3, 99);
    Tensor u = Tensor::from_data({6}, {0.1, -0.2, 0.3, 0.0, 0.5, -0.4});
    Tensor l = head.logits(u);
    CHECK(l.shape() == std::vector<std::size_t>{3});
    CHECK_THROWS_AS(ClassificationHead(6, 1, 0), std::invalid_argument);
}

TEST_CASE("frozen regime leaves user-model parameters bit-identical") {
    ExperimentConfig cfg = small_experiment(501);
    DataBundle data = load_data(cfg, {.demo = true, .ctr = true});
    UserModel model(resolved_model(cfg, data.vocab.table_rows()), 2201);

    std::vector<std::vector<double>> before;
    for (Parameter* p : model.params().all()) before.push_back(p->tensor().data());

    ClassifierRun run = train_classifier(model, data.demo, "group", Regime::frozen, 0.5,
                                         cfg.finetune, 7);
    auto params = model.params().all();
    for (std::size_t i = 0; i < params.size(); ++i)
        CHECK(params[i]->tensor().data() == before[i]);
    CHECK(run.report.metrics.count("accuracy") == 1);
    CHECK(run.report.metrics.count("macro_f") == 1);

    CtrRun ctr = train_ctr(model, data.ctr_users, data.impressions, Regime::frozen, 0.5,
                           cfg.finetune, 7);
    for (std::size_t i = 0; i < params.size(); ++i)
        CHECK(params[i]->tensor().data() == before[i]);
    CHECK(ctr.report.metrics.count("auc") == 1);
    CHECK(ctr.report.metrics.count("ap") == 1);
}

TEST_CASE("finetune regime does update the user model") {
    ExperimentConfig cfg = small_experiment(503);
    DataBundle data = load_data(cfg, {.demo = true});
    UserModel model(resolved_model(cfg, data.vocab.table_rows()), 2203);
    std::vector<double> word_before = model.params().at("word_emb").tensor().data();
    train_classifier(model, data.demo, "group", Regime::finetune, 0.5, cfg.finetune, 7);
    CHECK(model.params().at("word_emb").tensor().data() != word_before);
}

TEST_CASE("untrained model scores near chance AUC on balanced impressions") {
    ExperimentConfig cfg = small_experiment(505);
    cfg.data.synthetic->n_ctr_users = 1000;
    cfg.data.synthetic->impressions_per_ctr_user = 5;
    // zero affinity -> clicks are fair coin flips, balanced in expectation
    cfg.data.synthetic->ctr_affinity.assign(
        static_cast<std::size_t>(cfg.data.synthetic->n_groups) * cfg.data.synthetic->n_topics, 0.0);
    DataBundle data = load_data(cfg, {.ctr = true});
    REQUIRE(data.impressions.size() == 5000);
    UserModel model(resolved_model(cfg, data.vocab.table_rows()), 2205);
    CtrHead head(model.config(), 42);
    MetricsReport report = evaluate_ctr(model, head, data.ctr_users, data.impressions);
    CHECK(std::abs(report.metrics.at("auc") - 0.5) < 0.03);
}

TEST_CASE("single-class test split makes AUC an error") {
    ExperimentConfig cfg = small_experiment(507);
    cfg.data.synthetic->n_ctr_users = 20;
    cfg.data.synthetic->impressions_per_ctr_user = 2;
    DataBundle data = load_data(cfg, {.ctr = true});
    UserModel model(resolved_model(cfg, data.vocab.table_rows()), 2207);
    CtrHead head(model.config(), 43);
    std::vector<CtrImpression> all_clicked = data.impressions;
    for (auto& imp : all_clicked) imp.click = 1;
    CHECK_THROWS_AS(evaluate_ctr(model, head, data.ctr_users, all_clicked),
                    std::invalid_argument);
}

TEST_CASE("evaluation of a fixed model is deterministic") {
    ExperimentConfig cfg = small_experiment(509);
    DataBundle data = load_data(cfg, {.demo = true});
    UserModel model(resolved_model(cfg, data.vocab.table_rows()), 2209);
    ClassificationHead head(model.behavior_dim(), 3, 17);
    MetricsReport a = evaluate_classifier(model, head, data.demo, "group");
    MetricsReport b = evaluate_classifier(model, head, data.demo, "group");
    CHECK(a.metrics.at("accuracy") == b.metrics.at("accuracy"));
    CHECK(a.metrics.at("macro_f") == b.metrics.at("macro_f"));
}

TEST_CASE("training improves over the untrained baseline on planted data") {
    ExperimentConfig cfg = small_experiment(511);
    DataBundle data = load_data(cfg, {.demo = true});
    UserModel model(resolved_model(cfg, data.vocab.table_rows()), 2211);
    cfg.finetune.epochs = 10;
    cfg.finetune.lr = 2e-3;
    ClassifierRun run = train_classifier(model, data.demo, "group", Regime::finetune, 1.0,
                                         cfg.finetune, 3);
    CHECK(run.report.metrics.at("accuracy") > 1.0 / 3.0 + 0.2);
    CHECK(run.best_epoch >= 0);
    CHECK(run.val_accuracy.size() == 10);
}
