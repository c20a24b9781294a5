// SPDX-License-Identifier: Apache-2.0

#include "ptum/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

#include "ptum/util.hpp"

namespace ptum {

std::string to_string(Regime r) {
    switch (r) {
        case Regime::scratch: return "scratch";
        case Regime::frozen: return "frozen";
        case Regime::finetune: return "finetune";
    }
    throw std::logic_error("unknown regime");
}

Regime regime_from_string(const std::string& s) {
    if (s == "scratch") return Regime::scratch;
    if (s == "frozen") return Regime::frozen;
    if (s == "finetune") return Regime::finetune;
    throw std::invalid_argument("unknown regime: " + s);
}

void FinetuneConfig::validate() const {
    if (epochs < 1) throw std::invalid_argument("finetune: epochs must be positive");
    if (batch_size < 1) throw std::invalid_argument("finetune: batch_size must be positive");
    if (lr <= 0.0) throw std::invalid_argument("finetune: lr must be positive");
    if (demo_label_key.empty()) throw std::invalid_argument("finetune: demo_label_key empty");
}

ClassificationHead::ClassificationHead(int input_dim, int n_classes, std::uint64_t init_seed)
    : n_classes_(n_classes) {
    if (input_dim < 1 || n_classes < 2)
        throw std::invalid_argument("classification head: bad dimensions");
    std::mt19937_64 rng(init_seed);
    const auto d = static_cast<std::size_t>(input_dim);
    const auto c = static_cast<std::size_t>(n_classes);
    params_.add("head.w", {c, d}, init_glorot(d, c, rng));
    params_.add("head.b", {c}, std::vector<double>(c, 0.0));
}

Tensor ClassificationHead::logits(const Tensor& user_embedding) const {
    return add(matvec(params_.at("head.w").tensor(), user_embedding),
               params_.at("head.b").tensor());
}

CtrHead::CtrHead(const ModelConfig& model_cfg, std::uint64_t init_seed) {
    std::mt19937_64 rng(init_seed);
    ad_encoder_ = build_text_encoder(params_, "ad_encoder", model_cfg, rng);
}

Tensor CtrHead::score(const UserModel& model, const Tensor& user_embedding,
                      const CtrImpression& impression, std::mt19937_64* dropout_rng) const {
    std::vector<int> tokens = impression.ad_title;
    tokens.insert(tokens.end(), impression.ad_desc.begin(), impression.ad_desc.end());
    Tensor ad = model.encode_text(ad_encoder_, tokens, dropout_rng);
    return dot(user_embedding, ad);
}

// ---- splits -------------------------------------------------------------

SplitIndices stratified_split(const std::vector<int>& labels, std::uint64_t seed) {
    if (labels.empty()) throw std::invalid_argument("split: no examples");
    std::map<int, std::vector<std::size_t>> per_class;
    for (std::size_t i = 0; i < labels.size(); ++i) per_class[labels[i]].push_back(i);
    std::mt19937_64 rng(mix64(seed ^ 0x59117ULL));
    SplitIndices out;
    for (auto& [label, members] : per_class) {
        std::shuffle(members.begin(), members.end(), rng);
        const std::size_t n_test = members.size() / 10;
        const std::size_t n_val = members.size() / 10;
        for (std::size_t i = 0; i < members.size(); ++i) {
            if (i < n_test)
                out.test.push_back(members[i]);
            else if (i < n_test + n_val)
                out.val.push_back(members[i]);
            else
                out.train.push_back(members[i]);
        }
    }
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.val.begin(), out.val.end());
    std::sort(out.test.begin(), out.test.end());
    return out;
}

std::vector<std::size_t> stratified_fraction(const std::vector<std::size_t>& indices,
                                             const std::vector<int>& labels, double fraction) {
    if (fraction <= 0.0 || fraction > 1.0)
        throw std::invalid_argument("label_fraction must be in (0, 1]");
    if (fraction == 1.0) return indices;
    const auto target = static_cast<std::size_t>(fraction * static_cast<double>(indices.size()));
    std::map<int, std::vector<std::size_t>> per_class;
    for (std::size_t idx : indices) per_class[labels[idx]].push_back(idx);

    // Largest-remainder allocation keeps the exact floor(fraction * n)
    // total while staying proportional per class.
    std::vector<std::pair<int, double>> remainders;
    std::map<int, std::size_t> take;
    std::size_t allocated = 0;
    for (const auto& [label, members] : per_class) {
        const double exact = fraction * static_cast<double>(members.size());
        const auto base = static_cast<std::size_t>(exact);
        take[label] = std::min(base, members.size());
        allocated += take[label];
        remainders.emplace_back(label, exact - static_cast<double>(base));
    }
    std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    for (const auto& [label, rem] : remainders) {
        if (allocated >= target) break;
        if (take[label] < per_class[label].size()) {
            ++take[label];
            ++allocated;
        }
    }
    std::vector<std::size_t> out;
    for (const auto& [label, members] : per_class)
        out.insert(out.end(), members.begin(), members.begin() + take[label]);
    std::sort(out.begin(), out.end());
    return out;
}

// ---- shared training plumbing --------------------------------------------

namespace {

// Copy of the current values of a set of parameters; used for best-epoch
// selection.
std::vector<std::vector<double>> snapshot(const std::vector<Parameter*>& params) {
    std::vector<std::vector<double>> out;
    out.reserve(params.size());
    for (const Parameter* p : params) out.push_back(p->tensor().data());
    return out;
}

void restore(const std::vector<Parameter*>& params, const std::vector<std::vector<double>>& snap) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->tensor().mutable_data() = snap[i];
}

// Restores the model's trainable flags on scope exit.
class TrainableScope {
public:
    TrainableScope(UserModel& model, bool trainable) : model_(model) {
        model_.params().set_trainable(trainable);
    }
    ~TrainableScope() { model_.params().set_trainable(true); }

private:
    UserModel& model_;
};

}  // namespace

ClassifierRun train_classifier(UserModel& model, const std::vector<UserRecord>& labeled,
                               const std::string& label_key, Regime regime,
                               double label_fraction, const FinetuneConfig& cfg,
                               std::uint64_t seed) {
    cfg.validate();
    if (labeled.empty()) throw std::invalid_argument("train_classifier: no labeled users");
    std::vector<int> labels(labeled.size());
    int n_classes = 0;
    for (std::size_t i = 0; i < labeled.size(); ++i) {
        auto it = labeled[i].labels.find(label_key);
        if (it == labeled[i].labels.end())
            throw std::invalid_argument("train_classifier: user " + labeled[i].user_id +
                                        " lacks label " + label_key);
        if (it->second < 0) throw std::invalid_argument("train_classifier: negative label");
        labels[i] = it->second;
        n_classes = std::max(n_classes, it->second + 1);
    }
    if (n_classes < 2) throw std::invalid_argument("train_classifier: needs >= 2 classes");

    SplitIndices split = stratified_split(labels, seed);
    std::vector<std::size_t> train_idx = stratified_fraction(split.train, labels, label_fraction);

    ClassifierRun run;
    run.n_train = train_idx.size();
    run.n_val = split.val.size();
    run.n_test = split.test.size();
    {
        std::vector<bool> seen(n_classes, false);
        for (std::size_t idx : train_idx) seen[labels[idx]] = true;
        for (int c = 0; c < n_classes; ++c)
            if (!seen[c]) ++run.missing_train_classes;
    }
    if (train_idx.empty()) throw std::invalid_argument("train_classifier: empty train split");

    run.head = std::make_unique<ClassificationHead>(model.behavior_dim(), n_classes,
                                                    mix64(seed ^ 0xC1A55ULL));

    const bool frozen = regime == Regime::frozen;
    TrainableScope scope(model, !frozen);

    // Frozen user model: embeddings are constant, compute each user once.
    std::unordered_map<std::size_t, Tensor> cached;
    auto user_embedding = [&](std::size_t idx, bool with_grad) -> Tensor {
        if (frozen) {
            auto it = cached.find(idx);
            if (it != cached.end()) return it->second;
            NoGradGuard guard;
            Tensor u = model.encode_user_record(labeled[idx]);
            cached.emplace(idx, u);
            return u;
        }
        if (with_grad) return model.encode_user_record(labeled[idx]);
        NoGradGuard guard;
        return model.encode_user_record(labeled[idx]);
    };

    auto eval_accuracy = [&](const std::vector<std::size_t>& idxs) {
        std::vector<int> preds, gold;
        preds.reserve(idxs.size());
        gold.reserve(idxs.size());
        NoGradGuard guard;
        for (std::size_t idx : idxs) {
            Tensor logit = run.head->logits(user_embedding(idx, false));
            const auto& v = logit.data();
            preds.push_back(static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin()));
            gold.push_back(labels[idx]);
        }
        return std::pair{preds, gold};
    };

    std::vector<Parameter*> trainable = run.head->params().all();
    if (!frozen) {
        auto model_params = model.params().all();
        trainable.insert(trainable.end(), model_params.begin(), model_params.end());
    }
    AdamConfig adam_cfg;
    adam_cfg.lr = cfg.lr;
    AdamOptimizer optimizer(trainable, adam_cfg);

    std::mt19937_64 order_rng(mix64(seed ^ 0x0def1ULL));
    std::mt19937_64 dropout_rng(mix64(seed ^ 0xd120ULL));
    const bool use_dropout = model.config().dropout > 0.0;
    double best_val = -1.0;
    std::vector<std::vector<double>> best_snapshot;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::size_t> order = train_idx;
        std::shuffle(order.begin(), order.end(), order_rng);
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop =
                std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<Tensor> logit_rows;
            std::vector<int> gold;
            for (std::size_t i = start; i < stop; ++i) {
                Tensor u = user_embedding(order[i], true);
                logit_rows.push_back(
                    run.head->logits(use_dropout && !frozen ? dropout(u, model.config().dropout,
                                                                      dropout_rng)
                                                            : u));
                gold.push_back(labels[order[i]]);
            }
            Tensor loss = cross_entropy(stack_rows(logit_rows), gold);
            optimizer.zero_grads();
            backward(loss);
            optimizer.step();
        }
        auto [preds, gold] = eval_accuracy(split.val);
        const double val_acc = split.val.empty() ? 0.0 : accuracy(preds, gold);
        run.val_accuracy.push_back(val_acc);
        if (val_acc > best_val) {
            best_val = val_acc;
            run.best_epoch = epoch;
            best_snapshot = snapshot(trainable);
        }
    }
    if (!best_snapshot.empty()) restore(trainable, best_snapshot);

    auto [preds, gold] = eval_accuracy(split.test);
    run.report.n_examples = split.test.size();
    for (int g : gold) ++run.report.class_support[g];
    run.report.metrics["accuracy"] = accuracy(preds, gold);
    run.report.metrics["macro_f"] = macro_f(preds, gold, n_classes);
    return run;
}

// ---- CTR ------------------------------------------------------------------

namespace {

struct CtrData {
    std::vector<std::size_t> user_of_impression;  // into ctr_users
    std::vector<int> clicks;
};

CtrData index_impressions(const std::vector<UserRecord>& ctr_users,
                          const std::vector<CtrImpression>& impressions) {
    std::unordered_map<std::string, std::size_t> by_id;
    for (std::size_t i = 0; i < ctr_users.size(); ++i) by_id[ctr_users[i].user_id] = i;
    CtrData data;
    data.user_of_impression.reserve(impressions.size());
    data.clicks.reserve(impressions.size());
    for (const CtrImpression& imp : impressions) {
        auto it = by_id.find(imp.user_id);
        if (it == by_id.end())
            throw std::invalid_argument("train_ctr: impression for unknown user " + imp.user_id);
        data.user_of_impression.push_back(it->second);
        data.clicks.push_back(imp.click);
    }
    return data;
}

}  // namespace

CtrRun train_ctr(UserModel& model, const std::vector<UserRecord>& ctr_users,
                 const std::vector<CtrImpression>& impressions, Regime regime,
                 double label_fraction, const FinetuneConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    if (impressions.empty()) throw std::invalid_argument("train_ctr: no impressions");
    CtrData data = index_impressions(ctr_users, impressions);

    SplitIndices split = stratified_split(data.clicks, seed);
    std::vector<std::size_t> train_idx = stratified_fraction(split.train, data.clicks, label_fraction);
    if (train_idx.empty()) throw std::invalid_argument("train_ctr: empty train split");

    CtrRun run;
    run.n_train = train_idx.size();
    run.n_val = split.val.size();
    run.n_test = split.test.size();
    run.head = std::make_unique<CtrHead>(model.config(), mix64(seed ^ 0xC7215ULL));

    const bool frozen = regime == Regime::frozen;
    TrainableScope scope(model, !frozen);

    std::unordered_map<std::size_t, Tensor> cached;
    auto user_embedding = [&](std::size_t user, bool with_grad) -> Tensor {
        if (frozen) {
            auto it = cached.find(user);
            if (it != cached.end()) return it->second;
            NoGradGuard guard;
            Tensor u = model.encode_user_record(ctr_users[user]);
            cached.emplace(user, u);
            return u;
        }
        if (with_grad) return model.encode_user_record(ctr_users[user]);
        NoGradGuard guard;
        return model.encode_user_record(ctr_users[user]);
    };

    auto eval_scores = [&](const std::vector<std::size_t>& idxs) {
        std::vector<double> scores;
        std::vector<int> labels;
        scores.reserve(idxs.size());
        labels.reserve(idxs.size());
        NoGradGuard guard;
        for (std::size_t idx : idxs) {
            Tensor s = run.head->score(model, user_embedding(data.user_of_impression[idx], false),
                                       impressions[idx]);
            scores.push_back(s.item());
            labels.push_back(data.clicks[idx]);
        }
        return std::pair{scores, labels};
    };

    std::vector<Parameter*> trainable = run.head->params().all();
    if (!frozen) {
        auto model_params = model.params().all();
        trainable.insert(trainable.end(), model_params.begin(), model_params.end());
    }
    AdamConfig adam_cfg;
    adam_cfg.lr = cfg.lr;
    AdamOptimizer optimizer(trainable, adam_cfg);

    std::mt19937_64 order_rng(mix64(seed ^ 0x0def2ULL));
    std::mt19937_64 dropout_rng(mix64(seed ^ 0xd121ULL));
    std::mt19937_64* drop = model.config().dropout > 0.0 && !frozen ? &dropout_rng : nullptr;
    double best_val = -1.0;
    std::vector<std::vector<double>> best_snapshot;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::size_t> order = train_idx;
        std::shuffle(order.begin(), order.end(), order_rng);
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop =
                std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<Tensor> scores;
            std::vector<double> targets;
            for (std::size_t i = start; i < stop; ++i) {
                const std::size_t idx = order[i];
                Tensor u = user_embedding(data.user_of_impression[idx], true);
                scores.push_back(run.head->score(model, u, impressions[idx], drop));
                targets.push_back(static_cast<double>(data.clicks[idx]));
            }
            Tensor logits = reshape(stack_rows(scores), {scores.size()});
            Tensor loss = bce_with_logits(logits, targets);
            optimizer.zero_grads();
            backward(loss);
            optimizer.step();
        }
        auto [scores, labels] = eval_scores(split.val);
        const double val_auc = roc_auc(scores, labels);
        run.val_auc.push_back(val_auc);
        if (val_auc > best_val) {
            best_val = val_auc;
            run.best_epoch = epoch;
            best_snapshot = snapshot(trainable);
        }
    }
    if (!best_snapshot.empty()) restore(trainable, best_snapshot);

    auto [scores, labels] = eval_scores(split.test);
    run.report.n_examples = split.test.size();
    for (int y : labels) ++run.report.class_support[y];
    run.report.metrics["auc"] = roc_auc(scores, labels);
    run.report.metrics["ap"] = average_precision(scores, labels);
    return run;
}

MetricsReport evaluate_classifier(const UserModel& model, const ClassificationHead& head,
                                  const std::vector<UserRecord>& records,
                                  const std::string& label_key) {
    if (records.empty()) throw std::invalid_argument("evaluate: no records");
    NoGradGuard guard;
    std::vector<int> preds, gold;
    for (const UserRecord& rec : records) {
        auto it = rec.labels.find(label_key);
        if (it == rec.labels.end())
            throw std::invalid_argument("evaluate: user " + rec.user_id + " lacks label " +
                                        label_key);
        Tensor logit = head.logits(model.encode_user_record(rec));
        const auto& v = logit.data();
        preds.push_back(static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin()));
        gold.push_back(it->second);
    }
    MetricsReport report;
    report.n_examples = records.size();
    for (int g : gold) ++report.class_support[g];
    report.metrics["accuracy"] = accuracy(preds, gold);
    report.metrics["macro_f"] = macro_f(preds, gold, head.n_classes());
    return report;
}

MetricsReport evaluate_ctr(const UserModel& model, const CtrHead& head,
                           const std::vector<UserRecord>& ctr_users,
                           const std::vector<CtrImpression>& impressions) {
    if (impressions.empty()) throw std::invalid_argument("evaluate: no impressions");
    CtrData data = index_impressions(ctr_users, impressions);
    NoGradGuard guard;
    std::unordered_map<std::size_t, Tensor> cached;
    std::vector<double> scores;
    for (std::size_t i = 0; i < impressions.size(); ++i) {
        const std::size_t user = data.user_of_impression[i];
        auto it = cached.find(user);
        if (it == cached.end())
            it = cached.emplace(user, model.encode_user_record(ctr_users[user])).first;
        scores.push_back(head.score(model, it->second, impressions[i]).item());
    }
    MetricsReport report;
    report.n_examples = impressions.size();
    for (int y : data.clicks) ++report.class_support[y];
    report.metrics["auc"] = roc_auc(scores, data.clicks);
    report.metrics["ap"] = average_precision(scores, data.clicks);
    return report;
}

}  // namespace ptum
