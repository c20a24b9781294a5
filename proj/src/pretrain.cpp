// SPDX-License-Identifier: Apache-2.0

#include "ptum/pretrain.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "ptum/util.hpp"

namespace ptum {

BehaviorPool::BehaviorPool(const std::vector<UserRecord>& corpus) : user_count_(corpus.size()) {
    for (std::uint32_t u = 0; u < corpus.size(); ++u)
        for (std::uint32_t b = 0; b < corpus[u].behaviors.size(); ++b)
            entries_.push_back({u, b});
}

std::vector<BehaviorRef> BehaviorPool::draw_negatives(std::size_t count,
                                                      std::uint32_t exclude_user,
                                                      std::mt19937_64& rng) const {
    if (entries_.empty() || user_count_ < 2)
        throw std::runtime_error("behavior pool: need behaviors from at least 2 users");
    std::uniform_int_distribution<std::size_t> pick(0, entries_.size() - 1);
    std::vector<BehaviorRef> out;
    out.reserve(count);
    std::size_t attempts = 0;
    const std::size_t max_attempts = 1000 * (count + 1) + 100 * entries_.size();
    while (out.size() < count) {
        if (++attempts > max_attempts)
            throw std::runtime_error("behavior pool exhausted while sampling negatives");
        BehaviorRef ref = entries_[pick(rng)];
        if (ref.user == exclude_user) continue;  // resample on own-user collision
        if (std::find(out.begin(), out.end(), ref) != out.end()) continue;  // without replacement
        out.push_back(ref);
    }
    return out;
}

void PretrainConfig::validate() const {
    if (negatives < 1) throw std::invalid_argument("pretrain: negatives (P) must be >= 1");
    if (future_k < 1) throw std::invalid_argument("pretrain: future_k (K) must be >= 1");
    if (lambda < 0.0) throw std::invalid_argument("pretrain: lambda must be non-negative");
    if (batch_size < 1) throw std::invalid_argument("pretrain: batch_size must be positive");
    if (epochs < 1) throw std::invalid_argument("pretrain: epochs must be positive");
    if (lr <= 0.0) throw std::invalid_argument("pretrain: lr must be positive");
}

namespace {

CandidateSet pack_candidates(BehaviorRef gold, std::vector<BehaviorRef> negatives,
                             std::mt19937_64& rng) {
    CandidateSet set;
    const std::size_t size = negatives.size() + 1;
    std::uniform_int_distribution<std::size_t> pos(0, size - 1);
    set.gold_index = static_cast<std::uint32_t>(pos(rng));
    set.refs = std::move(negatives);
    set.refs.insert(set.refs.begin() + set.gold_index, gold);
    return set;
}

}  // namespace

std::optional<MbpSample> make_mbp_sample(const std::vector<UserRecord>& corpus,
                                         std::uint32_t user, const BehaviorPool& pool,
                                         int negatives, std::mt19937_64& rng) {
    const auto& behaviors = corpus.at(user).behaviors;
    if (behaviors.size() < 2) return std::nullopt;
    std::uniform_int_distribution<std::size_t> pick(0, behaviors.size() - 1);
    MbpSample s;
    s.user = user;
    s.masked_index = static_cast<std::uint32_t>(pick(rng));
    s.candidates = pack_candidates({user, s.masked_index},
                                   pool.draw_negatives(negatives, user, rng), rng);
    return s;
}

std::optional<NbpSample> make_nbp_sample(const std::vector<UserRecord>& corpus,
                                         std::uint32_t user, const BehaviorPool& pool,
                                         int future_k, int negatives, std::mt19937_64& rng) {
    const auto& behaviors = corpus.at(user).behaviors;
    const std::size_t k = static_cast<std::size_t>(future_k);
    if (behaviors.size() < k + 1) return std::nullopt;
    std::uniform_int_distribution<std::size_t> split(1, behaviors.size() - k);
    NbpSample s;
    s.user = user;
    s.split_n = static_cast<std::uint32_t>(split(rng));
    s.targets.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
        const auto gold_index = static_cast<std::uint32_t>(s.split_n + i);
        s.targets.push_back(pack_candidates({user, gold_index},
                                            pool.draw_negatives(negatives, user, rng), rng));
    }
    return s;
}

Tensor predict_scores(const Tensor& user_embedding, const Tensor& candidate_embeddings) {
    if (user_embedding.ndim() != 1 || candidate_embeddings.ndim() != 2 ||
        candidate_embeddings.dim(1) != user_embedding.dim(0))
        throw std::invalid_argument("predict_scores: dimension mismatch");
    return matvec(candidate_embeddings, user_embedding);
}

namespace {

Tensor encode_candidates(const UserModel& model, const std::vector<UserRecord>& corpus,
                         const CandidateSet& set, std::mt19937_64* dropout_rng) {
    std::vector<Tensor> embs;
    embs.reserve(set.refs.size());
    for (const BehaviorRef& ref : set.refs)
        embs.push_back(
            model.encode_behavior(corpus.at(ref.user).behaviors.at(ref.behavior).tokens, {},
                                  dropout_rng));
    return stack_rows(embs);
}

Tensor mbp_sample_loss(const UserModel& model, const std::vector<UserRecord>& corpus,
                       const MbpSample& s, std::mt19937_64* dropout_rng) {
    Tensor u = model.encode_with_mask_slot(corpus.at(s.user), s.masked_index, dropout_rng);
    Tensor scores = predict_scores(u, encode_candidates(model, corpus, s.candidates, dropout_rng));
    return cross_entropy(scores, static_cast<int>(s.candidates.gold_index));
}

Tensor nbp_sample_loss(const UserModel& model, const std::vector<UserRecord>& corpus,
                       const NbpSample& s, std::mt19937_64* dropout_rng) {
    // User embedding from the first N behaviors only; targets stay unseen.
    const UserRecord& record = corpus.at(s.user);
    std::vector<Tensor> embs;
    std::vector<int> positions;
    for (std::uint32_t i = 0; i < s.split_n; ++i) {
        embs.push_back(model.encode_behavior(record.behaviors[i].tokens, {}, dropout_rng));
        positions.push_back(record.behaviors[i].position);
    }
    Tensor u = model.encode_user(embs, positions, {}, dropout_rng);
    Tensor total;
    for (const CandidateSet& set : s.targets) {
        Tensor scores = predict_scores(u, encode_candidates(model, corpus, set, dropout_rng));
        Tensor ce = cross_entropy(scores, static_cast<int>(set.gold_index));
        total = total.defined() ? add(total, ce) : ce;
    }
    return scale(total, 1.0 / static_cast<double>(s.targets.size()));
}

template <typename Sample, typename LossFn>
Tensor batch_mean(std::span<const Sample> batch, LossFn&& sample_loss) {
    if (batch.empty()) throw std::invalid_argument("loss: empty batch");
    Tensor total;
    for (const Sample& s : batch) {
        Tensor l = sample_loss(s);
        total = total.defined() ? add(total, l) : l;
    }
    return scale(total, 1.0 / static_cast<double>(batch.size()));
}

}  // namespace

Tensor mbp_loss(const UserModel& model, const std::vector<UserRecord>& corpus,
                std::span<const MbpSample> batch, std::mt19937_64* dropout_rng) {
    return batch_mean(batch, [&](const MbpSample& s) {
        return mbp_sample_loss(model, corpus, s, dropout_rng);
    });
}

Tensor nbp_loss(const UserModel& model, const std::vector<UserRecord>& corpus,
                std::span<const NbpSample> batch, std::mt19937_64* dropout_rng) {
    return batch_mean(batch, [&](const NbpSample& s) {
        return nbp_sample_loss(model, corpus, s, dropout_rng);
    });
}

EpochSamples build_epoch_samples(const std::vector<UserRecord>& corpus, const BehaviorPool& pool,
                                 const PretrainConfig& cfg, int epoch) {
    EpochSamples out;
    out.user_order.resize(corpus.size());
    std::iota(out.user_order.begin(), out.user_order.end(), 0u);
    std::mt19937_64 order_rng(mix64(cfg.seed ^ mix64(static_cast<std::uint64_t>(epoch) + 0x5eedULL)));
    std::shuffle(out.user_order.begin(), out.user_order.end(), order_rng);

    out.mbp.resize(corpus.size());
    out.nbp.resize(corpus.size());
    const int n_threads = num_threads_from_env();
    auto build_range = [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            const std::uint32_t user = out.user_order[i];
            std::mt19937_64 rng(derive_seed(cfg.seed, corpus[user].user_id,
                                            static_cast<std::uint64_t>(epoch)));
            out.mbp[i] = make_mbp_sample(corpus, user, pool, cfg.negatives, rng);
            out.nbp[i] = make_nbp_sample(corpus, user, pool, cfg.future_k, cfg.negatives, rng);
        }
    };
    if (n_threads <= 1 || corpus.size() < 2 * static_cast<std::size_t>(n_threads)) {
        build_range(0, corpus.size());
    } else {
        std::vector<std::thread> workers;
        const std::size_t chunk = (corpus.size() + n_threads - 1) / n_threads;
        for (int t = 0; t < n_threads; ++t) {
            const std::size_t lo = t * chunk;
            const std::size_t hi = std::min(corpus.size(), lo + chunk);
            if (lo >= hi) break;
            workers.emplace_back(build_range, lo, hi);
        }
        for (auto& w : workers) w.join();
    }
    return out;
}

std::string PretrainResult::loss_csv() const {
    std::ostringstream out;
    out << "epoch,step,loss_total,loss_mbp,loss_nbp\n";
    for (const PretrainStepLog& s : steps)
        out << s.epoch << ',' << s.step << ',' << format_double(s.loss_total) << ','
            << format_double(s.loss_mbp) << ',' << format_double(s.loss_nbp) << '\n';
    return out.str();
}

PretrainResult pretrain(UserModel& model, const std::vector<UserRecord>& corpus,
                        const PretrainConfig& cfg) {
    cfg.validate();
    std::size_t usable = 0;
    for (const UserRecord& r : corpus) usable += r.behaviors.size() >= 2;
    if (corpus.size() < 2 || usable == 0)
        throw std::runtime_error("pretrain: corpus has no usable users");

    BehaviorPool pool(corpus);
    AdamConfig adam_cfg;
    adam_cfg.lr = cfg.lr;
    AdamOptimizer optimizer(model.params().all(), adam_cfg);

    PretrainResult result;
    int global_step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        EpochSamples samples = build_epoch_samples(corpus, pool, cfg, epoch);
        double epoch_loss_sum = 0.0;
        std::size_t epoch_steps = 0;
        for (std::size_t start = 0; start < corpus.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop =
                std::min(corpus.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<MbpSample> mbp_batch;
            std::vector<NbpSample> nbp_batch;
            for (std::size_t i = start; i < stop; ++i) {
                if (samples.mbp[i])
                    mbp_batch.push_back(*samples.mbp[i]);
                else
                    ++result.skipped_mbp;
                if (samples.nbp[i])
                    nbp_batch.push_back(*samples.nbp[i]);
                else
                    ++result.skipped_nbp;
            }
            if (mbp_batch.empty() && nbp_batch.empty()) continue;

            optimizer.zero_grads();
            PretrainStepLog log;
            log.epoch = epoch;
            log.step = global_step;
            Tensor objective;

            // MBP term (weight 1); still evaluated without gradients when
            // disabled so the log stays complete.
            if (!mbp_batch.empty()) {
                if (cfg.use_mbp) {
                    Tensor l = mbp_loss(model, corpus, mbp_batch);
                    log.loss_mbp = l.item();
                    objective = l;
                } else {
                    NoGradGuard guard;
                    log.loss_mbp = mbp_loss(model, corpus, mbp_batch).item();
                }
            }
            // NBP term, weighted by lambda; evaluated without gradients
            // when the weight is zero.
            if (!nbp_batch.empty()) {
                if (cfg.lambda > 0.0) {
                    Tensor l = nbp_loss(model, corpus, nbp_batch);
                    log.loss_nbp = l.item();
                    Tensor weighted = scale(l, cfg.lambda);
                    objective = objective.defined() ? add(objective, weighted) : weighted;
                } else {
                    NoGradGuard guard;
                    log.loss_nbp = nbp_loss(model, corpus, nbp_batch).item();
                }
            }
            log.loss_total = (cfg.use_mbp ? log.loss_mbp : 0.0) + cfg.lambda * log.loss_nbp;

            if (objective.defined()) {
                backward(objective);
                optimizer.step();
            }
            result.steps.push_back(log);
            epoch_loss_sum += log.loss_total;
            ++epoch_steps;
            ++global_step;
        }
        result.epoch_mean_total.push_back(epoch_steps ? epoch_loss_sum / epoch_steps : 0.0);
    }
    return result;
}

}  // namespace ptum
