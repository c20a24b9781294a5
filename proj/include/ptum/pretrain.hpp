// SPDX-License-Identifier: Apache-2.0
//
// Self-supervised pre-training: masked behavior prediction (mask one
// behavior, pick it out of P+1 candidates) and next-K behavior prediction
// (from the first N behaviors, pick each of the K following ones out of
// its own P+1 candidates). Candidates score by dot product against the
// user embedding; the joint objective is mbp + lambda * nbp.

#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "ptum/data.hpp"
#include "ptum/encoders.hpp"
#include "ptum/tensor.hpp"

namespace ptum {

// A behavior referenced by (user index, behavior index) into the corpus;
// keeping provenance makes negative-sampling hygiene checkable.
struct BehaviorRef {
    std::uint32_t user = 0;
    std::uint32_t behavior = 0;
    bool operator==(const BehaviorRef&) const = default;
};

// P+1 candidates, exactly one of which (at gold_index) is the real one.
struct CandidateSet {
    std::vector<BehaviorRef> refs;
    std::uint32_t gold_index = 0;
};

struct MbpSample {
    std::uint32_t user = 0;
    std::uint32_t masked_index = 0;
    CandidateSet candidates;
};

struct NbpSample {
    std::uint32_t user = 0;
    std::uint32_t split_n = 0;            // inputs are behaviors [0, split_n)
    std::vector<CandidateSet> targets;    // one set per future behavior, size K
};

// Uniform sampler over every behavior in the corpus, with rejection on the
// excluded user. Built once per corpus.
class BehaviorPool {
public:
    explicit BehaviorPool(const std::vector<UserRecord>& corpus);
    std::size_t size() const { return entries_.size(); }
    std::size_t user_count() const { return user_count_; }

    // Draws `count` distinct behaviors of users != exclude_user.
    std::vector<BehaviorRef> draw_negatives(std::size_t count, std::uint32_t exclude_user,
                                            std::mt19937_64& rng) const;

private:
    std::vector<BehaviorRef> entries_;
    std::size_t user_count_ = 0;
};

struct PretrainConfig {
    int negatives = 4;        // P
    int future_k = 2;         // K
    double lambda = 1.0;      // NBP weight
    bool use_mbp = true;      // disabled only for ablations
    int batch_size = 64;
    int epochs = 2;
    double lr = 1e-3;
    std::uint64_t seed = 17;

    void validate() const;
};

// Masked index uniform over the user's behaviors; skip signal (nullopt)
// for users with fewer than 2 behaviors.
std::optional<MbpSample> make_mbp_sample(const std::vector<UserRecord>& corpus,
                                         std::uint32_t user, const BehaviorPool& pool,
                                         int negatives, std::mt19937_64& rng);

// N uniform over [1, n-K]; skip signal for users with fewer than K+1
// behaviors.
std::optional<NbpSample> make_nbp_sample(const std::vector<UserRecord>& corpus,
                                         std::uint32_t user, const BehaviorPool& pool,
                                         int future_k, int negatives, std::mt19937_64& rng);

// score_i = u . r_i over the stacked candidate embeddings.
Tensor predict_scores(const Tensor& user_embedding, const Tensor& candidate_embeddings);

// Batch means of the two objectives (empty batch is an error).
Tensor mbp_loss(const UserModel& model, const std::vector<UserRecord>& corpus,
                std::span<const MbpSample> batch, std::mt19937_64* dropout_rng = nullptr);
Tensor nbp_loss(const UserModel& model, const std::vector<UserRecord>& corpus,
                std::span<const NbpSample> batch, std::mt19937_64* dropout_rng = nullptr);

struct PretrainStepLog {
    int epoch = 0;
    int step = 0;
    double loss_total = 0.0;
    double loss_mbp = 0.0;
    double loss_nbp = 0.0;
};

struct PretrainResult {
    std::vector<PretrainStepLog> steps;
    std::vector<double> epoch_mean_total;
    std::size_t skipped_mbp = 0;   // user visits too short for MBP
    std::size_t skipped_nbp = 0;   // user visits too short for NBP
    std::string loss_csv() const;  // epoch,step,loss_total,loss_mbp,loss_nbp
};

// Per epoch each user contributes one MBP and (when long enough) one NBP
// sample with fresh mask/split/negatives; one Adam step per batch. Sample
// construction runs on PTUM_NUM_THREADS workers with per-user seeded
// streams, so thread count never changes the result.
PretrainResult pretrain(UserModel& model, const std::vector<UserRecord>& corpus,
                        const PretrainConfig& cfg);

// Epoch's worth of samples in deterministic order; used by pretrain() and
// by hygiene checks.
struct EpochSamples {
    std::vector<std::uint32_t> user_order;
    std::vector<std::optional<MbpSample>> mbp;  // aligned with user_order
    std::vector<std::optional<NbpSample>> nbp;
};
EpochSamples build_epoch_samples(const std::vector<UserRecord>& corpus, const BehaviorPool& pool,
                                 const PretrainConfig& cfg, int epoch);

}  // namespace ptum
