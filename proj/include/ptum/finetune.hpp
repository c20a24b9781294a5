// SPDX-License-Identifier: Apache-2.0
//
// Downstream heads and the three training regimes: scratch (random init,
// train everything), frozen (pre-trained user model fixed, train the head
// and, for CTR, the ad encoder), finetune (pre-trained, train everything).

#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "ptum/data.hpp"
#include "ptum/encoders.hpp"
#include "ptum/metrics.hpp"
#include "ptum/optim.hpp"

namespace ptum {

enum class Regime { scratch, frozen, finetune };

std::string to_string(Regime r);
Regime regime_from_string(const std::string& s);

struct FinetuneConfig {
    int epochs = 8;
    int batch_size = 32;
    double lr = 1e-3;
    std::string demo_label_key = "group";

    void validate() const;
};

// Linear classifier over the user embedding.
class ClassificationHead {
public:
    ClassificationHead(int input_dim, int n_classes, std::uint64_t init_seed);
    Tensor logits(const Tensor& user_embedding) const;
    int n_classes() const { return n_classes_; }
    ParameterRegistry& params() { return params_; }
    const ParameterRegistry& params() const { return params_; }

private:
    ParameterRegistry params_;
    int n_classes_;
};

// Ad encoder (same architecture class as the behavior encoder, separate
// weights, shared word table) plus the dot-product scorer.
class CtrHead {
public:
    CtrHead(const ModelConfig& model_cfg, std::uint64_t init_seed);
    // Click logit for one impression; ad text is title followed by
    // description.
    Tensor score(const UserModel& model, const Tensor& user_embedding,
                 const CtrImpression& impression, std::mt19937_64* dropout_rng = nullptr) const;
    ParameterRegistry& params() { return params_; }
    const ParameterRegistry& params() const { return params_; }

private:
    ParameterRegistry params_;
    detail::EncoderParams ad_encoder_;
};

struct ClassifierRun {
    std::unique_ptr<ClassificationHead> head;
    MetricsReport report;                // test accuracy + macro_f
    int best_epoch = -1;                 // selected by validation accuracy
    std::vector<double> val_accuracy;    // per epoch
    std::size_t n_train = 0, n_val = 0, n_test = 0;
    std::size_t missing_train_classes = 0;
};

// Stratified 80/10/10 user split; label_fraction then subsamples the train
// portion per class. In the frozen regime the user model receives no
// updates and user embeddings are computed once.
ClassifierRun train_classifier(UserModel& model, const std::vector<UserRecord>& labeled,
                               const std::string& label_key, Regime regime,
                               double label_fraction, const FinetuneConfig& cfg,
                               std::uint64_t seed);

struct CtrRun {
    std::unique_ptr<CtrHead> head;
    MetricsReport report;                // test auc + ap
    int best_epoch = -1;                 // selected by validation AUC
    std::vector<double> val_auc;
    std::size_t n_train = 0, n_val = 0, n_test = 0;
};

// Impression-level stratified split on the click label; binary
// cross-entropy on sigmoid(u . ad).
CtrRun train_ctr(UserModel& model, const std::vector<UserRecord>& ctr_users,
                 const std::vector<CtrImpression>& impressions, Regime regime,
                 double label_fraction, const FinetuneConfig& cfg, std::uint64_t seed);

// Evaluation without training (used by `evaluate` and checkpoint tests).
MetricsReport evaluate_classifier(const UserModel& model, const ClassificationHead& head,
                                  const std::vector<UserRecord>& records,
                                  const std::string& label_key);
MetricsReport evaluate_ctr(const UserModel& model, const CtrHead& head,
                           const std::vector<UserRecord>& ctr_users,
                           const std::vector<CtrImpression>& impressions);

// Deterministic stratified 80/10/10 split over labels; exposed for split
// reuse by `evaluate`.
struct SplitIndices {
    std::vector<std::size_t> train, val, test;
};
SplitIndices stratified_split(const std::vector<int>& labels, std::uint64_t seed);

// Largest-remainder per-class subsample of exactly floor(fraction * n)
// items, preserving order within classes.
std::vector<std::size_t> stratified_fraction(const std::vector<std::size_t>& indices,
                                             const std::vector<int>& labels, double fraction);

}  // namespace ptum
