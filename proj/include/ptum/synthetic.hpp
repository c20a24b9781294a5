// SPDX-License-Identifier: Apache-2.0
//
// Synthetic behavior-log generator with planted group/topic structure.
// Each user belongs to a latent group; behaviors draw a topic from the
// group's mixture and title words from the topic's word block. Demographic
// label = group; CTR clicks follow a group-by-topic affinity matrix.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ptum {

struct SyntheticWorldConfig {
    int n_groups = 4;
    int n_topics = 12;
    int vocab_size = 4000;        // word inventory w0..w{V-1}
    int words_per_topic = 250;
    int min_behaviors = 4;        // behaviors per user, inclusive range
    int max_behaviors = 12;
    int min_title_len = 3;        // words per title, inclusive range
    int max_title_len = 8;
    // Probability mass a group's topic mixture spreads uniformly over all
    // topics; the rest concentrates on the group's own topic block.
    double mixture_concentration = 0.5;
    // Probability a title word comes from the topic block rather than the
    // shared tail of the vocabulary.
    double topic_word_mass = 0.85;
    // G x T row-major; built from affinity_scale (+ own block, - others)
    // when left empty.
    std::vector<double> ctr_affinity;
    double affinity_scale = 2.5;

    int n_pretrain_users = 10000;
    int n_demo_users = 2000;
    int n_ctr_users = 2000;
    int impressions_per_ctr_user = 5;
    std::uint64_t seed = 17;

    void validate() const;
    // Effective mixture (G x T, rows sum to 1) and affinity (G x T).
    std::vector<double> group_topic_mixture() const;
    std::vector<double> effective_affinity() const;
};

struct SyntheticUser {
    std::string user_id;
    int group = 0;
    std::vector<std::string> titles;
};

struct SyntheticImpression {
    std::string user_id;
    std::string ad_title;
    std::string ad_desc;
    int ad_topic = 0;
    int click = 0;
};

struct SyntheticWorld {
    std::vector<SyntheticUser> pretrain_users;
    std::vector<SyntheticUser> demo_users;
    std::vector<SyntheticUser> ctr_users;
    std::vector<SyntheticImpression> impressions;
};

SyntheticWorld generate_synthetic(const SyntheticWorldConfig& cfg);

// JSONL writers used by gen-data; deterministic byte-for-byte given the
// same world. label_key may be empty to omit labels.
std::string behavior_jsonl(const std::vector<SyntheticUser>& users, const std::string& label_key);
std::string ctr_jsonl(const std::vector<SyntheticImpression>& impressions);

}  // namespace ptum
