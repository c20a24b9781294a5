// SPDX-License-Identifier: Apache-2.0
//
// Config-driven experiment setup. A config file is one JSON document; the
// "profile" key selects the base defaults ("desk" ships as default,
// "paper" mirrors the large-scale settings) and every other key overrides
// a default. The fully expanded effective config serializes alongside
// every output, and its hash tags result rows.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ptum/data.hpp"
#include "ptum/encoders.hpp"
#include "ptum/finetune.hpp"
#include "ptum/pretrain.hpp"
#include "ptum/synthetic.hpp"

namespace ptum {

struct DataPaths {
    std::string pretrain;
    std::string demo;
    std::string ctr;
    std::string ctr_users;
    std::string vocab;
};

struct DataConfig {
    std::optional<SyntheticWorldConfig> synthetic;
    DataPaths paths;
    std::uint64_t min_frequency = 5;
    IngestLimits limits;
};

struct ExperimentConfig {
    std::string profile = "desk";
    std::uint64_t seed = 17;
    DataConfig data;
    ModelConfig model;  // vocab_rows resolved against the vocabulary at load time
    PretrainConfig pretrain;
    FinetuneConfig finetune;
    std::vector<double> label_fractions{0.2, 0.5, 1.0};
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    std::vector<std::string> tasks{"demo", "ctr"};

    static ExperimentConfig defaults(const std::string& profile);
    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig load_file(const std::filesystem::path& path);
    nlohmann::json to_json() const;
    std::string config_hash() const;  // 16 hex chars over the canonical dump
};

// Model config with the word-table row count filled in from a vocabulary.
ModelConfig resolved_model(const ExperimentConfig& cfg, std::size_t vocab_table_rows);

// Everything a run needs, either loaded from the configured paths or
// generated in memory from the synthetic world config (vocabulary built
// over the pretrain corpus).
struct DataBundle {
    Vocabulary vocab;
    std::vector<UserRecord> pretrain;
    std::vector<UserRecord> demo;
    std::vector<UserRecord> ctr_users;
    std::vector<CtrImpression> impressions;
};

struct DataNeeds {
    bool pretrain = false;
    bool demo = false;
    bool ctr = false;
};

DataBundle load_data(const ExperimentConfig& cfg, const DataNeeds& needs);

std::string build_id();  // compiled-in version string

}  // namespace ptum
