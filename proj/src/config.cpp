// SPDX-License-Identifier: Apache-2.0

#include "ptum/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ptum/util.hpp"

#ifndef PTUM_BUILD_ID
#define PTUM_BUILD_ID "unknown"
#endif

namespace ptum {

using nlohmann::json;

namespace {

[[noreturn]] void config_error(const std::string& what) {
    throw std::invalid_argument("config: " + what);
}

// Strict object reader: every key must be consumed.
class ObjectReader {
public:
    ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j.is_object()) config_error(path_ + " must be an object");
    }

    ~ObjectReader() = default;

    template <typename T>
    void read(const char* key, T& out) {
        auto it = j_.find(key);
        if (it == j_.end()) return;
        seen_.push_back(key);
        try {
            out = it->get<T>();
        } catch (const json::exception&) {
            config_error(path_ + "." + key + " has the wrong type");
        }
    }

    bool has(const char* key) {
        if (j_.contains(key)) {
            seen_.push_back(key);
            return true;
        }
        return false;
    }

    const json& sub(const char* key) { return j_.at(key); }

    void finish() const {
        for (const auto& [key, value] : j_.items()) {
            if (std::find(seen_.begin(), seen_.end(), key) == seen_.end())
                config_error("unknown key " + path_ + "." + key);
        }
    }

private:
    const json& j_;
    std::string path_;
    std::vector<std::string> seen_;
};

SyntheticWorldConfig synthetic_from_json(const json& j) {
    SyntheticWorldConfig cfg;
    ObjectReader r(j, "data.synthetic");
    r.read("n_groups", cfg.n_groups);
    r.read("n_topics", cfg.n_topics);
    r.read("vocab_size", cfg.vocab_size);
    r.read("words_per_topic", cfg.words_per_topic);
    r.read("min_behaviors", cfg.min_behaviors);
    r.read("max_behaviors", cfg.max_behaviors);
    r.read("min_title_len", cfg.min_title_len);
    r.read("max_title_len", cfg.max_title_len);
    r.read("mixture_concentration", cfg.mixture_concentration);
    r.read("topic_word_mass", cfg.topic_word_mass);
    r.read("ctr_affinity", cfg.ctr_affinity);
    r.read("affinity_scale", cfg.affinity_scale);
    r.read("n_pretrain_users", cfg.n_pretrain_users);
    r.read("n_demo_users", cfg.n_demo_users);
    r.read("n_ctr_users", cfg.n_ctr_users);
    r.read("impressions_per_ctr_user", cfg.impressions_per_ctr_user);
    r.read("seed", cfg.seed);
    r.finish();
    cfg.validate();
    return cfg;
}

json synthetic_to_json(const SyntheticWorldConfig& cfg) {
    json j;
    j["n_groups"] = cfg.n_groups;
    j["n_topics"] = cfg.n_topics;
    j["vocab_size"] = cfg.vocab_size;
    j["words_per_topic"] = cfg.words_per_topic;
    j["min_behaviors"] = cfg.min_behaviors;
    j["max_behaviors"] = cfg.max_behaviors;
    j["min_title_len"] = cfg.min_title_len;
    j["max_title_len"] = cfg.max_title_len;
    j["mixture_concentration"] = cfg.mixture_concentration;
    j["topic_word_mass"] = cfg.topic_word_mass;
    if (!cfg.ctr_affinity.empty()) j["ctr_affinity"] = cfg.ctr_affinity;
    j["affinity_scale"] = cfg.affinity_scale;
    j["n_pretrain_users"] = cfg.n_pretrain_users;
    j["n_demo_users"] = cfg.n_demo_users;
    j["n_ctr_users"] = cfg.n_ctr_users;
    j["impressions_per_ctr_user"] = cfg.impressions_per_ctr_user;
    j["seed"] = cfg.seed;
    return j;
}

void encoder_from_json(const json& j, const std::string& path, EncoderVariant& variant,
                       int* word_dim, int& n_heads, int& head_dim, int& query_dim,
                       int* max_positions) {
    ObjectReader r(j, path);
    std::string v = to_string(variant);
    r.read("variant", v);
    variant = encoder_variant_from_string(v);
    if (word_dim) r.read("word_dim", *word_dim);
    r.read("n_heads", n_heads);
    r.read("head_dim", head_dim);
    r.read("attn_query_dim", query_dim);
    if (max_positions) r.read("max_positions", *max_positions);
    r.finish();
}

}  // namespace

ExperimentConfig ExperimentConfig::defaults(const std::string& profile) {
    ExperimentConfig cfg;
    cfg.profile = profile;
    if (profile == "desk") {
        cfg.data.min_frequency = 5;
        cfg.data.limits = {12, 30};
        cfg.data.synthetic = SyntheticWorldConfig{};
        cfg.model.behavior_encoder = {EncoderVariant::attn_pool, 32, 4, 8, 32};
        cfg.model.user_encoder = {EncoderVariant::attn_pool, 4, 8, 32, 128};
        cfg.model.mask_mode = MaskMode::replace;
        cfg.model.dropout = 0.0;
        cfg.pretrain = {4, 2, 1.0, true, 8, 2, 1e-2, 17};
        cfg.finetune = {30, 32, 5e-4, "group"};
    } else if (profile == "paper") {
        // Large-scale settings; not exercised by the shipped experiments.
        cfg.data.min_frequency = 30;
        cfg.data.limits = {30, 100};
        cfg.model.behavior_encoder = {EncoderVariant::self_attn, 300, 16, 16, 200};
        cfg.model.user_encoder = {EncoderVariant::self_attn, 16, 16, 200, 128};
        cfg.model.mask_mode = MaskMode::replace;
        cfg.model.dropout = 0.2;
        cfg.pretrain = {4, 2, 1.0, true, 64, 2, 1e-4, 17};
        cfg.finetune = {8, 64, 1e-4, "group"};
    } else {
        config_error("unknown profile " + profile + " (expected desk or paper)");
    }
    return cfg;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    if (!j.is_object()) config_error("top level must be an object");
    std::string profile = "desk";
    if (j.contains("profile")) profile = j.at("profile").get<std::string>();
    ExperimentConfig cfg = defaults(profile);

    ObjectReader top(j, "$");
    std::string ignored_profile;
    top.read("profile", ignored_profile);
    top.read("seed", cfg.seed);
    top.read("label_fractions", cfg.label_fractions);
    top.read("seeds", cfg.seeds);
    top.read("tasks", cfg.tasks);

    if (top.has("data")) {
        ObjectReader r(top.sub("data"), "data");
        if (r.has("synthetic")) {
            const json& s = r.sub("synthetic");
            cfg.data.synthetic = s.is_null() ? std::nullopt
                                             : std::optional<SyntheticWorldConfig>(
                                                   synthetic_from_json(s));
        }
        if (r.has("paths")) {
            ObjectReader p(r.sub("paths"), "data.paths");
            p.read("pretrain", cfg.data.paths.pretrain);
            p.read("demo", cfg.data.paths.demo);
            p.read("ctr", cfg.data.paths.ctr);
            p.read("ctr_users", cfg.data.paths.ctr_users);
            p.read("vocab", cfg.data.paths.vocab);
            p.finish();
        }
        r.read("min_frequency", cfg.data.min_frequency);
        r.read("max_title_len", cfg.data.limits.max_title_len);
        r.read("max_behaviors", cfg.data.limits.max_behaviors);
        r.finish();
    }

    if (top.has("model")) {
        ObjectReader r(top.sub("model"), "model");
        if (r.has("behavior_encoder"))
            encoder_from_json(r.sub("behavior_encoder"), "model.behavior_encoder",
                              cfg.model.behavior_encoder.variant,
                              &cfg.model.behavior_encoder.word_dim,
                              cfg.model.behavior_encoder.n_heads,
                              cfg.model.behavior_encoder.head_dim,
                              cfg.model.behavior_encoder.attn_query_dim, nullptr);
        if (r.has("user_encoder"))
            encoder_from_json(r.sub("user_encoder"), "model.user_encoder",
                              cfg.model.user_encoder.variant, nullptr,
                              cfg.model.user_encoder.n_heads, cfg.model.user_encoder.head_dim,
                              cfg.model.user_encoder.attn_query_dim,
                              &cfg.model.user_encoder.max_positions);
        std::string mask_mode = to_string(cfg.model.mask_mode);
        r.read("mask_mode", mask_mode);
        cfg.model.mask_mode = mask_mode_from_string(mask_mode);
        r.read("dropout", cfg.model.dropout);
        r.finish();
    }

    if (top.has("pretrain")) {
        ObjectReader r(top.sub("pretrain"), "pretrain");
        r.read("negatives", cfg.pretrain.negatives);
        r.read("future_k", cfg.pretrain.future_k);
        r.read("lambda", cfg.pretrain.lambda);
        r.read("use_mbp", cfg.pretrain.use_mbp);
        r.read("batch_size", cfg.pretrain.batch_size);
        r.read("epochs", cfg.pretrain.epochs);
        r.read("lr", cfg.pretrain.lr);
        r.finish();
        cfg.pretrain.validate();
    }

    if (top.has("finetune")) {
        ObjectReader r(top.sub("finetune"), "finetune");
        r.read("epochs", cfg.finetune.epochs);
        r.read("batch_size", cfg.finetune.batch_size);
        r.read("lr", cfg.finetune.lr);
        r.read("demo_label_key", cfg.finetune.demo_label_key);
        r.finish();
        cfg.finetune.validate();
    }
    top.finish();

    cfg.pretrain.seed = cfg.seed;
    for (double f : cfg.label_fractions)
        if (f <= 0.0 || f > 1.0) config_error("label_fractions must lie in (0, 1]");
    for (const auto& t : cfg.tasks)
        if (t != "demo" && t != "ctr") config_error("unknown task " + t);
    if (cfg.label_fractions.empty()) config_error("label_fractions must be non-empty");
    if (cfg.seeds.empty()) config_error("seeds must be non-empty");
    return cfg;
}

ExperimentConfig ExperimentConfig::load_file(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config file " + path.string());
    json j = json::parse(f, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded()) throw std::invalid_argument("config: " + path.string() + " is not valid JSON");
    return from_json(j);
}

json ExperimentConfig::to_json() const {
    json j;
    j["profile"] = profile;
    j["seed"] = seed;
    j["data"]["synthetic"] = data.synthetic ? synthetic_to_json(*data.synthetic) : json(nullptr);
    j["data"]["paths"] = {{"pretrain", data.paths.pretrain}, {"demo", data.paths.demo},
                          {"ctr", data.paths.ctr},           {"ctr_users", data.paths.ctr_users},
                          {"vocab", data.paths.vocab}};
    j["data"]["min_frequency"] = data.min_frequency;
    j["data"]["max_title_len"] = data.limits.max_title_len;
    j["data"]["max_behaviors"] = data.limits.max_behaviors;
    j["model"]["behavior_encoder"] = {{"variant", to_string(model.behavior_encoder.variant)},
                                      {"word_dim", model.behavior_encoder.word_dim},
                                      {"n_heads", model.behavior_encoder.n_heads},
                                      {"head_dim", model.behavior_encoder.head_dim},
                                      {"attn_query_dim", model.behavior_encoder.attn_query_dim}};
    j["model"]["user_encoder"] = {{"variant", to_string(model.user_encoder.variant)},
                                  {"n_heads", model.user_encoder.n_heads},
                                  {"head_dim", model.user_encoder.head_dim},
                                  {"attn_query_dim", model.user_encoder.attn_query_dim},
                                  {"max_positions", model.user_encoder.max_positions}};
    j["model"]["mask_mode"] = to_string(model.mask_mode);
    j["model"]["dropout"] = model.dropout;
    j["pretrain"] = {{"negatives", pretrain.negatives}, {"future_k", pretrain.future_k},
                     {"lambda", pretrain.lambda},       {"use_mbp", pretrain.use_mbp},
                     {"batch_size", pretrain.batch_size}, {"epochs", pretrain.epochs},
                     {"lr", pretrain.lr}};
    j["finetune"] = {{"epochs", finetune.epochs},
                     {"batch_size", finetune.batch_size},
                     {"lr", finetune.lr},
                     {"demo_label_key", finetune.demo_label_key}};
    j["label_fractions"] = label_fractions;
    j["seeds"] = seeds;
    j["tasks"] = tasks;
    return j;
}

std::string ExperimentConfig::config_hash() const {
    const std::string dump = to_json().dump();
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(dump)));
    return buf;
}

ModelConfig resolved_model(const ExperimentConfig& cfg, std::size_t vocab_table_rows) {
    ModelConfig m = cfg.model;
    m.vocab_rows = static_cast<int>(vocab_table_rows);
    m.validate();
    return m;
}

DataBundle load_data(const ExperimentConfig& cfg, const DataNeeds& needs) {
    DataBundle bundle;
    const bool from_paths = !cfg.data.paths.vocab.empty();
    if (from_paths) {
        bundle.vocab = Vocabulary::load(cfg.data.paths.vocab);
        if (needs.pretrain) {
            if (cfg.data.paths.pretrain.empty()) config_error("data.paths.pretrain not set");
            bundle.pretrain = ingest_jsonl(cfg.data.paths.pretrain, bundle.vocab, cfg.data.limits);
        }
        if (needs.demo) {
            if (cfg.data.paths.demo.empty()) config_error("data.paths.demo not set");
            bundle.demo = ingest_jsonl(cfg.data.paths.demo, bundle.vocab, cfg.data.limits);
        }
        if (needs.ctr) {
            if (cfg.data.paths.ctr.empty() || cfg.data.paths.ctr_users.empty())
                config_error("data.paths.ctr and data.paths.ctr_users not set");
            bundle.ctr_users = ingest_jsonl(cfg.data.paths.ctr_users, bundle.vocab, cfg.data.limits);
            bundle.impressions = ingest_ctr_jsonl(cfg.data.paths.ctr, bundle.vocab, cfg.data.limits);
        }
        return bundle;
    }
    if (!cfg.data.synthetic)
        config_error("either data.paths or data.synthetic must be configured");

    // In-memory path: generate the world, then run it through the same
    // JSONL machinery the files would use.
    SyntheticWorld world = generate_synthetic(*cfg.data.synthetic);
    const std::string pretrain_text = behavior_jsonl(world.pretrain_users, "");
    {
        std::istringstream in(pretrain_text);
        bundle.vocab = Vocabulary::build(count_tokens(in, "<synthetic pretrain>"),
                                         cfg.data.min_frequency);
    }
    if (needs.pretrain) {
        std::istringstream in(pretrain_text);
        bundle.pretrain = ingest_jsonl(in, "<synthetic pretrain>", bundle.vocab, cfg.data.limits);
    }
    if (needs.demo) {
        std::istringstream in(behavior_jsonl(world.demo_users, cfg.finetune.demo_label_key));
        bundle.demo = ingest_jsonl(in, "<synthetic demo>", bundle.vocab, cfg.data.limits);
    }
    if (needs.ctr) {
        std::istringstream users_in(behavior_jsonl(world.ctr_users, ""));
        bundle.ctr_users = ingest_jsonl(users_in, "<synthetic ctr users>", bundle.vocab,
                                        cfg.data.limits);
        std::istringstream imp_in(ctr_jsonl(world.impressions));
        bundle.impressions = ingest_ctr_jsonl(imp_in, "<synthetic ctr>", bundle.vocab,
                                              cfg.data.limits);
    }
    return bundle;
}

std::string build_id() { return PTUM_BUILD_ID; }

}  // namespace ptum
