// SPDX-License-Identifier: Apache-2.0
//
// Behavior encoder (title tokens -> behavior embedding) and user encoder
// (positioned behavior embeddings -> user embedding). Three selectable
// architectures: masked mean pooling, additive-attention pooling, and one
// multi-head self-attention layer followed by additive-attention pooling.

#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ptum/data.hpp"
#include "ptum/optim.hpp"
#include "ptum/tensor.hpp"

namespace ptum {

enum class EncoderVariant { mean_pool, attn_pool, self_attn };
enum class MaskMode { replace, remove };

std::string to_string(EncoderVariant v);
EncoderVariant encoder_variant_from_string(const std::string& s);
std::string to_string(MaskMode m);
MaskMode mask_mode_from_string(const std::string& s);

struct BehaviorEncoderConfig {
    EncoderVariant variant = EncoderVariant::attn_pool;
    int word_dim = 32;
    int n_heads = 4;
    int head_dim = 8;
    int attn_query_dim = 32;

    // d_b: n_heads * head_dim for self_attn, word_dim for pooling variants.
    int output_dim() const {
        return variant == EncoderVariant::self_attn ? n_heads * head_dim : word_dim;
    }
};

struct UserEncoderConfig {
    EncoderVariant variant = EncoderVariant::attn_pool;
    int n_heads = 4;
    int head_dim = 8;
    int attn_query_dim = 32;
    int max_positions = 128;
};

struct ModelConfig {
    int vocab_rows = 2;  // word table rows, PAD and UNK included
    BehaviorEncoderConfig behavior_encoder;
    UserEncoderConfig user_encoder;
    MaskMode mask_mode = MaskMode::replace;
    double dropout = 0.0;

    int behavior_dim() const { return behavior_encoder.output_dim(); }
    void validate() const;  // throws std::invalid_argument
};

namespace detail {

// One encoder stack over a [n x in_dim] input: optional multi-head
// self-attention, then pooling down to a single [out_dim] vector. The
// parameters live in the registry passed at build time; this struct only
// keeps non-owning pointers.
struct EncoderParams {
    EncoderVariant variant = EncoderVariant::mean_pool;
    int in_dim = 0;
    int out_dim = 0;
    int head_dim = 0;
    int query_dim = 0;
    struct Head {
        Parameter* wq = nullptr;
        Parameter* wk = nullptr;
        Parameter* wv = nullptr;
    };
    std::vector<Head> heads;
    Parameter* pool_w = nullptr;
    Parameter* pool_b = nullptr;
    Parameter* pool_q = nullptr;

    static EncoderParams build(ParameterRegistry& registry, const std::string& prefix,
                               EncoderVariant variant, int in_dim, int n_heads, int head_dim,
                               int query_dim, std::mt19937_64& rng);

    // mask is per-row (1 real, 0 padded); empty means all real. Throws if
    // every row is masked out.
    Tensor encode(const Tensor& input, std::span<const double> mask) const;
};

}  // namespace detail

// The full user model: word embeddings, learned MASK behavior embedding,
// behavior-level position table, and the two encoder stacks. Behavior
// encoder weights are shared between sequence behaviors and candidate
// behaviors by construction.
class UserModel {
public:
    UserModel(ModelConfig cfg, std::uint64_t init_seed);

    const ModelConfig& config() const { return cfg_; }
    int behavior_dim() const { return cfg_.behavior_dim(); }
    ParameterRegistry& params() { return params_; }
    const ParameterRegistry& params() const { return params_; }

    // Title tokens -> [d_b]. token_mask may be empty (all tokens real).
    Tensor encode_behavior(std::span<const int> tokens, std::span<const double> token_mask = {},
                           std::mt19937_64* dropout_rng = nullptr) const;

    // Adds position embeddings to the given behavior embeddings and applies
    // the user encoder. behavior_mask may be empty (all behaviors real).
    Tensor encode_user(const std::vector<Tensor>& behavior_embeddings,
                       std::span<const int> positions,
                       std::span<const double> behavior_mask = {},
                       std::mt19937_64* dropout_rng = nullptr) const;

    Tensor encode_user_record(const UserRecord& record,
                              std::mt19937_64* dropout_rng = nullptr) const;

    // Encodes the record with the behavior at masked_index replaced by the
    // learned MASK embedding (mask_mode replace) or dropped from the
    // sequence (mask_mode remove). Requires >= 2 behaviors.
    Tensor encode_with_mask_slot(const UserRecord& record, std::size_t masked_index,
                                 std::mt19937_64* dropout_rng = nullptr) const;

    // Encodes a candidate ad (title then description) with a separate
    // encoder instance but this model's word table.
    Tensor encode_text(const detail::EncoderParams& encoder, std::span<const int> tokens,
                       std::mt19937_64* dropout_rng = nullptr) const;

    const Tensor& word_table() const { return params_.at("word_emb").tensor(); }
    const Tensor& mask_embedding() const { return params_.at("mask_emb").tensor(); }
    const Tensor& position_table() const { return params_.at("pos_emb").tensor(); }

private:
    ModelConfig cfg_;
    ParameterRegistry params_;
    detail::EncoderParams behavior_encoder_;
    detail::EncoderParams user_encoder_;
};

// Builds an ad/candidate-text encoder with the same architecture class as
// the model's behavior encoder, registering its parameters under `prefix`
// in `registry` (used by the CTR head; weights are not shared with the
// user model).
detail::EncoderParams build_text_encoder(ParameterRegistry& registry, const std::string& prefix,
                                         const ModelConfig& cfg, std::mt19937_64& rng);

}  // namespace ptum
