// SPDX-License-Identifier: Apache-2.0

#include "ptum/encoders.hpp"

#include <cmath>
#include <stdexcept>

namespace ptum {

namespace {
constexpr double kMaskedScore = -1e30;

Tensor mask_tensor(std::span<const double> mask) {
    return Tensor::from_data({mask.size()}, std::vector<double>(mask.begin(), mask.end()));
}

double mask_total(std::span<const double> mask) {
    double s = 0.0;
    for (double m : mask) s += m != 0.0 ? 1.0 : 0.0;
    return s;
}
}  // namespace

std::string to_string(EncoderVariant v) {
    switch (v) {
        case EncoderVariant::mean_pool: return "mean_pool";
        case EncoderVariant::attn_pool: return "attn_pool";
        case EncoderVariant::self_attn: return "self_attn";
    }
    throw std::logic_error("unknown encoder variant");
}

EncoderVariant encoder_variant_from_string(const std::string& s) {
    if (s == "mean_pool") return EncoderVariant::mean_pool;
    if (s == "attn_pool") return EncoderVariant::attn_pool;
    if (s == "self_attn") return EncoderVariant::self_attn;
    throw std::invalid_argument("unknown encoder variant: " + s);
}

std::string to_string(MaskMode m) {
    return m == MaskMode::replace ? "replace" : "remove";
}

MaskMode mask_mode_from_string(const std::string& s) {
    if (s == "replace") return MaskMode::replace;
    if (s == "remove") return MaskMode::remove;
    throw std::invalid_argument("unknown mask_mode: " + s);
}

void ModelConfig::validate() const {
    if (vocab_rows < 2) throw std::invalid_argument("model: vocab_rows must include PAD and UNK");
    if (behavior_encoder.word_dim < 1) throw std::invalid_argument("model: word_dim must be positive");
    if (behavior_encoder.variant == EncoderVariant::self_attn &&
        (behavior_encoder.n_heads < 1 || behavior_encoder.head_dim < 1))
        throw std::invalid_argument("model: behavior self_attn needs positive n_heads/head_dim");
    if (user_encoder.variant == EncoderVariant::self_attn &&
        user_encoder.n_heads * user_encoder.head_dim != behavior_dim())
        throw std::invalid_argument(
            "model: user self_attn heads must concatenate back to the behavior dim");
    if (user_encoder.max_positions < 1)
        throw std::invalid_argument("model: max_positions must be positive");
    if (dropout < 0.0 || dropout >= 1.0)
        throw std::invalid_argument("model: dropout must be in [0, 1)");
}

namespace detail {

EncoderParams EncoderParams::build(ParameterRegistry& registry, const std::string& prefix,
                                   EncoderVariant variant, int in_dim, int n_heads, int head_dim,
                                   int query_dim, std::mt19937_64& rng) {
    EncoderParams p;
    p.variant = variant;
    p.in_dim = in_dim;
    p.head_dim = head_dim;
    p.query_dim = query_dim;
    p.out_dim = variant == EncoderVariant::self_attn ? n_heads * head_dim : in_dim;
    const auto du = static_cast<std::size_t>(in_dim);
    if (variant == EncoderVariant::self_attn) {
        const auto dh = static_cast<std::size_t>(head_dim);
        for (int h = 0; h < n_heads; ++h) {
            const std::string hp = prefix + ".head" + std::to_string(h);
            Head head;
            head.wq = &registry.add(hp + ".wq", {du, dh}, init_glorot(du, dh, rng));
            head.wk = &registry.add(hp + ".wk", {du, dh}, init_glorot(du, dh, rng));
            head.wv = &registry.add(hp + ".wv", {du, dh}, init_glorot(du, dh, rng));
            p.heads.push_back(head);
        }
    }
    if (variant != EncoderVariant::mean_pool) {
        const auto dp = static_cast<std::size_t>(p.out_dim);
        const auto dq = static_cast<std::size_t>(query_dim);
        p.pool_w = &registry.add(prefix + ".pool.w", {dp, dq}, init_glorot(dp, dq, rng));
        p.pool_b = &registry.add(prefix + ".pool.b", {dq}, std::vector<double>(dq, 0.0));
        p.pool_q = &registry.add(prefix + ".pool.q", {dq}, init_glorot(dq, 1, rng));
    }
    return p;
}

Tensor EncoderParams::encode(const Tensor& input, std::span<const double> mask) const {
    const std::size_t n = input.dim(0);
    if (!mask.empty() && mask.size() != n)
        throw std::invalid_argument("encoder: mask length mismatch");
    if (!mask.empty() && mask_total(mask) == 0.0)
        throw std::invalid_argument("encoder: all rows masked out");

    Tensor x = input;
    if (variant == EncoderVariant::self_attn) {
        // One multi-head layer; keys at padded rows are masked out, so
        // outputs at real rows never see padding.
        const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
        Tensor key_mask;
        if (!mask.empty()) {
            std::vector<double> tiled(n * n);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j) tiled[i * n + j] = mask[j];
            key_mask = Tensor::from_data({n, n}, std::move(tiled));
        }
        std::vector<Tensor> head_outputs;
        head_outputs.reserve(heads.size());
        for (const Head& h : heads) {
            Tensor q = matmul(x, h.wq->tensor());
            Tensor k = matmul(x, h.wk->tensor());
            Tensor v = matmul(x, h.wv->tensor());
            Tensor scores = scale(matmul(q, transpose(k)), inv_sqrt);
            if (key_mask.defined()) scores = mask_fill(scores, key_mask, kMaskedScore);
            head_outputs.push_back(matmul(softmax(scores), v));
        }
        x = concat_cols(head_outputs);
    }

    if (variant == EncoderVariant::mean_pool) {
        if (mask.empty()) return mean_axis(x, 0);
        const double total = mask_total(mask);
        std::vector<double> weights(n);
        for (std::size_t i = 0; i < n; ++i) weights[i] = (mask[i] != 0.0 ? 1.0 : 0.0) / total;
        return matvec(transpose(x), Tensor::from_data({n}, std::move(weights)));
    }

    // Additive attention pooling: alpha = softmax(q . tanh(x W + b)).
    Tensor hidden = tanh(add(matmul(x, pool_w->tensor()), pool_b->tensor()));
    Tensor scores = matvec(hidden, pool_q->tensor());
    if (!mask.empty()) scores = mask_fill(scores, mask_tensor(mask), kMaskedScore);
    Tensor alpha = softmax(scores);
    return matvec(transpose(x), alpha);
}

}  // namespace detail

UserModel::UserModel(ModelConfig cfg, std::uint64_t init_seed) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(init_seed);
    const auto v = static_cast<std::size_t>(cfg_.vocab_rows);
    const auto dw = static_cast<std::size_t>(cfg_.behavior_encoder.word_dim);
    const auto db = static_cast<std::size_t>(behavior_dim());
    const auto mp = static_cast<std::size_t>(cfg_.user_encoder.max_positions);
    params_.add("word_emb", {v, dw}, init_embedding(v * dw, rng));
    params_.add("mask_emb", {db}, init_embedding(db, rng));
    params_.add("pos_emb", {mp, db}, init_embedding(mp * db, rng));
    behavior_encoder_ = detail::EncoderParams::build(
        params_, "behavior_encoder", cfg_.behavior_encoder.variant, cfg_.behavior_encoder.word_dim,
        cfg_.behavior_encoder.n_heads, cfg_.behavior_encoder.head_dim,
        cfg_.behavior_encoder.attn_query_dim, rng);
    user_encoder_ = detail::EncoderParams::build(
        params_, "user_encoder", cfg_.user_encoder.variant, behavior_dim(),
        cfg_.user_encoder.n_heads, cfg_.user_encoder.head_dim, cfg_.user_encoder.attn_query_dim,
        rng);
}

Tensor UserModel::encode_text(const detail::EncoderParams& encoder, std::span<const int> tokens,
                              std::mt19937_64* dropout_rng) const {
    if (tokens.empty()) throw std::invalid_argument("encode: empty token list");
    Tensor words = embedding_lookup(word_table(), tokens);
    if (cfg_.dropout > 0.0 && dropout_rng) words = dropout(words, cfg_.dropout, *dropout_rng);
    return encoder.encode(words, {});
}

Tensor UserModel::encode_behavior(std::span<const int> tokens, std::span<const double> token_mask,
                                  std::mt19937_64* dropout_rng) const {
    if (tokens.empty()) throw std::invalid_argument("encode_behavior: empty token list");
    Tensor words = embedding_lookup(word_table(), tokens);
    if (cfg_.dropout > 0.0 && dropout_rng) words = dropout(words, cfg_.dropout, *dropout_rng);
    return behavior_encoder_.encode(words, token_mask);
}

Tensor UserModel::encode_user(const std::vector<Tensor>& behavior_embeddings,
                              std::span<const int> positions,
                              std::span<const double> behavior_mask,
                              std::mt19937_64* dropout_rng) const {
    if (behavior_embeddings.empty())
        throw std::invalid_argument("encode_user: no behaviors");
    if (positions.size() != behavior_embeddings.size())
        throw std::invalid_argument("encode_user: positions length mismatch");
    for (int p : positions)
        if (p < 0 || p >= cfg_.user_encoder.max_positions)
            throw std::out_of_range("encode_user: position " + std::to_string(p) +
                                    " outside the position table");
    Tensor stacked = stack_rows(behavior_embeddings);
    Tensor pos = embedding_lookup(position_table(), positions);
    Tensor x = add(stacked, pos);
    if (cfg_.dropout > 0.0 && dropout_rng) x = dropout(x, cfg_.dropout, *dropout_rng);
    return user_encoder_.encode(x, behavior_mask);
}

Tensor UserModel::encode_user_record(const UserRecord& record,
                                     std::mt19937_64* dropout_rng) const {
    if (record.behaviors.empty())
        throw std::invalid_argument("encode_user_record: record has no behaviors");
    std::vector<Tensor> embs;
    std::vector<int> positions;
    embs.reserve(record.behaviors.size());
    positions.reserve(record.behaviors.size());
    for (const Behavior& b : record.behaviors) {
        embs.push_back(encode_behavior(b.tokens, {}, dropout_rng));
        positions.push_back(b.position);
    }
    return encode_user(embs, positions, {}, dropout_rng);
}

Tensor UserModel::encode_with_mask_slot(const UserRecord& record, std::size_t masked_index,
                                        std::mt19937_64* dropout_rng) const {
    if (record.behaviors.size() < 2)
        throw std::invalid_argument("encode_with_mask_slot: need at least 2 behaviors");
    if (masked_index >= record.behaviors.size())
        throw std::out_of_range("encode_with_mask_slot: masked index out of range");
    std::vector<Tensor> embs;
    std::vector<int> positions;
    for (std::size_t i = 0; i < record.behaviors.size(); ++i) {
        if (i == masked_index) {
            if (cfg_.mask_mode == MaskMode::remove) continue;
            embs.push_back(mask_embedding());
        } else {
            embs.push_back(encode_behavior(record.behaviors[i].tokens, {}, dropout_rng));
        }
        positions.push_back(record.behaviors[i].position);
    }
    return encode_user(embs, positions, {}, dropout_rng);
}

detail::EncoderParams build_text_encoder(ParameterRegistry& registry, const std::string& prefix,
                                         const ModelConfig& cfg, std::mt19937_64& rng) {
    return detail::EncoderParams::build(registry, prefix, cfg.behavior_encoder.variant,
                                        cfg.behavior_encoder.word_dim, cfg.behavior_encoder.n_heads,
                                        cfg.behavior_encoder.head_dim,
                                        cfg.behavior_encoder.attn_query_dim, rng);
}

}  // namespace ptum
