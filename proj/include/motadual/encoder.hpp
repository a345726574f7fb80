// Miniature CLIP-style dual encoder: transformer text encoder pooled at
// [EOS], ViT-style vision encoder pooled at [CLS]. Attention is
// bidirectional with padding masked out; features are l2-normalized.
#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "motadual/common.hpp"
#include "motadual/image.hpp"
#include "motadual/tensor.hpp"
#include "motadual/vocab.hpp"

namespace motadual {

struct DualEncoderConfig {
    int embed_dim = 64;    // width inside both towers
    int feature_dim = 64;  // retrieval feature width
    int heads = 4;
    int text_layers = 4;
    int vision_layers = 4;
    int max_len = 32;
    int image_size = 32;
    int patch_size = 8;
    int ffn_mult = 4;
    int vocab_size = 0;  // filled from the vocabulary

    int head_dim() const { return embed_dim / heads; }
    int patches_per_side() const { return image_size / patch_size; }
    int num_patches() const { return patches_per_side() * patches_per_side(); }
    int patch_dim() const { return 3 * patch_size * patch_size; }
    int ffn_dim() const { return ffn_mult * embed_dim; }

    void validate() const {
        if (embed_dim <= 0 || heads <= 0 || embed_dim % heads != 0)
            throw ConfigError("encoder: embed_dim must be divisible by heads");
        if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0)
            throw ConfigError("encoder: image_size must be divisible by patch_size");
        if (max_len < 3) throw ConfigError("encoder: max_len must be >= 3");
        if (text_layers <= 0 || vision_layers <= 0 || feature_dim <= 0 ||
            ffn_mult <= 0)
            throw ConfigError("encoder: depths and dims must be positive");
        if (vocab_size <= 0) throw ConfigError("encoder: vocab_size not set");
    }

    nlohmann::json to_json() const {
        return {{"embed_dim", embed_dim},     {"feature_dim", feature_dim},
                {"heads", heads},             {"text_layers", text_layers},
                {"vision_layers", vision_layers}, {"max_len", max_len},
                {"image_size", image_size},   {"patch_size", patch_size},
                {"ffn_mult", ffn_mult},       {"vocab_size", vocab_size}};
    }

    static DualEncoderConfig from_json(const nlohmann::json& j) {
        DualEncoderConfig c;
        c.embed_dim = j.at("embed_dim").get<int>();
        c.feature_dim = j.at("feature_dim").get<int>();
        c.heads = j.at("heads").get<int>();
        c.text_layers = j.at("text_layers").get<int>();
        c.vision_layers = j.at("vision_layers").get<int>();
        c.max_len = j.at("max_len").get<int>();
        c.image_size = j.at("image_size").get<int>();
        c.patch_size = j.at("patch_size").get<int>();
        c.ffn_mult = j.at("ffn_mult").get<int>();
        c.vocab_size = j.at("vocab_size").get<int>();
        return c;
    }

    bool operator==(const DualEncoderConfig&) const = default;
};

template <typename T>
struct TransformerLayerParams {
    Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor<T> ln1_gain, ln1_bias, ln2_gain, ln2_bias;
    Tensor<T> ff1_w, ff1_b, ff2_w, ff2_b;
};

namespace detail {

template <typename T>
Tensor<T> init_weight(Rng& rng, int rows, int cols, double sigma = 0.02) {
    std::vector<T> v(static_cast<std::size_t>(rows) * cols);
    for (auto& x : v) x = static_cast<T>(rng.truncated_normal(sigma));
    return Tensor<T>::from(std::move(v), rows, cols, true);
}

template <typename T>
TransformerLayerParams<T> init_layer(Rng& rng, int d, int ffn) {
    TransformerLayerParams<T> l;
    l.wq = init_weight<T>(rng, d, d);
    l.bq = Tensor<T>::zeros(1, d, true);
    l.wk = init_weight<T>(rng, d, d);
    l.bk = Tensor<T>::zeros(1, d, true);
    l.wv = init_weight<T>(rng, d, d);
    l.bv = Tensor<T>::zeros(1, d, true);
    l.wo = init_weight<T>(rng, d, d);
    l.bo = Tensor<T>::zeros(1, d, true);
    l.ln1_gain = Tensor<T>::filled(1, d, T(1), true);
    l.ln1_bias = Tensor<T>::zeros(1, d, true);
    l.ln2_gain = Tensor<T>::filled(1, d, T(1), true);
    l.ln2_bias = Tensor<T>::zeros(1, d, true);
    l.ff1_w = init_weight<T>(rng, d, ffn);
    l.ff1_b = Tensor<T>::zeros(1, ffn, true);
    l.ff2_w = init_weight<T>(rng, ffn, d);
    l.ff2_b = Tensor<T>::zeros(1, d, true);
    return l;
}

template <typename T>
void collect_layer(const std::string& prefix, const TransformerLayerParams<T>& l,
                   std::vector<std::pair<std::string, Tensor<T>>>& out) {
    out.emplace_back(prefix + ".wq", l.wq);
    out.emplace_back(prefix + ".bq", l.bq);
    out.emplace_back(prefix + ".wk", l.wk);
    out.emplace_back(prefix + ".bk", l.bk);
    out.emplace_back(prefix + ".wv", l.wv);
    out.emplace_back(prefix + ".bv", l.bv);
    out.emplace_back(prefix + ".wo", l.wo);
    out.emplace_back(prefix + ".bo", l.bo);
    out.emplace_back(prefix + ".ln1_gain", l.ln1_gain);
    out.emplace_back(prefix + ".ln1_bias", l.ln1_bias);
    out.emplace_back(prefix + ".ln2_gain", l.ln2_gain);
    out.emplace_back(prefix + ".ln2_bias", l.ln2_bias);
    out.emplace_back(prefix + ".ff1_w", l.ff1_w);
    out.emplace_back(prefix + ".ff1_b", l.ff1_b);
    out.emplace_back(prefix + ".ff2_w", l.ff2_w);
    out.emplace_back(prefix + ".ff2_b", l.ff2_b);
}

}  // namespace detail

template <typename T>
struct TextEncoderParams {
    Tensor<T> token_table;  // vocab x d
    Tensor<T> positional;   // max_len x d
    std::vector<TransformerLayerParams<T>> layers;
    Tensor<T> final_gain, final_bias;
    Tensor<T> projection;  // d x feature_dim

    static TextEncoderParams init(const DualEncoderConfig& cfg, Rng& rng) {
        cfg.validate();
        TextEncoderParams p;
        p.token_table = detail::init_weight<T>(rng, cfg.vocab_size, cfg.embed_dim);
        p.positional = detail::init_weight<T>(rng, cfg.max_len, cfg.embed_dim);
        for (int i = 0; i < cfg.text_layers; ++i)
            p.layers.push_back(
                detail::init_layer<T>(rng, cfg.embed_dim, cfg.ffn_dim()));
        p.final_gain = Tensor<T>::filled(1, cfg.embed_dim, T(1), true);
        p.final_bias = Tensor<T>::zeros(1, cfg.embed_dim, true);
        p.projection = detail::init_weight<T>(rng, cfg.embed_dim, cfg.feature_dim);
        return p;
    }

    std::vector<std::pair<std::string, Tensor<T>>> named_parameters(
        const std::string& prefix = "text") const {
        std::vector<std::pair<std::string, Tensor<T>>> out;
        out.emplace_back(prefix + ".token_table", token_table);
        out.emplace_back(prefix + ".positional", positional);
        for (std::size_t i = 0; i < layers.size(); ++i)
            detail::collect_layer(prefix + ".layer" + std::to_string(i),
                                  layers[i], out);
        out.emplace_back(prefix + ".final_gain", final_gain);
        out.emplace_back(prefix + ".final_bias", final_bias);
        out.emplace_back(prefix + ".projection", projection);
        return out;
    }

    void set_trainable(bool on) {
        auto params = named_parameters();
        for (auto& [name, t] : params) t.set_requires_grad(on);
    }
};

template <typename T>
struct VisionEncoderParams {
    Tensor<T> cls;         // 1 x d
    Tensor<T> patch_w;     // patch_dim x d
    Tensor<T> patch_b;     // 1 x d
    Tensor<T> positional;  // (num_patches + 1) x d
    std::vector<TransformerLayerParams<T>> layers;
    Tensor<T> final_gain, final_bias;
    Tensor<T> projection;  // d x feature_dim

    static VisionEncoderParams init(const DualEncoderConfig& cfg, Rng& rng) {
        cfg.validate();
        VisionEncoderParams p;
        p.cls = detail::init_weight<T>(rng, 1, cfg.embed_dim);
        p.patch_w = detail::init_weight<T>(rng, cfg.patch_dim(), cfg.embed_dim);
        p.patch_b = Tensor<T>::zeros(1, cfg.embed_dim, true);
        p.positional =
            detail::init_weight<T>(rng, cfg.num_patches() + 1, cfg.embed_dim);
        for (int i = 0; i < cfg.vision_layers; ++i)
            p.layers.push_back(
                detail::init_layer<T>(rng, cfg.embed_dim, cfg.ffn_dim()));
        p.final_gain = Tensor<T>::filled(1, cfg.embed_dim, T(1), true);
        p.final_bias = Tensor<T>::zeros(1, cfg.embed_dim, true);
        p.projection = detail::init_weight<T>(rng, cfg.embed_dim, cfg.feature_dim);
        return p;
    }

    std::vector<std::pair<std::string, Tensor<T>>> named_parameters(
        const std::string& prefix = "vision") const {
        std::vector<std::pair<std::string, Tensor<T>>> out;
        out.emplace_back(prefix + ".cls", cls);
        out.emplace_back(prefix + ".patch_w", patch_w);
        out.emplace_back(prefix + ".patch_b", patch_b);
        out.emplace_back(prefix + ".positional", positional);
        for (std::size_t i = 0; i < layers.size(); ++i)
            detail::collect_layer(prefix + ".layer" + std::to_string(i),
                                  layers[i], out);
        out.emplace_back(prefix + ".final_gain", final_gain);
        out.emplace_back(prefix + ".final_bias", final_bias);
        out.emplace_back(prefix + ".projection", projection);
        return out;
    }

    void set_trainable(bool on) {
        auto params = named_parameters();
        for (auto& [name, t] : params) t.set_requires_grad(on);
    }
};

namespace detail {

constexpr double kMaskedScore = -1e9;

// One transformer block applied to a batch of equally-long sequences packed
// as (batch*seq_len) x d. masks, when present, hold one (1 x seq_len) row of
// additive key scores per sequence.
template <typename T>
Tensor<T> transformer_block(const TransformerLayerParams<T>& layer,
                            const Tensor<T>& x, int batch, int seq_len,
                            int heads, const std::vector<Tensor<T>>& masks) {
    const int d = x.cols();
    const int dh = d / heads;
    const T att_scale = T(1) / static_cast<T>(std::sqrt(static_cast<double>(dh)));

    Tensor<T> h = layer_norm(x, layer.ln1_gain, layer.ln1_bias);
    Tensor<T> q = add(matmul(h, layer.wq), layer.bq);
    Tensor<T> k = add(matmul(h, layer.wk), layer.bk);
    Tensor<T> v = add(matmul(h, layer.wv), layer.bv);

    std::vector<Tensor<T>> per_seq;
    per_seq.reserve(batch);
    for (int b = 0; b < batch; ++b) {
        Tensor<T> qb = slice(q, 0, b * seq_len, seq_len);
        Tensor<T> kb = slice(k, 0, b * seq_len, seq_len);
        Tensor<T> vb = slice(v, 0, b * seq_len, seq_len);
        std::vector<Tensor<T>> head_out;
        head_out.reserve(heads);
        for (int hd = 0; hd < heads; ++hd) {
            Tensor<T> qh = slice(qb, 1, hd * dh, dh);
            Tensor<T> kh = slice(kb, 1, hd * dh, dh);
            Tensor<T> vh = slice(vb, 1, hd * dh, dh);
            Tensor<T> scores = scale(matmul(qh, kh, false, true), att_scale);
            if (!masks.empty()) scores = add(scores, masks[b]);
            Tensor<T> att = softmax(scores, 1);
            head_out.push_back(matmul(att, vh));
        }
        per_seq.push_back(concat(head_out, 1));
    }
    Tensor<T> attn = concat(per_seq, 0);
    Tensor<T> x1 = add(x, add(matmul(attn, layer.wo), layer.bo));

    Tensor<T> h2 = layer_norm(x1, layer.ln2_gain, layer.ln2_bias);
    Tensor<T> ff = add(matmul(gelu(add(matmul(h2, layer.ff1_w), layer.ff1_b)),
                              layer.ff2_w),
                       layer.ff2_b);
    return add(x1, ff);
}

}  // namespace detail

template <typename T>
struct TextForwardOptions {
    // Context prompt rows (n x d) prepended before the whole token sequence.
    std::optional<Tensor<T>> prompts;
    // Row b replaces the embedding at sequence b's pseudo slot (batch x d).
    std::optional<Tensor<T>> pseudo_rows;
};

// Encodes a batch of token sequences into (batch x feature_dim) rows, each
// l2-normalized. Pooling reads the (shifted) [EOS] row.
template <typename T>
Tensor<T> encode_text_batch(const TextEncoderParams<T>& p,
                            const DualEncoderConfig& cfg,
                            const std::vector<TokenSequence>& seqs,
                            const TextForwardOptions<T>& opt = {}) {
    if (seqs.empty()) throw ContractError("encode_text: empty batch");
    const int batch = static_cast<int>(seqs.size());
    const int d = cfg.embed_dim;
    const int len = cfg.max_len;
    const int n_prompt = opt.prompts.has_value() ? opt.prompts->rows() : 0;
    if (n_prompt > 0 && opt.prompts->cols() != d)
        throw ContractError("encode_text: prompt width differs from embed_dim");
    if (opt.pseudo_rows.has_value()) {
        if (opt.pseudo_rows->rows() != batch || opt.pseudo_rows->cols() != d)
            throw ContractError("encode_text: pseudo rows must be batch x d");
        for (const auto& s : seqs)
            if (!s.pseudo_slot.has_value())
                throw ContractError(
                    "encode_text: pseudo embedding supplied but sequence has no "
                    "<s*> slot");
    } else {
        for (const auto& s : seqs)
            if (s.pseudo_slot.has_value())
                throw ContractError(
                    "encode_text: sequence has a <s*> slot but no pseudo "
                    "embedding was supplied");
    }
    for (const auto& s : seqs)
        if (static_cast<int>(s.ids.size()) != len)
            throw ContractError("encode_text: sequence length != max_len");

    std::vector<int> flat_ids;
    flat_ids.reserve(static_cast<std::size_t>(batch) * len);
    for (const auto& s : seqs) flat_ids.insert(flat_ids.end(), s.ids.begin(), s.ids.end());
    Tensor<T> emb = embedding(p.token_table, flat_ids);

    // Pseudo substitution at the embedding layer; the slot row is discarded,
    // so the reserved <s*> table row is never read into the result.
    if (opt.pseudo_rows.has_value()) {
        std::vector<Tensor<T>> parts;
        parts.reserve(static_cast<std::size_t>(batch) * 3);
        for (int b = 0; b < batch; ++b) {
            const int slot = *seqs[b].pseudo_slot;
            parts.push_back(slice(emb, 0, b * len, slot));
            parts.push_back(slice(*opt.pseudo_rows, 0, b, 1));
            parts.push_back(slice(emb, 0, b * len + slot + 1, len - slot - 1));
        }
        emb = concat(parts, 0);
    }

    // Positional embeddings for token rows (prompt rows receive none).
    {
        std::vector<Tensor<T>> tiles(static_cast<std::size_t>(batch),
                                     p.positional);
        emb = add(emb, concat(tiles, 0));
    }

    int seq_len = len;
    Tensor<T> x = emb;
    if (n_prompt > 0) {
        std::vector<Tensor<T>> parts;
        parts.reserve(static_cast<std::size_t>(batch) * 2);
        for (int b = 0; b < batch; ++b) {
            parts.push_back(*opt.prompts);
            parts.push_back(slice(emb, 0, b * len, len));
        }
        x = concat(parts, 0);
        seq_len = n_prompt + len;
    }

    // Additive key masks: prompts and content attendable, padding excluded.
    std::vector<Tensor<T>> masks;
    masks.reserve(batch);
    for (const auto& s : seqs) {
        std::vector<T> m(static_cast<std::size_t>(seq_len), T(0));
        for (int j = n_prompt + s.eos_position + 1; j < seq_len; ++j)
            m[j] = static_cast<T>(detail::kMaskedScore);
        masks.push_back(Tensor<T>::from(std::move(m), 1, seq_len));
    }

    for (const auto& layer : p.layers)
        x = detail::transformer_block(layer, x, batch, seq_len, cfg.heads, masks);
    x = layer_norm(x, p.final_gain, p.final_bias);

    std::vector<Tensor<T>> pooled;
    pooled.reserve(batch);
    for (int b = 0; b < batch; ++b)
        pooled.push_back(
            slice(x, 0, b * seq_len + n_prompt + seqs[b].eos_position, 1));
    Tensor<T> feats = matmul(concat(pooled, 0), p.projection);
    return l2_normalize(feats, 1);
}

template <typename T>
Tensor<T> encode_text(const TextEncoderParams<T>& p, const DualEncoderConfig& cfg,
                      const TokenSequence& seq,
                      const std::optional<Tensor<T>>& pseudo_embedding = {}) {
    TextForwardOptions<T> opt;
    if (pseudo_embedding.has_value()) opt.pseudo_rows = *pseudo_embedding;
    return encode_text_batch(p, cfg, {seq}, opt);
}

namespace detail {

// Non-overlapping patch extraction to a constant (num_patches x patch_dim)
// matrix, rows in patch raster order, columns channel-major within a patch.
template <typename T>
Tensor<T> image_to_patches(const ImageTensor& img, const DualEncoderConfig& cfg) {
    if (img.channels != 3 || img.height != cfg.image_size ||
        img.width != cfg.image_size)
        throw ContractError("encode_image: image dimensions do not match config");
    const int ps = cfg.patch_size;
    const int per_side = cfg.patches_per_side();
    std::vector<T> out(static_cast<std::size_t>(cfg.num_patches()) *
                       cfg.patch_dim());
    std::size_t idx = 0;
    for (int py = 0; py < per_side; ++py)
        for (int px = 0; px < per_side; ++px)
            for (int c = 0; c < 3; ++c)
                for (int y = 0; y < ps; ++y)
                    for (int x = 0; x < ps; ++x)
                        out[idx++] = static_cast<T>(
                            img.at(c, py * ps + y, px * ps + x));
    return Tensor<T>::from(std::move(out), cfg.num_patches(), cfg.patch_dim());
}

}  // namespace detail

// Projects patches, prepends the learnable [CLS] row, and adds positional
// embeddings: the (num_patches + 1) x d embedded sequence.
template <typename T>
Tensor<T> patchify(const ImageTensor& img, const VisionEncoderParams<T>& p,
                   const DualEncoderConfig& cfg) {
    Tensor<T> patches = detail::image_to_patches<T>(img, cfg);
    Tensor<T> projected = add(matmul(patches, p.patch_w), p.patch_b);
    Tensor<T> rows = concat<T>({p.cls, projected}, 0);
    return add(rows, p.positional);
}

// Encodes images into (batch x feature_dim) l2-normalized rows. Visual
// prompt rows, when given, are appended after the patch rows.
template <typename T>
Tensor<T> encode_image_batch(const VisionEncoderParams<T>& p,
                             const DualEncoderConfig& cfg,
                             const std::vector<ImageTensor>& images,
                             const std::optional<Tensor<T>>& visual_prompts = {}) {
    if (images.empty()) throw ContractError("encode_image: empty batch");
    const int batch = static_cast<int>(images.size());
    const int n_prompt = visual_prompts.has_value() ? visual_prompts->rows() : 0;
    if (n_prompt > 0 && visual_prompts->cols() != cfg.embed_dim)
        throw ContractError("encode_image: prompt width differs from embed_dim");
    const int seq_len = cfg.num_patches() + 1 + n_prompt;

    std::vector<Tensor<T>> parts;
    parts.reserve(static_cast<std::size_t>(batch) * 2);
    for (const auto& img : images) {
        Tensor<T> rows = patchify(img, p, cfg);
        parts.push_back(rows);
        if (n_prompt > 0) parts.push_back(*visual_prompts);
    }
    Tensor<T> x = concat(parts, 0);

    const std::vector<Tensor<T>> no_masks;
    for (const auto& layer : p.layers)
        x = detail::transformer_block(layer, x, batch, seq_len, cfg.heads,
                                      no_masks);
    x = layer_norm(x, p.final_gain, p.final_bias);

    std::vector<Tensor<T>> pooled;
    pooled.reserve(batch);
    for (int b = 0; b < batch; ++b) pooled.push_back(slice(x, 0, b * seq_len, 1));
    Tensor<T> feats = matmul(concat(pooled, 0), p.projection);
    return l2_normalize(feats, 1);
}

template <typename T>
Tensor<T> encode_image(const VisionEncoderParams<T>& p,
                       const DualEncoderConfig& cfg, const ImageTensor& img,
                       const std::optional<Tensor<T>>& visual_prompts = {}) {
    return encode_image_batch(p, cfg, {img}, visual_prompts);
}

}  // namespace motadual
