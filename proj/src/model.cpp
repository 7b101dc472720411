// Copyright (C) 2026 The tvla Authors
// SPDX-License-Identifier: Apache-2.0

#include "tvla/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tvla/error.hpp"
#include "tvla/rng.hpp"

namespace tvla {

void ModelConfig::validate() const {
    auto fail = [](const std::string& msg, nlohmann::json detail = {}) {
        throw Error(ErrorCode::config_error, msg, std::move(detail));
    };
    if (embed_dim <= 0 || layers <= 0 || heads <= 0 || ff_dim <= 0 || vision_layers < 0) {
        fail("model dimensions must be positive");
    }
    if (embed_dim % heads != 0) {
        fail("embed_dim must be divisible by heads", {{"embed_dim", embed_dim}, {"heads", heads}});
    }
    if (patch_size <= 0 || image_resolution <= 0 || image_resolution % patch_size != 0) {
        fail("image_resolution must be a positive multiple of patch_size",
             {{"image_resolution", image_resolution}, {"patch_size", patch_size}});
    }
    if (max_text_len() < 2) {
        fail("max_seq_len leaves no room for text after the image tokens",
             {{"max_seq_len", max_seq_len}, {"image_tokens", image_tokens()}});
    }
    if (vocab_size <= 0) {
        fail("vocab_size must be set from the token vocabulary");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) {
        fail("dropout must be in [0, 1)", {{"dropout", dropout}});
    }
}

nlohmann::json to_json(const ModelConfig& c) {
    return {{"embed_dim", c.embed_dim},
            {"layers", c.layers},
            {"heads", c.heads},
            {"ff_dim", c.ff_dim},
            {"max_seq_len", c.max_seq_len},
            {"patch_size", c.patch_size},
            {"image_resolution", c.image_resolution},
            {"vision_layers", c.vision_layers},
            {"vocab_size", c.vocab_size},
            {"freeze_vision", c.freeze_vision},
            {"dropout", c.dropout}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.layers = j.value("layers", c.layers);
    c.heads = j.value("heads", c.heads);
    c.ff_dim = j.value("ff_dim", c.ff_dim);
    c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
    c.patch_size = j.value("patch_size", c.patch_size);
    c.image_resolution = j.value("image_resolution", c.image_resolution);
    c.vision_layers = j.value("vision_layers", c.vision_layers);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.freeze_vision = j.value("freeze_vision", c.freeze_vision);
    c.dropout = j.value("dropout", c.dropout);
    return c;
}

namespace {

constexpr int kBlockTensors = 12;
constexpr double kLayerNormEps = 1e-5;

void add_block(std::vector<TensorInfo>& out, std::size_t& off, const std::string& prefix, int d, int f, bool vision) {
    auto add = [&](const std::string& name, int rows, int cols) {
        out.push_back({prefix + name, off, rows, cols, vision});
        off += static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
    };
    add("ln1.g", 1, d);
    add("ln1.b", 1, d);
    add("qkv.w", d, 3 * d);
    add("qkv.b", 1, 3 * d);
    add("out.w", d, d);
    add("out.b", 1, d);
    add("ln2.g", 1, d);
    add("ln2.b", 1, d);
    add("ff1.w", d, f);
    add("ff1.b", 1, f);
    add("ff2.w", f, d);
    add("ff2.b", 1, d);
}

} // namespace

std::vector<TensorInfo> parameter_layout(const ModelConfig& c) {
    std::vector<TensorInfo> out;
    std::size_t off = 0;
    auto add = [&](const std::string& name, int rows, int cols, bool vision) {
        out.push_back({name, off, rows, cols, vision});
        off += static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
    };
    const int d = c.embed_dim;
    add("vision.patch.w", c.patch_dim(), d, true);
    add("vision.patch.b", 1, d, true);
    add("vision.pos", c.image_tokens(), d, true);
    for (int l = 0; l < c.vision_layers; ++l) {
        add_block(out, off, "vision.block" + std::to_string(l) + ".", d, c.ff_dim, true);
    }
    add("text.tok_emb", c.vocab_size, d, false);
    add("text.pos", c.max_text_len(), d, false);
    for (int l = 0; l < c.layers; ++l) {
        add_block(out, off, "decoder.block" + std::to_string(l) + ".", d, c.ff_dim, false);
    }
    add("decoder.ln_f.g", 1, d, false);
    add("decoder.ln_f.b", 1, d, false);
    add("head.w", d, c.vocab_size, false);
    add("head.b", 1, c.vocab_size, false);
    return out;
}

std::size_t count_parameters(const ModelConfig& c) {
    const auto layout = parameter_layout(c);
    return layout.back().offset + layout.back().size();
}

std::size_t vision_parameters(const ModelConfig& c) {
    std::size_t n = 0;
    for (const auto& t : parameter_layout(c)) {
        n += t.vision ? t.size() : 0;
    }
    return n;
}

std::size_t trainable_parameters(const ModelConfig& c, bool freeze_vision) {
    return count_parameters(c) - (freeze_vision ? vision_parameters(c) : 0);
}

Sequence make_sequence(const SampleRecord& r) {
    Sequence s;
    s.image = &r.image;
    s.tokens = r.prompt_ids;
    s.tokens.insert(s.tokens.end(), r.target_ids.begin(), r.target_ids.end());
    s.prefix_tokens = static_cast<int>(r.prompt_ids.size());
    if (r.loss_mask.size() < s.tokens.size()) {
        throw Error(ErrorCode::shape_mismatch, "loss mask shorter than the token sequence");
    }
    const std::size_t skip = r.loss_mask.size() - s.tokens.size();
    s.targets.assign(r.loss_mask.begin() + static_cast<std::ptrdiff_t>(skip), r.loss_mask.end());
    return s;
}

// ---------------------------------------------------------------------------
// Kernels

namespace {

template <typename T> using MatT = typename Transformer<T>::Mat;
template <typename T> using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;
template <typename T> using ColVec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T> using CMap = Eigen::Map<const MatT<T>>;
template <typename T> using GMap = Eigen::Map<MatT<T>>;
template <typename T> using CRowMap = Eigen::Map<const RowVec<T>>;
template <typename T> using GRowMap = Eigen::Map<RowVec<T>>;

struct BlockRef {
    std::size_t ln1_g, ln1_b, qkv_w, qkv_b, out_w, out_b, ln2_g, ln2_b, ff1_w, ff1_b, ff2_w, ff2_b;
};

BlockRef block_ref(const std::vector<TensorInfo>& layout, std::size_t first) {
    auto o = [&](int i) { return layout[first + static_cast<std::size_t>(i)].offset; };
    return {o(0), o(1), o(2), o(3), o(4), o(5), o(6), o(7), o(8), o(9), o(10), o(11)};
}

struct Segment {
    int offset = 0;
    int length = 0;
    int prefix = 0; // rows [0, prefix) see each other; later rows are causal
};

template <typename T> struct BlockCache {
    MatT<T> xhat1, a, qkv, att, xhat2, c, h, g, drop1, drop2;
    ColVec<T> rstd1, rstd2;
    std::vector<MatT<T>> probs; // per segment, per head
};

template <typename T>
void layer_norm(const MatT<T>& x, const T* gain, const T* bias, MatT<T>& xhat, ColVec<T>& rstd, MatT<T>& y) {
    const Eigen::Index rows = x.rows();
    const Eigen::Index d = x.cols();
    xhat.resize(rows, d);
    rstd.resize(rows);
    y.resize(rows, d);
    CRowMap<T> g(gain, d);
    CRowMap<T> b(bias, d);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const T mean = x.row(r).mean();
        const RowVec<T> centered = x.row(r).array() - mean;
        const T var = centered.squaredNorm() / static_cast<T>(d);
        const T rs = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
        rstd(r) = rs;
        xhat.row(r) = centered * rs;
        y.row(r) = xhat.row(r).cwiseProduct(g) + b;
    }
}

/// Adds the input gradient into dx and the gain/bias gradients into dg/db.
template <typename T>
void layer_norm_backward(const MatT<T>& dy, const MatT<T>& xhat, const ColVec<T>& rstd, const T* gain, T* dg, T* db,
                         MatT<T>& dx) {
    const Eigen::Index d = dy.cols();
    CRowMap<T> g(gain, d);
    GRowMap<T>(dg, d) += dy.cwiseProduct(xhat).colwise().sum();
    GRowMap<T>(db, d) += dy.colwise().sum();
    const T inv_d = T(1) / static_cast<T>(d);
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
        const RowVec<T> dxhat = dy.row(r).cwiseProduct(g);
        const T mean_dxhat = dxhat.sum() * inv_d;
        const T mean_dot = dxhat.dot(xhat.row(r)) * inv_d;
        dx.row(r) += rstd(r) * ((dxhat.array() - mean_dxhat).matrix() - mean_dot * xhat.row(r));
    }
}

constexpr double kGeluC = 0.7978845608028654; // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

template <typename T> T gelu(T x) {
    const T u = static_cast<T>(kGeluC) * (x + static_cast<T>(kGeluA) * x * x * x);
    return T(0.5) * x * (T(1) + std::tanh(u));
}

template <typename T> T gelu_grad(T x) {
    const T u = static_cast<T>(kGeluC) * (x + static_cast<T>(kGeluA) * x * x * x);
    const T t = std::tanh(u);
    const T du = static_cast<T>(kGeluC) * (T(1) + T(3) * static_cast<T>(kGeluA) * x * x);
    return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * du;
}

/// Row-wise softmax restricted to columns [0, limit(i)], zero elsewhere.
template <typename T> void masked_softmax(MatT<T>& s, int prefix) {
    const int n = static_cast<int>(s.rows());
    for (int i = 0; i < n; ++i) {
        const int lim = std::min(n - 1, std::max(i, prefix - 1));
        auto row = s.row(i);
        const T mx = row.head(lim + 1).maxCoeff();
        T sum = 0;
        for (int j = 0; j <= lim; ++j) {
            row(j) = std::exp(row(j) - mx);
            sum += row(j);
        }
        row.head(lim + 1) /= sum;
        row.tail(n - lim - 1).setZero();
    }
}

template <typename T> MatT<T> dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
    MatT<T> m(rows, cols);
    const T keep = static_cast<T>(1.0 / (1.0 - p));
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = rng.uniform() < p ? T(0) : keep;
    }
    return m;
}

template <typename T> struct BlockRunner {
    const ModelConfig& cfg;
    const T* p;

    /// x is replaced by the block output. `cache` may be null for inference.
    void forward(const BlockRef& b, MatT<T>& x, const std::vector<Segment>& segs, BlockCache<T>* cache,
                 Rng* drop_rng) const {
        const int d = cfg.embed_dim;
        const int f = cfg.ff_dim;
        const int dh = d / cfg.heads;
        const T scale = T(1) / std::sqrt(static_cast<T>(dh));
        const Eigen::Index rows = x.rows();

        BlockCache<T> local;
        BlockCache<T>& c = cache ? *cache : local;
        layer_norm<T>(x, p + b.ln1_g, p + b.ln1_b, c.xhat1, c.rstd1, c.a);
        c.qkv.noalias() = c.a * CMap<T>(p + b.qkv_w, d, 3 * d);
        c.qkv.rowwise() += CRowMap<T>(p + b.qkv_b, 3 * d);
        c.att.resize(rows, d);
        c.probs.clear();
        for (const Segment& s : segs) {
            for (int h = 0; h < cfg.heads; ++h) {
                const auto q = c.qkv.block(s.offset, h * dh, s.length, dh);
                const auto k = c.qkv.block(s.offset, d + h * dh, s.length, dh);
                const auto v = c.qkv.block(s.offset, 2 * d + h * dh, s.length, dh);
                MatT<T> prob = (q * k.transpose()) * scale;
                masked_softmax<T>(prob, s.prefix);
                c.att.block(s.offset, h * dh, s.length, dh).noalias() = prob * v;
                if (cache) {
                    c.probs.push_back(std::move(prob));
                }
            }
        }
        MatT<T> o = c.att * CMap<T>(p + b.out_w, d, d);
        o.rowwise() += CRowMap<T>(p + b.out_b, d);
        if (drop_rng) {
            c.drop1 = dropout_mask<T>(rows, d, cfg.dropout, *drop_rng);
            o = o.cwiseProduct(c.drop1);
        }
        x += o;

        layer_norm<T>(x, p + b.ln2_g, p + b.ln2_b, c.xhat2, c.rstd2, c.c);
        c.h.noalias() = c.c * CMap<T>(p + b.ff1_w, d, f);
        c.h.rowwise() += CRowMap<T>(p + b.ff1_b, f);
        c.g = c.h.unaryExpr([](T v) { return gelu(v); });
        MatT<T> m = c.g * CMap<T>(p + b.ff2_w, f, d);
        m.rowwise() += CRowMap<T>(p + b.ff2_b, d);
        if (drop_rng) {
            c.drop2 = dropout_mask<T>(rows, d, cfg.dropout, *drop_rng);
            m = m.cwiseProduct(c.drop2);
        }
        x += m;
    }

    /// dx holds the gradient of the block output on entry and of the block
    /// input on exit.
    void backward(const BlockRef& b, T* gp, const BlockCache<T>& c, const std::vector<Segment>& segs,
                  MatT<T>& dx) const {
        const int d = cfg.embed_dim;
        const int f = cfg.ff_dim;
        const int dh = d / cfg.heads;
        const T scale = T(1) / std::sqrt(static_cast<T>(dh));
        const Eigen::Index rows = dx.rows();

        MatT<T> dm = c.drop2.size() ? MatT<T>(dx.cwiseProduct(c.drop2)) : dx;
        GMap<T>(gp + b.ff2_w, f, d).noalias() += c.g.transpose() * dm;
        GRowMap<T>(gp + b.ff2_b, d) += dm.colwise().sum();
        MatT<T> dh_ = dm * CMap<T>(p + b.ff2_w, f, d).transpose();
        dh_ = dh_.cwiseProduct(c.h.unaryExpr([](T v) { return gelu_grad(v); }));
        GMap<T>(gp + b.ff1_w, d, f).noalias() += c.c.transpose() * dh_;
        GRowMap<T>(gp + b.ff1_b, f) += dh_.colwise().sum();
        const MatT<T> dc = dh_ * CMap<T>(p + b.ff1_w, d, f).transpose();
        layer_norm_backward<T>(dc, c.xhat2, c.rstd2, p + b.ln2_g, gp + b.ln2_g, gp + b.ln2_b, dx);

        MatT<T> dout = c.drop1.size() ? MatT<T>(dx.cwiseProduct(c.drop1)) : dx;
        GMap<T>(gp + b.out_w, d, d).noalias() += c.att.transpose() * dout;
        GRowMap<T>(gp + b.out_b, d) += dout.colwise().sum();
        const MatT<T> datt = dout * CMap<T>(p + b.out_w, d, d).transpose();

        MatT<T> dqkv = MatT<T>::Zero(rows, 3 * d);
        std::size_t idx = 0;
        for (const Segment& s : segs) {
            for (int h = 0; h < cfg.heads; ++h, ++idx) {
                const MatT<T>& prob = c.probs[idx];
                const auto q = c.qkv.block(s.offset, h * dh, s.length, dh);
                const auto k = c.qkv.block(s.offset, d + h * dh, s.length, dh);
                const auto v = c.qkv.block(s.offset, 2 * d + h * dh, s.length, dh);
                const auto dout_h = datt.block(s.offset, h * dh, s.length, dh);
                MatT<T> dprob = dout_h * v.transpose();
                dqkv.block(s.offset, 2 * d + h * dh, s.length, dh).noalias() = prob.transpose() * dout_h;
                for (int i = 0; i < s.length; ++i) {
                    const T dot = dprob.row(i).dot(prob.row(i));
                    dprob.row(i) = prob.row(i).cwiseProduct((dprob.row(i).array() - dot).matrix());
                }
                dqkv.block(s.offset, h * dh, s.length, dh).noalias() = (dprob * k) * scale;
                dqkv.block(s.offset, d + h * dh, s.length, dh).noalias() = (dprob.transpose() * q) * scale;
            }
        }
        GMap<T>(gp + b.qkv_w, d, 3 * d).noalias() += c.a.transpose() * dqkv;
        GRowMap<T>(gp + b.qkv_b, 3 * d) += dqkv.colwise().sum();
        const MatT<T> da = dqkv * CMap<T>(p + b.qkv_w, d, 3 * d).transpose();
        layer_norm_backward<T>(da, c.xhat1, c.rstd1, p + b.ln1_g, gp + b.ln1_g, gp + b.ln1_b, dx);
    }
};

template <typename T> MatT<T> extract_patches(const Image& img, const ModelConfig& cfg) {
    if (img.height != cfg.image_resolution || img.width != cfg.image_resolution ||
        img.pixels.size() != static_cast<std::size_t>(img.height) * static_cast<std::size_t>(img.width) * 3) {
        throw Error(ErrorCode::shape_mismatch, "image does not match the configured resolution",
                    {{"expected", cfg.image_resolution}, {"height", img.height}, {"width", img.width}});
    }
    const int ps = cfg.patch_size;
    const int side = cfg.image_resolution / ps;
    MatT<T> out(side * side, cfg.patch_dim());
    for (int pr = 0; pr < side; ++pr) {
        for (int pc = 0; pc < side; ++pc) {
            const int row = pr * side + pc;
            int col = 0;
            for (int y = 0; y < ps; ++y) {
                for (int x = 0; x < ps; ++x) {
                    for (int ch = 0; ch < 3; ++ch) {
                        out(row, col++) = static_cast<T>(img.at(pr * ps + y, pc * ps + x, ch));
                    }
                }
            }
        }
    }
    return out;
}

} // namespace

// ---------------------------------------------------------------------------
// Transformer

namespace {

struct Offsets {
    std::size_t patch_w, patch_b, img_pos, tok_emb, txt_pos, lnf_g, lnf_b, head_w, head_b;
    std::vector<BlockRef> vision;
    std::vector<BlockRef> decoder;
};

Offsets offsets_of(const ModelConfig& cfg, const std::vector<TensorInfo>& layout) {
    Offsets o{};
    std::size_t i = 0;
    o.patch_w = layout[i++].offset;
    o.patch_b = layout[i++].offset;
    o.img_pos = layout[i++].offset;
    for (int l = 0; l < cfg.vision_layers; ++l, i += kBlockTensors) {
        o.vision.push_back(block_ref(layout, i));
    }
    o.tok_emb = layout[i++].offset;
    o.txt_pos = layout[i++].offset;
    for (int l = 0; l < cfg.layers; ++l, i += kBlockTensors) {
        o.decoder.push_back(block_ref(layout, i));
    }
    o.lnf_g = layout[i++].offset;
    o.lnf_b = layout[i++].offset;
    o.head_w = layout[i++].offset;
    o.head_b = layout[i++].offset;
    return o;
}

/// Everything the backward pass needs from one packed forward pass.
template <typename T> struct Pass {
    std::vector<int> starts; // first decoder row of each sample
    MatT<T> patches;
    std::vector<Segment> vision_segs, decoder_segs;
    std::vector<BlockCache<T>> vision_cache, decoder_cache;
    MatT<T> hidden; // decoder output before the final norm
    MatT<T> xhatf, normed;
    ColVec<T> rstdf;
};

template <typename T>
void check_sequence(const Sequence& s, const ModelConfig& cfg) {
    if (!s.image) {
        throw Error(ErrorCode::shape_mismatch, "sequence has no image");
    }
    const int n = static_cast<int>(s.tokens.size());
    if (n == 0 || n > cfg.max_text_len()) {
        throw Error(ErrorCode::shape_mismatch, "text length outside the model's range",
                    {{"length", n}, {"max_text_len", cfg.max_text_len()}});
    }
    if (s.prefix_tokens < 0 || s.prefix_tokens > n || (!s.targets.empty() && static_cast<int>(s.targets.size()) != n)) {
        throw Error(ErrorCode::shape_mismatch, "inconsistent sequence layout");
    }
    for (int id : s.tokens) {
        if (id < 0 || id >= cfg.vocab_size) {
            throw Error(ErrorCode::vocab_overflow, "token id outside the model vocabulary",
                        {{"id", id}, {"vocab_size", cfg.vocab_size}});
        }
    }
}

template <typename T>
void run_forward(const ModelConfig& cfg, const Offsets& off, const T* p, std::span<const Sequence> batch, Pass<T>& pass,
                 bool keep_vision, bool keep_decoder, Rng* drop_rng) {
    const int d = cfg.embed_dim;
    const int n_img = cfg.image_tokens();
    const int bsz = static_cast<int>(batch.size());
    for (const auto& s : batch) {
        check_sequence<T>(s, cfg);
    }
    BlockRunner<T> runner{cfg, p};

    pass.patches.resize(static_cast<Eigen::Index>(bsz) * n_img, cfg.patch_dim());
    for (int b = 0; b < bsz; ++b) {
        pass.patches.block(b * n_img, 0, n_img, cfg.patch_dim()) = extract_patches<T>(*batch[b].image, cfg);
        pass.vision_segs.push_back({b * n_img, n_img, n_img});
    }
    MatT<T> xv = pass.patches * CMap<T>(p + off.patch_w, cfg.patch_dim(), d);
    xv.rowwise() += CRowMap<T>(p + off.patch_b, d);
    for (int b = 0; b < bsz; ++b) {
        xv.block(b * n_img, 0, n_img, d) += CMap<T>(p + off.img_pos, n_img, d);
    }
    pass.vision_cache.resize(keep_vision ? off.vision.size() : 0);
    for (std::size_t l = 0; l < off.vision.size(); ++l) {
        runner.forward(off.vision[l], xv, pass.vision_segs, keep_vision ? &pass.vision_cache[l] : nullptr, drop_rng);
    }

    int rows = 0;
    for (const auto& s : batch) {
        pass.starts.push_back(rows);
        const int len = n_img + static_cast<int>(s.tokens.size());
        pass.decoder_segs.push_back({rows, len, n_img + s.prefix_tokens});
        rows += len;
    }
    MatT<T> x(rows, d);
    CMap<T> tok(p + off.tok_emb, cfg.vocab_size, d);
    CMap<T> pos(p + off.txt_pos, cfg.max_text_len(), d);
    for (int b = 0; b < bsz; ++b) {
        const int start = pass.starts[static_cast<std::size_t>(b)];
        x.block(start, 0, n_img, d) = xv.block(b * n_img, 0, n_img, d);
        const auto& toks = batch[b].tokens;
        for (std::size_t t = 0; t < toks.size(); ++t) {
            x.row(start + n_img + static_cast<int>(t)) = tok.row(toks[t]) + pos.row(static_cast<Eigen::Index>(t));
        }
    }
    pass.decoder_cache.resize(keep_decoder ? off.decoder.size() : 0);
    for (std::size_t l = 0; l < off.decoder.size(); ++l) {
        runner.forward(off.decoder[l], x, pass.decoder_segs, keep_decoder ? &pass.decoder_cache[l] : nullptr,
                       drop_rng);
    }
    pass.hidden = std::move(x);
    layer_norm<T>(pass.hidden, p + off.lnf_g, p + off.lnf_b, pass.xhatf, pass.rstdf, pass.normed);
}

} // namespace

namespace {

// Patch positions start as a 2D sine/cosine grid: a quarter of the channels
// each for sin and cos of the row and of the column. A small object is then
// locatable from the first step instead of after the position table is learned.
template <typename T> void grid_position_encoding(const ModelConfig& cfg, T* pos) {
    const int d = cfg.embed_dim;
    const int side = cfg.image_resolution / cfg.patch_size;
    const int q = d / 4;
    for (int r = 0; r < side; ++r) {
        for (int c = 0; c < side; ++c) {
            T* row = pos + static_cast<std::size_t>(r * side + c) * static_cast<std::size_t>(d);
            for (int k = 0; k < q; ++k) {
                const double w = std::pow(100.0, -static_cast<double>(k) / q);
                row[k] = static_cast<T>(std::sin(r * w));
                row[q + k] = static_cast<T>(std::cos(r * w));
                row[2 * q + k] = static_cast<T>(std::sin(c * w));
                row[3 * q + k] = static_cast<T>(std::cos(c * w));
            }
        }
    }
}

} // namespace

template <typename T>
Transformer<T>::Transformer(ModelConfig config, std::uint64_t seed)
    : config_(std::move(config)) {
    config_.validate();
    layout_ = parameter_layout(config_);
    params_.assign(count_parameters(config_), T(0));
    vision_end_ = vision_parameters(config_);
    Rng rng(seed);
    for (const auto& t : layout_) {
        const bool gain = t.name.ends_with(".g");
        const bool bias = t.name.ends_with(".b");
        for (std::size_t i = 0; i < t.size(); ++i) {
            params_[t.offset + i] = gain ? T(1) : bias ? T(0) : static_cast<T>(0.02 * rng.normal());
        }
        if (t.name == "vision.pos") {
            grid_position_encoding(config_, params_.data() + t.offset);
        }
    }
}

template <typename T>
Transformer<T>::Transformer(ModelConfig config, ParamVector<T> params)
    : config_(std::move(config)), params_(std::move(params)) {
    config_.validate();
    layout_ = parameter_layout(config_);
    vision_end_ = vision_parameters(config_);
    if (params_.size() != count_parameters(config_)) {
        throw Error(ErrorCode::incompatible_artifacts, "parameter count does not match the model config",
                    {{"expected", count_parameters(config_)}, {"actual", params_.size()}});
    }
}

template <typename T>
LossStats Transformer<T>::loss(std::span<const Sequence> batch, T* grad, T grad_scale,
                               const LossOptions& options) const {
    LossStats stats;
    if (batch.empty()) {
        return stats;
    }
    const ModelConfig& cfg = config_;
    const Offsets off = offsets_of(cfg, layout_);
    const T* p = params_.data();
    const int d = cfg.embed_dim;
    const int v = cfg.vocab_size;
    const int n_img = cfg.image_tokens();
    const bool want_grad = grad != nullptr;
    const bool train_vision = want_grad && !cfg.freeze_vision;

    std::optional<Rng> drop_rng;
    if (options.training && cfg.dropout > 0.0) {
        drop_rng.emplace(options.dropout_seed);
    }
    Pass<T> pass;
    run_forward<T>(cfg, off, p, batch, pass, train_vision, want_grad, drop_rng ? &*drop_rng : nullptr);

    // Rows whose logits score a target token.
    std::vector<int> rows, labels;
    ParamVector<T> weights;
    const T inv_b = T(1) / static_cast<T>(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto& s = batch[b];
        int count = 0;
        for (std::size_t t = 1; t < s.targets.size(); ++t) {
            count += s.targets[t] ? 1 : 0;
        }
        for (std::size_t t = 1; t < s.targets.size(); ++t) {
            if (s.targets[t]) {
                rows.push_back(pass.starts[b] + n_img + static_cast<int>(t) - 1);
                labels.push_back(s.tokens[t]);
                weights.push_back(inv_b / static_cast<T>(count));
            }
        }
    }
    const int m = static_cast<int>(rows.size());
    stats.target_tokens = static_cast<std::size_t>(m);
    if (m == 0) {
        return stats;
    }
    MatT<T> z(m, d);
    for (int i = 0; i < m; ++i) {
        z.row(i) = pass.normed.row(rows[static_cast<std::size_t>(i)]);
    }
    MatT<T> logits = z * CMap<T>(p + off.head_w, d, v);
    logits.rowwise() += CRowMap<T>(p + off.head_b, v);

    const bool distance = options.action_distance_weight > 0.0 && options.action_bins > 1 && options.first_action_id >= 0;
    double total = 0.0;
    MatT<T> dlogits(m, v);
    for (int i = 0; i < m; ++i) {
        auto row = logits.row(i);
        Eigen::Index arg = 0;
        const T mx = row.maxCoeff(&arg);
        const int label = labels[static_cast<std::size_t>(i)];
        stats.correct += arg == label ? 1 : 0;
        RowVec<T> prob = (row.array() - mx).exp();
        const T sum = prob.sum();
        prob /= sum;
        const T w = weights[static_cast<std::size_t>(i)];
        total += static_cast<double>(w) * static_cast<double>(-(row(label) - mx - std::log(sum)));
        RowVec<T> g = prob;
        g(label) -= T(1);
        const int bin = label - options.first_action_id;
        if (distance && bin >= 0 && bin < options.action_bins) {
            RowVec<T> cost = RowVec<T>::Ones(v);
            for (int j = 0; j < options.action_bins; ++j) {
                cost(options.first_action_id + j) =
                    static_cast<T>(std::abs(j - bin)) / static_cast<T>(options.action_bins - 1);
            }
            const T expected = prob.dot(cost);
            const T lambda = static_cast<T>(options.action_distance_weight);
            total += static_cast<double>(w * lambda * expected);
            g += lambda * prob.cwiseProduct((cost.array() - expected).matrix());
        }
        dlogits.row(i) = g * (w * grad_scale);
    }
    stats.loss = total;
    if (!want_grad) {
        return stats;
    }

    T* gp = grad;
    GMap<T>(gp + off.head_w, d, v).noalias() += z.transpose() * dlogits;
    GRowMap<T>(gp + off.head_b, v) += dlogits.colwise().sum();
    const MatT<T> dz = dlogits * CMap<T>(p + off.head_w, d, v).transpose();
    MatT<T> dnormed = MatT<T>::Zero(pass.normed.rows(), d);
    for (int i = 0; i < m; ++i) {
        dnormed.row(rows[static_cast<std::size_t>(i)]) += dz.row(i);
    }
    MatT<T> dx = MatT<T>::Zero(pass.normed.rows(), d);
    layer_norm_backward<T>(dnormed, pass.xhatf, pass.rstdf, p + off.lnf_g, gp + off.lnf_g, gp + off.lnf_b, dx);

    BlockRunner<T> runner{cfg, p};
    for (std::size_t l = off.decoder.size(); l-- > 0;) {
        runner.backward(off.decoder[l], gp, pass.decoder_cache[l], pass.decoder_segs, dx);
    }
    GMap<T> gtok(gp + off.tok_emb, v, d);
    GMap<T> gpos(gp + off.txt_pos, cfg.max_text_len(), d);
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto& toks = batch[b].tokens;
        for (std::size_t t = 0; t < toks.size(); ++t) {
            const auto r = dx.row(pass.starts[b] + n_img + static_cast<int>(t));
            gtok.row(toks[t]) += r;
            gpos.row(static_cast<Eigen::Index>(t)) += r;
        }
    }
    if (!train_vision) {
        return stats;
    }
    MatT<T> dxv(static_cast<Eigen::Index>(batch.size()) * n_img, d);
    for (std::size_t b = 0; b < batch.size(); ++b) {
        dxv.block(static_cast<Eigen::Index>(b) * n_img, 0, n_img, d) = dx.block(pass.starts[b], 0, n_img, d);
    }
    for (std::size_t l = off.vision.size(); l-- > 0;) {
        runner.backward(off.vision[l], gp, pass.vision_cache[l], pass.vision_segs, dxv);
    }
    GMap<T> gimg(gp + off.img_pos, n_img, d);
    for (std::size_t b = 0; b < batch.size(); ++b) {
        gimg += dxv.block(static_cast<Eigen::Index>(b) * n_img, 0, n_img, d);
    }
    GRowMap<T>(gp + off.patch_b, d) += dxv.colwise().sum();
    GMap<T>(gp + off.patch_w, cfg.patch_dim(), d).noalias() += pass.patches.transpose() * dxv;
    return stats;
}

template <typename T> typename Transformer<T>::Mat Transformer<T>::logits(const Sequence& seq) const {
    const Offsets off = offsets_of(config_, layout_);
    Pass<T> pass;
    run_forward<T>(config_, off, params_.data(), std::span<const Sequence>(&seq, 1), pass, false, false, nullptr);
    const int n_img = config_.image_tokens();
    const int n = static_cast<int>(seq.tokens.size());
    Mat out = pass.normed.block(n_img, 0, n, config_.embed_dim) *
              CMap<T>(params_.data() + off.head_w, config_.embed_dim, config_.vocab_size);
    out.rowwise() += CRowMap<T>(params_.data() + off.head_b, config_.vocab_size);
    return out;
}

template <typename T> typename Transformer<T>::Mat Transformer<T>::patch_embeddings(const Image& image) const {
    const Offsets off = offsets_of(config_, layout_);
    const int d = config_.embed_dim;
    const T* p = params_.data();
    Mat x = extract_patches<T>(image, config_) * CMap<T>(p + off.patch_w, config_.patch_dim(), d);
    x.rowwise() += CRowMap<T>(p + off.patch_b, d);
    x += CMap<T>(p + off.img_pos, config_.image_tokens(), d);
    return x;
}

template <typename T> typename Transformer<T>::Mat Transformer<T>::encode_image(const Image& image) const {
    const Offsets off = offsets_of(config_, layout_);
    Mat x = patch_embeddings(image);
    const int n_img = config_.image_tokens();
    const std::vector<Segment> segs{{0, n_img, n_img}};
    BlockRunner<T> runner{config_, params_.data()};
    for (const auto& b : off.vision) {
        runner.forward(b, x, segs, nullptr, nullptr);
    }
    return x;
}

template <typename T> std::vector<typename Transformer<T>::Mat> Transformer<T>::attention_maps(const Sequence& seq) const {
    const Offsets off = offsets_of(config_, layout_);
    Pass<T> pass;
    run_forward<T>(config_, off, params_.data(), std::span<const Sequence>(&seq, 1), pass, false, true, nullptr);
    std::vector<Mat> out;
    for (auto& c : pass.decoder_cache) {
        for (auto& prob : c.probs) {
            out.push_back(std::move(prob));
        }
    }
    return out;
}

namespace {

template <typename T> int pick_token(const RowVec<T>& logits, const GenerateOptions& options, Rng& rng) {
    Eigen::Index arg = 0;
    const T mx = logits.maxCoeff(&arg);
    if (options.temperature <= 0.0) {
        return static_cast<int>(arg);
    }
    RowVec<T> prob = ((logits.array() - mx) / static_cast<T>(options.temperature)).exp();
    const double u = rng.uniform() * static_cast<double>(prob.sum());
    double acc = 0.0;
    for (Eigen::Index i = 0; i < prob.size(); ++i) {
        acc += static_cast<double>(prob(i));
        if (u < acc) {
            return static_cast<int>(i);
        }
    }
    return static_cast<int>(prob.size() - 1);
}

} // namespace

template <typename T>
std::vector<int> Transformer<T>::generate_uncached(const Image& image, std::span<const int> prompt,
                                                   const GenerateOptions& options) const {
    std::vector<int> out;
    Rng rng(options.seed);
    Sequence seq;
    seq.image = &image;
    seq.tokens.assign(prompt.begin(), prompt.end());
    seq.prefix_tokens = static_cast<int>(prompt.size());
    for (int step = 0; step < options.max_new_tokens; ++step) {
        const Mat lg = logits(seq);
        const int tok = pick_token<T>(lg.row(lg.rows() - 1), options, rng);
        out.push_back(tok);
        if (tok == options.eos_id || static_cast<int>(seq.tokens.size()) >= config_.max_text_len()) {
            break;
        }
        seq.tokens.push_back(tok);
    }
    return out;
}

template <typename T>
std::vector<int> Transformer<T>::generate(const Image& image, std::span<const int> prompt,
                                          const GenerateOptions& options) const {
    if (options.max_new_tokens <= 0 || prompt.empty()) {
        return {};
    }
    if (!options.use_cache) {
        return generate_uncached(image, prompt, options);
    }
    const ModelConfig& cfg = config_;
    const Offsets off = offsets_of(cfg, layout_);
    const T* p = params_.data();
    const int d = cfg.embed_dim;
    const int f = cfg.ff_dim;
    const int dh = d / cfg.heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    const int n_img = cfg.image_tokens();

    Sequence seq;
    seq.image = &image;
    seq.tokens.assign(prompt.begin(), prompt.end());
    seq.prefix_tokens = static_cast<int>(prompt.size());
    Pass<T> pass;
    run_forward<T>(cfg, off, p, std::span<const Sequence>(&seq, 1), pass, false, true, nullptr);

    // Keys and values of every layer; the prefix never attends to later rows,
    // so its entries stay valid as the target grows.
    const int capacity = n_img + cfg.max_text_len();
    int filled = n_img + static_cast<int>(prompt.size());
    std::vector<Mat> keys, values;
    for (const auto& c : pass.decoder_cache) {
        Mat k(capacity, d), v(capacity, d);
        k.topRows(filled) = c.qkv.block(0, d, filled, d);
        v.topRows(filled) = c.qkv.block(0, 2 * d, filled, d);
        keys.push_back(std::move(k));
        values.push_back(std::move(v));
    }
    auto head_logits = [&](const Mat& normed_row) {
        RowVec<T> lg = normed_row * CMap<T>(p + off.head_w, d, cfg.vocab_size);
        lg += CRowMap<T>(p + off.head_b, cfg.vocab_size);
        return lg;
    };

    Rng rng(options.seed);
    std::vector<int> out;
    RowVec<T> lg = head_logits(pass.normed.row(filled - 1));
    for (int step = 0; step < options.max_new_tokens; ++step) {
        const int tok = pick_token<T>(lg, options, rng);
        out.push_back(tok);
        const int text_pos = static_cast<int>(prompt.size() + out.size()) - 1;
        if (tok == options.eos_id || text_pos >= cfg.max_text_len() || step + 1 == options.max_new_tokens) {
            break;
        }
        Mat x = CMap<T>(p + off.tok_emb, cfg.vocab_size, d).row(tok) +
                CMap<T>(p + off.txt_pos, cfg.max_text_len(), d).row(text_pos);
        for (std::size_t l = 0; l < off.decoder.size(); ++l) {
            const BlockRef& b = off.decoder[l];
            Mat xhat, a, y;
            ColVec<T> rstd;
            layer_norm<T>(x, p + b.ln1_g, p + b.ln1_b, xhat, rstd, a);
            RowVec<T> qkv = a * CMap<T>(p + b.qkv_w, d, 3 * d);
            qkv += CRowMap<T>(p + b.qkv_b, 3 * d);
            keys[l].row(filled) = qkv.segment(d, d);
            values[l].row(filled) = qkv.segment(2 * d, d);
            Mat att(1, d);
            for (int h = 0; h < cfg.heads; ++h) {
                RowVec<T> s = (qkv.segment(h * dh, dh) * keys[l].block(0, h * dh, filled + 1, dh).transpose()) * scale;
                s = (s.array() - s.maxCoeff()).exp();
                s /= s.sum();
                att.block(0, h * dh, 1, dh) = s * values[l].block(0, h * dh, filled + 1, dh);
            }
            Mat o = att * CMap<T>(p + b.out_w, d, d);
            o += CRowMap<T>(p + b.out_b, d);
            x += o;
            layer_norm<T>(x, p + b.ln2_g, p + b.ln2_b, xhat, rstd, a);
            Mat hdn = a * CMap<T>(p + b.ff1_w, d, f);
            hdn += CRowMap<T>(p + b.ff1_b, f);
            hdn = hdn.unaryExpr([](T val) { return gelu(val); });
            Mat mlp = hdn * CMap<T>(p + b.ff2_w, f, d);
            mlp += CRowMap<T>(p + b.ff2_b, d);
            x += mlp;
        }
        ++filled;
        Mat xhat, normed;
        ColVec<T> rstd;
        layer_norm<T>(x, p + off.lnf_g, p + off.lnf_b, xhat, rstd, normed);
        lg = head_logits(normed);
    }
    return out;
}

template class Transformer<float>;
template class Transformer<double>;

} // namespace tvla
