// Copyright (C) 2026 The tvla Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "tvla/aligned.hpp"
#include "tvla/data.hpp"
#include "tvla/env.hpp"

namespace tvla {

struct ModelConfig {
    int embed_dim = 128;
    int layers = 4;
    int heads = 4;
    int ff_dim = 512;
    int max_seq_len = 256;
    int patch_size = 4;
    int image_resolution = 32;
    int vision_layers = 1; // bidirectional blocks over image tokens only
    int vocab_size = 0;
    bool freeze_vision = false;
    double dropout = 0.0;

    int image_tokens() const {
        const int side = image_resolution / patch_size;
        return side * side;
    }
    int patch_dim() const { return patch_size * patch_size * 3; }
    int max_text_len() const { return max_seq_len - image_tokens(); }

    /// Throws config_error.
    void validate() const;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct TensorInfo {
    std::string name;
    std::size_t offset = 0;
    int rows = 0;
    int cols = 0;
    bool vision = false;

    std::size_t size() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
};

/// Flat parameter layout. Vision tensors come first, so the vision encoder
/// occupies [0, vision_parameters(c)).
std::vector<TensorInfo> parameter_layout(const ModelConfig& c);
std::size_t count_parameters(const ModelConfig& c);
std::size_t vision_parameters(const ModelConfig& c);
std::size_t trainable_parameters(const ModelConfig& c, bool freeze_vision);

/// One example laid out as [image patches][prompt][target].
struct Sequence {
    const Image* image = nullptr;
    std::vector<int> tokens;           // prompt ids followed by target ids
    int prefix_tokens = 0;             // text tokens that belong to the prefix
    std::vector<std::uint8_t> targets; // per text token, 1 where it is predicted under the loss
};

Sequence make_sequence(const SampleRecord& r);

struct LossOptions {
    bool training = false;        // enables dropout
    std::uint64_t dropout_seed = 0;
    double action_distance_weight = 0.0;
    int first_action_id = -1;     // action tokens are [first_action_id, first_action_id + action_bins)
    int action_bins = 0;
};

struct LossStats {
    double loss = 0.0;
    std::size_t target_tokens = 0;
    std::size_t correct = 0; // teacher-forced argmax hits
};

struct GenerateOptions {
    int max_new_tokens = 48;
    double temperature = 0.0; // 0 selects greedy decoding
    std::uint64_t seed = 0;
    int eos_id = 2;
    bool use_cache = true;
};

template <typename T> class Transformer {
  public:
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

    /// Weights N(0, 0.02^2), biases 0, layer-norm gains 1.
    Transformer(ModelConfig config, std::uint64_t seed);
    Transformer(ModelConfig config, ParamVector<T> params);

    const ModelConfig& config() const { return config_; }
    ParamVector<T>& params() { return params_; }
    const ParamVector<T>& params() const { return params_; }
    std::size_t vision_end() const { return vision_end_; }
    const std::vector<TensorInfo>& layout() const { return layout_; }

    /// Mean over samples of the per-sample mean target cross-entropy. When
    /// `grad` is given, adds grad_scale * dloss/dparams into it (vision
    /// entries untouched when the vision encoder is frozen).
    LossStats loss(std::span<const Sequence> batch, T* grad = nullptr, T grad_scale = T(1),
                   const LossOptions& options = {}) const;

    /// Logits at every text position; row t scores token t + 1.
    Mat logits(const Sequence& seq) const;

    /// Patch projection plus position embedding, before any mixing layer.
    Mat patch_embeddings(const Image& image) const;
    /// Image token embeddings after the vision blocks.
    Mat encode_image(const Image& image) const;

    /// Decoder self-attention probabilities, one matrix per layer and head.
    std::vector<Mat> attention_maps(const Sequence& seq) const;

    /// Generated suffix only; stops after EOS (included) or max_new_tokens.
    std::vector<int> generate(const Image& image, std::span<const int> prompt, const GenerateOptions& options) const;

  private:
    ModelConfig config_;
    std::vector<TensorInfo> layout_;
    ParamVector<T> params_;
    std::size_t vision_end_ = 0;

    std::vector<int> generate_uncached(const Image& image, std::span<const int> prompt,
                                       const GenerateOptions& options) const;
};

extern template class Transformer<float>;
extern template class Transformer<double>;

// ---------------------------------------------------------------------------
// Checkpoints

struct OptimizerState {
    std::int64_t step = 0;
    ParamVector<float> m;
    ParamVector<float> v;
};

struct Checkpoint {
    static constexpr int kFormatVersion = 1;

    ModelConfig config;
    nlohmann::json vocab;         // TokenVocab::to_json()
    std::string vocab_hash;
    ParamVector<float> params;
    std::optional<OptimizerState> optimizer;
    nlohmann::json meta = nlohmann::json::object(); // run config, data position, rng state
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Throws io_error for unreadable files and incompatible_artifacts for a
/// wrong magic, version or inconsistent sizes.
Checkpoint load_checkpoint(const std::filesystem::path& path);

} // namespace tvla
