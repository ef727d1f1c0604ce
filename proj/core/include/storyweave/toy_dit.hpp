// SPDX-License-Identifier: Apache-2.0
//
// A small diffusion transformer with full attention over the concatenated
// condition-text and visual tokens. The backbone is frozen; gradients are
// produced for adapter parameters only.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "storyweave/attention_mask.hpp"
#include "storyweave/lora.hpp"
#include "storyweave/plan.hpp"
#include "storyweave/region.hpp"

namespace storyweave {

struct ModelConfig {
  int d_model = 32;
  int n_blocks = 2;
  int n_heads = 4;
  int d_ff = 64;
  int d_latent = 4;
  LatentGrid grid{4, 4, 4};
  int max_seg_len = 16;
  int hash_vocab = 4096;
  std::uint64_t seed = 0;

  int head_dim() const { return d_model / n_heads; }
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

struct NoiseSchedule {
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bar;

  int steps() const { return static_cast<int>(betas.size()); }

  /// Linear betas from beta_start to beta_end over `steps` steps.
  static NoiseSchedule linear(int steps = 100, double beta_start = 1e-4, double beta_end = 0.2);
};

/// z_t = sqrt(alpha_bar[t]) z0 + sqrt(1 - alpha_bar[t]) epsilon.
Matrix add_noise(const Matrix& z0, int t, const Matrix& epsilon, const NoiseSchedule& schedule);

/// Lower-cased whitespace-split words hashed (FNV-1a) into [0, vocab), truncated
/// to max_len. Never empty: a caption with no words yields one padding token.
std::vector<int> tokenize_caption(std::string_view caption, int vocab, int max_len);

/// Text inputs plus the mask that routes them.
struct Conditioning {
  std::vector<std::vector<int>> segments;  // token ids per condition
  AttentionMask mask;
};

Conditioning make_conditioning(const ModelConfig& config, const std::vector<std::string>& captions,
                               const RegionMap& regions, MaskMode mode);
Conditioning make_conditioning(const ModelConfig& config, const LatentPlan& plan, const RegionMap& regions,
                               MaskMode mode);

/// An adapter resolved against one sequence layout.
struct BoundAdapter {
  const LoraModule* module = nullptr;
  int block = 0;
  AdapterSite site = AdapterSite::Q;
  std::vector<std::uint8_t> token_mask;  // length S; condition text positions are always 0
};

enum class BindingMode { Regional, Global };

/// Binds the adapters of `set` (only inference adapters when `inference_only`).
/// Regional: visual tokens whose membership meets the adapter's condition ids.
/// Global, or adapters without condition ids: every visual token.
std::vector<BoundAdapter> bind_adapters(const AdapterSet& set, const RegionMap& regions, const SegmentLayout& layout,
                                        BindingMode mode = BindingMode::Regional, bool inference_only = true);

/// Fills empty condition ids from the plan: subject adapters bind to the
/// conditions of the entity they are named after, motion adapters to the
/// conditions performing their motion. Adapters matching no condition are dropped.
AdapterSet adapters_for_plan(AdapterSet set, const LatentPlan& plan);

struct AdapterGrad {
  Matrix dA;
  Matrix dB;
};

class ToyDiT {
 public:
  struct Block {
    Vector ln1_g, ln1_b;
    Matrix wq, wk, wv, wo;  // d_model x d_model, y = W x
    Vector ln2_g, ln2_b;
    Matrix w1;  // d_ff x d_model
    Vector b1;
    Matrix w2;  // d_model x d_ff
    Vector b2;
  };

  struct Params {
    Matrix tok_emb;   // hash_vocab x d_model
    Matrix text_pos;  // max_seg_len x d_model
    Matrix vis_pos;   // V x d_model
    Matrix w_in;      // d_model x d_latent
    Vector b_in;
    std::vector<Block> blocks;
    Vector lnf_g, lnf_b;
    Matrix w_out;  // d_latent x d_model
    Vector b_out;
  };

  /// Everything the backward pass needs from one forward pass.
  struct Cache {
    struct BlockCache {
      Matrix x_in, n1, q, k, v, o, x1, n2, u, g;
      Vector rstd1, rstd2;
      std::vector<Matrix> probs;  // per head, S x S, zero where masked
    };
    std::vector<BlockCache> blocks;
    Matrix x_final;
    Vector rstd_final;
    Matrix n_final;  // visual rows only
    std::vector<std::vector<int>> allowed;  // per query, allowed keys ascending
    int visual_offset = 0;
  };

  explicit ToyDiT(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  const Params& params() const { return params_; }
  Params& mutable_params() { return params_; }

  /// epsilon_hat (V x d_latent) for z_t (V x d_latent) at timestep t.
  Matrix forward(const Conditioning& cond, std::span<const BoundAdapter> adapters, const Matrix& z_t, int t,
                 Cache* cache = nullptr) const;

  /// Gradients of a scalar loss with respect to every bound adapter's A and B,
  /// given dL/d(epsilon_hat) and the cache from the matching forward call.
  std::vector<AdapterGrad> backward(const Cache& cache, std::span<const BoundAdapter> adapters,
                                    const Matrix& d_output) const;

  /// 64-bit FNV-1a over every backbone parameter.
  std::uint64_t backbone_hash() const;

  /// Named views over every backbone tensor, in a fixed order.
  std::vector<std::pair<std::string, Matrix*>> named_matrices();
  std::vector<std::pair<std::string, Vector*>> named_vectors();
  std::size_t parameter_count() const;

 private:
  ModelConfig config_;
  Params params_;
};

/// Ancestral DDPM sampling from x_{T-1} ~ N(0, I) down to t = 0.
Matrix sample(const ToyDiT& model, const Conditioning& cond, std::span<const BoundAdapter> adapters,
              const NoiseSchedule& schedule, std::uint64_t seed);

/// Plan-level forward: tokenizes the plan's captions, builds the mask for `mode`
/// and binds the inference adapters of `adapters` regionally.
Matrix dit_forward(const ToyDiT& model, const LatentPlan& plan, const RegionMap& regions, MaskMode mode,
                   const AdapterSet& adapters, const Matrix& z_t, int t);

/// Checkpoint: a JSON document (config + manifest of name/shape/offset) and a
/// blob of little-endian float32 parameters.
struct Checkpoint {
  std::string manifest_json;
  std::string blob;
};
Checkpoint save_checkpoint(ToyDiT& model);
ToyDiT load_checkpoint(std::string_view manifest_json, std::string_view blob);

std::string model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(std::string_view json);

}  // namespace storyweave
