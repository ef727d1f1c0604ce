// SPDX-License-Identifier: Apache-2.0
//
// Diffusion losses and the adapter training loops for motion and subject priors.
//
// Noise tensors are V x C with V = frames * tokens_per_frame, rows grouped by
// latent frame (the LatentGrid row-major order).

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "storyweave/lora.hpp"
#include "storyweave/toy_dit.hpp"

namespace storyweave {

enum class Reduction { Mean, Sum };
enum class PromptMode { PerVideo, Single };
enum class OptimizerKind { Sgd, Adam };

PromptMode parse_prompt_mode(std::string_view text);  // "per-video" | "per_video" | "single"

struct DebiasConfig {
  double beta = 1.0;
  int anchor_index = 0;
  bool enabled = true;
  /// When set, both sides subtract the ground-truth anchor frame instead of their own.
  bool shared_anchor = false;
};

struct FrameLayout {
  int frames = 1;
  int tokens_per_frame = 1;
};

struct LossBreakdown {
  double org = 0.0;
  double ad = 0.0;
  double motion = 0.0;
};

struct LossWithGrad {
  LossBreakdown value;
  Matrix grad;  // d loss / d epsilon_hat
};

/// Squared error over all elements.
double loss_org(const Matrix& epsilon, const Matrix& epsilon_hat, Reduction reduction = Reduction::Mean);

/// phi(eps)_f = sqrt(beta^2 + 1) eps_f - beta eps_anchor, for every frame f.
Matrix debias(const Matrix& eps, const FrameLayout& layout, const DebiasConfig& cfg);

/// Squared error between the debiased tensors; 0 when debiasing is disabled.
double loss_ad(const Matrix& epsilon, const Matrix& epsilon_hat, const FrameLayout& layout, const DebiasConfig& cfg,
               Reduction reduction = Reduction::Mean);

/// loss_org + loss_ad, unweighted.
double loss_motion(const Matrix& epsilon, const Matrix& epsilon_hat, const FrameLayout& layout,
                   const DebiasConfig& cfg, Reduction reduction = Reduction::Mean);

LossWithGrad loss_motion_with_grad(const Matrix& epsilon, const Matrix& epsilon_hat, const FrameLayout& layout,
                                   const DebiasConfig& cfg, Reduction reduction = Reduction::Mean);

/// Reconstruction loss restricted to the tokens of latent frame 0.
LossWithGrad loss_first_frame_with_grad(const Matrix& epsilon, const Matrix& epsilon_hat, const FrameLayout& layout,
                                        Reduction reduction = Reduction::Mean);

struct TrainConfig {
  double learning_rate = 0.05;
  int steps = 200;
  std::uint64_t seed = 0;
  PromptMode prompt_mode = PromptMode::PerVideo;
  Reduction loss_reduction = Reduction::Mean;
  DebiasConfig debias;
  bool first_frame_only = true;  // subject prior only
  OptimizerKind optimizer = OptimizerKind::Sgd;
  /// Draw (t, epsilon) once per clip and reuse them every step.
  bool fixed_noise = false;
  int rank = 4;
  double lora_scale = 1.0;
  double a_init_std = 0.02;
  int schedule_steps = 100;
  std::string single_prompt = "a person is moving";
  std::string adapter_name = "motion";
};

struct TrainingClip {
  Matrix latent;  // V x d_latent
  std::string caption;
};

struct LossRecord {
  int step = 0;
  double loss_org = 0.0;
  double loss_ad = 0.0;
  double loss_motion = 0.0;
};

struct TrainResult {
  AdapterSet adapters;
  /// One record per optimization step (loss before the update) plus a final
  /// record at step == steps measured after the last update.
  std::vector<LossRecord> trace;
};

/// Temporal adapters shared across clips and per-clip spatial adapters, placed
/// on the q/k/v projections and the feed-forward output of each block.
TrainResult train_motion_prior(const std::vector<TrainingClip>& clips, const ToyDiT& model,
                               const PlacementPlan& placement, const TrainConfig& cfg);

/// Subject adapters on the spatial blocks, trained on the reference latent
/// (one frame, tokens_per_frame x d_latent) repeated over every latent frame.
TrainResult train_subject_prior(const Matrix& reference, const std::string& caption, const ToyDiT& model,
                                const PlacementPlan& placement, const TrainConfig& cfg);

/// JSON Lines: {"step":..,"loss_org":..,"loss_ad":..,"loss_motion":..} per record.
std::string trace_to_jsonl(const std::vector<LossRecord>& trace);

/// JSON Lines of {"caption": text, "latent": matrix JSON}.
std::vector<TrainingClip> parse_clips_jsonl(std::string_view text);
std::string clips_to_jsonl(const std::vector<TrainingClip>& clips);

/// Synthetic clip: a bright square on a dark field, moving by (dx, dy) patches per
/// frame and wrapping around the frame edges.
Matrix moving_square_clip(const LatentGrid& grid, int d_latent, int size, int x0, int y0, int dx, int dy);

/// `count` single-patch squares cycling through right, down, left and up motion,
/// captioned "a person is walking <direction>".
std::vector<TrainingClip> synthetic_motion_clips(const LatentGrid& grid, int d_latent, int count);

}  // namespace storyweave
