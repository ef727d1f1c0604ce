// SPDX-License-Identifier: Apache-2.0

#include "storyweave/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "storyweave/error.hpp"
#include "text_util.hpp"

namespace storyweave {

PromptMode parse_prompt_mode(std::string_view text) {
  if (text == "per-video" || text == "per_video") return PromptMode::PerVideo;
  if (text == "single") return PromptMode::Single;
  throw Error(ErrorCode::Format, "unknown prompt mode \"" + std::string(text) + "\"");
}

namespace {

void check_same_shape(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorCode::ShapeMismatch, std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " vs " +
                                              std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
}

void check_layout(const Matrix& eps, const FrameLayout& layout) {
  if (layout.frames < 1 || layout.tokens_per_frame < 1 ||
      eps.rows() != static_cast<Eigen::Index>(layout.frames) * layout.tokens_per_frame) {
    throw Error(ErrorCode::ShapeMismatch, "tensor rows do not match frames x tokens_per_frame");
  }
}

double reduce(double sum_sq, Eigen::Index count, Reduction r) {
  return r == Reduction::Mean ? sum_sq / static_cast<double>(count) : sum_sq;
}

double grad_factor(Eigen::Index count, Reduction r) {
  return r == Reduction::Mean ? 2.0 / static_cast<double>(count) : 2.0;
}

/// phi with the anchor frame taken from `anchor_source`.
Matrix debias_with_anchor(const Matrix& eps, const Matrix& anchor_source, const FrameLayout& layout,
                          const DebiasConfig& cfg) {
  const double c = std::sqrt(cfg.beta * cfg.beta + 1.0);
  const int n = layout.tokens_per_frame;
  const Matrix anchor = anchor_source.middleRows(static_cast<Eigen::Index>(cfg.anchor_index) * n, n);
  Matrix out(eps.rows(), eps.cols());
  for (int f = 0; f < layout.frames; ++f) {
    out.middleRows(static_cast<Eigen::Index>(f) * n, n) = c * eps.middleRows(static_cast<Eigen::Index>(f) * n, n) - cfg.beta * anchor;
  }
  return out;
}

void check_debias(const FrameLayout& layout, const DebiasConfig& cfg) {
  if (cfg.anchor_index < 0 || cfg.anchor_index >= layout.frames) {
    throw Error(ErrorCode::AnchorOutOfRange, "anchor frame " + std::to_string(cfg.anchor_index) + " outside [0, " +
                                                 std::to_string(layout.frames) + ")");
  }
  if (cfg.beta < 0.0) throw Error(ErrorCode::AnchorOutOfRange, "beta must be non-negative");
}

}  // namespace

double loss_org(const Matrix& epsilon, const Matrix& epsilon_hat, Reduction reduction) {
  check_same_shape(epsilon, epsilon_hat);
  return reduce((epsilon - epsilon_hat).squaredNorm(), epsilon.size(), reduction);
}

Matrix debias(const Matrix& eps, const FrameLayout& layout, const DebiasConfig& cfg) {
  check_layout(eps, layout);
  check_debias(layout, cfg);
  return debias_with_anchor(eps, eps, layout, cfg);
}

double loss_ad(const Matrix& epsilon, const Matrix& epsilon_hat, const FrameLayout& layout, const DebiasConfig& cfg,
               Reduction reduction) {
  check_same_shape(epsilon, epsilon_hat);
  check_layout(epsilon, layout);
  if (!cfg.enabled) return 0.0;
  check_debias(layout, cfg);
  const Matrix target = debias_with_anchor(epsilon, epsilon, layout, cfg);
  const Matrix pred = debias_with_anchor(epsilon_hat, cfg.shared_anchor ? epsilon : epsilon_hat, layout, cfg);
  return reduce((target - pred).squaredNorm(), epsilon.size(), reduction);
}

double loss_motion(const Matrix& epsilon, const Matrix& epsilon_hat, const FrameLayout& layout,
                   const DebiasConfig& cfg, Reduction reduction) {
  return loss_org(epsilon, epsilon_hat, reduction) + loss_ad(epsilon, epsilon_hat, layout, cfg, reduction);
}

LossWithGrad loss_motion_with_grad(const Matrix& epsilon, const Matrix& epsilon_hat, const FrameLayout& layout,
                                   const DebiasConfig& cfg, Reduction reduction) {
  check_same_shape(epsilon, epsilon_hat);
  check_layout(epsilon, layout);
  LossWithGrad out;
  const Eigen::Index count = epsilon.size();
  const Matrix diff = epsilon_hat - epsilon;
  out.value.org = reduce(diff.squaredNorm(), count, reduction);
  out.grad = grad_factor(count, reduction) * diff;
  if (cfg.enabled) {
    check_debias(layout, cfg);
    const Matrix target = debias_with_anchor(epsilon, epsilon, layout, cfg);
    const Matrix pred = debias_with_anchor(epsilon_hat, cfg.shared_anchor ? epsilon : epsilon_hat, layout, cfg);
    const Matrix g = grad_factor(count, reduction) * (pred - target);
    out.value.ad = reduce((pred - target).squaredNorm(), count, reduction);
    const double c = std::sqrt(cfg.beta * cfg.beta + 1.0);
    out.grad += c * g;
    if (!cfg.shared_anchor) {
      const int n = layout.tokens_per_frame;
      Matrix summed = Matrix::Zero(n, epsilon.cols());
      for (int f = 0; f < layout.frames; ++f) summed += g.middleRows(static_cast<Eigen::Index>(f) * n, n);
      out.grad.middleRows(static_cast<Eigen::Index>(cfg.anchor_index) * n, n) -= cfg.beta * summed;
    }
  }
  out.value.motion = out.value.org + out.value.ad;
  return out;
}

LossWithGrad loss_first_frame_with_grad(const Matrix& epsilon, const Matrix& epsilon_hat, const FrameLayout& layout,
                                        Reduction reduction) {
  check_same_shape(epsilon, epsilon_hat);
  check_layout(epsilon, layout);
  const int n = layout.tokens_per_frame;
  const Matrix diff = epsilon_hat.topRows(n) - epsilon.topRows(n);
  const Eigen::Index count = diff.size();
  LossWithGrad out;
  out.value.org = reduce(diff.squaredNorm(), count, reduction);
  out.value.motion = out.value.org;
  out.grad = Matrix::Zero(epsilon.rows(), epsilon.cols());
  out.grad.topRows(n) = grad_factor(count, reduction) * diff;
  return out;
}

namespace {

/// Per-adapter optimizer state.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr, const AdapterSet& set) : kind_(kind), lr_(lr) {
    if (kind_ == OptimizerKind::Adam) {
      for (const Adapter& a : set) {
        m_.push_back({Matrix::Zero(a.module.A.rows(), a.module.A.cols()), Matrix::Zero(a.module.B.rows(), a.module.B.cols())});
        v_.push_back(m_.back());
      }
    }
  }

  void step(AdapterSet& set, const std::vector<AdapterGrad>& grads) {
    ++t_;
    for (std::size_t i = 0; i < set.size(); ++i) {
      if (kind_ == OptimizerKind::Sgd) {
        set[i].module.A -= lr_ * grads[i].dA;
        set[i].module.B -= lr_ * grads[i].dB;
      } else {
        adam(set[i].module.A, grads[i].dA, m_[i].dA, v_[i].dA);
        adam(set[i].module.B, grads[i].dB, m_[i].dB, v_[i].dB);
      }
    }
  }

 private:
  void adam(Matrix& p, const Matrix& g, Matrix& m, Matrix& v) const {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    const double c1 = 1.0 - std::pow(b1, t_);
    const double c2 = 1.0 - std::pow(b2, t_);
    p.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }

  OptimizerKind kind_;
  double lr_;
  int t_ = 0;
  std::vector<AdapterGrad> m_, v_;
};

Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
  }
  return m;
}

int site_in_dim(const ModelConfig& c, AdapterSite site) { return site == AdapterSite::FfnOut ? c.d_ff : c.d_model; }

void add_block_adapters(AdapterSet& set, const ModelConfig& c, int block, LoraRole role, LoraKind kind,
                        const std::string& name, int clip_index, bool inference, const TrainConfig& cfg, Rng& rng) {
  for (AdapterSite site : kAdapterSites) {
    Adapter a;
    a.name = name;
    a.block = block;
    a.site = site;
    a.module = LoraModule::create(c.d_model, site_in_dim(c, site), cfg.rank, role, kind, rng, cfg.a_init_std, cfg.lora_scale);
    a.use_at_inference = inference;
    a.clip_index = clip_index;
    set.push_back(std::move(a));
  }
}

struct PreparedClip {
  Matrix latent;
  Conditioning cond;
  std::vector<std::size_t> adapter_indices;  // into the adapter set
  int t = 0;
  Matrix eps;
};

/// Shared optimization loop. `loss_fn` maps (epsilon, epsilon_hat) to loss + gradient.
template <typename LossFn>
std::vector<LossRecord> optimize(const ToyDiT& model, std::vector<PreparedClip>& clips, AdapterSet& set,
                                 const TrainConfig& cfg, Rng& rng, LossFn&& loss_fn) {
  const NoiseSchedule schedule = NoiseSchedule::linear(cfg.schedule_steps);
  auto draw = [&](PreparedClip& clip) {
    clip.t = static_cast<int>(rng.below(static_cast<std::uint64_t>(schedule.steps())));
    clip.eps = normal_matrix(clip.latent.rows(), clip.latent.cols(), rng);
  };
  if (cfg.fixed_noise) {
    for (auto& clip : clips) draw(clip);
  }
  Optimizer opt(cfg.optimizer, cfg.learning_rate, set);
  std::vector<LossRecord> trace;
  const double inv_clips = 1.0 / static_cast<double>(clips.size());

  for (int step = 0; step <= cfg.steps; ++step) {
    std::vector<AdapterGrad> grads;
    for (const Adapter& a : set) {
      grads.push_back({Matrix::Zero(a.module.A.rows(), a.module.A.cols()), Matrix::Zero(a.module.B.rows(), a.module.B.cols())});
    }
    LossRecord rec;
    rec.step = step;
    for (auto& clip : clips) {
      if (!cfg.fixed_noise) draw(clip);
      std::vector<BoundAdapter> bound;
      for (std::size_t idx : clip.adapter_indices) {
        const Adapter& a = set[idx];
        BoundAdapter b{&a.module, a.block, a.site,
                       std::vector<std::uint8_t>(static_cast<std::size_t>(clip.cond.mask.size()), 0)};
        std::fill(b.token_mask.begin() + clip.cond.mask.layout().visual_offset(), b.token_mask.end(), 1);
        bound.push_back(std::move(b));
      }
      const Matrix z_t = add_noise(clip.latent, clip.t, clip.eps, schedule);
      ToyDiT::Cache cache;
      const Matrix eps_hat = model.forward(clip.cond, bound, z_t, clip.t, &cache);
      const LossWithGrad lg = loss_fn(clip.eps, eps_hat);
      rec.loss_org += lg.value.org * inv_clips;
      rec.loss_ad += lg.value.ad * inv_clips;
      rec.loss_motion += lg.value.motion * inv_clips;
      if (step == cfg.steps) continue;
      const auto g = model.backward(cache, bound, lg.grad * inv_clips);
      for (std::size_t j = 0; j < clip.adapter_indices.size(); ++j) {
        grads[clip.adapter_indices[j]].dA += g[j].dA;
        grads[clip.adapter_indices[j]].dB += g[j].dB;
      }
    }
    trace.push_back(rec);
    if (step < cfg.steps) opt.step(set, grads);
  }
  return trace;
}

}  // namespace

TrainResult train_motion_prior(const std::vector<TrainingClip>& clips, const ToyDiT& model,
                               const PlacementPlan& placement, const TrainConfig& cfg) {
  if (clips.empty()) throw Error(ErrorCode::EmptyTrainingSet, "motion prior training needs at least one clip");
  const ModelConfig& mc = model.config();
  if (static_cast<int>(placement.roles.size()) != mc.n_blocks) {
    throw Error(ErrorCode::ShapeMismatch, "placement plan covers " + std::to_string(placement.roles.size()) +
                                              " blocks, model has " + std::to_string(mc.n_blocks));
  }
  if (cfg.steps < 0) throw Error(ErrorCode::ShapeMismatch, "steps must be non-negative");
  Rng rng(cfg.seed);
  TrainResult result;
  std::vector<std::size_t> shared;
  for (int b : placement.blocks_with(LoraRole::Temporal)) {
    const std::size_t first = result.adapters.size();
    add_block_adapters(result.adapters, mc, b, LoraRole::Temporal, LoraKind::MotionTemporal, cfg.adapter_name, -1, true,
                       cfg, rng);
    for (std::size_t i = first; i < result.adapters.size(); ++i) shared.push_back(i);
  }

  const RegionMap regions = uniform_region_map(mc.grid);
  const FrameLayout layout{mc.grid.t, mc.grid.frame_tokens()};
  std::vector<PreparedClip> prepared;
  for (std::size_t c = 0; c < clips.size(); ++c) {
    if (clips[c].latent.rows() != mc.grid.token_count() || clips[c].latent.cols() != mc.d_latent) {
      throw Error(ErrorCode::ShapeMismatch, "clip " + std::to_string(c) + " latent has the wrong shape");
    }
    PreparedClip p;
    p.latent = clips[c].latent;
    const std::string& caption = cfg.prompt_mode == PromptMode::PerVideo ? clips[c].caption : cfg.single_prompt;
    p.cond = make_conditioning(mc, std::vector<std::string>{caption}, regions, MaskMode::Sr3a);
    p.adapter_indices = shared;
    for (int b : placement.blocks_with(LoraRole::Spatial)) {
      const std::size_t first = result.adapters.size();
      add_block_adapters(result.adapters, mc, b, LoraRole::Spatial, LoraKind::MotionSpatialPerVideo,
                         cfg.adapter_name, static_cast<int>(c), false, cfg, rng);
      for (std::size_t i = first; i < result.adapters.size(); ++i) p.adapter_indices.push_back(i);
    }
    prepared.push_back(std::move(p));
  }

  result.trace = optimize(model, prepared, result.adapters, cfg, rng, [&](const Matrix& eps, const Matrix& eps_hat) {
    return loss_motion_with_grad(eps, eps_hat, layout, cfg.debias, cfg.loss_reduction);
  });
  return result;
}

TrainResult train_subject_prior(const Matrix& reference, const std::string& caption, const ToyDiT& model,
                                const PlacementPlan& placement, const TrainConfig& cfg) {
  const ModelConfig& mc = model.config();
  if (reference.rows() != mc.grid.frame_tokens() || reference.cols() != mc.d_latent) {
    throw Error(ErrorCode::ShapeMismatch, "reference latent must be (h*w) x d_latent");
  }
  if (static_cast<int>(placement.roles.size()) != mc.n_blocks) {
    throw Error(ErrorCode::ShapeMismatch, "placement plan does not cover the model");
  }
  if (cfg.steps < 0) throw Error(ErrorCode::ShapeMismatch, "steps must be non-negative");
  Rng rng(cfg.seed);
  TrainResult result;
  PreparedClip clip;
  clip.latent.resize(mc.grid.token_count(), mc.d_latent);
  for (int f = 0; f < mc.grid.t; ++f) clip.latent.middleRows(static_cast<Eigen::Index>(f) * reference.rows(), reference.rows()) = reference;
  clip.cond = make_conditioning(mc, std::vector<std::string>{caption}, uniform_region_map(mc.grid), MaskMode::Sr3a);
  for (int b : placement.blocks_with(LoraRole::Spatial)) {
    const std::size_t first = result.adapters.size();
    add_block_adapters(result.adapters, mc, b, LoraRole::Spatial, LoraKind::Subject, cfg.adapter_name, -1, true, cfg, rng);
    for (std::size_t i = first; i < result.adapters.size(); ++i) clip.adapter_indices.push_back(i);
  }
  std::vector<PreparedClip> clips;
  clips.push_back(std::move(clip));
  const FrameLayout layout{mc.grid.t, mc.grid.frame_tokens()};
  result.trace = optimize(model, clips, result.adapters, cfg, rng, [&](const Matrix& eps, const Matrix& eps_hat) {
    if (cfg.first_frame_only) return loss_first_frame_with_grad(eps, eps_hat, layout, cfg.loss_reduction);
    LossWithGrad full;
    const Matrix diff = eps_hat - eps;
    full.value.org = full.value.motion = loss_org(eps, eps_hat, cfg.loss_reduction);
    full.grad = (cfg.loss_reduction == Reduction::Mean ? 2.0 / static_cast<double>(diff.size()) : 2.0) * diff;
    return full;
  });
  return result;
}

std::string trace_to_jsonl(const std::vector<LossRecord>& trace) {
  std::ostringstream out;
  char buf[256];
  for (const LossRecord& r : trace) {
    std::snprintf(buf, sizeof buf, "{\"step\":%d,\"loss_org\":%.17g,\"loss_ad\":%.17g,\"loss_motion\":%.17g}\n", r.step,
                  r.loss_org, r.loss_ad, r.loss_motion);
    out << buf;
  }
  return out.str();
}

std::vector<TrainingClip> parse_clips_jsonl(std::string_view text) {
  std::vector<TrainingClip> out;
  int line_no = 0;
  for (std::string_view raw : detail::split_lines(text)) {
    ++line_no;
    const std::string_view line = detail::trim(raw);
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({matrix_from_json(j.at("latent").dump()), j.at("caption").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::Format, "clips line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::string clips_to_jsonl(const std::vector<TrainingClip>& clips) {
  std::string out;
  for (const TrainingClip& c : clips) {
    nlohmann::json j{{"caption", c.caption}, {"latent", nlohmann::json::parse(matrix_to_json(c.latent))}};
    out += j.dump() + "\n";
  }
  return out;
}

Matrix moving_square_clip(const LatentGrid& grid, int d_latent, int size, int x0, int y0, int dx, int dy) {
  Matrix clip = Matrix::Constant(grid.token_count(), d_latent, -1.0);
  auto wrap = [](int v, int n) { return ((v % n) + n) % n; };
  for (int f = 0; f < grid.t; ++f) {
    for (int i = 0; i < size; ++i) {
      for (int j = 0; j < size; ++j) {
        const int r = wrap(y0 + dy * f + i, grid.h);
        const int c = wrap(x0 + dx * f + j, grid.w);
        for (int ch = 0; ch < d_latent; ++ch) clip(grid.token_index(f, r, c), ch) = ch % 2 == 0 ? 1.0 : 0.5;
      }
    }
  }
  return clip;
}

std::vector<TrainingClip> synthetic_motion_clips(const LatentGrid& grid, int d_latent, int count) {
  struct Path {
    const char* direction;
    int x0, y0, dx, dy;
  };
  const int last_x = grid.w - 1;
  const int last_y = grid.h - 1;
  const Path paths[] = {{"right", 0, grid.h / 2, 1, 0},
                        {"down", grid.w / 2, 0, 0, 1},
                        {"left", last_x, grid.h / 2, -1, 0},
                        {"up", grid.w / 2, last_y, 0, -1}};
  std::vector<TrainingClip> out;
  for (int i = 0; i < count; ++i) {
    const Path& p = paths[i % 4];
    out.push_back({moving_square_clip(grid, d_latent, 1, p.x0, p.y0, p.dx, p.dy),
                   std::string("a person is walking ") + p.direction});
  }
  return out;
}

}  // namespace storyweave
