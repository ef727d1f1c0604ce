// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <bit>
#include <cstring>

#include "dit_internal.hpp"
#include "storyweave/error.hpp"
#include "storyweave/toy_dit.hpp"
#include "text_util.hpp"

namespace storyweave {

using detail::gelu;
using detail::layer_norm;
using detail::masked_rows;
using detail::split_product;

void ModelConfig::validate() const {
  if (d_model < 1 || n_blocks < 1 || n_heads < 1 || d_ff < 1 || d_latent < 1 || max_seg_len < 1 || hash_vocab < 1) {
    throw Error(ErrorCode::ShapeMismatch, "model dimensions must be positive");
  }
  if (d_model % n_heads != 0) throw Error(ErrorCode::ShapeMismatch, "d_model must be divisible by n_heads");
  if (grid.t < 1 || grid.h < 1 || grid.w < 1) throw Error(ErrorCode::ShapeMismatch, "grid dimensions must be positive");
}

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw Error(ErrorCode::TimestepOutOfRange, "schedule needs at least one step");
  NoiseSchedule s;
  double prod = 1.0;
  for (int i = 0; i < steps; ++i) {
    const double beta =
        steps == 1 ? beta_start : beta_start + (beta_end - beta_start) * static_cast<double>(i) / (steps - 1);
    s.betas.push_back(beta);
    s.alphas.push_back(1.0 - beta);
    prod *= 1.0 - beta;
    s.alpha_bar.push_back(prod);
  }
  return s;
}

Matrix add_noise(const Matrix& z0, int t, const Matrix& epsilon, const NoiseSchedule& schedule) {
  if (t < 0 || t >= schedule.steps()) {
    throw Error(ErrorCode::TimestepOutOfRange, "t=" + std::to_string(t) + " outside [0, " +
                                                   std::to_string(schedule.steps()) + ")");
  }
  if (z0.rows() != epsilon.rows() || z0.cols() != epsilon.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "z0 and epsilon differ in shape");
  }
  const double ab = schedule.alpha_bar[static_cast<std::size_t>(t)];
  return std::sqrt(ab) * z0 + std::sqrt(1.0 - ab) * epsilon;
}

std::vector<int> tokenize_caption(std::string_view caption, int vocab, int max_len) {
  std::vector<int> ids;
  std::size_t i = 0;
  while (i < caption.size() && static_cast<int>(ids.size()) < max_len) {
    while (i < caption.size() && std::isspace(static_cast<unsigned char>(caption[i]))) ++i;
    const std::size_t start = i;
    while (i < caption.size() && !std::isspace(static_cast<unsigned char>(caption[i]))) ++i;
    if (i == start) break;
    std::uint64_t h = 1469598103934665603ULL;
    for (char c : detail::lower(caption.substr(start, i - start))) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ULL;
    }
    ids.push_back(static_cast<int>(h % static_cast<std::uint64_t>(vocab)));
  }
  if (ids.empty()) ids.push_back(0);
  return ids;
}

Conditioning make_conditioning(const ModelConfig& config, const std::vector<std::string>& captions,
                               const RegionMap& regions, MaskMode mode) {
  Conditioning cond;
  std::vector<int> lengths;
  for (const auto& c : captions) {
    cond.segments.push_back(tokenize_caption(c, config.hash_vocab, config.max_seg_len));
    lengths.push_back(static_cast<int>(cond.segments.back().size()));
  }
  cond.mask = build_attention_mask(SegmentLayout(std::move(lengths), regions.grid.token_count()), regions, mode);
  return cond;
}

Conditioning make_conditioning(const ModelConfig& config, const LatentPlan& plan, const RegionMap& regions,
                               MaskMode mode) {
  std::vector<std::string> captions;
  for (const Condition& c : plan.conditions) captions.push_back(c.caption);
  return make_conditioning(config, captions, regions, mode);
}

AdapterSet adapters_for_plan(AdapterSet set, const LatentPlan& plan) {
  AdapterSet out;
  for (Adapter& a : set) {
    if (a.condition_ids.empty()) {
      a.condition_ids = a.module.kind == LoraKind::Subject ? conditions_for_entity(plan, a.name)
                                                            : conditions_for_motion(plan, a.name);
    }
    if (!a.condition_ids.empty()) out.push_back(std::move(a));
  }
  return out;
}

std::vector<BoundAdapter> bind_adapters(const AdapterSet& set, const RegionMap& regions, const SegmentLayout& layout,
                                        BindingMode mode, bool inference_only) {
  if (static_cast<int>(regions.membership.size()) != layout.visual_count()) {
    throw Error(ErrorCode::MaskMismatch, "region map and layout disagree on the visual token count");
  }
  std::vector<BoundAdapter> bound;
  for (const Adapter& a : set) {
    if (inference_only && !a.use_at_inference) continue;
    BoundAdapter b{&a.module, a.block, a.site, std::vector<std::uint8_t>(static_cast<std::size_t>(layout.total()), 0)};
    const bool global = mode == BindingMode::Global || a.condition_ids.empty();
    const auto visual = global ? std::vector<std::uint8_t>(regions.membership.size(), 1)
                               : region_token_mask(regions, a.condition_ids);
    std::copy(visual.begin(), visual.end(), b.token_mask.begin() + layout.visual_offset());
    bound.push_back(std::move(b));
  }
  return bound;
}

namespace {

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = stddev * rng.normal();
  }
  return m;
}

Vector timestep_embedding(int t, int d) {
  Vector e = Vector::Zero(d);
  const int half = d / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / std::max(half, 1));
    e(i) = std::sin(t * freq);
    e(i + half) = std::cos(t * freq);
  }
  return e;
}

/// Y += sum of adapters at (block, site) applied to the masked rows of z.
void add_adapters(Matrix& y, const Matrix& z, std::span<const BoundAdapter> adapters, int block, AdapterSite site,
                  Eigen::Index split) {
  for (const BoundAdapter& a : adapters) {
    if (a.block != block || a.site != site) continue;
    const LoraModule& m = *a.module;
    if (m.in_dim() != z.cols() || m.out_dim() != y.cols()) {
      throw Error(ErrorCode::DimensionMismatch, "adapter at block " + std::to_string(block) + " site " +
                                                    std::string(to_string(site)) + " has the wrong shape");
    }
    y += m.scale * split_product(split_product(masked_rows(z, a.token_mask), m.A, split), m.B, split);
  }
}

void hash_bytes(std::uint64_t& h, const double* data, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t bits = 0;
    std::memcpy(&bits, &data[i], sizeof bits);
    for (int b = 0; b < 8; ++b) {
      h ^= (bits >> (8 * b)) & 0xFFU;
      h *= 1099511628211ULL;
    }
  }
}

}  // namespace

ToyDiT::ToyDiT(const ModelConfig& config) : config_(config) {
  config_.validate();
  Rng rng(config_.seed);
  const int d = config_.d_model;
  const auto inv_sqrt = [](int fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); };
  params_.tok_emb = random_matrix(config_.hash_vocab, d, 1.0, rng);
  params_.text_pos = random_matrix(config_.max_seg_len, d, 0.5, rng);
  params_.vis_pos = random_matrix(config_.grid.token_count(), d, 0.5, rng);
  params_.w_in = random_matrix(d, config_.d_latent, inv_sqrt(config_.d_latent), rng);
  params_.b_in = Vector::Zero(d);
  for (int b = 0; b < config_.n_blocks; ++b) {
    Block blk;
    blk.ln1_g = Vector::Ones(d);
    blk.ln1_b = Vector::Zero(d);
    blk.wq = random_matrix(d, d, inv_sqrt(d), rng);
    blk.wk = random_matrix(d, d, inv_sqrt(d), rng);
    blk.wv = random_matrix(d, d, inv_sqrt(d), rng);
    blk.wo = random_matrix(d, d, inv_sqrt(d), rng);
    blk.ln2_g = Vector::Ones(d);
    blk.ln2_b = Vector::Zero(d);
    blk.w1 = random_matrix(config_.d_ff, d, inv_sqrt(d), rng);
    blk.b1 = Vector::Zero(config_.d_ff);
    blk.w2 = random_matrix(d, config_.d_ff, inv_sqrt(config_.d_ff), rng);
    blk.b2 = Vector::Zero(d);
    params_.blocks.push_back(std::move(blk));
  }
  params_.lnf_g = Vector::Ones(d);
  params_.lnf_b = Vector::Zero(d);
  params_.w_out = random_matrix(config_.d_latent, d, inv_sqrt(d), rng);
  params_.b_out = Vector::Zero(config_.d_latent);
}

Matrix ToyDiT::forward(const Conditioning& cond, std::span<const BoundAdapter> adapters, const Matrix& z_t, int t,
                       Cache* cache) const {
  const SegmentLayout& layout = cond.mask.layout();
  const int v_count = config_.grid.token_count();
  if (z_t.rows() != v_count || z_t.cols() != config_.d_latent) {
    throw Error(ErrorCode::ShapeMismatch, "z_t is " + std::to_string(z_t.rows()) + "x" + std::to_string(z_t.cols()) +
                                              ", expected " + std::to_string(v_count) + "x" +
                                              std::to_string(config_.d_latent));
  }
  if (layout.visual_count() != v_count || layout.condition_count() != static_cast<int>(cond.segments.size())) {
    throw Error(ErrorCode::MaskMismatch, "mask layout does not match the conditioning");
  }
  for (std::size_t i = 0; i < cond.segments.size(); ++i) {
    if (layout.segment_length(static_cast<int>(i)) != static_cast<int>(cond.segments[i].size())) {
      throw Error(ErrorCode::MaskMismatch, "segment " + std::to_string(i) + " length differs from the mask layout");
    }
    if (static_cast<int>(cond.segments[i].size()) > config_.max_seg_len) {
      throw Error(ErrorCode::ShapeMismatch, "segment " + std::to_string(i) + " exceeds max_seg_len");
    }
  }
  const int s = layout.total();
  for (const BoundAdapter& a : adapters) {
    if (static_cast<int>(a.token_mask.size()) != s) throw Error(ErrorCode::MaskMismatch, "adapter token mask length");
  }

  const int d = config_.d_model;
  const int dh = config_.head_dim();
  const int vis0 = layout.visual_offset();

  // Embeddings.
  Matrix x(s, d);
  for (int i = 0; i < layout.condition_count(); ++i) {
    const auto& seg = cond.segments[static_cast<std::size_t>(i)];
    for (std::size_t j = 0; j < seg.size(); ++j) {
      const int id = seg[j];
      if (id < 0 || id >= config_.hash_vocab) throw Error(ErrorCode::ShapeMismatch, "token id outside the vocabulary");
      x.row(layout.segment_offset(i) + static_cast<int>(j)) =
          params_.tok_emb.row(id) + params_.text_pos.row(static_cast<Eigen::Index>(j));
    }
  }
  const Vector temb = timestep_embedding(t, d);
  x.bottomRows(v_count) = z_t * params_.w_in.transpose();
  x.bottomRows(v_count).rowwise() += (params_.b_in + temb).transpose();
  x.bottomRows(v_count) += params_.vis_pos;

  std::vector<std::vector<int>> allowed(static_cast<std::size_t>(s));
  for (int q = 0; q < s; ++q) {
    const auto row = cond.mask.row(q);
    for (std::size_t w = 0; w < row.size(); ++w) {
      std::uint64_t bits = row[w];
      while (bits != 0) {
        const int k = static_cast<int>(w * 64) + std::countr_zero(bits);
        allowed[static_cast<std::size_t>(q)].push_back(k);
        bits &= bits - 1;
      }
    }
  }

  if (cache) {
    cache->blocks.clear();
    cache->visual_offset = vis0;
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int b = 0; b < config_.n_blocks; ++b) {
    const Block& blk = params_.blocks[static_cast<std::size_t>(b)];
    Cache::BlockCache bc;
    Vector rstd1;
    Matrix n1 = layer_norm(x, blk.ln1_g, blk.ln1_b, &rstd1);
    Matrix q = split_product(n1, blk.wq, vis0);
    Matrix k = split_product(n1, blk.wk, vis0);
    Matrix v = split_product(n1, blk.wv, vis0);
    add_adapters(q, n1, adapters, b, AdapterSite::Q, vis0);
    add_adapters(k, n1, adapters, b, AdapterSite::K, vis0);
    add_adapters(v, n1, adapters, b, AdapterSite::V, vis0);

    Matrix o = Matrix::Zero(s, d);
    if (cache) bc.probs.assign(static_cast<std::size_t>(config_.n_heads), Matrix::Zero(s, s));
    std::vector<double> logits;
    for (int h = 0; h < config_.n_heads; ++h) {
      const int c0 = h * dh;
      for (int qi = 0; qi < s; ++qi) {
        const auto& keys = allowed[static_cast<std::size_t>(qi)];
        logits.resize(keys.size());
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < keys.size(); ++j) {
          logits[j] = q.row(qi).segment(c0, dh).dot(k.row(keys[j]).segment(c0, dh)) * scale;
          mx = std::max(mx, logits[j]);
        }
        double sum = 0.0;
        for (double& l : logits) {
          l = std::exp(l - mx);
          sum += l;
        }
        for (std::size_t j = 0; j < keys.size(); ++j) {
          const double p = logits[j] / sum;
          o.row(qi).segment(c0, dh) += p * v.row(keys[j]).segment(c0, dh);
          if (cache) bc.probs[static_cast<std::size_t>(h)](qi, keys[j]) = p;
        }
      }
    }
    Matrix x1 = x + split_product(o, blk.wo, vis0);

    Vector rstd2;
    Matrix n2 = layer_norm(x1, blk.ln2_g, blk.ln2_b, &rstd2);
    Matrix u = split_product(n2, blk.w1, vis0);
    u.rowwise() += blk.b1.transpose();
    Matrix g = u.unaryExpr([](double val) { return gelu(val); });
    Matrix f = split_product(g, blk.w2, vis0);
    f.rowwise() += blk.b2.transpose();
    add_adapters(f, g, adapters, b, AdapterSite::FfnOut, vis0);
    Matrix x2 = x1 + f;

    if (cache) {
      bc.x_in = std::move(x);
      bc.n1 = std::move(n1);
      bc.rstd1 = std::move(rstd1);
      bc.q = std::move(q);
      bc.k = std::move(k);
      bc.v = std::move(v);
      bc.o = std::move(o);
      bc.x1 = std::move(x1);
      bc.n2 = std::move(n2);
      bc.rstd2 = std::move(rstd2);
      bc.u = std::move(u);
      bc.g = std::move(g);
      cache->blocks.push_back(std::move(bc));
    }
    x = std::move(x2);
  }

  Matrix x_vis = x.bottomRows(v_count);
  Vector rstd_f;
  Matrix nf = layer_norm(x_vis, params_.lnf_g, params_.lnf_b, &rstd_f);
  Matrix out = nf * params_.w_out.transpose();
  out.rowwise() += params_.b_out.transpose();
  if (cache) {
    cache->x_final = std::move(x_vis);
    cache->rstd_final = std::move(rstd_f);
    cache->n_final = std::move(nf);
    cache->allowed = std::move(allowed);
  }
  return out;
}

std::vector<std::pair<std::string, Matrix*>> ToyDiT::named_matrices() {
  std::vector<std::pair<std::string, Matrix*>> out = {{"tok_emb", &params_.tok_emb},
                                                      {"text_pos", &params_.text_pos},
                                                      {"vis_pos", &params_.vis_pos},
                                                      {"w_in", &params_.w_in}};
  for (std::size_t b = 0; b < params_.blocks.size(); ++b) {
    Block& blk = params_.blocks[b];
    const std::string p = "blocks." + std::to_string(b) + ".";
    out.emplace_back(p + "wq", &blk.wq);
    out.emplace_back(p + "wk", &blk.wk);
    out.emplace_back(p + "wv", &blk.wv);
    out.emplace_back(p + "wo", &blk.wo);
    out.emplace_back(p + "w1", &blk.w1);
    out.emplace_back(p + "w2", &blk.w2);
  }
  out.emplace_back("w_out", &params_.w_out);
  return out;
}

std::vector<std::pair<std::string, Vector*>> ToyDiT::named_vectors() {
  std::vector<std::pair<std::string, Vector*>> out = {{"b_in", &params_.b_in}};
  for (std::size_t b = 0; b < params_.blocks.size(); ++b) {
    Block& blk = params_.blocks[b];
    const std::string p = "blocks." + std::to_string(b) + ".";
    out.emplace_back(p + "ln1_g", &blk.ln1_g);
    out.emplace_back(p + "ln1_b", &blk.ln1_b);
    out.emplace_back(p + "ln2_g", &blk.ln2_g);
    out.emplace_back(p + "ln2_b", &blk.ln2_b);
    out.emplace_back(p + "b1", &blk.b1);
    out.emplace_back(p + "b2", &blk.b2);
  }
  out.emplace_back("lnf_g", &params_.lnf_g);
  out.emplace_back("lnf_b", &params_.lnf_b);
  out.emplace_back("b_out", &params_.b_out);
  return out;
}

std::size_t ToyDiT::parameter_count() const {
  auto& self = const_cast<ToyDiT&>(*this);
  std::size_t n = 0;
  for (auto& [name, m] : self.named_matrices()) n += static_cast<std::size_t>(m->size());
  for (auto& [name, v] : self.named_vectors()) n += static_cast<std::size_t>(v->size());
  return n;
}

std::uint64_t ToyDiT::backbone_hash() const {
  auto& self = const_cast<ToyDiT&>(*this);
  std::uint64_t h = 1469598103934665603ULL;
  for (auto& [name, m] : self.named_matrices()) hash_bytes(h, m->data(), static_cast<std::size_t>(m->size()));
  for (auto& [name, v] : self.named_vectors()) hash_bytes(h, v->data(), static_cast<std::size_t>(v->size()));
  return h;
}

Matrix sample(const ToyDiT& model, const Conditioning& cond, std::span<const BoundAdapter> adapters,
              const NoiseSchedule& schedule, std::uint64_t seed) {
  const ModelConfig& cfg = model.config();
  Rng rng(seed);
  Matrix x(cfg.grid.token_count(), cfg.d_latent);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = rng.normal();
  }
  for (int t = schedule.steps() - 1; t >= 0; --t) {
    const auto ti = static_cast<std::size_t>(t);
    const Matrix eps = model.forward(cond, adapters, x, t);
    const double beta = schedule.betas[ti];
    const double ab = schedule.alpha_bar[ti];
    Matrix mean = (x - (beta / std::sqrt(1.0 - ab)) * eps) / std::sqrt(schedule.alphas[ti]);
    if (t > 0) {
      const double ab_prev = schedule.alpha_bar[ti - 1];
      const double sigma = std::sqrt(beta * (1.0 - ab_prev) / (1.0 - ab));
      for (Eigen::Index i = 0; i < mean.rows(); ++i) {
        for (Eigen::Index j = 0; j < mean.cols(); ++j) mean(i, j) += sigma * rng.normal();
      }
    }
    x = std::move(mean);
  }
  return x;
}

Matrix dit_forward(const ToyDiT& model, const LatentPlan& plan, const RegionMap& regions, MaskMode mode,
                   const AdapterSet& adapters, const Matrix& z_t, int t) {
  if (!(regions.grid == model.config().grid)) throw Error(ErrorCode::GridMismatch, "region map grid differs from the model grid");
  const Conditioning cond = make_conditioning(model.config(), plan, regions, mode);
  const auto bound = bind_adapters(adapters, regions, cond.mask.layout());
  return model.forward(cond, bound, z_t, t);
}

}  // namespace storyweave
