// SPDX-License-Identifier: Apache-2.0
//
// Reverse pass restricted to adapter parameters. Backbone weights only
// propagate gradients; they never receive any.

#include "dit_internal.hpp"
#include "storyweave/error.hpp"
#include "storyweave/toy_dit.hpp"

namespace storyweave {

using detail::gelu_grad;
using detail::layer_norm_backward;
using detail::masked_rows;

namespace {

/// Backward of the adapters at (block, site): accumulates their A/B gradients
/// and adds their contribution to dz.
void adapters_backward(std::span<const BoundAdapter> adapters, std::vector<AdapterGrad>& grads, int block,
                       AdapterSite site, const Matrix& z, const Matrix& dy, Matrix& dz) {
  for (std::size_t i = 0; i < adapters.size(); ++i) {
    const BoundAdapter& a = adapters[i];
    if (a.block != block || a.site != site) continue;
    const LoraModule& m = *a.module;
    const Matrix zm = masked_rows(z, a.token_mask);  // S x k
    const Matrix hidden = zm * m.A.transpose();     // S x r
    // y += scale * hidden * B^T
    grads[i].dB += m.scale * dy.transpose() * hidden;      // d x r
    const Matrix dhidden = m.scale * dy * m.B;             // S x r
    grads[i].dA += dhidden.transpose() * zm;               // r x k
    dz += masked_rows(dhidden * m.A, a.token_mask);        // S x k
  }
}

}  // namespace

std::vector<AdapterGrad> ToyDiT::backward(const Cache& cache, std::span<const BoundAdapter> adapters,
                                          const Matrix& d_output) const {
  const int v_count = config_.grid.token_count();
  if (d_output.rows() != v_count || d_output.cols() != config_.d_latent) {
    throw Error(ErrorCode::ShapeMismatch, "output gradient has the wrong shape");
  }
  if (static_cast<int>(cache.blocks.size()) != config_.n_blocks) {
    throw Error(ErrorCode::ShapeMismatch, "cache does not come from a full forward pass");
  }
  std::vector<AdapterGrad> grads;
  grads.reserve(adapters.size());
  for (const BoundAdapter& a : adapters) {
    grads.push_back(AdapterGrad{Matrix::Zero(a.module->A.rows(), a.module->A.cols()),
                                Matrix::Zero(a.module->B.rows(), a.module->B.cols())});
  }

  const int d = config_.d_model;
  const int dh = config_.head_dim();
  const int s = static_cast<int>(cache.allowed.size());
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  // Output head and final norm (visual rows only).
  const Matrix dnf = d_output * params_.w_out;
  Matrix dx = Matrix::Zero(s, d);
  dx.bottomRows(v_count) = layer_norm_backward(cache.x_final, params_.lnf_g, cache.rstd_final, dnf);

  for (int b = config_.n_blocks - 1; b >= 0; --b) {
    const Block& blk = params_.blocks[static_cast<std::size_t>(b)];
    const Cache::BlockCache& bc = cache.blocks[static_cast<std::size_t>(b)];

    // x2 = x1 + f, f = g W2^T + b2 + adapters(g)
    const Matrix& df = dx;
    Matrix dg = df * blk.w2;
    adapters_backward(adapters, grads, b, AdapterSite::FfnOut, bc.g, df, dg);
    const Matrix du = dg.cwiseProduct(bc.u.unaryExpr([](double val) { return gelu_grad(val); }));
    const Matrix dn2 = du * blk.w1;
    Matrix dx1 = dx + layer_norm_backward(bc.x1, blk.ln2_g, bc.rstd2, dn2);

    // x1 = x + o Wo^T
    const Matrix dout = dx1 * blk.wo;
    Matrix dq = Matrix::Zero(s, d);
    Matrix dk = Matrix::Zero(s, d);
    Matrix dv = Matrix::Zero(s, d);
    std::vector<double> dp;
    for (int h = 0; h < config_.n_heads; ++h) {
      const int c0 = h * dh;
      const Matrix& probs = bc.probs[static_cast<std::size_t>(h)];
      for (int qi = 0; qi < s; ++qi) {
        const auto& keys = cache.allowed[static_cast<std::size_t>(qi)];
        dp.resize(keys.size());
        double dot = 0.0;
        for (std::size_t j = 0; j < keys.size(); ++j) {
          const int kj = keys[j];
          const double p = probs(qi, kj);
          dp[j] = dout.row(qi).segment(c0, dh).dot(bc.v.row(kj).segment(c0, dh));
          dot += p * dp[j];
          dv.row(kj).segment(c0, dh) += p * dout.row(qi).segment(c0, dh);
        }
        for (std::size_t j = 0; j < keys.size(); ++j) {
          const int kj = keys[j];
          const double ds = probs(qi, kj) * (dp[j] - dot) * scale;
          dq.row(qi).segment(c0, dh) += ds * bc.k.row(kj).segment(c0, dh);
          dk.row(kj).segment(c0, dh) += ds * bc.q.row(qi).segment(c0, dh);
        }
      }
    }

    Matrix dn1 = dq * blk.wq + dk * blk.wk + dv * blk.wv;
    adapters_backward(adapters, grads, b, AdapterSite::Q, bc.n1, dq, dn1);
    adapters_backward(adapters, grads, b, AdapterSite::K, bc.n1, dk, dn1);
    adapters_backward(adapters, grads, b, AdapterSite::V, bc.n1, dv, dn1);
    dx = dx1 + layer_norm_backward(bc.x_in, blk.ln1_g, bc.rstd1, dn1);
  }
  return grads;
}

}  // namespace storyweave
