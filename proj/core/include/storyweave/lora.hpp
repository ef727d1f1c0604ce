// SPDX-License-Identifier: Apache-2.0
//
// Low-rank adapters: W = W0 + scale * B * A with A (r x k) and B (d x r).
// Region binding applies an adapter only to the token columns selected by a
// boolean mask, so several adapters can share one layer without interfering.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "storyweave/random.hpp"

namespace storyweave {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class LoraRole { Spatial, Temporal };
enum class LoraKind { Subject, MotionTemporal, MotionSpatialPerVideo };

std::string_view to_string(LoraRole role);
std::string_view to_string(LoraKind kind);
LoraRole parse_lora_role(std::string_view text);
LoraKind parse_lora_kind(std::string_view text);

struct LoraModule {
  Matrix A;  // r x k
  Matrix B;  // d x r, zero at initialization
  double scale = 1.0;
  LoraRole role = LoraRole::Spatial;
  LoraKind kind = LoraKind::Subject;

  int rank() const { return static_cast<int>(A.rows()); }
  int in_dim() const { return static_cast<int>(A.cols()); }
  int out_dim() const { return static_cast<int>(B.rows()); }
  Matrix delta() const { return scale * B * A; }

  /// A ~ N(0, a_std^2), B = 0.
  static LoraModule create(int d, int k, int r, LoraRole role, LoraKind kind, Rng& rng, double a_std = 0.02,
                           double scale = 1.0);
};

/// One adapter applied to the token columns where `token_mask` is non-zero.
struct MaskedLora {
  const LoraModule* module = nullptr;
  std::span<const std::uint8_t> token_mask;  // length c
};

/// y = W0 x + sum_i scale_i B_i A_i (mask_i (.) x); x is k x c, tokens are columns.
Matrix lora_apply(const Matrix& w0, std::span<const MaskedLora> bindings, const Matrix& x);

/// W0 + scale B A.
Matrix merge_lora(const Matrix& w0, const LoraModule& lora);

enum class PlacementScheme { Interleaved, HalfHalf };

PlacementScheme parse_placement_scheme(std::string_view text);  // "interleaved" | "half" | "half_half"

struct PlacementPlan {
  PlacementScheme scheme = PlacementScheme::Interleaved;
  std::vector<LoraRole> roles;  // one per transformer block

  std::vector<int> blocks_with(LoraRole role) const;
};

/// interleaved: blocks whose index has the parity of `spatial_parity` are spatial
/// (0-based even by default), the others temporal. half_half: the first
/// ceil(n/2) blocks spatial, the rest temporal.
PlacementPlan plan_lora_placement(int n_blocks, PlacementScheme scheme, int spatial_parity = 0);

/// Projection inside a transformer block that may carry an adapter.
enum class AdapterSite { Q, K, V, FfnOut };
inline constexpr AdapterSite kAdapterSites[] = {AdapterSite::Q, AdapterSite::K, AdapterSite::V, AdapterSite::FfnOut};
std::string_view to_string(AdapterSite site);
AdapterSite parse_adapter_site(std::string_view text);

/// An adapter placed at one site of one block, with its region binding.
struct Adapter {
  std::string name;        // e.g. "walking" or "witch"
  int block = 0;
  AdapterSite site = AdapterSite::Q;
  LoraModule module;
  std::vector<int> condition_ids;  // empty: every visual token
  bool use_at_inference = true;    // false for per-video spatial motion adapters
  int clip_index = -1;             // owning training clip for per-video adapters
};

using AdapterSet = std::vector<Adapter>;

/// Adapter file: one line of JSON header {d,k,r,scale,role,kind,...} then raw
/// little-endian float32 A (row-major r x k) followed by B (row-major d x r).
std::string serialize_adapter(const Adapter& adapter);
/// "<name>.b<block>.<site>[.clip<index>].lora" with unsafe name characters replaced.
std::string adapter_file_name(const Adapter& adapter);

/// {"rows": r, "cols": c, "data": [row-major values]}
std::string matrix_to_json(const Matrix& m);
Matrix matrix_from_json(std::string_view text);
Adapter deserialize_adapter(std::string_view bytes);

}  // namespace storyweave
