// SPDX-License-Identifier: Apache-2.0

#include "storyweave/lora.hpp"

#include <json.hpp>

#include "binary_io.hpp"
#include "storyweave/error.hpp"

namespace storyweave {

std::string_view to_string(LoraRole role) { return role == LoraRole::Spatial ? "spatial" : "temporal"; }

std::string_view to_string(LoraKind kind) {
  switch (kind) {
    case LoraKind::Subject: return "subject";
    case LoraKind::MotionTemporal: return "motion_temporal";
    case LoraKind::MotionSpatialPerVideo: return "motion_spatial_pervideo";
  }
  return "unknown";
}

LoraRole parse_lora_role(std::string_view text) {
  if (text == "spatial") return LoraRole::Spatial;
  if (text == "temporal") return LoraRole::Temporal;
  throw Error(ErrorCode::Format, "unknown LoRA role \"" + std::string(text) + "\"");
}

LoraKind parse_lora_kind(std::string_view text) {
  if (text == "subject") return LoraKind::Subject;
  if (text == "motion_temporal") return LoraKind::MotionTemporal;
  if (text == "motion_spatial_pervideo") return LoraKind::MotionSpatialPerVideo;
  throw Error(ErrorCode::Format, "unknown LoRA kind \"" + std::string(text) + "\"");
}

std::string_view to_string(AdapterSite site) {
  switch (site) {
    case AdapterSite::Q: return "q";
    case AdapterSite::K: return "k";
    case AdapterSite::V: return "v";
    case AdapterSite::FfnOut: return "ffn_out";
  }
  return "unknown";
}

AdapterSite parse_adapter_site(std::string_view text) {
  for (AdapterSite s : kAdapterSites) {
    if (to_string(s) == text) return s;
  }
  throw Error(ErrorCode::Format, "unknown adapter site \"" + std::string(text) + "\"");
}

LoraModule LoraModule::create(int d, int k, int r, LoraRole role, LoraKind kind, Rng& rng, double a_std, double scale) {
  if (r < 1 || d < 1 || k < 1) throw Error(ErrorCode::DimensionMismatch, "LoRA dimensions must be positive");
  LoraModule m;
  m.A.resize(r, k);
  for (Eigen::Index i = 0; i < m.A.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.A.cols(); ++j) m.A(i, j) = a_std * rng.normal();
  }
  m.B = Matrix::Zero(d, r);
  m.scale = scale;
  m.role = role;
  m.kind = kind;
  return m;
}

namespace {

void check_module(const LoraModule& m, Eigen::Index d, Eigen::Index k) {
  if (m.A.cols() != k || m.B.rows() != d || m.A.rows() != m.B.cols()) {
    throw Error(ErrorCode::DimensionMismatch,
                "adapter is " + std::to_string(m.B.rows()) + "x" + std::to_string(m.B.cols()) + " * " +
                    std::to_string(m.A.rows()) + "x" + std::to_string(m.A.cols()) + ", base weight is " +
                    std::to_string(d) + "x" + std::to_string(k));
  }
}

}  // namespace

Matrix lora_apply(const Matrix& w0, std::span<const MaskedLora> bindings, const Matrix& x) {
  if (w0.cols() != x.rows()) {
    throw Error(ErrorCode::DimensionMismatch, "W0 has " + std::to_string(w0.cols()) + " columns, x has " +
                                                  std::to_string(x.rows()) + " rows");
  }
  Matrix y = w0 * x;
  for (const MaskedLora& b : bindings) {
    check_module(*b.module, w0.rows(), w0.cols());
    if (static_cast<Eigen::Index>(b.token_mask.size()) != x.cols()) {
      throw Error(ErrorCode::DimensionMismatch, "token mask length " + std::to_string(b.token_mask.size()) +
                                                    " does not match " + std::to_string(x.cols()) + " tokens");
    }
    Matrix masked = Matrix::Zero(x.rows(), x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (b.token_mask[static_cast<std::size_t>(c)] != 0) masked.col(c) = x.col(c);
    }
    y.noalias() += b.module->scale * (b.module->B * (b.module->A * masked));
  }
  return y;
}

Matrix merge_lora(const Matrix& w0, const LoraModule& lora) {
  check_module(lora, w0.rows(), w0.cols());
  return w0 + lora.scale * (lora.B * lora.A);
}

PlacementScheme parse_placement_scheme(std::string_view text) {
  if (text == "interleaved") return PlacementScheme::Interleaved;
  if (text == "half" || text == "half_half") return PlacementScheme::HalfHalf;
  throw Error(ErrorCode::Format, "unknown placement scheme \"" + std::string(text) + "\"");
}

std::vector<int> PlacementPlan::blocks_with(LoraRole role) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < roles.size(); ++i) {
    if (roles[i] == role) out.push_back(static_cast<int>(i));
  }
  return out;
}

PlacementPlan plan_lora_placement(int n_blocks, PlacementScheme scheme, int spatial_parity) {
  if (n_blocks < 1) throw Error(ErrorCode::DimensionMismatch, "placement needs at least one block");
  PlacementPlan plan;
  plan.scheme = scheme;
  const int first_half = (n_blocks + 1) / 2;
  for (int i = 0; i < n_blocks; ++i) {
    const bool spatial = scheme == PlacementScheme::Interleaved ? (i % 2) == (spatial_parity & 1) : i < first_half;
    plan.roles.push_back(spatial ? LoraRole::Spatial : LoraRole::Temporal);
  }
  return plan;
}

std::string serialize_adapter(const Adapter& adapter) {
  const LoraModule& m = adapter.module;
  nlohmann::json header = {{"d", m.out_dim()},
                           {"k", m.in_dim()},
                           {"r", m.rank()},
                           {"scale", m.scale},
                           {"role", to_string(m.role)},
                           {"kind", to_string(m.kind)},
                           {"name", adapter.name},
                           {"block", adapter.block},
                           {"site", to_string(adapter.site)},
                           {"condition_ids", adapter.condition_ids},
                           {"use_at_inference", adapter.use_at_inference},
                           {"clip_index", adapter.clip_index}};
  std::string out = header.dump();
  out.push_back('\n');
  for (Eigen::Index i = 0; i < m.A.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.A.cols(); ++j) detail::put_f32(out, m.A(i, j));
  }
  for (Eigen::Index i = 0; i < m.B.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.B.cols(); ++j) detail::put_f32(out, m.B(i, j));
  }
  return out;
}

Adapter deserialize_adapter(std::string_view bytes) {
  const std::size_t nl = bytes.find('\n');
  if (nl == std::string_view::npos) throw Error(ErrorCode::Format, "adapter file has no header line");
  Adapter a;
  int d = 0, k = 0, r = 0;
  try {
    const auto h = nlohmann::json::parse(bytes.substr(0, nl));
    d = h.at("d").get<int>();
    k = h.at("k").get<int>();
    r = h.at("r").get<int>();
    a.module.scale = h.at("scale").get<double>();
    a.module.role = parse_lora_role(h.at("role").get<std::string>());
    a.module.kind = parse_lora_kind(h.at("kind").get<std::string>());
    a.name = h.value("name", std::string{});
    a.block = h.value("block", 0);
    a.site = parse_adapter_site(h.value("site", std::string("q")));
    a.condition_ids = h.value("condition_ids", std::vector<int>{});
    a.use_at_inference = h.value("use_at_inference", true);
    a.clip_index = h.value("clip_index", -1);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Format, std::string("adapter header: ") + e.what());
  }
  if (d < 1 || k < 1 || r < 1) throw Error(ErrorCode::Format, "adapter header has non-positive dimensions");
  const std::size_t floats = static_cast<std::size_t>(r) * static_cast<std::size_t>(k + d);
  std::string_view payload = bytes.substr(nl + 1);
  if (payload.size() != floats * 4) {
    throw Error(ErrorCode::Format, "adapter payload is " + std::to_string(payload.size()) + " bytes, expected " +
                                       std::to_string(floats * 4));
  }
  a.module.A.resize(r, k);
  a.module.B.resize(d, r);
  std::size_t off = 0;
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < k; ++j, off += 4) a.module.A(i, j) = detail::get_f32(payload.substr(off));
  }
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < r; ++j, off += 4) a.module.B(i, j) = detail::get_f32(payload.substr(off));
  }
  return a;
}

std::string adapter_file_name(const Adapter& adapter) {
  std::string name = adapter.name.empty() ? std::string("adapter") : adapter.name;
  for (char& ch : name) {
    const bool ok = (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') || (ch >= '0' && ch <= '9') || ch == '-' ||
                    ch == '_' || ch == '.';
    if (!ok) ch = '_';
  }
  std::string out = name + ".b" + std::to_string(adapter.block) + "." + std::string(to_string(adapter.site));
  if (adapter.clip_index >= 0) out += ".clip" + std::to_string(adapter.clip_index);
  return out + ".lora";
}

std::string matrix_to_json(const Matrix& m) {
  nlohmann::json data = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
  }
  return nlohmann::json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}}.dump();
}

Matrix matrix_from_json(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto& data = j.at("data");
    if (rows < 0 || cols < 0 || data.size() != static_cast<std::size_t>(rows * cols)) {
      throw Error(ErrorCode::Format, "matrix data does not hold rows x cols values");
    }
    Matrix m(rows, cols);
    std::size_t n = 0;
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = data[n++].get<double>();
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Format, std::string("matrix: ") + e.what());
  }
}

}  // namespace storyweave
