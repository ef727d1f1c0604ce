// SPDX-License-Identifier: Apache-2.0

#include <map>

#include <json.hpp>

#include "binary_io.hpp"
#include "storyweave/error.hpp"
#include "storyweave/toy_dit.hpp"

namespace storyweave {

using nlohmann::json;

namespace {

json config_json(const ModelConfig& c) {
  return json{{"d_model", c.d_model},
              {"n_blocks", c.n_blocks},
              {"n_heads", c.n_heads},
              {"d_ff", c.d_ff},
              {"d_latent", c.d_latent},
              {"grid", {{"t", c.grid.t}, {"h", c.grid.h}, {"w", c.grid.w}}},
              {"max_seg_len", c.max_seg_len},
              {"hash_vocab", c.hash_vocab},
              {"seed", c.seed}};
}

ModelConfig config_from(const json& j) {
  ModelConfig c;
  c.d_model = j.value("d_model", c.d_model);
  c.n_blocks = j.value("n_blocks", c.n_blocks);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.d_ff = j.value("d_ff", c.d_ff);
  c.d_latent = j.value("d_latent", c.d_latent);
  if (j.contains("grid")) {
    const json& g = j.at("grid");
    c.grid = LatentGrid{g.at("t").get<int>(), g.at("h").get<int>(), g.at("w").get<int>()};
  }
  c.max_seg_len = j.value("max_seg_len", c.max_seg_len);
  c.hash_vocab = j.value("hash_vocab", c.hash_vocab);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

}  // namespace

std::string model_config_to_json(const ModelConfig& config) { return config_json(config).dump(2); }

ModelConfig model_config_from_json(std::string_view text) {
  try {
    return config_from(json::parse(text));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Format, std::string("model config: ") + e.what());
  }
}

Checkpoint save_checkpoint(ToyDiT& model) {
  Checkpoint ck;
  json manifest = json::array();
  std::size_t offset = 0;
  for (auto& [name, m] : model.named_matrices()) {
    manifest.push_back({{"name", name}, {"shape", {m->rows(), m->cols()}}, {"offset", offset}});
    for (Eigen::Index i = 0; i < m->rows(); ++i) {
      for (Eigen::Index j = 0; j < m->cols(); ++j) detail::put_f32(ck.blob, (*m)(i, j));
    }
    offset += static_cast<std::size_t>(m->size()) * 4;
  }
  for (auto& [name, v] : model.named_vectors()) {
    manifest.push_back({{"name", name}, {"shape", {v->size()}}, {"offset", offset}});
    for (Eigen::Index i = 0; i < v->size(); ++i) detail::put_f32(ck.blob, (*v)(i));
    offset += static_cast<std::size_t>(v->size()) * 4;
  }
  ck.manifest_json = json{{"config", config_json(model.config())}, {"dtype", "float32_le"}, {"tensors", manifest}}.dump(2);
  return ck;
}

ToyDiT load_checkpoint(std::string_view manifest_text, std::string_view blob) {
  json doc;
  try {
    doc = json::parse(manifest_text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Format, std::string("checkpoint manifest: ") + e.what());
  }
  ToyDiT model(config_from(doc.at("config")));
  std::map<std::string, json> entries;
  for (const json& t : doc.at("tensors")) entries[t.at("name").get<std::string>()] = t;

  auto locate = [&](const std::string& name, std::size_t count) {
    auto it = entries.find(name);
    if (it == entries.end()) throw Error(ErrorCode::Format, "checkpoint lacks tensor " + name);
    const auto offset = it->second.at("offset").get<std::size_t>();
    if (offset + count * 4 > blob.size()) throw Error(ErrorCode::Format, "tensor " + name + " runs past the blob");
    return offset;
  };
  for (auto& [name, m] : model.named_matrices()) {
    const auto shape = entries.count(name) ? entries[name].at("shape").get<std::vector<Eigen::Index>>()
                                           : std::vector<Eigen::Index>{};
    if (shape.size() != 2 || shape[0] != m->rows() || shape[1] != m->cols()) {
      throw Error(ErrorCode::ShapeMismatch, "tensor " + name + " has the wrong shape");
    }
    std::size_t off = locate(name, static_cast<std::size_t>(m->size()));
    for (Eigen::Index i = 0; i < m->rows(); ++i) {
      for (Eigen::Index j = 0; j < m->cols(); ++j, off += 4) (*m)(i, j) = detail::get_f32(blob.substr(off));
    }
  }
  for (auto& [name, v] : model.named_vectors()) {
    const auto shape = entries.count(name) ? entries[name].at("shape").get<std::vector<Eigen::Index>>()
                                           : std::vector<Eigen::Index>{};
    if (shape.size() != 1 || shape[0] != v->size()) throw Error(ErrorCode::ShapeMismatch, "tensor " + name + " has the wrong shape");
    std::size_t off = locate(name, static_cast<std::size_t>(v->size()));
    for (Eigen::Index i = 0; i < v->size(); ++i, off += 4) (*v)(i) = detail::get_f32(blob.substr(off));
  }
  return model;
}

}  // namespace storyweave
