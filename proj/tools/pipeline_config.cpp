// SPDX-License-Identifier: Apache-2.0

#include "pipeline_config.hpp"

#include <json.hpp>

#include "storyweave/error.hpp"
#include "storyweave/io.hpp"

namespace storyweave::cli {

using nlohmann::json;

namespace {

[[noreturn]] void bad_value(std::string_view key, std::string_view value) {
  throw Error(ErrorCode::Format, "config " + std::string(key) + ": unknown value \"" + std::string(value) + "\"");
}

InterpolationMode parse_interpolation(std::string_view s) {
  if (s == "linear") return InterpolationMode::Linear;
  if (s == "nearest") return InterpolationMode::Nearest;
  bad_value("interpolation", s);
}

BackgroundMode parse_background(std::string_view s) {
  if (s == "complement") return BackgroundMode::Complement;
  if (s == "full" || s == "full_frame") return BackgroundMode::FullFrame;
  bad_value("background", s);
}

RasterRule parse_rule(std::string_view s) {
  if (s == "center") return RasterRule::CenterInBox;
  if (s == "overlap") return RasterRule::AnyOverlap;
  bad_value("raster_rule", s);
}

BindingMode parse_binding(std::string_view s) {
  if (s == "regional") return BindingMode::Regional;
  if (s == "global") return BindingMode::Global;
  bad_value("binding", s);
}

Reduction parse_reduction(std::string_view s) {
  if (s == "mean") return Reduction::Mean;
  if (s == "sum") return Reduction::Sum;
  bad_value("loss_reduction", s);
}

OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "sgd") return OptimizerKind::Sgd;
  if (s == "adam") return OptimizerKind::Adam;
  bad_value("optimizer", s);
}

std::string grid_text(const LatentGrid& g) {
  return std::to_string(g.t) + "x" + std::to_string(g.h) + "x" + std::to_string(g.w);
}

void sync(PipelineConfig& c) {
  c.model.grid = c.grid;
  c.model.seed = c.seed;
  c.train.seed = c.seed;
  c.model.validate();
  c.retrieval.validate();
  if (c.train.steps < 0) throw Error(ErrorCode::Format, "config train.steps must be non-negative");
  if (c.train.debias.beta < 0.0) throw Error(ErrorCode::Format, "config beta must be non-negative");
}

}  // namespace

PipelineConfig config_from_json(std::string_view text) {
  PipelineConfig c;
  try {
    const json j = json::parse(text);
    if (j.contains("grid")) c.grid = parse_grid(j.at("grid").get<std::string>());
    if (j.contains("interpolation")) c.interpolation = parse_interpolation(j.at("interpolation").get<std::string>());
    if (j.contains("background")) c.background = parse_background(j.at("background").get<std::string>());
    if (j.contains("raster_rule")) c.raster_rule = parse_rule(j.at("raster_rule").get<std::string>());
    if (j.contains("mask_mode")) c.mask_mode = parse_mask_mode(j.at("mask_mode").get<std::string>());
    if (j.contains("binding")) c.binding = parse_binding(j.at("binding").get<std::string>());
    if (j.contains("placement")) c.placement = parse_placement_scheme(j.at("placement").get<std::string>());
    c.max_retries = j.value("max_retries", c.max_retries);
    c.seed = j.value("seed", c.seed);
    c.out_dir = j.value("out_dir", c.out_dir);
    if (j.contains("model")) c.model = model_config_from_json(j.at("model").dump());
    if (j.contains("retrieval")) c.retrieval = retrieval_config_from_json(j.at("retrieval").dump());
    if (j.contains("train")) {
      const json& t = j.at("train");
      TrainConfig& tc = c.train;
      tc.learning_rate = t.value("learning_rate", tc.learning_rate);
      tc.steps = t.value("steps", tc.steps);
      if (t.contains("prompt_mode")) tc.prompt_mode = parse_prompt_mode(t.at("prompt_mode").get<std::string>());
      if (t.contains("loss_reduction")) tc.loss_reduction = parse_reduction(t.at("loss_reduction").get<std::string>());
      tc.first_frame_only = t.value("first_frame_only", tc.first_frame_only);
      if (t.contains("optimizer")) tc.optimizer = parse_optimizer(t.at("optimizer").get<std::string>());
      tc.fixed_noise = t.value("fixed_noise", tc.fixed_noise);
      tc.rank = t.value("rank", tc.rank);
      tc.lora_scale = t.value("lora_scale", tc.lora_scale);
      tc.a_init_std = t.value("a_init_std", tc.a_init_std);
      tc.schedule_steps = t.value("schedule_steps", tc.schedule_steps);
      tc.single_prompt = t.value("single_prompt", tc.single_prompt);
      if (t.contains("debias")) {
        const json& d = t.at("debias");
        tc.debias.beta = d.value("beta", tc.debias.beta);
        tc.debias.anchor_index = d.value("anchor_index", tc.debias.anchor_index);
        tc.debias.enabled = d.value("enabled", tc.debias.enabled);
        tc.debias.shared_anchor = d.value("shared_anchor", tc.debias.shared_anchor);
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Format, std::string("config: ") + e.what());
  }
  sync(c);
  return c;
}

PipelineConfig resolve_config(const std::optional<std::string>& config_path, const Overrides& o) {
  PipelineConfig c = config_path ? config_from_json(read_file(*config_path)) : PipelineConfig{};
  if (o.seed) c.seed = *o.seed;
  if (o.grid) c.grid = parse_grid(*o.grid);
  if (o.mode) c.mask_mode = parse_mask_mode(*o.mode);
  if (o.placement) c.placement = parse_placement_scheme(*o.placement);
  if (o.beta) c.train.debias.beta = *o.beta;
  if (o.prompt_mode) c.train.prompt_mode = parse_prompt_mode(*o.prompt_mode);
  if (o.out_dir) c.out_dir = *o.out_dir;
  sync(c);
  return c;
}

std::string config_to_json(const PipelineConfig& c) {
  const TrainConfig& t = c.train;
  json j{
      {"grid", grid_text(c.grid)},
      {"latent_frames", c.latent_frames()},
      {"interpolation", c.interpolation == InterpolationMode::Linear ? "linear" : "nearest"},
      {"background", c.background == BackgroundMode::Complement ? "complement" : "full"},
      {"raster_rule", c.raster_rule == RasterRule::CenterInBox ? "center" : "overlap"},
      {"mask_mode", std::string(to_string(c.mask_mode))},
      {"binding", c.binding == BindingMode::Regional ? "regional" : "global"},
      {"placement", c.placement == PlacementScheme::Interleaved ? "interleaved" : "half"},
      {"max_retries", c.max_retries},
      {"seed", c.seed},
      {"out_dir", c.out_dir},
      {"model", json::parse(model_config_to_json(c.model))},
      {"retrieval", json::parse(retrieval_config_to_json(c.retrieval))},
      {"train",
       {{"learning_rate", t.learning_rate},
        {"steps", t.steps},
        {"prompt_mode", t.prompt_mode == PromptMode::PerVideo ? "per_video" : "single"},
        {"loss_reduction", t.loss_reduction == Reduction::Mean ? "mean" : "sum"},
        {"first_frame_only", t.first_frame_only},
        {"optimizer", t.optimizer == OptimizerKind::Sgd ? "sgd" : "adam"},
        {"fixed_noise", t.fixed_noise},
        {"rank", t.rank},
        {"lora_scale", t.lora_scale},
        {"a_init_std", t.a_init_std},
        {"schedule_steps", t.schedule_steps},
        {"single_prompt", t.single_prompt},
        {"debias",
         {{"beta", t.debias.beta},
          {"anchor_index", t.debias.anchor_index},
          {"enabled", t.debias.enabled},
          {"shared_anchor", t.debias.shared_anchor}}}}}};
  return j.dump(2);
}

}  // namespace storyweave::cli
