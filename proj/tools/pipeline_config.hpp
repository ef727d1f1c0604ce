// SPDX-License-Identifier: Apache-2.0
//
// Resolved settings for one command-line run: a JSON config file overlaid by flags.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "storyweave/attention_mask.hpp"
#include "storyweave/lora.hpp"
#include "storyweave/plan.hpp"
#include "storyweave/region.hpp"
#include "storyweave/retrieval.hpp"
#include "storyweave/toy_dit.hpp"
#include "storyweave/training.hpp"

namespace storyweave::cli {

struct PipelineConfig {
  LatentGrid grid{kDefaultLatentFrames, 8, 8};
  InterpolationMode interpolation = InterpolationMode::Linear;
  BackgroundMode background = BackgroundMode::Complement;
  RasterRule raster_rule = RasterRule::CenterInBox;
  MaskMode mask_mode = MaskMode::Sr3a;
  BindingMode binding = BindingMode::Regional;
  PlacementScheme placement = PlacementScheme::Interleaved;
  ModelConfig model;
  TrainConfig train;
  RetrievalConfig retrieval;
  int max_retries = 3;
  std::uint64_t seed = 0;
  std::string out_dir = "out";

  /// Latent frame count; always the grid's temporal extent.
  int latent_frames() const { return grid.t; }
};

/// Flag values that override the file; unset fields leave the file value.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> grid;
  std::optional<std::string> mode;
  std::optional<std::string> placement;
  std::optional<double> beta;
  std::optional<std::string> prompt_mode;
  std::optional<std::string> out_dir;
};

PipelineConfig config_from_json(std::string_view text);
PipelineConfig resolve_config(const std::optional<std::string>& config_path, const Overrides& overrides);
std::string config_to_json(const PipelineConfig& config);

}  // namespace storyweave::cli
