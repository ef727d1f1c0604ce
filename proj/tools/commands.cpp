// SPDX-License-Identifier: Apache-2.0

#include "commands.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pipeline_config.hpp"
#include "storyweave/error.hpp"
#include "storyweave/io.hpp"
#include "storyweave/planner.hpp"

namespace storyweave::cli {

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitContract = 2;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingScene:
    case ErrorCode::MissingNarration:
    case ErrorCode::MalformedHeader:
    case ErrorCode::MissingBackground:
    case ErrorCode::MissingFrame:
    case ErrorCode::MalformedEntry:
    case ErrorCode::MalformedBBox:
    case ErrorCode::InvalidFrameCount:
      return kExitValidation;
    default:
      return kExitContract;
  }
}

std::string out_path(const PipelineConfig& cfg, const std::string& name) {
  fs::create_directories(cfg.out_dir);
  return (fs::path(cfg.out_dir) / name).string();
}

std::string frame_suffix(int frame) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%02d", frame);
  return buf;
}

/// Every *.lora file in `dir`, sorted by file name.
AdapterSet load_adapter_dir(const std::string& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::Io, "adapter directory " + dir + " does not exist");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".lora") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  AdapterSet set;
  for (const auto& f : files) set.push_back(deserialize_adapter(read_file(f.string())));
  return set;
}

void write_adapters(const PipelineConfig& cfg, const AdapterSet& set) {
  const fs::path dir = fs::path(cfg.out_dir) / "adapters";
  fs::create_directories(dir);
  for (const Adapter& a : set) write_file((dir / adapter_file_name(a)).string(), serialize_adapter(a));
}

LatentPlan load_latent_plan(const std::string& path) { return latent_plan_from_json(read_file(path)); }

RegionMap regions_for(const PipelineConfig& cfg, const LatentPlan& plan, const std::string& regions_path) {
  if (!regions_path.empty()) return region_map_from_json(read_file(regions_path));
  return build_region_map(plan, cfg.grid, cfg.background, cfg.raster_rule);
}

int report_status(const ValidationReport& report) { return report.accepted() ? kExitOk : kExitValidation; }

}  // namespace

int run_command(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"storyweave: plan, layout, mask, retrieve, train and generate on a toy video diffusion model"};
  app.require_subcommand(1);
  app.fallthrough();

  std::optional<std::string> config_path;
  Overrides overrides;
  app.add_option("--config", config_path, "JSON pipeline config");
  app.add_option("--seed", overrides.seed, "seed for model init, training and sampling");
  app.add_option("--grid", overrides.grid, "latent grid TxHxW");
  app.add_option("--mode", overrides.mode, "attention mask mode")->check(CLI::IsMember({"sr3a", "hard", "hard_regional", "dense"}));
  app.add_option("--placement", overrides.placement, "adapter placement")->check(CLI::IsMember({"interleaved", "half", "half_half"}));
  app.add_option("--beta", overrides.beta, "debias strength");
  app.add_option("--prompt-mode", overrides.prompt_mode, "training prompts")->check(CLI::IsMember({"per-video", "per_video", "single"}));
  app.add_option("--out", overrides.out_dir, "output directory");

  std::function<int(const PipelineConfig&)> action;

  // plan
  auto* plan_cmd = app.add_subcommand("plan", "generate a story plan (and optionally per-scene layouts)");
  std::optional<std::string> topic;
  std::string replay_dir;
  bool frame_plans = false;
  plan_cmd->add_option("--topic", topic, "story topic");
  plan_cmd->add_option("--replay", replay_dir, "directory of canned responses instead of the HTTP backend");
  plan_cmd->add_flag("--frame-plans", frame_plans, "also request a layout plan for every scene");
  plan_cmd->callback([&] {
    action = [&](const PipelineConfig& cfg) {
      std::optional<ReplayBackend> replay;
      std::optional<HttpBackend> http;
      TextBackend* backend = nullptr;
      if (!replay_dir.empty()) {
        replay.emplace(ReplayBackend::from_directory(replay_dir));
        backend = &*replay;
      } else {
        http.emplace(HttpBackend::from_env());
        backend = &*http;
      }
      StoryRequest request;
      request.topic = topic;
      request.max_retries = cfg.max_retries;
      const auto story = generate_high_level_plan(*backend, request);
      write_file(out_path(cfg, "high_level_plan.txt"), emit_high_level_plan(story.plan));
      write_file(out_path(cfg, "high_level_plan.json"), high_level_plan_to_json(story.plan));
      write_file(out_path(cfg, "high_level_report.json"), report_to_json(story.report));
      int status = report_status(story.report);
      if (frame_plans) {
        for (std::size_t i = 0; i < story.plan.scenes.size(); ++i) {
          const auto layout = generate_frame_plan(*backend, story.plan.scenes[i], cfg.max_retries);
          const std::string stem = "scene_" + std::to_string(i + 1) + "_frame_plan";
          write_file(out_path(cfg, stem + ".txt"), emit_frame_plan(layout.plan));
          write_file(out_path(cfg, stem + ".json"), frame_plan_to_json(layout.plan));
          status = std::max(status, report_status(layout.report));
        }
      }
      out << story.plan.scenes.size() << " scenes after " << story.attempts << " attempt(s)\n";
      return status;
    };
  });

  // lint
  auto* lint_cmd = app.add_subcommand("lint", "parse and validate a plan file");
  std::string lint_file;
  bool lint_high_level = false;
  lint_cmd->add_option("file", lint_file, "plan text")->required()->check(CLI::ExistingFile);
  lint_cmd->add_flag("--high-level", lint_high_level, "the file is a scene-level story plan");
  lint_cmd->callback([&] {
    action = [&](const PipelineConfig&) {
      const std::string text = read_file(lint_file);
      const ValidationReport report = lint_high_level ? validate_high_level_plan(parse_high_level_plan(text))
                                                      : validate_frame_plan(parse_frame_plan(text));
      out << report_to_json(report) << "\n";
      for (const Finding& f : report.errors) err << "error: rule " << f.rule_id << ": " << f.message << "\n";
      return report_status(report);
    };
  });

  // interp
  auto* interp_cmd = app.add_subcommand("interp", "interpolate a key-frame plan to latent frames");
  std::string interp_file;
  interp_cmd->add_option("file", interp_file, "frame plan text")->required()->check(CLI::ExistingFile);
  interp_cmd->callback([&] {
    action = [&](const PipelineConfig& cfg) {
      const LatentPlan plan = interpolate_plan(parse_frame_plan(read_file(interp_file)), cfg.latent_frames(), cfg.interpolation);
      write_file(out_path(cfg, "latent_plan.json"), latent_plan_to_json(plan));
      out << plan.conditions.size() << " conditions over " << plan.frame_count() << " latent frames\n";
      return kExitOk;
    };
  });

  // raster
  auto* raster_cmd = app.add_subcommand("raster", "rasterize a latent plan into a region map");
  std::string raster_file;
  raster_cmd->add_option("latent_plan", raster_file, "latent plan JSON")->required()->check(CLI::ExistingFile);
  raster_cmd->callback([&] {
    action = [&](const PipelineConfig& cfg) {
      const RegionMap map = build_region_map(load_latent_plan(raster_file), cfg.grid, cfg.background, cfg.raster_rule);
      write_file(out_path(cfg, "region_map.json"), region_map_to_json(map));
      for (int f = 0; f < map.grid.t; ++f) {
        write_file(out_path(cfg, "region_frame_" + frame_suffix(f) + ".pgm"), region_frame_pgm(map, f));
      }
      out << map.n_conditions << " conditions on a " << map.grid.t << "x" << map.grid.h << "x" << map.grid.w << " grid\n";
      return kExitOk;
    };
  });

  // mask
  auto* mask_cmd = app.add_subcommand("mask", "build the attention mask for a latent plan");
  std::string mask_plan;
  std::string mask_regions;
  mask_cmd->add_option("latent_plan", mask_plan, "latent plan JSON")->required()->check(CLI::ExistingFile);
  mask_cmd->add_option("--regions", mask_regions, "region map JSON (rasterized from the plan when omitted)")
      ->check(CLI::ExistingFile);
  mask_cmd->callback([&] {
    action = [&](const PipelineConfig& cfg) {
      const LatentPlan plan = load_latent_plan(mask_plan);
      const RegionMap regions = regions_for(cfg, plan, mask_regions);
      const Conditioning cond = make_conditioning(cfg.model, plan, regions, cfg.mask_mode);
      write_file(out_path(cfg, "mask.bin"), export_mask(cond.mask, MaskFormat::BitsetBinary));
      write_file(out_path(cfg, "mask_layout.json"), segment_layout_to_json(cond.mask.layout()));
      out << "S = " << cond.mask.size() << ", allowed pairs = " << cond.mask.allowed_count() << "\n";
      return kExitOk;
    };
  });

  // export-mask
  auto* export_cmd = app.add_subcommand("export-mask", "convert a bitset mask to PGM or re-emit it");
  std::string export_file;
  std::string export_layout;
  std::string export_format = "pgm";
  export_cmd->add_option("mask", export_file, "mask.bin")->required()->check(CLI::ExistingFile);
  export_cmd->add_option("--layout", export_layout, "segment layout JSON")->check(CLI::ExistingFile);
  export_cmd->add_option("--format", export_format, "pgm or bin")->check(CLI::IsMember({"pgm", "bin"}));
  export_cmd->callback([&] {
    action = [&](const PipelineConfig& cfg) {
      std::optional<SegmentLayout> layout;
      if (!export_layout.empty()) layout = segment_layout_from_json(read_file(export_layout));
      const AttentionMask mask = import_mask_bitset(read_file(export_file), layout ? &*layout : nullptr);
      const bool pgm = export_format == "pgm";
      const std::string name = pgm ? "mask.pgm" : "mask_export.bin";
      write_file(out_path(cfg, name), export_mask(mask, pgm ? MaskFormat::Pgm : MaskFormat::BitsetBinary));
      out << "wrote " << name << " (" << mask.size() << " x " << mask.size() << ")\n";
      return kExitOk;
    };
  });

  // retrieve
  auto* retrieve_cmd = app.add_subcommand("retrieve", "retrieve motion clips from a corpus");
  std::string corpus_file;
  std::string tracks_file;
  std::string motion;
  retrieve_cmd->add_option("--corpus", corpus_file, "corpus JSONL")->required()->check(CLI::ExistingFile);
  retrieve_cmd->add_option("--tracks", tracks_file, "tracks JSONL")->required()->check(CLI::ExistingFile);
  retrieve_cmd->add_option("--motion", motion, "motion text")->required();
  retrieve_cmd->callback([&] {
    action = [&](const PipelineConfig& cfg) {
      const WordOverlapFrameScorer frame_scorer;
      const WordOverlapClipScorer clip_scorer;
      const auto result = retrieve_motion(parse_corpus_jsonl(read_file(corpus_file)),
                                          parse_tracks_jsonl(read_file(tracks_file)), motion, &frame_scorer,
                                          &clip_scorer, cfg.retrieval);
      write_file(out_path(cfg, "retrieved.json"), scored_clips_to_json(result));
      out << result.size() << " clips retrieved for \"" << build_query(motion, cfg.retrieval) << "\"\n";
      return kExitOk;
    };
  });

  // train options shared by both training commands
  struct TrainFlags {
    std::optional<int> steps;
    std::optional<double> lr;
    std::optional<std::string> optimizer;
    bool fixed_noise = false;
    bool no_debias = false;
  };
  TrainFlags train_flags;
  auto add_train_flags = [&](CLI::App* cmd) {
    cmd->add_option("--steps", train_flags.steps, "optimization steps");
    cmd->add_option("--lr", train_flags.lr, "learning rate");
    cmd->add_option("--optimizer", train_flags.optimizer, "sgd or adam")->check(CLI::IsMember({"sgd", "adam"}));
    cmd->add_flag("--fixed-noise", train_flags.fixed_noise, "draw one (t, noise) per clip and reuse it");
    cmd->add_flag("--no-debias", train_flags.no_debias, "train on the reconstruction loss alone");
  };
  auto train_config = [&](const PipelineConfig& cfg) {
    TrainConfig t = cfg.train;
    if (train_flags.steps) t.steps = *train_flags.steps;
    if (train_flags.lr) t.learning_rate = *train_flags.lr;
    if (train_flags.optimizer) t.optimizer = *train_flags.optimizer == "adam" ? OptimizerKind::Adam : OptimizerKind::Sgd;
    if (train_flags.fixed_noise) t.fixed_noise = true;
    if (train_flags.no_debias) t.debias.enabled = false;
    if (t.steps < 0) throw Error(ErrorCode::Format, "--steps must be non-negative");
    return t;
  };
  auto finish_training = [&](const PipelineConfig& cfg, const TrainResult& result) {
    write_adapters(cfg, result.adapters);
    write_file(out_path(cfg, "train_log.jsonl"), trace_to_jsonl(result.trace));
    out << result.adapters.size() << " adapters; loss " << result.trace.front().loss_motion << " -> "
        << result.trace.back().loss_motion << "\n";
    return kExitOk;
  };

  // train-motion
  auto* motion_cmd = app.add_subcommand("train-motion", "train motion adapters on latent clips");
  std::string clips_file;
  int synthetic = 4;
  std::string motion_name = "walking";
  motion_cmd->add_option("--clips", clips_file, "clips JSONL (synthetic moving squares when omitted)")
      ->check(CLI::ExistingFile);
  motion_cmd->add_option("--synthetic", synthetic, "number of synthetic clips")->check(CLI::PositiveNumber);
  motion_cmd->add_option("--name", motion_name, "motion the adapters are named after");
  add_train_flags(motion_cmd);
  motion_cmd->callback([&] {
    action = [&](const PipelineConfig& cfg) {
      const auto clips = clips_file.empty() ? synthetic_motion_clips(cfg.grid, cfg.model.d_latent, synthetic)
                                            : parse_clips_jsonl(read_file(clips_file));
      TrainConfig t = train_config(cfg);
      t.adapter_name = motion_name;
      const ToyDiT model(cfg.model);
      return finish_training(cfg, train_motion_prior(clips, model, plan_lora_placement(cfg.model.n_blocks, cfg.placement), t));
    };
  });

  // train-subject
  auto* subject_cmd = app.add_subcommand("train-subject", "train subject adapters on one reference latent");
  std::string reference_file;
  std::string subject_name;
  std::string subject_caption;
  subject_cmd->add_option("--reference", reference_file, "reference latent matrix JSON (h*w x d_latent)")
      ->check(CLI::ExistingFile);
  subject_cmd->add_option("--name", subject_name, "entity the adapters are named after")->required();
  subject_cmd->add_option("--caption", subject_caption, "caption of the reference")->required();
  add_train_flags(subject_cmd);
  subject_cmd->callback([&] {
    action = [&](const PipelineConfig& cfg) {
      Matrix reference;
      if (reference_file.empty()) {
        reference = moving_square_clip(cfg.grid, cfg.model.d_latent, std::max(1, cfg.grid.h / 2), cfg.grid.w / 4,
                                       cfg.grid.h / 4, 0, 0)
                        .topRows(cfg.grid.frame_tokens());
      } else {
        reference = matrix_from_json(read_file(reference_file));
      }
      TrainConfig t = train_config(cfg);
      t.adapter_name = subject_name;
      const ToyDiT model(cfg.model);
      return finish_training(cfg, train_subject_prior(reference, subject_caption, model,
                                                      plan_lora_placement(cfg.model.n_blocks, cfg.placement), t));
    };
  });

  // generate
  auto* generate_cmd = app.add_subcommand("generate", "sample a latent video for a latent plan");
  std::string gen_plan;
  std::string gen_regions;
  std::vector<std::string> adapter_dirs;
  std::string binding;
  generate_cmd->add_option("latent_plan", gen_plan, "latent plan JSON")->required()->check(CLI::ExistingFile);
  generate_cmd->add_option("--regions", gen_regions, "region map JSON")->check(CLI::ExistingFile);
  generate_cmd->add_option("--adapters", adapter_dirs, "directories of .lora files");
  generate_cmd->add_option("--binding", binding, "regional or global")->check(CLI::IsMember({"regional", "global"}));
  generate_cmd->callback([&] {
    action = [&](const PipelineConfig& cfg) {
      const LatentPlan plan = load_latent_plan(gen_plan);
      const RegionMap regions = regions_for(cfg, plan, gen_regions);
      AdapterSet set;
      for (const auto& dir : adapter_dirs) {
        AdapterSet part = load_adapter_dir(dir);
        set.insert(set.end(), part.begin(), part.end());
      }
      set = adapters_for_plan(std::move(set), plan);
      const BindingMode mode = binding.empty() ? cfg.binding
                               : binding == "global" ? BindingMode::Global
                                                     : BindingMode::Regional;
      const ToyDiT model(cfg.model);
      const Conditioning cond = make_conditioning(cfg.model, plan, regions, cfg.mask_mode);
      const auto bound = bind_adapters(set, regions, cond.mask.layout(), mode);
      const Matrix z = sample(model, cond, bound, NoiseSchedule::linear(cfg.train.schedule_steps), cfg.seed);
      write_file(out_path(cfg, "sample.json"), matrix_to_json(z));
      out << "sampled " << z.rows() << " x " << z.cols() << " latent with " << bound.size() << " bound adapters\n";
      return kExitOk;
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitContract;
  }

  try {
    const PipelineConfig cfg = resolve_config(config_path, overrides);
    err << "storyweave: resolved config " << nlohmann::json::parse(config_to_json(cfg)).dump() << "\n";
    return action(cfg);
  } catch (const Error& e) {
    err << "storyweave: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const fs::filesystem_error& e) {
    err << "storyweave: " << e.what() << "\n";
    return kExitContract;
  } catch (const std::exception& e) {
    err << "storyweave: " << e.what() << "\n";
    return kExitContract;
  }
}

}  // namespace storyweave::cli
