// omni: incremental RGB-D mapping with probabilistic instance fusion and a
// CPU Gaussian-splat reconstructor.
//
// Subcommands: build, render, eval, export-mesh, export-splat, synth.
// Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "omni/config.hpp"
#include "omni/marching_cubes.hpp"
#include "omni/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonFlags {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int frames = -1;
};

omni::PipelineConfig load_config(const CommonFlags& flags) {
  omni::PipelineConfig cfg;
  if (!flags.config_path.empty()) cfg = omni::PipelineConfig::from_file(flags.config_path);
  if (flags.seed_set) cfg.seed = flags.seed;
  if (!flags.out_dir.empty()) cfg.out_dir = flags.out_dir;
  if (flags.frames >= 0) cfg.frames = flags.frames;
  return cfg;
}

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config_path, "Config file (TOML-style key = value)");
  cmd->add_option("--out", flags.out_dir, "Output directory");
  cmd->add_option("--seed", flags.seed, "RNG seed")
      ->each([&](const std::string&) { flags.seed_set = true; });
  cmd->add_option("--frames", flags.frames, "Limit the number of frames");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"omni: probabilistic voxel + gaussian splat mapping engine"};
  app.require_subcommand(1);

  CommonFlags flags;

  auto* build = app.add_subcommand("build", "Run the incremental mapping loop");
  add_common(build, flags);
  std::string build_input, build_scene;
  build->add_option("--input", build_input, "Replay manifest (switches source to replay)");
  build->add_option("--scene", build_scene, "Synthetic scene name");

  auto* render_cmd = app.add_subcommand("render", "Render color/depth/normal images");
  std::string render_artifacts, render_out;
  render_cmd->add_option("--artifacts", render_artifacts, "Build output directory")
      ->required();
  render_cmd->add_option("--out", render_out, "Render output directory")->required();

  auto* eval_cmd = app.add_subcommand("eval", "Rendering/mesh/semantic metrics");
  std::string eval_artifacts, eval_out;
  eval_cmd->add_option("--artifacts", eval_artifacts, "Build output directory")->required();
  eval_cmd->add_option("--out", eval_out, "Eval output directory")->required();

  auto* mesh_cmd = app.add_subcommand("export-mesh", "Marching-cubes mesh from a grid snapshot");
  std::string mesh_artifacts, mesh_out;
  mesh_cmd->add_option("--artifacts", mesh_artifacts, "Build output directory")->required();
  mesh_cmd->add_option("--out", mesh_out, "Output PLY path")->required();

  auto* splat_cmd = app.add_subcommand("export-splat", "Copy the splat PLY from artifacts");
  std::string splat_artifacts, splat_out;
  splat_cmd->add_option("--artifacts", splat_artifacts, "Build output directory")->required();
  splat_cmd->add_option("--out", splat_out, "Output PLY path")->required();

  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset in the replay format");
  add_common(synth, flags);
  std::string synth_scene, synth_out;
  synth->add_option("--scene", synth_scene, "Synthetic scene name");
  synth->add_option("--dataset", synth_out, "Dataset directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (build->parsed()) {
      omni::PipelineConfig cfg = load_config(flags);
      if (!build_input.empty()) {
        cfg.source = "replay";
        cfg.input_manifest = build_input;
      }
      if (!build_scene.empty()) cfg.scene = build_scene;
      const omni::BuildResult result = omni::run_build(cfg);
      std::cout << "build: " << result.report.final_gaussians << " gaussians, "
                << result.report.final_instances << " instances, "
                << result.report.final_keyframes << " keyframes -> " << cfg.out_dir << "\n";
    } else if (render_cmd->parsed()) {
      omni::run_render(render_artifacts, render_out);
      std::cout << "render: wrote images to " << render_out << "\n";
    } else if (eval_cmd->parsed()) {
      const omni::EvalReport rep = omni::run_eval(eval_artifacts, eval_out);
      std::cout << rep.to_json() << "\n";
    } else if (mesh_cmd->parsed()) {
      const omni::VoxelGrid grid =
          omni::VoxelGrid::load_snapshot((fs::path(mesh_artifacts) / "grid.ovxg").string());
      omni::write_ply(mesh_out, omni::extract_mesh(grid));
      std::cout << "export-mesh: wrote " << mesh_out << "\n";
    } else if (splat_cmd->parsed()) {
      const omni::GaussianField field =
          omni::read_splat_ply((fs::path(splat_artifacts) / "splat.ply").string());
      omni::write_splat_ply(splat_out, field);
      std::cout << "export-splat: wrote " << splat_out << "\n";
    } else if (synth->parsed()) {
      omni::PipelineConfig cfg = load_config(flags);
      if (!synth_scene.empty()) cfg.scene = synth_scene;
      omni::run_synth(cfg, synth_out);
      std::cout << "synth: wrote dataset to " << synth_out << "\n";
    }
  } catch (const omni::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const omni::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const omni::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
