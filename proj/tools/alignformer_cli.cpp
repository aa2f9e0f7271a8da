// Command-line front end for the staged pipeline and standalone metrics.
#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "alignformer/alignformer.hpp"

namespace fs = std::filesystem;
using namespace af;

namespace {

struct Globals {
  std::string config;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string device;
};

pipe::PipelineConfig resolve(const Globals& g) {
  pipe::PipelineConfig cfg;
  if (!g.config.empty()) {
    cfg = pipe::resolve_config_file(g.config);
    if (!g.preset.empty() && g.preset != cfg.preset) {
      throw pipe::ConfigError("--preset " + g.preset + " conflicts with preset '" + cfg.preset + "' in " + g.config);
    }
  } else {
    cfg = pipe::preset(g.preset.empty() ? "desk" : g.preset);
  }
  if (g.seed) cfg.seed = *g.seed;
  if (!g.out.empty()) cfg.paths.out = g.out;
  if (!g.device.empty()) cfg.device = g.device;
  cfg.validate();
  return cfg;
}

void print(const io::KeyValues& kv) {
  for (const auto& [k, v] : kv) std::cout << k << " = " << v << '\n';
}

std::optional<fs::path> opt_path(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return fs::path(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AlignFormer pseudo-supervision pipeline"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "JSON configuration file")->check(CLI::ExistingFile);
  app.add_option("--preset", g.preset, "base preset")->check(CLI::IsMember(pipe::preset_names()));
  app.add_option("--seed", g.seed, "master seed for training stages");
  app.add_option("--out", g.out, "run directory");
  app.add_option("--device", g.device, "compute device")->check(CLI::IsMember({"cpu", "accelerator"}));

  auto* gen_data = app.add_subcommand("gen-data", "synthesize the scene dataset");
  std::string resume;
  auto* train_dam = app.add_subcommand("train-dam", "train the domain alignment module");
  train_dam->add_option("--resume", resume, "checkpoint to continue from")->check(CLI::ExistingFile);
  auto* train_align = app.add_subcommand("train-alignformer", "train AlignFormer with DAM and flow frozen");
  train_align->add_option("--resume", resume, "checkpoint to continue from")->check(CLI::ExistingFile);
  auto* gen_pseudo = app.add_subcommand("gen-pseudo", "write pseudo ground truth, masks and provenance");
  auto* train_restore = app.add_subcommand("train-restore", "train the restoration network on pseudo pairs");
  train_restore->add_option("--resume", resume, "checkpoint to continue from")->check(CLI::ExistingFile);

  std::string input, output, checkpoint;
  auto* restore = app.add_subcommand("restore", "restore one image with a trained network");
  restore->add_option("--input", input, "degraded PNG")->required()->check(CLI::ExistingFile);
  restore->add_option("--output", output, "restored PNG")->required();
  restore->add_option("--checkpoint", checkpoint, "restoration checkpoint (default: run directory)");

  auto* evaluate = app.add_subcommand("evaluate", "compute PSNR/SSIM, colour distribution, PCK and MTF");

  std::string forward, backward;
  std::optional<double> occ_alpha, occ_beta;
  auto* occlusion = app.add_subcommand("flow-occlusion", "occlusion mask from forward and backward flow files");
  occlusion->add_option("--forward", forward, "forward flow (AFFLOW01)")->required()->check(CLI::ExistingFile);
  occlusion->add_option("--backward", backward, "backward flow (AFFLOW01)")->required()->check(CLI::ExistingFile);
  occlusion->add_option("--output", output, "mask PNG")->required();
  occlusion->add_option("--occ-alpha", occ_alpha, "relative tolerance")->check(CLI::NonNegativeNumber);
  occlusion->add_option("--occ-beta", occ_beta, "absolute tolerance in pixels")->check(CLI::NonNegativeNumber);

  std::string orientation = "auto";
  std::vector<int> roi;
  int picture_height = 0;
  auto* mtf = app.add_subcommand("mtf", "slanted-edge MTF of an edge image");
  mtf->add_option("--input", input, "PNG containing one slanted edge")->required()->check(CLI::ExistingFile);
  mtf->add_option("--roi", roi, "x y width height")->expected(4);
  mtf->add_option("--orientation", orientation, "edge orientation")
      ->check(CLI::IsMember({"auto", "vertical", "horizontal"}));
  mtf->add_option("--picture-height", picture_height, "pixels, for LW/PH")->check(CLI::NonNegativeNumber);

  std::string metrics_file;
  auto* report = app.add_subcommand("report", "render evaluation tables");
  report->add_option("--metrics", metrics_file, "metrics file (default: run directory)")->check(CLI::ExistingFile);

  auto* show_config = app.add_subcommand("config", "print the resolved configuration");
  auto* schema = app.add_subcommand("schema", "print the configuration JSON schema");

  CLI11_PARSE(app, argc, argv);

  try {
    if (schema->parsed()) {
      std::cout << pipe::config_schema().dump(2) << '\n';
      return 0;
    }
    const pipe::PipelineConfig cfg = resolve(g);
    if (show_config->parsed()) {
      std::cout << pipe::to_json(cfg).dump(2) << '\n';
    } else if (gen_data->parsed()) {
      const int n = pipe::gen_data(cfg);
      std::cout << "wrote " << n << " scenes to " << pipe::stage_dir(cfg, pipe::Stage::kData).string() << '\n';
    } else if (train_dam->parsed()) {
      print(pipe::train_dam(cfg, opt_path(resume)).metrics);
    } else if (train_align->parsed()) {
      print(pipe::train_alignformer(cfg, opt_path(resume)).metrics);
    } else if (gen_pseudo->parsed()) {
      print(pipe::gen_pseudo(cfg).metrics);
    } else if (train_restore->parsed()) {
      print(pipe::train_restoration(cfg, opt_path(resume)).metrics);
    } else if (restore->parsed()) {
      const fs::path ck = checkpoint.empty() ? pipe::final_checkpoint(pipe::stage_dir(cfg, pipe::Stage::kRestore))
                                             : fs::path(checkpoint);
      const auto w = pipe::load_restorer(cfg, ck);
      io::save_image(output, ppm::restore(w, io::load_image(input)));
      std::cout << "wrote " << output << '\n';
    } else if (evaluate->parsed()) {
      const auto kv = pipe::evaluate(cfg);
      std::cout << pipe::render_report(kv);
      std::cout << "metrics: " << (pipe::stage_dir(cfg, pipe::Stage::kEval) / "metrics.txt").string() << '\n';
    } else if (occlusion->parsed()) {
      const OcclusionParams p{occ_alpha.value_or(cfg.flow.occ_alpha), occ_beta.value_or(cfg.flow.occ_beta)};
      const BinaryMask m = occlusion_mask(read_flow(forward), read_flow(backward), p);
      io::save_mask(output, m);
      std::cout << "visible_fraction = " << io::format_number(static_cast<double>(m.count()) / (m.height() * m.width()))
                << '\n';
    } else if (mtf->parsed()) {
      ImageTensor im = io::load_image(input);
      if (!roi.empty()) im = im.crop(roi[1], roi[0], roi[3], roi[2]);
      metrics::MtfOptions o;
      o.orientation = orientation == "vertical"     ? metrics::EdgeOrientation::kVertical
                      : orientation == "horizontal" ? metrics::EdgeOrientation::kHorizontal
                                                    : metrics::EdgeOrientation::kAuto;
      o.picture_height = picture_height;
      const auto c = metrics::mtf_slanted_edge(im, o);
      print({{"edge_angle_deg", io::format_number(c.edge_angle_deg)},
             {"mtf50", io::format_number(c.mtf50)},
             {"mtf20", io::format_number(c.mtf20)},
             {"mtf50_lwph", io::format_number(c.mtf50_lwph)},
             {"mtf20_lwph", io::format_number(c.mtf20_lwph)}});
    } else if (report->parsed()) {
      const fs::path p = metrics_file.empty() ? pipe::stage_dir(cfg, pipe::Stage::kEval) / "metrics.txt"
                                              : fs::path(metrics_file);
      std::cout << pipe::render_report(io::read_key_values(p));
    }
  } catch (const pipe::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
