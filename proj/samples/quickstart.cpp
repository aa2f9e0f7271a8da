// Runs every pipeline stage on a shrunken desk configuration and prints the report,
// then touches the lower-level API on a single synthetic scene.
#include <iostream>

#include "alignformer/alignformer.hpp"

using namespace af;

int main(int argc, char** argv) {
  pipe::PipelineConfig cfg = pipe::desk_preset();
  cfg.paths.out = argc > 1 ? argv[1] : "quickstart_run";
  cfg.dataset.scenes = 6;
  cfg.dataset.train_scenes = 4;
  for (auto* t : {&cfg.dam.training, &cfg.alignformer.training, &cfg.restoration.training}) {
    t->iterations = 10;
    t->batch_size = 2;
  }
  cfg.evaluation.mtf = false;

  pipe::gen_data(cfg);
  const auto dam = pipe::train_dam(cfg);
  const auto align = pipe::train_alignformer(cfg);
  pipe::gen_pseudo(cfg);
  pipe::train_restoration(cfg);
  const auto kv = pipe::evaluate(cfg);
  std::cout << "DAM loss " << dam.metrics.at("loss.first") << " -> " << dam.metrics.at("loss.last") << '\n';
  std::cout << "AlignFormer loss " << align.metrics.at("loss.first") << " -> " << align.metrics.at("loss.last") << '\n';
  std::cout << pipe::render_report(kv);

  // One scene by hand: oracle flows, occlusion mask, warped reference.
  const data::ScenePair s = data::make_synthetic_scene({}, 7);
  const BinaryMask visible = occlusion_mask(*s.gt_flow, *s.gt_flow_backward, {cfg.flow.occ_alpha, cfg.flow.occ_beta});
  const ImageTensor warped = warp_image(s.reference, *s.gt_flow);
  std::cout << "visible fraction " << static_cast<double>(visible.count()) / (visible.height() * visible.width())
            << ", PSNR(warped reference, clean degraded) " << metrics::psnr(warped, *s.clean_degraded) << " dB\n";
}
