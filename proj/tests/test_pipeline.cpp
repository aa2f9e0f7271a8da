#include <gtest/gtest.h>

#include <fstream>
#include <iterator>
#include <unistd.h>

#include "alignformer/pipeline.hpp"

namespace fs = std::filesystem;
using namespace af;
using pipe::PipelineConfig;
using pipe::Stage;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("af_pipeline_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  return p;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

PipelineConfig tiny(const fs::path& out) {
  PipelineConfig c = pipe::desk_preset();
  c.paths.out = out.string();
  c.dataset.scenes = 5;
  c.dataset.train_scenes = 3;
  c.dataset.patch_size = 32;
  c.dataset.residual_amplitude = 1.5;
  c.features.widths = {8, 8, 8, 8};
  c.dam.network = {8, 8};
  c.alignformer.network.channels = {8, 8};
  c.alignformer.network.radius = 1;
  c.restoration.network.widths = {8, 8, 8, 8};
  c.restoration.network.ppm_bins = {1, 2, 4};
  c.restoration.network.discriminator_widths = {8, 8};
  for (auto* t : {&c.dam.training, &c.alignformer.training, &c.restoration.training}) {
    t->iterations = 4;
    t->batch_size = 2;
  }
  c.evaluation.mtf = false;
  return c;
}

/// One tiny run shared by the stage tests.
class TinyRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    cfg_ = new PipelineConfig(tiny(scratch("shared")));
    pipe::gen_data(*cfg_);
    dam_ = new pipe::StageResult(pipe::train_dam(*cfg_));
    align_ = new pipe::StageResult(pipe::train_alignformer(*cfg_));
    pseudo_ = new pipe::StageResult(pipe::gen_pseudo(*cfg_));
    restore_ = new pipe::StageResult(pipe::train_restoration(*cfg_));
    eval_ = new io::KeyValues(pipe::evaluate(*cfg_));
  }
  static void TearDownTestSuite() {
    delete cfg_;
    delete dam_;
    delete align_;
    delete pseudo_;
    delete restore_;
    delete eval_;
  }
  static PipelineConfig* cfg_;
  static pipe::StageResult *dam_, *align_, *pseudo_, *restore_;
  static io::KeyValues* eval_;
};

PipelineConfig* TinyRun::cfg_ = nullptr;
pipe::StageResult* TinyRun::dam_ = nullptr;
pipe::StageResult* TinyRun::align_ = nullptr;
pipe::StageResult* TinyRun::pseudo_ = nullptr;
pipe::StageResult* TinyRun::restore_ = nullptr;
io::KeyValues* TinyRun::eval_ = nullptr;

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

TEST(Config, DefaultsValidateAndMatchOptimizerConstants) {
  const PipelineConfig c;
  EXPECT_NO_THROW(c.validate());
  for (const auto* t : {&c.dam.training, &c.alignformer.training, &c.restoration.training}) {
    EXPECT_EQ(t->adam.beta1, 0.9);
    EXPECT_EQ(t->adam.beta2, 0.999);
    EXPECT_EQ(t->adam.epsilon, 1e-8);
    EXPECT_EQ(t->batch_size, 4);
  }
  EXPECT_EQ(c.dataset.scenes, 32);
  EXPECT_EQ(c.dataset.train_scenes, 24);
  EXPECT_EQ(c.dataset.patch_size, 64);
  EXPECT_EQ(c.dam.training.iterations, 500);
  EXPECT_EQ(c.alignformer.training.iterations, 1000);
  EXPECT_EQ(c.restoration.training.iterations, 2000);
  EXPECT_EQ(c.restoration.loss.lambda_1, 1e-2);
  EXPECT_EQ(c.restoration.loss.lambda_vgg, 1.0);
  EXPECT_EQ(c.restoration.loss.lambda_gan, 5e-3);
  EXPECT_NE(c.flow.occ_alpha, 0.0);
  EXPECT_NE(c.evaluation.pck_alpha.size(), 0u);
}

TEST(Config, PaperScalePreset) {
  const PipelineConfig c = pipe::preset("paper-scale");
  for (const auto* t : {&c.dam.training, &c.alignformer.training, &c.restoration.training}) {
    EXPECT_EQ(t->batch_size, 8);
    EXPECT_EQ(t->iterations, 320000);
    EXPECT_EQ(t->adam.milestones, (std::vector<std::int64_t>{250000, 300000}));
    EXPECT_EQ(t->adam.gamma, 0.5);
  }
  EXPECT_EQ(c.dataset.patch_size, 512);
  EXPECT_NE(c.notes.find("assumption"), std::string::npos);
  EXPECT_THROW(pipe::preset("huge"), pipe::ConfigError);
}

TEST(Config, JsonRoundTripIsLossless) {
  for (const auto& name : pipe::preset_names()) {
    PipelineConfig c = pipe::preset(name);
    c.alignformer.training.adam.lr = 0.1 + 0.2;  // not representable in short decimal
    c.seed = 18446744073709551557ull;
    const auto j = pipe::to_json(c);
    const PipelineConfig back = pipe::config_from_json(nlohmann::json::parse(j.dump()));
    EXPECT_EQ(pipe::to_json(back).dump(), j.dump()) << name;
    EXPECT_EQ(back.alignformer.training.adam.lr, 0.1 + 0.2);
    EXPECT_EQ(back.seed, c.seed);
  }
  const fs::path p = scratch("config") / "c.json";
  const PipelineConfig c = pipe::preset("radius-ablation");
  pipe::save_config(p, c);
  EXPECT_EQ(pipe::to_json(pipe::resolve_config_file(p)).dump(), pipe::to_json(c).dump());
}

TEST(Config, PartialDocumentsOverlayTheirPreset) {
  const auto c = pipe::resolve_config(nlohmann::json::parse(R"({"preset": "paper-scale", "seed": 7})"));
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.dataset.patch_size, 512);
  const auto d = pipe::resolve_config(nlohmann::json::parse(R"({"flow": {"provider": "zero"}})"));
  EXPECT_EQ(d.flow.provider, "zero");
  EXPECT_EQ(d.preset, "desk");
}

TEST(Config, RejectsBadDocuments) {
  auto bad = [](const char* text) { return pipe::resolve_config(nlohmann::json::parse(text)); };
  EXPECT_THROW(bad(R"({"bogus": 1})"), pipe::ConfigError);
  EXPECT_THROW(bad(R"({"dataset": {"scenes": "many"}})"), pipe::ConfigError);
  EXPECT_THROW(bad(R"({"dataset": {"scenes": 4.5}})"), pipe::ConfigError);
  EXPECT_THROW(bad(R"({"seed": -1})"), pipe::ConfigError);
  EXPECT_THROW(bad(R"({"dataset": {"train_scenes": 32}})"), pipe::ConfigError);
  EXPECT_THROW(bad(R"({"dataset": {"patch_size": 60}})"), pipe::ConfigError);
  EXPECT_THROW(bad(R"({"dam": {"training": {"adam": {"lr": 0}}}})"), pipe::ConfigError);
  EXPECT_THROW(bad(R"({"dam": {"training": {"adam": {"beta2": 1.0}}}})"), pipe::ConfigError);
  EXPECT_THROW(bad(R"({"device": "gpu"})"), pipe::ConfigError);
  EXPECT_THROW(bad(R"({"flow": {"provider": "raft"}})"), std::invalid_argument);
  EXPECT_THROW(bad(R"({"alignformer": {"cx": {"center": "median"}}})"), std::invalid_argument);
  EXPECT_THROW(bad(R"({"restoration": {"network": {"ppm_bins": [2, 1]}}})"), std::invalid_argument);
}

TEST(Config, PckAndOcclusionAlphasAreSeparateKeys) {
  const auto j = pipe::to_json(PipelineConfig{});
  EXPECT_TRUE(j.at("flow").contains("occ_alpha"));
  EXPECT_TRUE(j.at("evaluation").contains("pck_alpha"));
  auto c = pipe::resolve_config(nlohmann::json::parse(R"({"flow": {"occ_alpha": 0.3}})"));
  EXPECT_EQ(c.flow.occ_alpha, 0.3);
  EXPECT_EQ(c.evaluation.pck_alpha, PipelineConfig{}.evaluation.pck_alpha);
}

namespace {

void expect_schema_covers(const nlohmann::json& value, const nlohmann::json& schema, const std::string& where) {
  const std::string type = schema.at("type");
  if (type == "object") {
    ASSERT_TRUE(value.is_object()) << where;
    EXPECT_FALSE(schema.at("additionalProperties").get<bool>()) << where;
    for (const auto& [k, v] : value.items()) {
      ASSERT_TRUE(schema.at("properties").contains(k)) << where << "." << k;
      expect_schema_covers(v, schema.at("properties").at(k), where + "." + k);
    }
    EXPECT_EQ(schema.at("properties").size(), value.size()) << where;
  } else if (type == "array") {
    ASSERT_TRUE(value.is_array()) << where;
    for (const auto& e : value) expect_schema_covers(e, schema.at("items"), where + "[]");
  } else if (type == "integer") {
    EXPECT_TRUE(value.is_number_integer()) << where;
  } else if (type == "number") {
    EXPECT_TRUE(value.is_number()) << where;
  } else if (type == "boolean") {
    EXPECT_TRUE(value.is_boolean()) << where;
  } else {
    EXPECT_TRUE(value.is_string()) << where;
  }
}

}  // namespace

TEST(Config, PublishedSchemaIsCurrentAndDescribesEveryPreset) {
  std::ifstream is(fs::path(AF_SOURCE_DIR) / "schema" / "pipeline_config.schema.json");
  ASSERT_TRUE(is) << "schema file missing";
  const auto published = nlohmann::json::parse(is);
  EXPECT_EQ(published, pipe::config_schema());
  for (const auto& name : pipe::preset_names()) expect_schema_covers(pipe::to_json(pipe::preset(name)), published, name);
}

TEST(Config, HashIgnoresLocationButNotContent) {
  PipelineConfig a, b;
  b.paths.out = "/elsewhere";
  b.device = "accelerator";
  EXPECT_EQ(pipe::config_hash(a), pipe::config_hash(b));
  b.seed = 2;
  EXPECT_NE(pipe::config_hash(a), pipe::config_hash(b));
}

TEST(Config, StageDirectoriesResolveAgainstOut) {
  PipelineConfig c;
  c.paths.out = "/tmp/r";
  c.paths.pseudo = "/abs/pseudo";
  EXPECT_EQ(pipe::stage_dir(c, Stage::kDam), fs::path("/tmp/r/dam"));
  EXPECT_EQ(pipe::stage_dir(c, Stage::kPseudo), fs::path("/abs/pseudo"));
}

// ---------------------------------------------------------------------------
// Plumbing

TEST(Batches, DeterministicDistinctInRange) {
  for (std::int64_t it : {0, 1, 17, 999}) {
    const auto a = pipe::batch_indices(5, it, 24, 4);
    EXPECT_EQ(a, pipe::batch_indices(5, it, 24, 4));
    EXPECT_EQ(a.size(), 4u);
    std::set<int> s(a.begin(), a.end());
    EXPECT_EQ(s.size(), 4u);
    for (int i : a) EXPECT_TRUE(i >= 0 && i < 24);
  }
  EXPECT_NE(pipe::batch_indices(5, 0, 24, 4), pipe::batch_indices(5, 1, 24, 4));
  EXPECT_NE(pipe::batch_indices(5, 0, 24, 4), pipe::batch_indices(6, 0, 24, 4));
  EXPECT_EQ(pipe::batch_indices(1, 3, 3, 7).size(), 7u);  // batch larger than the pool
}

TEST(Checkpoint, AdamStateRoundTripsBitwise) {
  auto w = dam::DamWeights<float>::build({8, 8}, 3);
  nn::Adam<float> adam(w.params, {});
  for (const auto& [n, v] : w.params.entries()) {
    v.node()->grad = Tensor<float>(v.shape(), 0.25f);
  }
  adam.step();
  io::Checkpoint ck;
  pipe::put_params(ck, "param.", w.params);
  pipe::put_adam(ck, "", w.params, adam);
  const fs::path p = scratch("ckpt") / "a.afck";
  fs::create_directories(p.parent_path());
  io::save_checkpoint(p, ck);
  const io::Checkpoint back = io::load_checkpoint(p);
  EXPECT_EQ(back, ck);
  auto w2 = dam::DamWeights<float>::build({8, 8}, 99);
  nn::Adam<float> adam2(w2.params, {});
  pipe::get_params(back, "param.", w2.params);
  pipe::get_adam(back, "", w2.params, adam2);
  EXPECT_EQ(pipe::params_hash(w2.params), pipe::params_hash(w.params));
  EXPECT_EQ(adam2.step_count(), 1);
  EXPECT_EQ(adam2.first_moments(), adam.first_moments());
  EXPECT_EQ(adam2.second_moments(), adam.second_moments());
  auto wrong = dam::DamWeights<float>::build({16, 8}, 1);
  EXPECT_THROW(pipe::get_params(back, "param.", wrong.params), std::runtime_error);
}

TEST(Flip, InvolutionAndMaskConsistency) {
  const ImageTensor im = data::procedural_texture(16, 24, 2);
  EXPECT_EQ(pipe::detail::flip(pipe::detail::flip(im, true, true), true, true), im);
  EXPECT_EQ(pipe::detail::flip(im, true, false).at(3, 0, 1), im.at(3, 23, 1));
  BinaryMask m(16, 24, 0);
  m.at(2, 5) = 1;
  EXPECT_EQ(pipe::detail::flip(m, false, true).at(13, 5), 1);
}

// ---------------------------------------------------------------------------
// Stages

TEST_F(TinyRun, DataStoreMatchesInMemorySynthesis) {
  const auto ds = pipe::load_dataset(*cfg_);
  EXPECT_EQ(ds.size(), 5);
  EXPECT_EQ(ds.train_indices(), (std::vector<int>{0, 1, 2}));
  EXPECT_EQ(ds.test_indices(), (std::vector<int>{3, 4}));
  const auto mem = pipe::synthesize(cfg_->dataset);
  for (int i = 0; i < 5; ++i) {
    EXPECT_EQ(ds.scenes[i].seed, mem[i].seed);
    EXPECT_EQ(ds.scenes[i].gt_flow, mem[i].gt_flow);
    EXPECT_GT(metrics::psnr(ds.scenes[i].degraded, mem[i].degraded), 90.0);  // 16-bit PNG quantization only
  }
}

TEST_F(TinyRun, EveryRunDirectoryHoldsItsResolvedConfig) {
  for (Stage s : {Stage::kData, Stage::kDam, Stage::kAlign, Stage::kPseudo, Stage::kRestore, Stage::kEval}) {
    const fs::path p = pipe::stage_dir(*cfg_, s) / "config.json";
    ASSERT_TRUE(fs::exists(p)) << p;
    EXPECT_EQ(pipe::to_json(pipe::resolve_config_file(p)), pipe::to_json(*cfg_));
  }
}

TEST_F(TinyRun, DamCheckpointLoadsAndLogsEveryIteration) {
  EXPECT_EQ(dam_->losses.size(), 4u);
  const io::Checkpoint ck = io::load_checkpoint(dam_->checkpoint);
  EXPECT_EQ(ck.meta.at("stage"), "dam");
  EXPECT_EQ(ck.meta.at("iteration"), "4");
  EXPECT_EQ(ck.meta.at("config_hash"), pipe::config_hash(*cfg_));
  EXPECT_EQ(pipe::decode_log(ck.meta.at("loss_log")), dam_->losses);
  const auto log = io::read_key_values(pipe::stage_dir(*cfg_, Stage::kDam) / "losses.txt");
  EXPECT_EQ(log.size(), 4u);
  EXPECT_EQ(std::stod(log.at("iter.0000004")), dam_->losses.back());
  EXPECT_NO_THROW(pipe::load_dam(*cfg_, dam_->checkpoint));
}

TEST_F(TinyRun, FrozenDamHashUnchanged) {
  const auto& m = align_->metrics;
  EXPECT_EQ(m.at("dam_hash.before"), m.at("dam_hash.after"));
  EXPECT_EQ(m.at("dam_hash.before"), m.at("dam_hash.file_after"));
  EXPECT_EQ(m.at("dam_hash.before"), dam_->metrics.at("dam_hash"));
  EXPECT_EQ(io::load_checkpoint(align_->checkpoint).meta.at("dam_hash"), dam_->metrics.at("dam_hash"));
}

TEST_F(TinyRun, PseudoStoreCountMasksAndProvenance) {
  const fs::path dir = pipe::stage_dir(*cfg_, Stage::kPseudo);
  EXPECT_EQ(pseudo_->metrics.at("pairs"), "5");
  int found = 0;
  for (const auto& e : fs::directory_iterator(dir)) found += e.is_directory() ? 1 : 0;
  EXPECT_EQ(found, 5);
  for (int i = 0; i < 5; ++i) {
    const fs::path sd = dir / pipe::scene_name(i);
    const BinaryMask stored = io::load_mask(sd / "mask.png");
    const BinaryMask again = occlusion_mask(read_flow(sd / "flow_fw.flo"), read_flow(sd / "flow_bw.flo"),
                                            {cfg_->flow.occ_alpha, cfg_->flow.occ_beta});
    EXPECT_EQ(stored, again) << i;
    const auto prov = io::read_key_values(sd / "provenance.txt");
    EXPECT_EQ(prov.at("flow_provider"), "oracle");
    EXPECT_EQ(prov.at("split"), i < 3 ? "train" : "test");
    EXPECT_EQ(prov.at("dam_hash"), dam_->metrics.at("dam_hash"));
    EXPECT_EQ(io::load_image(sd / "pseudo.png").height(), 32);
  }
}

TEST_F(TinyRun, EvaluationReproducesTrainingMetricAndParsesBack) {
  EXPECT_NEAR(std::stod(eval_->at("train.masked_l1")), std::stod(restore_->metrics.at("train.masked_l1")), 1e-6);
  const auto back = io::read_key_values(pipe::stage_dir(*cfg_, Stage::kEval) / "metrics.txt");
  EXPECT_EQ(back, *eval_);
  EXPECT_EQ(eval_->at("test.scenes"), "2");
  for (const char* k : {"test.restored.psnr", "test.identity.psnr", "test.restored.ssim", "test.restored.cd_l",
                        "pck.reference@0.03", "pck.pseudo@0.03", "ablation.flow.zero.pck@0.03"}) {
    EXPECT_TRUE(eval_->contains(k)) << k;
  }
  EXPECT_EQ(pipe::ablation_rows(*eval_, "flow"), 2u);
  EXPECT_EQ(pipe::ablation_rows(*eval_, "radius"), 0u);
  const std::string text = pipe::render_report(back);
  EXPECT_NE(text.find("PCK@0.03"), std::string::npos);
  EXPECT_NE(text.find("Ablation: flow provider"), std::string::npos);
}

TEST_F(TinyRun, RadiusAblationPresetEmitsThreeRows) {
  PipelineConfig c = *cfg_;
  c.preset = "radius-ablation";
  c.evaluation.ablation_radius = pipe::radius_ablation_preset().evaluation.ablation_radius;
  c.paths.evaluation = "evaluation_radius";
  const auto kv = pipe::evaluate(c);
  EXPECT_EQ(pipe::ablation_rows(kv, "radius"), 3u);
  for (int r : {0, 1, 2}) EXPECT_TRUE(kv.contains("ablation.radius." + std::to_string(r) + ".pck@0.1")) << r;
  const std::string text = pipe::render_report(kv);
  EXPECT_NE(text.find("Ablation: attention radius"), std::string::npos);
}

TEST_F(TinyRun, RerunReproducesCheckpointsBitExactly) {
  PipelineConfig c = *cfg_;
  c.paths.dam = "dam_rerun";
  c.paths.alignformer = "align_rerun";
  c.paths.restoration = "restore_rerun";
  const auto d = pipe::train_dam(c);
  EXPECT_EQ(pipe::fnv1a(file_bytes(d.checkpoint)), pipe::fnv1a(file_bytes(dam_->checkpoint)));
  const auto r = pipe::train_restoration(c);
  EXPECT_EQ(pipe::fnv1a(file_bytes(r.checkpoint)), pipe::fnv1a(file_bytes(restore_->checkpoint)));
  c.seed = 2;
  c.paths.dam = "dam_seed2";
  EXPECT_NE(pipe::fnv1a(file_bytes(pipe::train_dam(c).checkpoint)), pipe::fnv1a(file_bytes(dam_->checkpoint)));
}

TEST_F(TinyRun, ResumeContinuesTheIdenticalCurve) {
  PipelineConfig half = *cfg_;
  half.dam.training.iterations = 2;
  half.paths.dam = "dam_half";
  const auto first = pipe::train_dam(half);
  PipelineConfig rest = *cfg_;
  rest.paths.dam = "dam_resumed";
  const auto resumed = pipe::train_dam(rest, first.checkpoint);
  EXPECT_EQ(resumed.losses, dam_->losses);
  EXPECT_EQ(io::load_checkpoint(resumed.checkpoint), io::load_checkpoint(dam_->checkpoint));

  PipelineConfig rhalf = *cfg_;
  rhalf.restoration.training.iterations = 2;
  rhalf.paths.restoration = "restore_half";
  const auto rfirst = pipe::train_restoration(rhalf);
  PipelineConfig rrest = *cfg_;
  rrest.paths.restoration = "restore_resumed";
  const auto rresumed = pipe::train_restoration(rrest, rfirst.checkpoint);
  EXPECT_EQ(rresumed.losses, restore_->losses);
  EXPECT_EQ(pipe::fnv1a(file_bytes(rresumed.checkpoint)), pipe::fnv1a(file_bytes(restore_->checkpoint)));
}

TEST_F(TinyRun, CheckpointScheduleRespected) {
  PipelineConfig c = *cfg_;
  c.paths.dam = "dam_schedule";
  c.dam.training.checkpoint_every = 2;
  c.dam.training.iterations = 5;
  pipe::train_dam(c);
  const fs::path dir = pipe::stage_dir(c, Stage::kDam);
  EXPECT_TRUE(fs::exists(pipe::periodic_checkpoint(dir, 2)));
  EXPECT_TRUE(fs::exists(pipe::periodic_checkpoint(dir, 4)));
  EXPECT_FALSE(fs::exists(pipe::periodic_checkpoint(dir, 5)));
  EXPECT_EQ(io::load_checkpoint(pipe::periodic_checkpoint(dir, 4)).meta.at("iteration"), "4");
  EXPECT_EQ(io::load_checkpoint(pipe::final_checkpoint(dir)).meta.at("iteration"), "5");
}

TEST_F(TinyRun, ZeroGanWeightMatchesNoDiscriminator) {
  PipelineConfig a = *cfg_;
  a.restoration.loss.lambda_gan = 0;
  a.paths.restoration = "restore_gan0";
  PipelineConfig b = *cfg_;
  b.restoration.network.discriminator = false;
  b.paths.restoration = "restore_nodisc";
  pipe::RestorationLog la, lb;
  const auto ra = pipe::train_restoration(a, {}, &la);
  const auto rb = pipe::train_restoration(b, {}, &lb);
  EXPECT_EQ(ra.losses, rb.losses);
  EXPECT_EQ(la.l1, lb.l1);
  EXPECT_EQ(la.perceptual, lb.perceptual);
  EXPECT_EQ(pipe::params_hash(pipe::load_restorer(a, ra.checkpoint).params),
            pipe::params_hash(pipe::load_restorer(b, rb.checkpoint).params));
  // The discriminator still trains alongside when its weight is zero.
  for (double d : la.discriminator) EXPECT_GT(d, 0);
}

TEST_F(TinyRun, AlignformerRequiresDamCheckpoint) {
  PipelineConfig c = *cfg_;
  c.paths.dam = "missing_dam";
  c.paths.alignformer = "align_orphan";
  EXPECT_THROW(pipe::train_alignformer(c), std::runtime_error);
}

TEST_F(TinyRun, GenPseudoRejectsForeignDam) {
  PipelineConfig c = *cfg_;
  c.seed = 11;
  c.paths.dam = "dam_other";
  c.paths.pseudo = "pseudo_other";
  pipe::train_dam(c);
  EXPECT_THROW(pipe::gen_pseudo(c), std::runtime_error);
}

TEST_F(TinyRun, AcceleratorDeviceIsRejected) {
  PipelineConfig c = *cfg_;
  c.device = "accelerator";
  c.paths.dam = "dam_accel";
  EXPECT_THROW(pipe::train_dam(c), std::runtime_error);
}

TEST(Stages, MissingDatasetIsAnError) {
  PipelineConfig c = tiny(scratch("empty"));
  EXPECT_THROW(pipe::train_dam(c), std::runtime_error);
}
