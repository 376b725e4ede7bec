#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "ila/attacks.hpp"
#include "ila/harness.hpp"
#include "oracles.hpp"

using namespace ila::harness;
using ila::attacks::AdversarialBatch;
using ila::attacks::AttackConfig;
using ila::engine::Tensor;
using ila::models::Arch;
using ila::models::Model;
using ila::models::ModelSpec;
using oracle::random_tensor;

namespace fs = std::filesystem;

namespace {

Model<float> small_model(Arch a, std::uint64_t seed, int classes = 10) {
  ModelSpec s;
  s.arch = a;
  s.width_multiplier = 0.25f;
  s.num_classes = classes;
  auto m = ila::models::build_model(s, seed);
  m.freeze();
  return m;
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("ila_harness_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<int> labels_of(std::size_t n) {
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<int>(i % 10);
  return y;
}

// Independent accuracy count: argmax of raw logits, image by image.
double oracle_accuracy(const Model<float>& m, const Tensor<float>& x, const std::vector<int>& y) {
  int ok = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const auto z = m.predict_logits(x.slice_rows(i, i + 1));
    int best = 0;
    for (int k = 1; k < static_cast<int>(z.numel()); ++k)
      if (z[static_cast<std::size_t>(k)] > z[static_cast<std::size_t>(best)]) best = k;
    ok += best == y[i];
  }
  return 100.0 * ok / static_cast<double>(y.size());
}

}  // namespace

TEST(Sha256, KnownAnswer) {
  const std::string abc = "abc";
  EXPECT_EQ(Sha256().update(abc.data(), abc.size()).hex(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(Sha256().hex(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST(BatchFile, RoundTripIsLossless) {
  const auto m = small_model(Arch::kMiniCnn, 1);
  const auto x = random_tensor<float>({3, 3, 32, 32}, 2, 0, 1);
  AttackConfig cfg;
  cfg.n_iters = 2;
  auto b = ila::attacks::ifgsm(m, x, labels_of(3), cfg);
  b.loss_trajectory = {1.5, -2.25};
  b.degenerate = {0, 1, 0};
  const auto dir = scratch("batch");
  save_batch(b, dir / "b.ilab");
  const auto r = load_batch<float>(dir / "b.ilab");
  EXPECT_EQ(r.originals, b.originals);
  EXPECT_EQ(r.adversarials, b.adversarials);
  EXPECT_EQ(r.labels, b.labels);
  EXPECT_EQ(r.pred_clean, b.pred_clean);
  EXPECT_EQ(r.pred_adv, b.pred_adv);
  EXPECT_EQ(r.degenerate, b.degenerate);
  EXPECT_EQ(r.loss_trajectory, b.loss_trajectory);
  EXPECT_EQ(r.config, b.config);
  EXPECT_EQ(r.attack, "ifgsm");
  EXPECT_EQ(encode_batch(r), encode_batch(b));
  // Header (4+4+1+16) + strings + config + per-image fields + two tensors.
  const std::size_t expected = 25 + (2 + 5) + (2 + 8) + 4 + b.config.dump().size() + 3 * 13 +
                               4 + 2 * 8 + 2 * 3 * 3072 * 4;
  EXPECT_EQ(fs::file_size(dir / "b.ilab"), expected);
}

TEST(BatchFile, WideValuesRoundTripAndHashAgrees) {
  const auto m = small_model(Arch::kMiniCnn, 1).cast<double>();
  const auto x = random_tensor<float>({2, 3, 32, 32}, 3, 0, 1);
  auto b = ila::attacks::fgsm(m, x.cast<double>(), labels_of(2), {});
  const auto bytes = encode_batch(b);
  EXPECT_EQ(bytes[8], 8);
  const auto r = decode_batch<double>(bytes);
  EXPECT_EQ(r.adversarials, b.adversarials);
  EXPECT_EQ(originals_hash(b), originals_hash(x, labels_of(2)));
}

TEST(BatchFile, CorruptionReportsOffset) {
  const auto m = small_model(Arch::kMiniCnn, 1);
  auto b = ila::attacks::fgsm(m, random_tensor<float>({1, 3, 32, 32}, 4, 0, 1), labels_of(1), {});
  auto bytes = encode_batch(b);
  auto bad = bytes;
  bad[0] = 'X';
  try {
    decode_batch<float>(bad);
    FAIL();
  } catch (const ila::FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
  bad = bytes;
  bad[8] = 3;
  try {
    decode_batch<float>(bad);
    FAIL();
  } catch (const ila::FormatError& e) {
    EXPECT_EQ(e.offset(), 8u);
  }
  bytes.resize(bytes.size() - 1);
  EXPECT_THROW(decode_batch<float>(bytes), ila::FormatError);
}

TEST(OriginalsHash, DetectsChangedPixel) {
  auto x = random_tensor<float>({2, 3, 32, 32}, 5, 0, 1);
  const auto h = originals_hash(x, labels_of(2));
  x[100] += 1e-3f;
  EXPECT_NE(originals_hash(x, labels_of(2)), h);
}

TEST(Manifest, JsonRoundTripAndStableId) {
  ExperimentManifest m;
  m.command = "attack";
  m.seed = 7;
  m.options = {{"attack", "ifgsm"}, {"n_iters", 20}};
  m.run_id = make_run_id(m.command, m.options);
  m.inputs["model"] = "a.ilam";
  m.hashes["model"] = "abc";
  m.outputs["batch"] = "batch.ilab";
  m.created_at = utc_timestamp();
  const auto dir = scratch("manifest");
  save_manifest(m, dir / "manifest.json");
  const auto r = load_manifest(dir / "manifest.json");
  EXPECT_EQ(nlohmann::json(r), nlohmann::json(m));
  EXPECT_EQ(make_run_id("attack", m.options), m.run_id);
  EXPECT_NE(make_run_id("attack", {{"n_iters", 10}}), m.run_id);
}

TEST(DatasetSpec, SlicesAreConsistent) {
  DatasetSpec s;
  s.count = 30;
  const auto full = load_dataset(s);
  s.offset = 10;
  s.count = 5;
  const auto part = load_dataset(s);
  // The slice is generated from the same prefix-independent stream only if
  // offset + count images are drawn; compare against the 15-image prefix.
  DatasetSpec p;
  p.count = 15;
  EXPECT_EQ(part.images, load_dataset(p).slice(10, 15).images);
  EXPECT_EQ(full.size(), 30u);
  DatasetSpec t = p;
  t.split = "train";
  EXPECT_FALSE(load_dataset(t).images == load_dataset(p).images);
  DatasetSpec bad;
  bad.kind = "imagenet";
  EXPECT_THROW(load_dataset(bad), ila::ConfigError);
  bad.kind = "cifar10";
  EXPECT_THROW(load_dataset(bad), ila::ConfigError);
}

TEST(Training, ScheduleValues) {
  TrainConfig c;
  c.epochs = 4;
  c.lr = 0.1;
  EXPECT_DOUBLE_EQ(c.lr_at(0), 0.1);
  EXPECT_NEAR(c.lr_at(2), 0.05, 1e-12);
  c.schedule = "step";
  EXPECT_DOUBLE_EQ(c.lr_at(1), 0.1);
  EXPECT_NEAR(c.lr_at(2), 0.01, 1e-12);
  EXPECT_NEAR(c.lr_at(3), 0.001, 1e-12);
  c.schedule = "linear";
  EXPECT_THROW(c.validate(), ila::ConfigError);
}

TEST(Training, FixedSeedRerunGivesIdenticalParameters) {
  DatasetSpec d;
  d.split = "train";
  d.count = 64;
  const auto train = load_dataset(d);
  d.split = "test";
  d.count = 32;
  const auto test = load_dataset(d);
  ModelSpec s;
  s.arch = Arch::kMiniVgg;
  s.width_multiplier = 0.25f;
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 16;
  c.seed = 3;
  const auto a = train_model(s, 1, train, test, c);
  const auto b = train_model(s, 1, train, test, c);
  ASSERT_EQ(a.log.size(), 2u);
  EXPECT_TRUE(a.model.frozen());
  for (std::size_t i = 0; i < a.model.parameters().size(); ++i)
    EXPECT_EQ(a.model.parameters()[i].value, b.model.parameters()[i].value);
  EXPECT_EQ(training_log_csv(a.log), training_log_csv(b.log));
  EXPECT_EQ(training_log_csv(a.log).rfind("epoch,lr,train_loss,train_accuracy,test_accuracy\n", 0),
            0u);
}

TEST(Training, DivergenceKeepsLastGoodCheckpoint) {
  DatasetSpec d;
  d.split = "train";
  d.count = 32;
  const auto train = load_dataset(d);
  ModelSpec s;
  s.arch = Arch::kMiniCnn;
  s.width_multiplier = 0.25f;
  TrainConfig c;
  c.epochs = 6;
  c.batch_size = 16;
  c.lr = 1e12;
  c.momentum = 0;
  c.schedule = "constant";
  const auto dir = scratch("diverge");
  try {
    train_model(s, 1, train, train, c, dir / "ckpt.ilam");
    FAIL() << "expected divergence";
  } catch (const TrainingDiverged<float>& e) {
    EXPECT_EQ(e.code(), ila::ExitCode::kNumeric);
    for (const auto& p : e.last_good().parameters()) EXPECT_TRUE(p.value.all_finite());
    if (!e.log().empty()) {
      const auto ck = ila::models::load_model(dir / "ckpt.ilam");
      for (const auto& p : ck.parameters()) EXPECT_TRUE(p.value.all_finite());
    }
  }
}

TEST(Transfer, CleanBatchReproducesCleanAccuracy) {
  const auto src = small_model(Arch::kMiniCnn, 10);
  const auto tgt = small_model(Arch::kMiniVgg, 11);
  const auto x = random_tensor<float>({20, 3, 32, 32}, 12, 0, 1);
  const auto y = labels_of(20);
  AttackConfig zero;
  auto clean = ila::attacks::ifgsm(src, x, y, zero);
  clean.adversarials = x;
  clean.pred_adv = clean.pred_clean;
  const auto rep = transfer_matrix<float>({&clean}, {{"src", &src}, {"tgt", &tgt}});
  EXPECT_DOUBLE_EQ(*rep.find("clean", "src"), *rep.find("ifgsm", "src"));
  EXPECT_DOUBLE_EQ(*rep.find("clean", "tgt"), *rep.find("ifgsm", "tgt"));
  EXPECT_NEAR(*rep.find("clean", "tgt"), oracle_accuracy(tgt, x, y), 1e-9);
}

TEST(Transfer, SourceTargetMatchesRecordedFoolingRate) {
  const auto src = small_model(Arch::kMiniResnet, 13);
  const auto x = random_tensor<float>({12, 3, 32, 32}, 14, 0, 1);
  const auto y = labels_of(12);
  AttackConfig cfg;
  cfg.n_iters = 3;
  const auto b = ila::attacks::ifgsm(src, x, y, cfg);
  const auto rep = transfer_matrix<float>({&b}, {{"src", &src}});
  EXPECT_NEAR(*rep.find("ifgsm", "src"), b.source_accuracy(), 1e-9);
  EXPECT_NEAR(*rep.find("ifgsm", "src"), oracle_accuracy(src, b.adversarials, y), 1e-9);
}

TEST(Transfer, AllFooledBatchGivesZeroRow) {
  const auto src = small_model(Arch::kMiniCnn, 15);
  const auto x = random_tensor<float>({10, 3, 32, 32}, 16, 0, 1);
  auto b = ila::attacks::fgsm(src, x, labels_of(10), {});
  // Relabel so that every source prediction on the adversarials is wrong.
  for (std::size_t i = 0; i < b.size(); ++i) b.labels[i] = (b.pred_adv[i] + 1) % 10;
  const auto rep = transfer_matrix<float>({&b}, {{"src", &src}});
  EXPECT_EQ(*rep.find("fgsm", "src"), 0.0);
}

TEST(Transfer, MismatchErrors) {
  const auto a = small_model(Arch::kMiniCnn, 17);
  const auto c5 = small_model(Arch::kMiniCnn, 18, 5);
  const auto x = random_tensor<float>({4, 3, 32, 32}, 19, 0, 1);
  const auto b1 = ila::attacks::fgsm(a, x, labels_of(4), {});
  EXPECT_THROW(transfer_matrix<float>({&b1}, {{"a", &a}, {"c5", &c5}}), ila::ConfigError);
  const auto b2 = ila::attacks::fgsm(a, random_tensor<float>({4, 3, 32, 32}, 20, 0, 1),
                                     labels_of(4), {});
  EXPECT_THROW(transfer_matrix<float>({&b1, &b2}, {{"a", &a}}), ila::InputError);
}

TEST(Report, CsvHeaderAndEmptyReport) {
  TransferReport empty;
  const auto dir = scratch("report");
  write_report(empty, dir / "r.csv", ReportFormat::kCsv);
  EXPECT_EQ(ila::io::read_text(dir / "r.csv"), "source,attack,target,layer,accuracy,n\n");
  TransferReport r;
  r.rows.push_back({"mini_resnet", "ilap", "mini_cnn", 3, 12.34567, 1000});
  r.rows.push_back({"mini_resnet", "clean", "mini_cnn", std::nullopt, 80, 1000});
  EXPECT_EQ(report_csv(r),
            "source,attack,target,layer,accuracy,n\n"
            "mini_resnet,ilap,mini_cnn,3,12.3457,1000\n"
            "mini_resnet,clean,mini_cnn,,80.0000,1000\n");
}

TEST(Report, JsonRoundTrip) {
  TransferReport r;
  r.manifest = "runs/x/manifest.json";
  r.selected_layer = 4;
  r.rows.push_back({"a", "ilap", "b", 4, 33.125, 8});
  r.rows.push_back({"a", "clean", "b", std::nullopt, 50, 8});
  const auto dir = scratch("report_json");
  write_report(r, dir / "r.json", ReportFormat::kJson);
  EXPECT_EQ(read_report_json(dir / "r.json"), r);
  EXPECT_THROW(parse_format("xml"), ila::ConfigError);
}

TEST(Angles, HandValues) {
  const std::vector<double> a{1, 0}, b{0, 1}, c{2, 0}, z{0, 0};
  EXPECT_NEAR(*angle_degrees(a, b), 90.0, 1e-12);
  EXPECT_NEAR(*angle_degrees(a, c), 0.0, 1e-12);
  EXPECT_FALSE(angle_degrees(a, z).has_value());
}

TEST(Angles, SelfProfileIsZero) {
  const auto m = small_model(Arch::kMiniResnet, 21);
  const auto x = random_tensor<float>({4, 3, 32, 32}, 22, 0, 1);
  const auto a = ila::attacks::fgsm(m, x, labels_of(4), {}).adversarials;
  const auto prof = angle_by_layer(m, x, a, a, ila::Exec{2, 3});
  ASSERT_EQ(prof.points.size(), m.num_endpoints());
  for (const auto& p : prof.points) {
    ASSERT_TRUE(p.mean_angle.has_value());
    EXPECT_NEAR(*p.mean_angle, 0.0, 0.05);
    EXPECT_EQ(p.n_valid + p.n_skipped, 4u);
  }
  const auto none = angle_by_layer(m, x, x, a);
  for (const auto& p : none.points) EXPECT_EQ(p.n_skipped, 4u);
}

TEST(Spearman, MatchesClosedFormWithoutTies) {
  const std::vector<double> x{0, 1, 2, 3, 4, 5}, y{3.1, 0.2, 5.5, 4.0, 9.0, 8.5};
  // 1 - 6 sum d^2 / (n (n^2 - 1)); ranks of y are 2,1,4,3,6,5.
  const double d2 = 1 + 1 + 1 + 1 + 1 + 1;
  EXPECT_NEAR(spearman(x, y), 1 - 6 * d2 / (6 * 35.0), 1e-12);
  EXPECT_NEAR(spearman(x, {5, 4, 3, 2, 1, 0}), -1.0, 1e-12);
  EXPECT_EQ(average_ranks({2, 1, 2}), (std::vector<double>{2.5, 1, 2.5}));
  EXPECT_THROW(spearman({1, 2}, {3, 3}), ila::NumericError);
}

TEST(Boundary, OriginEmbeddingAndSize) {
  const auto m = small_model(Arch::kMiniCnn, 23);
  const auto x = random_tensor<float>({1, 3, 32, 32}, 24, 0.2, 0.8);
  const auto pa = random_tensor<double>({3072}, 25, -0.3, 0.3);
  const auto pb = random_tensor<double>({3072}, 26, -0.3, 0.3);
  std::vector<double> a(pa.values().begin(), pa.values().end());
  std::vector<double> b(pb.values().begin(), pb.values().end());
  double na = 0;
  for (double v : a) na += v * v;
  na = std::sqrt(na);
  const auto g = boundary_grid(m, x, a, b, na, 5);
  ASSERT_EQ(g.cells.size(), 25u);
  // Centre cell is the origin.
  EXPECT_EQ(g.cells[12].s, 0.0);
  EXPECT_EQ(g.cells[12].t, 0.0);
  EXPECT_EQ(g.cells[12].label, m.classify(x)[0]);
  // Last row, middle column is (||a||, 0).
  EXPECT_NEAR(g.cells[22].s, na, 1e-12);
  EXPECT_EQ(g.cells[22].t, 0.0);
  Tensor<float> xa = x;
  for (std::size_t i = 0; i < 3072; ++i) xa[i] = static_cast<float>(x[i] + a[i]);
  EXPECT_EQ(g.cells[22].label, m.classify(xa)[0]);
  EXPECT_EQ(g.markers[1].label, g.cells[22].label);
  EXPECT_EQ(g.to_csv().rfind("s,t,predicted_label\n", 0), 0u);
}

TEST(Boundary, ResolutionArithmeticAndDegeneratePlane) {
  const auto m = small_model(Arch::kMiniCnn, 27);
  const auto x = random_tensor<float>({1, 3, 32, 32}, 28, 0, 1);
  std::vector<double> a(3072, 0.0), b(3072, 0.0);
  a[0] = 0.01;
  b[1] = 0.01;
  const auto g = boundary_grid(m, x, a, b, 0.03, 101, ila::Exec{1, 512});
  EXPECT_EQ(g.cells.size(), 10201u);
  std::size_t lines = 0;
  for (char ch : g.to_csv()) lines += ch == '\n';
  EXPECT_EQ(lines, 10202u);
  std::vector<double> par(a);
  par[0] = -0.05;
  EXPECT_THROW(boundary_grid(m, x, a, par, 0.03, 11), ila::NumericError);
  const auto v = random_orthogonal(a, 1);
  EXPECT_NO_THROW(boundary_grid(m, x, a, v, 0.03, 3));
}

TEST(Boundary, RandomDirectionIsOrthogonalWithMatchingNorm) {
  std::vector<double> a(3072);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = (i % 3 == 0 ? 0.015 : -0.015);
  const auto v = random_orthogonal(a, 7);
  double dot = 0, na = 0, nv = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * v[i];
    na += a[i] * a[i];
    nv += v[i] * v[i];
  }
  EXPECT_NEAR(dot / na, 0.0, 1e-12);
  EXPECT_NEAR(std::sqrt(nv), std::sqrt(na), 1e-12);
  EXPECT_EQ(random_orthogonal(a, 7), v);
}

namespace {

struct TinyZoo {
  Model<float> src = small_model(Arch::kMiniResnet, 30);
  Model<float> cnn = small_model(Arch::kMiniCnn, 31);
  Model<float> vgg = small_model(Arch::kMiniVgg, 32);
  ModelZoo<float> zoo{{{"src", &src}, {"cnn", &cnn}, {"vgg", &vgg}}};
  Tensor<float> x = random_tensor<float>({6, 3, 32, 32}, 33, 0, 1);
  std::vector<int> y = labels_of(6);

  ProtocolConfig config() const {
    ProtocolConfig c;
    c.baseline.n_iters = 4;
    c.seed_iters = 2;
    c.ila.n_iters = 2;
    c.candidates = {1, 3, 5};
    return c;
  }
};

}  // namespace

TEST(Protocol, ExplicitLayerMatchesAutoChoice) {
  TinyZoo z;
  auto cfg = z.config();
  const auto aut = run_protocol(cfg, z.zoo, "src", {"cnn", "vgg"}, z.x, z.y);
  ASSERT_TRUE(aut.selection.has_value());
  EXPECT_EQ(aut.selection->candidates, (std::vector<std::size_t>{1, 3, 5}));
  EXPECT_EQ(aut.curves.size(), 3u);
  cfg.layer = aut.selected_layer;
  const auto exp = run_protocol(cfg, z.zoo, "src", {"cnn", "vgg"}, z.x, z.y);
  EXPECT_FALSE(exp.selection.has_value());
  EXPECT_EQ(exp.ila.at(aut.selected_layer).batch.adversarials,
            aut.ila.at(aut.selected_layer).batch.adversarials);
  EXPECT_EQ(encode_batch(exp.ila.at(aut.selected_layer).batch),
            encode_batch(aut.ila.at(aut.selected_layer).batch));
  // Rows: clean, baseline, reference and three layers for two targets.
  EXPECT_EQ(aut.report.rows.size(), 12u);
  EXPECT_TRUE(aut.report.find("ifgsm_4", "cnn").has_value());
  EXPECT_TRUE(aut.report.find("ifgsm_2", "cnn").has_value());
  EXPECT_TRUE(aut.report.find("ilap", "vgg", 3).has_value());
}

TEST(Protocol, ThreadCountDoesNotChangeReport) {
  TinyZoo z;
  const auto a = run_protocol(z.config(), z.zoo, "src", {"cnn"}, z.x, z.y, ila::Exec{1, 2});
  const auto b = run_protocol(z.config(), z.zoo, "src", {"cnn"}, z.x, z.y, ila::Exec{3, 2});
  EXPECT_EQ(report_csv(a.report), report_csv(b.report));
}

TEST(Protocol, MultifoolReference) {
  TinyZoo z;
  auto cfg = z.config();
  cfg.reference = "multifool";
  cfg.ensemble = {"src", "cnn", "vgg"};
  cfg.layer = 2;
  const auto r = run_protocol(cfg, z.zoo, "src", {"cnn"}, z.x, z.y);
  EXPECT_EQ(r.reference.attack, "multifool");
  EXPECT_TRUE(r.report.find("multifool_2", "cnn").has_value());
  cfg.ensemble = {"missing"};
  EXPECT_THROW(run_protocol(cfg, z.zoo, "src", {"cnn"}, z.x, z.y), ila::ConfigError);
}

TEST(Sweep, FailedValueIsMarkedAndSweepContinues) {
  TinyZoo z;
  auto cfg = z.config();
  cfg.layer = 3;
  const auto rep = sweep(SweepKind::kEpsilon, {"0.01", "oops", "-1", "0.02"}, cfg, z.zoo, "src",
                         {"cnn"}, z.x, z.y);
  ASSERT_EQ(rep.rows.size(), 2u + 1 + 1 + 2);
  EXPECT_EQ(rep.rows[2].status.rfind("failed", 0), 0u);
  EXPECT_EQ(rep.rows[3].status.rfind("failed", 0), 0u);
  EXPECT_EQ(rep.rows[5].value, "0.02");
  EXPECT_EQ(rep.to_csv().rfind("kind,value,status,source,attack,target,layer,accuracy,n\n", 0), 0u);
}

TEST(Sweep, SingletonEqualsSingleRun) {
  TinyZoo z;
  auto cfg = z.config();
  cfg.layer = 3;
  const auto rep = sweep(SweepKind::kAlpha, {"2.5"}, cfg, z.zoo, "src", {"cnn", "vgg"}, z.x, z.y);
  auto single = cfg;
  single.ila.loss = ila::intermediate::LossKind::kFlexible;
  single.ila.alpha = 2.5;
  const auto run = run_protocol(single, z.zoo, "src", {"cnn", "vgg"}, z.x, z.y);
  const auto expect = headline_rows(run.report, "ifgsm_4");
  ASSERT_EQ(rep.rows.size(), expect.size());
  for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_EQ(rep.rows[i].row, expect[i]);
}

TEST(Sweep, ValueParsing) {
  ProtocolConfig c;
  EXPECT_DOUBLE_EQ(apply_sweep_value(c, SweepKind::kEpsilon, "0.025").ila.budget.epsilon, 0.025);
  EXPECT_DOUBLE_EQ(apply_sweep_value(c, SweepKind::kLr, "0.01").ila.lr, 0.01);
  EXPECT_EQ(apply_sweep_value(c, SweepKind::kReference, "multifool").reference, "multifool");
  EXPECT_THROW(apply_sweep_value(c, SweepKind::kAlpha, "1x"), ila::ConfigError);
  EXPECT_THROW(parse_sweep_kind("gamma"), ila::ConfigError);
}

TEST(Linearity, DegradationComparison) {
  // var1 rises 20 points above its best at the tail, var2 only 5.
  const std::vector<double> v1{50, 40, 30, 20, 30, 40, 40, 40, 40, 40};
  const std::vector<double> v2{50, 40, 30, 20, 25, 25, 25, 25, 25, 25};
  const auto c = linearity_check(v1, v2);
  EXPECT_DOUBLE_EQ(c.degradation_var1, 20.0);
  EXPECT_DOUBLE_EQ(c.degradation_var2, 5.0);
  EXPECT_TRUE(c.pass);
  EXPECT_FALSE(linearity_check(v2, v1).pass);
  EXPECT_THROW(linearity_check({1, 2}, {1, 2}), ila::ConfigError);
}

TEST(ProjectionGrowth, CountsOnlyActiveImages) {
  ila::intermediate::IlaResult<float> r;
  r.seed_projection = {1, 1, 1, 0};
  r.final_projection = {2, 0.5, 3, 0};
  r.batch.degenerate = {0, 0, 0, 1};
  EXPECT_NEAR(projection_growth_rate(r), 2.0 / 3.0, 1e-12);
}
