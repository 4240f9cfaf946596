#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "haris/trainer.hpp"
#include "test_util.hpp"

using namespace haris;
using namespace haris::test;

namespace fs = std::filesystem;

namespace {

Config small_config() {
  Config cfg;
  cfg.image_size = 16;
  cfg.channels = 8;
  cfg.text_channels = 8;
  cfg.decoder_layers = 1;
  cfg.epochs = 2;
  cfg.decay_epoch = 1;
  cfg.batch_size = 2;
  cfg.steps_per_epoch = 3;
  cfg.train_samples = 12;
  cfg.val_samples = 4;
  cfg.lr = 1e-3;
  return cfg;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(bool(f));
  return std::string((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
}

// reference Adam written independently: explicit bias-corrected update
void reference_adam(std::vector<double>& p, const std::vector<double>& g,
                    std::vector<double>& m, std::vector<double>& v, int t,
                    double lr, double b1, double b2, double eps) {
  for (std::size_t i = 0; i < p.size(); ++i) {
    m[i] = b1 * m[i] + (1 - b1) * g[i];
    v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
    const double mh = m[i] / (1 - std::pow(b1, t));
    const double vh = v[i] / (1 - std::pow(b2, t));
    p[i] -= lr * mh / (std::sqrt(vh) + eps);
  }
}

}  // namespace

TEST_CASE("adam leaves parameters alone on zero gradient") {
  Config cfg;
  Parameter p("p", Tensor({1, 1}, {2.5}));
  std::vector<Parameter*> params = {&p};
  AdamState st = make_adam_state(params);
  adam_step(params, st, cfg, 1e-3);  // fresh moments, zero grad
  CHECK(p.value.data[0] == 2.5);
  CHECK(st.m[0].data[0] == 0.0);
  CHECK(st.v[0].data[0] == 0.0);
  // accumulated moments decay toward zero on further zero-grad steps
  st.m[0].data[0] = 0.5;
  st.v[0].data[0] = 0.25;
  adam_step(params, st, cfg, 1e-3);
  CHECK(st.m[0].data[0] == doctest::Approx(0.45));
  CHECK(st.v[0].data[0] == doctest::Approx(0.24975));
}

TEST_CASE("adam first step moves by about lr") {
  Config cfg;
  Parameter p("p", Tensor({1, 1}, {1.0}));
  p.grad.data[0] = 3.0;
  std::vector<Parameter*> params = {&p};
  AdamState st = make_adam_state(params);
  adam_step(params, st, cfg, 1e-3);
  CHECK(std::abs((1.0 - p.value.data[0]) - 1e-3) < 1e-9);
}

TEST_CASE("adam matches an independent reference over five steps") {
  Rng rng(120);
  Config cfg;
  Parameter p("p", random_tensor(rng, 3, 2));
  std::vector<Parameter*> params = {&p};
  AdamState st = make_adam_state(params);

  std::vector<double> ref = p.value.data;
  std::vector<double> m(6, 0.0), v(6, 0.0);
  std::vector<double> curvature = {1.0, 2.0, 0.5, 3.0, 1.5, 0.25};

  for (int t = 1; t <= 5; ++t) {
    std::vector<double> g(6);
    for (int i = 0; i < 6; ++i) g[i] = curvature[i] * p.value.data[i];
    std::copy(g.begin(), g.end(), p.grad.data.begin());
    adam_step(params, st, cfg, 1e-2);

    std::vector<double> g_ref(6);
    for (int i = 0; i < 6; ++i) g_ref[i] = curvature[i] * ref[i];
    reference_adam(ref, g_ref, m, v, t, 1e-2, cfg.beta1, cfg.beta2,
                   cfg.adam_eps);
  }
  for (int i = 0; i < 6; ++i)
    CHECK(std::abs(p.value.data[i] - ref[i]) < 1e-12);
}

TEST_CASE("lr_at follows the published recipe") {
  Config cfg;
  cfg.lr = 1e-4;
  cfg.decay_factor = 0.1;
  cfg.decay_epoch = 30;
  cfg.epochs = 50;
  CHECK(lr_at(29, cfg) == 1e-4);
  CHECK(lr_at(30, cfg) == doctest::Approx(1e-5).epsilon(1e-12));
  cfg.decay_factor = 1.0;
  for (int e = 0; e < 50; ++e) CHECK(lr_at(e, cfg) == 1e-4);
  CHECK_THROWS_AS(lr_at(50, cfg), ContractError);
  CHECK_THROWS_AS(lr_at(-1, cfg), ContractError);
}

TEST_CASE("lr_at is non-increasing when the factor is at most one") {
  Config cfg;
  cfg.lr = 3e-3;
  cfg.decay_factor = 0.25;
  cfg.decay_epoch = 4;
  cfg.epochs = 10;
  double prev = lr_at(0, cfg);
  for (int e = 1; e < 10; ++e) {
    CHECK(lr_at(e, cfg) <= prev);
    prev = lr_at(e, cfg);
  }
}

TEST_CASE("config serialization round-trips exactly") {
  Config cfg = small_config();
  cfg.flags.no_feedback = true;
  cfg.lr = 0.0001236;
  const std::string text = serialize_config(cfg);
  Config back = parse_config_text(text);
  CHECK(serialize_config(back) == text);
  CHECK(back.flags.no_feedback);
  CHECK(back.lr == cfg.lr);
}

TEST_CASE("config parser rejects unknown keys and broken invariants") {
  CHECK_THROWS_AS(parse_config_text("bogus_key=1\n"), ContractError);
  CHECK_THROWS_AS(parse_config_text("lr=-1\n"), ContractError);
  CHECK_THROWS_AS(parse_config_text("epochs=10\ndecay_epoch=10\n"),
                  ContractError);
  Config ok = parse_config_text("# comment\n\nlr=0.01 # trailing\n");
  CHECK(ok.lr == 0.01);
}

TEST_CASE("HARIS_SEED overrides every config seed") {
  const std::string path = "/tmp/haris_seed_test.cfg";
  std::ofstream(path) << "data_seed=1\nstub_seed=2\ninit_seed=3\n";
  setenv("HARIS_SEED", "99", 1);
  Config cfg = load_config(path);
  unsetenv("HARIS_SEED");
  CHECK(cfg.data_seed == 99);
  CHECK(cfg.stub_seed == 99);
  CHECK(cfg.init_seed == 99);
  Config plain = load_config(path);
  CHECK(plain.data_seed == 1);
  fs::remove(path);
}

TEST_CASE("checkpoint save-load-save is byte-identical") {
  Config cfg = small_config();
  ModelParams model = make_model(cfg);
  AdamState adam = make_adam_state(model.trainable());
  adam.t = 17;
  Rng rng(7);
  rng.next_u64();
  const std::string p1 = "/tmp/haris_ck1.bin", p2 = "/tmp/haris_ck2.bin";
  save_checkpoint(p1, cfg, model, &adam, 42, rng.state_string());
  LoadedCheckpoint ck = load_checkpoint(p1);
  CHECK(ck.global_step == 42);
  CHECK(ck.adam.t == 17);
  save_checkpoint(p2, ck.cfg, ck.model, &ck.adam, ck.global_step,
                  ck.rng_state);
  CHECK(read_file(p1) == read_file(p2));
  fs::remove(p1);
  fs::remove(p2);
}

TEST_CASE("checkpoint loader rejects bad magic and versions") {
  Config cfg = small_config();
  ModelParams model = make_model(cfg);
  const std::string path = "/tmp/haris_ck_bad.bin";
  save_checkpoint(path, cfg, model, nullptr, 0, "");
  std::string bytes = read_file(path);

  std::string wrong_magic = bytes;
  wrong_magic[0] = 'X';
  std::ofstream(path, std::ios::binary) << wrong_magic;
  CHECK_THROWS_AS(load_checkpoint(path), IoError);

  std::string wrong_version = bytes;
  wrong_version[8] = 9;  // little-endian version field
  std::ofstream(path, std::ios::binary) << wrong_version;
  try {
    load_checkpoint(path);
    FAIL("expected version error");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("version") != std::string::npos);
  }
  fs::remove(path);
}

TEST_CASE("zero-epoch training writes the untouched initialization") {
  Config cfg = small_config();
  cfg.epochs = 0;
  Trainer trainer(cfg);
  const std::string dir = "/tmp/haris_run0";
  fs::remove_all(dir);
  trainer.run(dir);
  LoadedCheckpoint ck = load_checkpoint(dir + "/model.ckpt");
  ModelParams fresh = make_model(cfg);
  auto got = ck.model.all();
  auto expect = fresh.all();
  REQUIRE(got.size() == expect.size());
  for (std::size_t i = 0; i < got.size(); ++i)
    CHECK(bit_identical(got[i]->value, expect[i]->value));
  fs::remove_all(dir);
}

TEST_CASE("identical seeds give byte-identical checkpoints and CSVs") {
  Config cfg = small_config();
  const std::string d1 = "/tmp/haris_det1", d2 = "/tmp/haris_det2";
  fs::remove_all(d1);
  fs::remove_all(d2);
  {
    Trainer a(cfg);
    a.run(d1);
  }
  {
    Trainer b(cfg);
    b.run(d2);
  }
  CHECK(read_file(d1 + "/model.ckpt") == read_file(d2 + "/model.ckpt"));
  CHECK(read_file(d1 + "/metrics.csv") == read_file(d2 + "/metrics.csv"));
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("frozen encoder parameters survive training bit-identically") {
  Config cfg = small_config();
  Trainer trainer(cfg);
  const std::string dir = "/tmp/haris_peft";
  fs::remove_all(dir);
  trainer.run(dir);
  EncoderStubParams fresh =
      encoder_stub_params(cfg.stub_seed, cfg.channels, cfg.text_channels);
  CHECK(bit_identical(trainer.model().stub.embed.value, fresh.embed.value));
  CHECK(bit_identical(trainer.model().stub.proj1.value, fresh.proj1.value));
  CHECK(bit_identical(trainer.model().stub.proj2.value, fresh.proj2.value));
  CHECK(bit_identical(trainer.model().stub.proj3.value, fresh.proj3.value));
  CHECK(bit_identical(trainer.model().stub.sentence_transform.value,
                      fresh.sentence_transform.value));
  // and the frozen grads were never touched
  CHECK(max_abs_diff(trainer.model().stub.embed.grad,
                     Tensor::zeros(fresh.embed.value.shape)) == 0.0);
  fs::remove_all(dir);
}

TEST_CASE("training aborts with the step index on non-finite loss") {
  Config cfg = small_config();
  Trainer trainer(cfg);
  trainer.model().trainable()[0]->value.data[0] =
      std::numeric_limits<double>::quiet_NaN();
  try {
    trainer.train_step({0, 1}, 1e-3);
    FAIL("expected abort");
  } catch (const ContractError& e) {
    CHECK(std::string(e.what()).find("step 0") != std::string::npos);
  }
}

TEST_CASE("replace_cross_attention behaves exactly like no_feedback") {
  Config base = small_config();
  Config rca = base;
  rca.flags.replace_cross_attention = true;
  Config nofb = base;
  nofb.flags.no_feedback = true;

  ModelParams m1 = make_model(rca);
  ModelParams m2 = make_model(nofb);
  EncoderStubParams stub =
      encoder_stub_params(base.stub_seed, base.channels, base.text_channels);
  auto samples = make_split(3, 0, stub, base.image_size);
  for (const EncodedSample& s : samples) {
    Tape t1(false), t2(false);
    ModelForwardOut a = model_forward(t1, m1, s, rca, false, false);
    ModelForwardOut b = model_forward(t2, m2, s, nofb, false, false);
    CHECK(bit_identical(a.mask.logits, b.mask.logits));
  }
}

TEST_CASE("untrained model scores below 0.5 mean IoU") {
  Config cfg = small_config();
  Trainer trainer(cfg);
  MetricsReport r = trainer.evaluate(trainer.val_split());
  CHECK(r.mean_iou < 0.5);
}

TEST_CASE("evaluate_checkpoint reproduces the trainer's numbers") {
  Config cfg = small_config();
  const std::string dir = "/tmp/haris_evalck";
  fs::remove_all(dir);
  Trainer trainer(cfg);
  TrainResult res = trainer.run(dir);
  MetricsReport r = evaluate_checkpoint(dir + "/model.ckpt", "val");
  CHECK(metrics_csv_row(r) == metrics_csv_row(res.final_val));
  CHECK_THROWS_AS(evaluate_checkpoint(dir + "/model.ckpt", "bogus"),
                  ContractError);
  fs::remove_all(dir);
}

TEST_CASE("normalize_map_bytes sends constant maps to mid-gray") {
  Tensor constant = Tensor::full({9, 1}, 1.0);  // single-word affinity column
  std::vector<std::uint8_t> bytes = normalize_map_bytes(constant, 0);
  for (auto b : bytes) CHECK(int(b) == 128);

  Tensor ramp({4, 1}, {0.0, 0.25, 0.5, 1.0});
  std::vector<std::uint8_t> r = normalize_map_bytes(ramp, 0);
  CHECK(int(r[0]) == 0);
  CHECK(int(r[3]) == 255);
}

TEST_CASE("dump-attention reruns byte-identically and names files by token") {
  Config cfg = small_config();
  cfg.image_size = 32;  // scene generation wants the default scale
  cfg.epochs = 0;
  const std::string dir = "/tmp/haris_dump_run";
  fs::remove_all(dir);
  Trainer trainer(cfg);
  trainer.run(dir);

  const std::string o1 = dir + "/att1", o2 = dir + "/att2";
  dump_attention(dir + "/model.ckpt", 0, "val", o1);
  dump_attention(dir + "/model.ckpt", 0, "val", o2);

  int files = 0;
  for (const auto& entry : fs::directory_iterator(o1)) {
    const std::string name = entry.path().filename().string();
    CHECK(name.rfind("block", 0) == 0);
    CHECK(read_file(entry.path().string()) ==
          read_file(o2 + "/" + name));
    ++files;
  }
  // 3 blocks x 2 rounds x L_t words
  std::vector<EncodedSample> one = make_split(
      1, kValSeedOffset + cfg.data_seed, trainer.model().stub, cfg.image_size);
  CHECK(files == 3 * 2 * int(one[0].scene.expression.size()));

  CHECK_THROWS_AS(dump_attention(dir + "/model.ckpt", 10000, "val", o1),
                  ContractError);
  fs::remove_all(dir);
}

TEST_CASE("ablate writes one row per variant plus the baseline") {
  Config cfg = small_config();
  cfg.epochs = 1;
  cfg.decay_epoch = 0;
  cfg.train_samples = 6;
  cfg.val_samples = 2;
  cfg.steps_per_epoch = 2;
  const std::string dir = "/tmp/haris_ablate";
  fs::remove_all(dir);
  auto rows = ablate(cfg, {"no_fb", "no_hs"}, dir + "/ablation.csv",
                     dir + "/runs");
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].variant == "baseline");
  CHECK(rows[1].variant == "no_fb");
  CHECK(rows[2].variant == "no_hs");

  std::ifstream csv(dir + "/ablation.csv");
  std::string line;
  std::getline(csv, line);
  CHECK(line == std::string("variant,") + kMetricsCsvColumns);
  int data_rows = 0;
  while (std::getline(csv, line)) ++data_rows;
  CHECK(data_rows == 3);

  CHECK_THROWS_AS(ablate(cfg, {"bogus"}, dir + "/x.csv", dir + "/r2"),
                  ContractError);
  fs::remove_all(dir);
}

TEST_CASE("empty flag list yields the baseline row only") {
  Config cfg = small_config();
  cfg.epochs = 0;
  cfg.train_samples = 4;
  cfg.val_samples = 2;
  const std::string dir = "/tmp/haris_ablate0";
  fs::remove_all(dir);
  auto rows = ablate(cfg, {}, dir + "/ablation.csv", dir + "/runs");
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].variant == "baseline");
  fs::remove_all(dir);
}

TEST_CASE("full-model gradient check on the tiny config") {
  GradCheckReport rep = run_gradcheck(tiny_gradcheck_config());
  CHECK(rep.n_parameters > 40);
  CHECK(rep.n_coordinates > 5000);
  CHECK(rep.max_rel_err < 1e-4);
}
