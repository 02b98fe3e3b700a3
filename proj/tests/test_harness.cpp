#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "afp/harness.hpp"

using namespace afp;

namespace {

Architecture small_arch() {
  Architecture a;
  a.edvf_base = 8;
  a.refine_base = 8;
  a.weight_base = 8;
  return a;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "afp_test_harness" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

SceneSpec pan_spec(std::size_t length, std::size_t size = 16) {
  SceneSpec s;
  s.kind = SceneKind::camera_pan;
  s.velocity = {1, 1, 0, 0};
  s.height = s.width = size;
  s.length = length;
  s.seed = s.texture_seed = 5;
  return s;
}

EnsembleState<float> make_state() {
  EnsembleConfig cfg;
  cfg.adam.lr = 1e-3;
  const auto arch = small_arch();
  return init_ensemble(PredictionParams<float>::init(arch, 1), WeightNetParams<float>::init(arch, 2), cfg);
}

}  // namespace

TEST(Scenes, StaticFramesAreIdentical) {
  SceneSpec s;
  s.kind = SceneKind::static_scene;
  s.length = 5;
  const auto f = gen_scene(s);
  ASSERT_EQ(f.size(), 5u);
  for (const auto& x : f) EXPECT_EQ(x.vec(), f[0].vec());
}

TEST(Scenes, DeterministicInSeeds) {
  for (auto kind : {SceneKind::translating_shapes, SceneKind::rotating_texture, SceneKind::camera_pan}) {
    SceneSpec s;
    s.kind = kind;
    s.velocity = {-2, 2, -1, 1};
    s.length = 4;
    s.seed = 9;
    const auto a = gen_scene(s), b = gen_scene(s);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].vec(), b[i].vec());
    for (const auto& x : a)
      for (float v : x.data()) {
        ASSERT_GE(v, 0.0f);
        ASSERT_LE(v, 1.0f);
      }
    s.seed = 10;
    s.texture_seed = 1;
    EXPECT_NE(gen_scene(s)[0].vec(), a[0].vec()) << to_string(kind);
  }
}

TEST(Scenes, TranslatingObjectAdvancesByItsVelocity) {
  const std::size_t H = 48, W = 48;
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SceneSpec s;
    s.kind = SceneKind::translating_shapes;
    s.num_objects = 1;
    s.velocity = {2, 2, 0, 0};
    s.height = H;
    s.width = W;
    s.length = 12;
    s.seed = s.texture_seed = seed;
    SceneSpec empty = s;
    empty.num_objects = 0;
    const auto background = gen_scene(empty)[0];
    const auto f = gen_scene(s);
    // Centroid of the pixels that differ from the bare background; nullopt
    // when the object touches the frame edge.
    auto centroid = [&](const Frame<float>& x) -> std::optional<std::pair<double, double>> {
      double m = 0, mx = 0, my = 0;
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t xx = 0; xx < W; ++xx) {
          double d = 0;
          for (std::size_t c = 0; c < 3; ++c) d += std::abs(x.at(c, y, xx) - background.at(c, y, xx));
          if (d < 1e-6) continue;
          if (y == 0 || xx == 0 || y + 1 == H || xx + 1 == W) return std::nullopt;
          m += 1, mx += xx, my += y;
        }
      if (m == 0) return std::nullopt;
      return std::pair{mx / m, my / m};
    };
    for (std::size_t n = 1; n < f.size(); ++n) {
      auto a = centroid(f[n - 1]), b = centroid(f[n]);
      if (!a || !b) continue;
      EXPECT_NEAR(b->first - a->first, 2.0, 0.15) << seed << " " << n;
      EXPECT_NEAR(b->second - a->second, 0.0, 0.15) << seed << " " << n;
      ++checked;
    }
  }
  EXPECT_GE(checked, 5);
}

TEST(Scenes, ScriptRepeatsUseConsecutiveSeeds) {
  StreamScript script{{pan_spec(4), 3}};
  const auto specs = expand_script(script);
  ASSERT_EQ(specs.size(), 3u);
  EXPECT_EQ(specs[2].seed, 7u);
  EXPECT_EQ(specs[2].texture_seed, 7u);
  EXPECT_THROW(expand_script({}), std::invalid_argument);
}

TEST(Triplets, Counts) {
  const auto frames = gen_scene(pan_spec(21));
  EXPECT_EQ(make_triplets(frames, 1).size(), 19u);
  EXPECT_EQ(make_triplets(std::vector(frames.begin(), frames.begin() + 3), 1).size(), 1u);
  EXPECT_EQ(make_triplets(std::vector(frames.begin(), frames.begin() + 5), 2).size(), 1u);
  EXPECT_TRUE(make_triplets(std::vector(frames.begin(), frames.begin() + 2), 1).empty());
  EXPECT_THROW(make_triplets(frames, 0), std::invalid_argument);
}

TEST(Triplets, CountAndSpacingProperty) {
  const auto frames = gen_scene(pan_spec(15, 8));
  for (std::size_t len = 0; len <= frames.size(); ++len)
    for (std::size_t k = 1; k <= 7; ++k) {
      const std::vector<Frame<float>> sub(frames.begin(), frames.begin() + len);
      const auto t = make_triplets(sub, k);
      EXPECT_EQ(t.size(), len >= 2 * k + 1 ? len - 2 * k : 0) << len << " " << k;
      for (std::size_t i = 0; i < t.size(); ++i) {
        EXPECT_EQ(t[i].x_prev.vec(), sub[i].vec());
        EXPECT_EQ(t[i].x_t.vec(), sub[i + k].vec());
        EXPECT_EQ(t[i].x_next.vec(), sub[i + 2 * k].vec());
      }
    }
}

TEST(MovingAverage, Cases) {
  EXPECT_EQ(moving_average({0, 1, 2, 3}, 2), (std::vector<double>{0, 0.5, 1.5, 2.5}));
  const std::vector<double> s{3, -1, 4, 1, 5};
  EXPECT_EQ(moving_average(s, 1), s);
  for (double v : moving_average(std::vector<double>(30, 0.25), 7)) EXPECT_DOUBLE_EQ(v, 0.25);
  EXPECT_TRUE(moving_average({}, 3).empty());
  EXPECT_THROW(moving_average(s, 0), std::invalid_argument);
}

TEST(MetricsCsv, RoundTrip) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 40);
  std::vector<MetricRecord> rs;
  for (std::size_t i = 0; i < 25; ++i) {
    MetricRecord r;
    r.frame_index = i * 3;
    r.scene_id = i / 10;
    r.ssim_ensemble = u(rng) / 40, r.ssim_pretrained = u(rng) / 40, r.ssim_continuous = u(rng) / 40;
    r.ssim_repeat = u(rng) / 40;
    r.psnr_ensemble = u(rng), r.psnr_pretrained = u(rng), r.psnr_continuous = u(rng), r.psnr_repeat = u(rng);
    r.updated = i % 2;
    if (r.updated) r.loss = u(rng);
    rs.push_back(r);
  }
  const auto path = temp_dir("csv") / "m.csv";
  write_csv(rs, path);
  const auto back = read_csv(path);
  ASSERT_EQ(back.size(), rs.size());
  for (std::size_t i = 0; i < rs.size(); ++i) {
    EXPECT_EQ(back[i].frame_index, rs[i].frame_index);
    EXPECT_EQ(back[i].scene_id, rs[i].scene_id);
    EXPECT_NEAR(back[i].ssim_continuous, rs[i].ssim_continuous, 1e-6);
    EXPECT_NEAR(back[i].psnr_repeat, rs[i].psnr_repeat, 1e-6);
    EXPECT_EQ(back[i].updated, rs[i].updated);
    EXPECT_EQ(back[i].loss.has_value(), rs[i].loss.has_value());
    if (rs[i].loss) {
      EXPECT_NEAR(*back[i].loss, *rs[i].loss, 1e-6);
    }
  }
}

TEST(MetricsCsv, EmptyRunIsHeaderOnly) {
  const auto path = temp_dir("csv_empty") / "m.csv";
  write_csv({}, path);
  EXPECT_EQ(read_file(path), std::string(kMetricsHeader) + "\n");
  EXPECT_TRUE(read_csv(path).empty());
}

TEST(MetricsCsv, RejectsBadInput) {
  const auto dir = temp_dir("csv_bad");
  write_file(dir / "h.csv", "a,b\n");
  EXPECT_THROW(read_csv(dir / "h.csv"), IoError);
  write_file(dir / "n.csv", std::string(kMetricsHeader) + "\n1,0,x,0,0,0,0,0,0,0,0,\n");
  try {
    read_csv(dir / "n.csv");
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("n.csv:2"), std::string::npos) << e.what();
  }
}

TEST(Ppm, RoundTripIsExactOnTheByteGrid) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> u(0, 255);
  std::vector<float> v(3 * 5 * 7);
  for (auto& x : v) x = static_cast<float>(u(rng)) / 255.0f;
  v[0] = 1.0f;
  const auto f = Frame<float>::from({3, 5, 7}, v);
  const auto path = temp_dir("ppm") / "a.ppm";
  write_ppm(path, f);
  const auto g = read_ppm(path);
  EXPECT_EQ(g.shape(), f.shape());
  EXPECT_EQ(g.vec(), f.vec());
  EXPECT_EQ(g[0], 1.0f);
}

TEST(Ppm, ErrorsNameTheFile) {
  const auto dir = temp_dir("ppm_bad");
  write_file(dir / "bad.ppm", "P3\n1 1\n255\n000");
  write_file(dir / "short.ppm", std::string("P6\n2 2\n255\n") + std::string(5, 'a'));
  for (const char* name : {"bad.ppm", "short.ppm"}) {
    try {
      read_ppm(dir / name);
      FAIL() << name;
    } catch (const IoError& e) {
      EXPECT_NE(std::string(e.what()).find(name), std::string::npos) << e.what();
    }
  }
}

TEST(Sequence, ReadsInOrderAndRejectsGaps) {
  const auto dir = temp_dir("seq");
  const auto frames = gen_scene(pan_spec(3, 8));
  for (int i = 0; i < 3; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%06d.ppm", i + 4);
    write_ppm(dir / name, frames[i]);
  }
  write_file(dir / "notes.txt", "ignored");
  const auto back = read_sequence(dir);
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(back[2].vec(), read_ppm(dir / "frame_000006.ppm").vec());

  std::filesystem::remove(dir / "frame_000005.ppm");
  try {
    read_sequence(dir);
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("frame_000006.ppm"), std::string::npos) << e.what();
  }
  EXPECT_THROW(read_sequence(temp_dir("seq_empty")), IoError);
  EXPECT_THROW(read_sequence(dir / "missing"), IoError);
}

TEST(OnlineEval, StaticScriptRepeatIsPerfect) {
  SceneSpec s;
  s.kind = SceneKind::static_scene;
  s.height = s.width = 16;
  s.length = 10;
  auto state = make_state();
  const auto records = run_online_eval<float>(StreamScript{{s, 2}}, state, {});
  ASSERT_EQ(records.size(), 2u * (10 - 2));
  for (const auto& r : records) {
    EXPECT_NEAR(r.ssim_repeat, 1.0, 1e-6);
    EXPECT_EQ(r.psnr_repeat, kPsnrCapDb);
  }
  EXPECT_EQ(records.front().frame_index, 2u);
  EXPECT_EQ(records[8].frame_index, 12u);
  EXPECT_EQ(records[8].scene_id, 1u);
}

TEST(OnlineEval, EarlierRecordsIgnoreFutureFrames) {
  const auto a = gen_scene(pan_spec(12));
  auto b = a;
  const std::size_t cut = 7;
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0, 1);
  for (std::size_t i = cut; i < b.size(); ++i) {
    std::vector<float> v(b[i].numel());
    for (auto& x : v) x = static_cast<float>(u(rng));
    b[i] = Frame<float>::from(b[i].shape(), v);
  }
  auto s1 = make_state(), s2 = make_state();
  const auto r1 = run_online_eval<float>({a}, s1, {});
  const auto r2 = run_online_eval<float>({b}, s2, {});
  ASSERT_EQ(r1.size(), r2.size());
  std::size_t same = 0;
  for (std::size_t i = 0; i < r1.size(); ++i) {
    if (r1[i].frame_index >= cut) break;
    EXPECT_EQ(metrics_csv({r1[i]}), metrics_csv({r2[i]}));
    ++same;
  }
  EXPECT_EQ(same, cut - 2);
  EXPECT_NE(metrics_csv(r1), metrics_csv(r2));
}

TEST(OnlineEval, DumpsPredictions) {
  auto state = make_state();
  OnlineEvalConfig cfg;
  cfg.dump_every = 2;
  cfg.dump_dir = temp_dir("dump");
  run_online_eval<float>({gen_scene(pan_spec(7))}, state, cfg);
  std::size_t n = 0;
  for (const auto& e : std::filesystem::directory_iterator(cfg.dump_dir)) n += e.path().extension() == ".ppm";
  EXPECT_EQ(n, 3u);
  EXPECT_TRUE(std::filesystem::exists(cfg.dump_dir / "pred_000002.ppm"));
}

TEST(Pretrain, CurveLengthAndDeterminism) {
  const auto tr = make_triplets(gen_scene(pan_spec(5)), 1);
  PretrainConfig cfg;
  cfg.epochs = 2;
  cfg.seed = 3;
  auto p1 = PredictionParams<float>::init(small_arch(), 1), p2 = PredictionParams<float>::init(small_arch(), 1);
  std::vector<std::size_t> seen;
  cfg.on_epoch = [&](std::size_t e, double) { seen.push_back(e); };
  const auto c1 = pretrain(tr, p1, cfg);
  const auto c2 = pretrain(tr, p2, cfg);
  EXPECT_EQ(c1.size(), 2u);
  EXPECT_EQ(c1, c2);
  EXPECT_EQ(params_checksum(p1.all()), params_checksum(p2.all()));
  EXPECT_EQ(seen, (std::vector<std::size_t>{1, 2, 1, 2}));
  EXPECT_THROW(pretrain<float>({}, p1, cfg), std::invalid_argument);
}

TEST(Pretrain, OverfitsASingleTriplet) {
  const auto tr = make_triplets(gen_scene(pan_spec(3, 32)), 1);
  ASSERT_EQ(tr.size(), 1u);
  PretrainConfig cfg;
  cfg.epochs = 500;
  cfg.adam.lr = 1e-3;
  auto p = PredictionParams<float>::init(small_arch(), 2);
  const auto curve = pretrain(tr, p, cfg);
  EXPECT_LT(curve.back(), 0.1 * curve.front()) << curve.front() << " -> " << curve.back();
}

TEST(EvaluateOffline, ScoresModelAndRepeat) {
  SceneSpec s;
  s.kind = SceneKind::static_scene;
  s.height = s.width = 16;
  s.length = 5;
  const auto tr = make_triplets(gen_scene(s), 1);
  const auto p = PredictionParams<float>::init(small_arch(), 1);
  const auto r = evaluate_offline(tr, p, 0.9);
  EXPECT_EQ(r.count, 3u);
  EXPECT_NEAR(r.repeat.ssim, 1.0, 1e-6);
  EXPECT_LE(r.model.ssim, 1.0);
}
