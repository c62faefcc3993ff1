#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <set>

#include "codealign/worldgen.hpp"

using namespace codealign;
using core::RngSeed;
using worldgen::AgentConfig;
using worldgen::DatasetConfig;
using worldgen::ModalityParams;
using worldgen::WorldConfig;

namespace fs = std::filesystem;

namespace {

WorldConfig small_world() {
    WorldConfig w;
    w.height = 16;
    w.width = 16;
    w.c_lat = 4;
    w.object_count_min = 2;
    w.object_count_max = 3;
    w.train_scenes = 12;
    w.eval_scenes = 4;
    w.agent_pose_extent = 3.0;
    return w;
}

DatasetConfig small_config() {
    DatasetConfig cfg;
    cfg.world = small_world();
    ModalityParams a;
    a.modality_id = "mA";
    a.channels = 6;
    ModalityParams b;
    b.modality_id = "mB";
    b.channels = 5;
    b.nonlinearity = "tanh";
    ModalityParams c;
    c.modality_id = "mC";
    c.channels = 6;
    c.nonlinearity = "relu";
    cfg.modalities = {a, b, c};
    cfg.isolation_pairs = {{"mA", "mB"}};
    return cfg;
}

}  // namespace

TEST_CASE("empty worlds and determinism") {
    WorldConfig w = small_world();
    w.object_count_min = 0;
    w.object_count_max = 0;
    const auto s = worldgen::gen_scene(RngSeed{1}, 0, w);
    CHECK(s.occupied_fraction() == 0.0);
    for (double v : s.latent) CHECK(v == 0.0);

    const auto s1 = worldgen::gen_scene(RngSeed{2}, 5, small_world());
    const auto s2 = worldgen::gen_scene(RngSeed{2}, 5, small_world());
    CHECK(s1.occupancy == s2.occupancy);
    CHECK(s1.latent == s2.latent);
    const auto s3 = worldgen::gen_scene(RngSeed{3}, 5, small_world());
    CHECK(s1.occupancy != s3.occupancy);
}

TEST_CASE("occupied fraction lands within bounds") {
    WorldConfig w;
    w.height = 32;
    w.width = 32;
    w.c_lat = 8;
    w.object_count_min = 5;
    w.object_count_max = 5;
    for (int sid = 0; sid < 20; ++sid) {
        const auto s = worldgen::gen_scene(RngSeed{77}, sid, w);
        CHECK(s.occupied_fraction() >= 0.02);
        CHECK(s.occupied_fraction() <= 0.15);
    }
}

TEST_CASE("object latents are unit norm and shared per object") {
    const auto s = worldgen::gen_scene(RngSeed{11}, 0, small_world());
    for (int i = 0; i < s.height * s.width; ++i) {
        if (!s.occupancy[static_cast<std::size_t>(i)]) continue;
        double norm = 0.0;
        for (int k = 0; k < s.c_lat; ++k) {
            const double v = s.latent[static_cast<std::size_t>(i) * s.c_lat + k];
            norm += v * v;
        }
        CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("gen_scene rejects undersized grids") {
    WorldConfig w = small_world();
    w.height = 4;
    CHECK_THROWS_AS(worldgen::gen_scene(RngSeed{1}, 0, w), core::ConfigError);
}

TEST_CASE("noiseless identity observation at identity pose is exactly mix*z + bias") {
    WorldConfig w = small_world();
    const auto scene = worldgen::gen_scene(RngSeed{21}, 0, w);
    ModalityParams p;
    p.modality_id = "clean";
    p.channels = 5;
    p.fov_radius = 1000.0;
    const auto spec = worldgen::realize_modality(p, w.c_lat, RngSeed{21});
    AgentConfig agent{0, "clean", {0.0, 0.0, 0.0}};
    const auto f = worldgen::observe(scene, spec, agent, RngSeed{5}, 1.0);

    for (int r = 0; r < w.height; ++r) {
        for (int c = 0; c < w.width; ++c) {
            const std::size_t cell = static_cast<std::size_t>(r) * w.width + c;
            for (int ch = 0; ch < 5; ++ch) {
                double want = 0.0;
                for (int k = 0; k < w.c_lat; ++k) {
                    want += spec.mix[static_cast<std::size_t>(ch) * w.c_lat + k] *
                            scene.latent[cell * w.c_lat + k];
                }
                CHECK(f.at(r, c, ch) == doctest::Approx(want).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("empty scene with zero bias and noise observes to all zeros") {
    WorldConfig w = small_world();
    w.object_count_min = 0;
    w.object_count_max = 0;
    const auto scene = worldgen::gen_scene(RngSeed{22}, 0, w);
    ModalityParams p;
    p.modality_id = "clean";
    p.channels = 4;
    p.fov_radius = 1000.0;
    const auto spec = worldgen::realize_modality(p, w.c_lat, RngSeed{22});
    AgentConfig agent{0, "clean", {1.0, -1.0, 0.3}};
    const auto f = worldgen::observe(scene, spec, agent, RngSeed{5}, 1.0);
    for (double v : f.data) CHECK(v == 0.0);
}

TEST_CASE("observation is deterministic in all inputs") {
    const auto scene = worldgen::gen_scene(RngSeed{23}, 0, small_world());
    ModalityParams p;
    p.modality_id = "noisy";
    p.channels = 4;
    p.noise_sigma = 0.1;
    p.dropout_rate = 0.3;
    const auto spec = worldgen::realize_modality(p, 4, RngSeed{23});
    AgentConfig agent{0, "noisy", {0.5, 0.25, 0.1}};
    const auto f1 = worldgen::observe(scene, spec, agent, RngSeed{9}, 1.0);
    const auto f2 = worldgen::observe(scene, spec, agent, RngSeed{9}, 1.0);
    CHECK(f1.data == f2.data);
    const auto f3 = worldgen::observe(scene, spec, agent, RngSeed{10}, 1.0);
    CHECK(f1.data != f3.data);
}

TEST_CASE("distinct modalities produce decorrelated channels") {
    ModalityParams pa;
    pa.modality_id = "one";
    pa.channels = 6;
    pa.noise_sigma = 0.05;
    ModalityParams pb;
    pb.modality_id = "two";
    pb.channels = 6;
    pb.nonlinearity = "tanh";
    pb.noise_sigma = 0.15;
    const auto sa = worldgen::realize_modality(pa, 4, RngSeed{31});
    const auto sb = worldgen::realize_modality(pb, 4, RngSeed{31});

    // pooled per-channel correlation over 10 scenes
    std::vector<double> sx(6, 0), sy(6, 0), sxx(6, 0), syy(6, 0), sxy(6, 0);
    std::size_t n = 0;
    for (int sid = 0; sid < 10; ++sid) {
        const auto scene = worldgen::gen_scene(RngSeed{31}, sid, small_world());
        AgentConfig agent{0, "x", {0.0, 0.0, 0.0}};
        const auto fa = worldgen::observe(scene, sa, agent, RngSeed{40 + static_cast<std::uint64_t>(sid)}, 1.0);
        const auto fb = worldgen::observe(scene, sb, agent, RngSeed{50 + static_cast<std::uint64_t>(sid)}, 1.0);
        for (std::size_t i = 0; i < fa.cell_count(); ++i) {
            for (std::size_t ch = 0; ch < 6; ++ch) {
                const double x = fa.data[i * 6 + ch];
                const double y = fb.data[i * 6 + ch];
                sx[ch] += x;
                sy[ch] += y;
                sxx[ch] += x * x;
                syy[ch] += y * y;
                sxy[ch] += x * y;
            }
        }
        n += fa.cell_count();
    }
    double corr_max = 0.0;
    for (std::size_t ch = 0; ch < 6; ++ch) {
        const double nx = static_cast<double>(n);
        const double cov = sxy[ch] / nx - sx[ch] / nx * sy[ch] / nx;
        const double vx = sxx[ch] / nx - sx[ch] / nx * sx[ch] / nx;
        const double vy = syy[ch] / nx - sy[ch] / nx * sy[ch] / nx;
        if (vx > 1e-12 && vy > 1e-12) {
            corr_max = std::max(corr_max, std::abs(cov / std::sqrt(vx * vy)));
        }
    }
    CHECK(corr_max < 0.99);
}

TEST_CASE("dataset plan honors isolation and co-occurrence") {
    const auto cfg = small_config();
    const auto m = worldgen::plan_dataset(cfg, RngSeed{70});

    // disjoint coverage for the isolated pair, and together they tile the train split
    std::set<int> ca(m.coverage.at("mA").begin(), m.coverage.at("mA").end());
    std::set<int> cb(m.coverage.at("mB").begin(), m.coverage.at("mB").end());
    for (int s : ca) CHECK(cb.count(s) == 0);
    CHECK(ca.size() + cb.size() == static_cast<std::size_t>(cfg.world.train_scenes));

    // mC is not isolated from mA: they share at least one scene
    std::set<int> cc(m.coverage.at("mC").begin(), m.coverage.at("mC").end());
    bool shared = false;
    for (int s : cc) shared = shared || ca.count(s) > 0;
    CHECK(shared);

    // eval split co-occurs everyone
    for (int sid : m.eval_scene_ids()) {
        const auto& rec = m.scene(sid);
        CHECK(rec.agents.size() == 3);
    }

    // determinism
    const auto m2 = worldgen::plan_dataset(cfg, RngSeed{70});
    CHECK(m2.scenes.size() == m.scenes.size());
    for (std::size_t i = 0; i < m.scenes.size(); ++i) {
        CHECK(m.scenes[i].agents.size() == m2.scenes[i].agents.size());
        for (std::size_t a = 0; a < m.scenes[i].agents.size(); ++a) {
            CHECK(m.scenes[i].agents[a].pose == m2.scenes[i].agents[a].pose);
        }
    }
}

TEST_CASE("two-modality isolation splits scenes exactly") {
    DatasetConfig cfg;
    cfg.world = small_world();
    cfg.world.train_scenes = 100;
    cfg.world.eval_scenes = 0;
    ModalityParams a;
    a.modality_id = "A";
    a.channels = 4;
    ModalityParams b;
    b.modality_id = "B";
    b.channels = 4;
    cfg.modalities = {a, b};
    cfg.isolation_pairs = {{"A", "B"}};
    const auto m = worldgen::plan_dataset(cfg, RngSeed{71});
    CHECK(m.coverage.at("A").size() + m.coverage.at("B").size() == 100);
}

TEST_CASE("grouped-and-isolated pair is rejected with the pair named") {
    auto cfg = small_config();
    cfg.groups["gAB"] = {"mA", "mB"};
    try {
        worldgen::plan_dataset(cfg, RngSeed{72});
        FAIL("expected ConstraintError");
    } catch (const core::ConstraintError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("mA") != std::string::npos);
        CHECK(msg.find("mB") != std::string::npos);
    }
}

TEST_CASE("self-isolation is rejected") {
    auto cfg = small_config();
    cfg.isolation_pairs.push_back({"mC", "mC"});
    CHECK_THROWS_AS(worldgen::plan_dataset(cfg, RngSeed{73}), core::ConstraintError);
}

TEST_CASE("dataset round-trips through disk and local views stay local") {
    const auto cfg = small_config();
    const auto dir = (fs::temp_directory_path() / "codealign_test_ds").string();
    fs::remove_all(dir);
    const auto manifest = worldgen::make_dataset(cfg, RngSeed{74}, dir);

    worldgen::DatasetReader reader(dir);
    CHECK(reader.manifest().config_hash == manifest.config_hash);

    // stored observation equals a fresh regeneration (through f32 and back)
    const int sid = manifest.coverage.at("mA").front();
    const auto& rec = manifest.scene(sid);
    const auto& agent = rec.agents.front();
    const auto stored = reader.load_observation(sid, agent.agent_id);
    const auto scene = reader.scene(sid);
    const auto fresh = worldgen::observe(
        scene, manifest.modality(agent.modality_id), agent,
        core::derive_seed(RngSeed{74}, "obs", static_cast<std::uint64_t>(sid),
                          static_cast<std::uint64_t>(agent.agent_id)),
        cfg.world.cell_size);
    REQUIRE(stored.data.size() == fresh.data.size());
    for (std::size_t i = 0; i < stored.data.size(); ++i) {
        CHECK(stored.data[i] == doctest::Approx(fresh.data[i]).epsilon(1e-6));
    }

    // the local view loads only source scenes/agents and records access
    reader.clear_access_log();
    worldgen::LocalDataView view(reader, "mA");
    CHECK(!view.scene_ids().empty());
    (void)view.load(view.scene_ids().front());
    CHECK(reader.accessed_files().size() == 1);

    // scenes covered only by mB are rejected before any file io
    const int foreign = manifest.coverage.at("mB").front();
    CHECK_THROWS_AS(view.load(foreign), core::ConstraintError);
    CHECK(reader.accessed_files().size() == 1);

    fs::remove_all(dir);
}

TEST_CASE("make_dataset is reproducible byte for byte") {
    const auto cfg = small_config();
    const auto d1 = (fs::temp_directory_path() / "codealign_ds_a").string();
    const auto d2 = (fs::temp_directory_path() / "codealign_ds_b").string();
    fs::remove_all(d1);
    fs::remove_all(d2);
    worldgen::make_dataset(cfg, RngSeed{75}, d1);
    worldgen::make_dataset(cfg, RngSeed{75}, d2);

    auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    };
    std::vector<fs::path> files1;
    for (const auto& e : fs::recursive_directory_iterator(d1)) {
        if (e.is_regular_file()) files1.push_back(fs::relative(e.path(), d1));
    }
    CHECK(!files1.empty());
    for (const auto& rel : files1) {
        CHECK(slurp(fs::path(d1) / rel) == slurp(fs::path(d2) / rel));
    }
    fs::remove_all(d1);
    fs::remove_all(d2);
}

TEST_CASE("empty-cell features carry no object information") {
    // correlation between empty-cell feature values and any object latent stays tiny
    ModalityParams p;
    p.modality_id = "noisy";
    p.channels = 4;
    p.noise_sigma = 0.1;
    const auto spec = worldgen::realize_modality(p, 4, RngSeed{80});

    std::vector<double> xs, ys;
    WorldConfig w = small_world();
    for (int sid = 0; sid < 40 && xs.size() < 1000; ++sid) {
        const auto scene = worldgen::gen_scene(RngSeed{80}, sid, w);
        AgentConfig agent{0, "noisy", {0.0, 0.0, 0.0}};
        const auto f = worldgen::observe(scene, spec, agent, RngSeed{90 + static_cast<std::uint64_t>(sid)}, 1.0);
        double latent0 = 0.0;
        for (int i = 0; i < w.height * w.width; ++i) {
            if (scene.occupancy[static_cast<std::size_t>(i)]) {
                latent0 = scene.latent[static_cast<std::size_t>(i) * w.c_lat];
                break;
            }
        }
        for (int i = 0; i < w.height * w.width && xs.size() < 1000; ++i) {
            if (!scene.occupancy[static_cast<std::size_t>(i)]) {
                xs.push_back(f.data[static_cast<std::size_t>(i) * 4]);
                ys.push_back(latent0);
            }
        }
    }
    const std::size_t n = xs.size();
    REQUIRE(n >= 1000);
    double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sx += xs[i];
        sy += ys[i];
        sxx += xs[i] * xs[i];
        syy += ys[i] * ys[i];
        sxy += xs[i] * ys[i];
    }
    const double nn = static_cast<double>(n);
    const double cov = sxy / nn - sx / nn * sy / nn;
    const double vx = sxx / nn - sx / nn * sx / nn;
    const double vy = syy / nn - sy / nn * sy / nn;
    if (vx > 1e-12 && vy > 1e-12) {
        CHECK(std::abs(cov / std::sqrt(vx * vy)) < 0.05);
    }
}
