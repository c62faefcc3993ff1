#include "codealign/worldgen.hpp"

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace codealign::worldgen {

using core::ConfigError;
using core::ConstraintError;
using core::CorruptionError;
using core::DataError;
using core::Rng;
using core::derive_seed;
using json = nlohmann::json;

namespace fs = std::filesystem;

double LatentScene::occupied_fraction() const {
    std::size_t occ = 0;
    for (auto v : occupancy) occ += v ? 1 : 0;
    return static_cast<double>(occ) / static_cast<double>(occupancy.size());
}

std::vector<double> LatentScene::occupancy_as_doubles() const {
    std::vector<double> out(occupancy.size());
    for (std::size_t i = 0; i < occupancy.size(); ++i) out[i] = occupancy[i] ? 1.0 : 0.0;
    return out;
}

Nonlinearity nonlinearity_from_string(const std::string& s) {
    if (s == "identity") return Nonlinearity::identity;
    if (s == "tanh") return Nonlinearity::tanh;
    if (s == "relu") return Nonlinearity::relu;
    throw ConfigError("unknown nonlinearity: " + s);
}

std::string to_string(Nonlinearity n) {
    switch (n) {
        case Nonlinearity::identity: return "identity";
        case Nonlinearity::tanh: return "tanh";
        case Nonlinearity::relu: return "relu";
    }
    throw ConfigError("bad nonlinearity enum");
}

namespace {

double apply_nonlinearity(Nonlinearity n, double v) {
    switch (n) {
        case Nonlinearity::identity: return v;
        case Nonlinearity::tanh: return std::tanh(v);
        case Nonlinearity::relu: return v > 0.0 ? v : 0.0;
    }
    return v;
}

/// Rank of a rows x cols matrix by Gaussian elimination with partial pivoting.
int matrix_rank(std::vector<double> m, int rows, int cols, double tol = 1e-9) {
    int rank = 0;
    for (int col = 0; col < cols && rank < rows; ++col) {
        int pivot = -1;
        double best = tol;
        for (int r = rank; r < rows; ++r) {
            const double v = std::abs(m[static_cast<std::size_t>(r) * cols + col]);
            if (v > best) {
                best = v;
                pivot = r;
            }
        }
        if (pivot < 0) continue;
        for (int c = 0; c < cols; ++c) {
            std::swap(m[static_cast<std::size_t>(rank) * cols + c],
                      m[static_cast<std::size_t>(pivot) * cols + c]);
        }
        const double head = m[static_cast<std::size_t>(rank) * cols + col];
        for (int r = rank + 1; r < rows; ++r) {
            const double factor = m[static_cast<std::size_t>(r) * cols + col] / head;
            for (int c = col; c < cols; ++c) {
                m[static_cast<std::size_t>(r) * cols + c] -=
                    factor * m[static_cast<std::size_t>(rank) * cols + c];
            }
        }
        ++rank;
    }
    return rank;
}

}  // namespace

void ModalitySpec::validate() const {
    if (modality_id.empty()) throw ConfigError("modality id must not be empty");
    if (channels < 1 || c_lat < 1) throw ConfigError("modality dims must be >= 1");
    if (mix.size() != static_cast<std::size_t>(channels) * c_lat) {
        throw ConfigError("modality mix matrix has wrong size");
    }
    if (bias.size() != static_cast<std::size_t>(channels)) {
        throw ConfigError("modality bias has wrong size");
    }
    if (noise_sigma < 0.0 || range_falloff < 0.0 || fov_radius <= 0.0) {
        throw ConfigError("modality noise/falloff/fov out of range");
    }
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
        throw ConfigError("modality dropout_rate must be in [0, 1)");
    }
    const int want = std::min(channels, c_lat);
    if (matrix_rank(mix, channels, c_lat) < want) {
        throw ConfigError("modality mix matrix is rank-deficient: " + modality_id);
    }
}

// ---------------------------------------------------------------------------
// Scene generation
// ---------------------------------------------------------------------------

LatentScene gen_scene(core::RngSeed seed, int scene_id, const WorldConfig& cfg) {
    if (cfg.height < 8 || cfg.width < 8) throw ConfigError("gen_scene: grid must be >= 8x8");
    if (cfg.c_lat < 2) throw ConfigError("gen_scene: c_lat must be >= 2");
    if (cfg.object_count_min < 0 || cfg.object_count_max < cfg.object_count_min) {
        throw ConfigError("gen_scene: bad object count range");
    }

    Rng rng(derive_seed(seed, "scene", static_cast<std::uint64_t>(scene_id)));
    const int count =
        cfg.object_count_min +
        static_cast<int>(rng.uniform_int(
            static_cast<std::uint64_t>(cfg.object_count_max - cfg.object_count_min) + 1));

    const std::size_t cells = static_cast<std::size_t>(cfg.height) * cfg.width;
    constexpr int kLayoutAttempts = 64;
    constexpr int kPlacementRetries = 128;

    for (int attempt = 0; attempt < kLayoutAttempts; ++attempt) {
        LatentScene scene;
        scene.scene_id = scene_id;
        scene.height = cfg.height;
        scene.width = cfg.width;
        scene.c_lat = cfg.c_lat;
        scene.occupancy.assign(cells, 0);
        scene.latent.assign(cells * cfg.c_lat, 0.0);

        struct Rect {
            int r, c, h, w;
        };
        std::vector<Rect> rects;
        bool placed_all = true;
        for (int obj = 0; obj < count; ++obj) {
            bool placed = false;
            for (int retry = 0; retry < kPlacementRetries; ++retry) {
                int oh = 1 + static_cast<int>(rng.uniform_int(3));  // 1..3
                int ow = 2 + static_cast<int>(rng.uniform_int(4));  // 2..5
                if (rng.uniform() < 0.5) std::swap(oh, ow);
                const int r = static_cast<int>(rng.uniform_int(cfg.height - oh + 1));
                const int c = static_cast<int>(rng.uniform_int(cfg.width - ow + 1));
                bool overlap = false;
                for (int rr = r; rr < r + oh && !overlap; ++rr) {
                    for (int cc = c; cc < c + ow; ++cc) {
                        if (scene.occupancy[static_cast<std::size_t>(rr) * cfg.width + cc]) {
                            overlap = true;
                            break;
                        }
                    }
                }
                if (overlap) continue;
                for (int rr = r; rr < r + oh; ++rr) {
                    for (int cc = c; cc < c + ow; ++cc) {
                        scene.occupancy[static_cast<std::size_t>(rr) * cfg.width + cc] = 1;
                    }
                }
                rects.push_back({r, c, oh, ow});
                placed = true;
                break;
            }
            if (!placed) {
                placed_all = false;
                break;
            }
        }
        if (!placed_all) continue;

        if (count > 0) {
            const double frac = scene.occupied_fraction();
            if (frac < cfg.occupancy_min || frac > cfg.occupancy_max) continue;
        }

        for (const auto& rect : rects) {
            std::vector<double> v(cfg.c_lat);
            for (int k = 0; k < cfg.c_lat; ++k) v[k] = rng.normal();
            if (cfg.latent_cone_spread >= 0.0) {
                for (int k = 0; k < cfg.c_lat; ++k) v[k] *= cfg.latent_cone_spread;
                v[0] += 1.0;
            }
            double norm = 0.0;
            for (double x : v) norm += x * x;
            norm = std::sqrt(norm);
            if (norm <= 0.0) {
                v.assign(cfg.c_lat, 0.0);
                v[0] = 1.0;
                norm = 1.0;
            }
            for (auto& x : v) x /= norm;
            for (int rr = rect.r; rr < rect.r + rect.h; ++rr) {
                for (int cc = rect.c; cc < rect.c + rect.w; ++cc) {
                    const std::size_t cell = static_cast<std::size_t>(rr) * cfg.width + cc;
                    std::copy(v.begin(), v.end(), scene.latent.begin() + cell * cfg.c_lat);
                }
            }
        }
        return scene;
    }
    throw DataError("gen_scene: could not place objects within occupancy bounds for scene " +
                    std::to_string(scene_id));
}

LatentScene gen_scene(core::RngSeed seed, int height, int width, int c_lat, int count_min,
                      int count_max) {
    WorldConfig cfg;
    cfg.height = height;
    cfg.width = width;
    cfg.c_lat = c_lat;
    cfg.object_count_min = count_min;
    cfg.object_count_max = count_max;
    return gen_scene(seed, 0, cfg);
}

ModalitySpec realize_modality(const ModalityParams& params, int c_lat, core::RngSeed seed) {
    ModalitySpec spec;
    spec.modality_id = params.modality_id;
    spec.channels = params.channels;
    spec.c_lat = c_lat;
    spec.nonlinearity = nonlinearity_from_string(params.nonlinearity);
    spec.noise_sigma = params.noise_sigma;
    spec.dropout_rate = params.dropout_rate;
    spec.range_falloff = params.range_falloff;
    spec.fov_radius = params.fov_radius;
    spec.bias.assign(static_cast<std::size_t>(params.channels), 0.0);

    Rng rng(derive_seed(seed, "mix", core::fnv1a64(params.modality_id)));
    spec.mix.resize(static_cast<std::size_t>(params.channels) * c_lat);
    const double scale = 1.0 / std::sqrt(static_cast<double>(c_lat));
    for (auto& v : spec.mix) v = scale * rng.normal();
    spec.validate();
    return spec;
}

FeatureMap observe(const LatentScene& scene, const ModalitySpec& spec, const AgentConfig& agent,
                   core::RngSeed seed, double cell_size) {
    if (spec.c_lat != scene.c_lat) throw core::ShapeError("observe: c_lat mismatch");
    const int h = scene.height, w = scene.width;

    const Pose world{0.0, 0.0, 0.0};
    const auto idx = collab::warp_indices(h, w, world, agent.pose, cell_size);

    Rng noise_rng(derive_seed(seed, "noise"));
    Rng drop_rng(derive_seed(seed, "dropout"));

    FeatureMap out(h, w, spec.channels);
    std::size_t i = 0;
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c, ++i) {
            const double* z =
                idx[i] >= 0 ? scene.latent.data() + static_cast<std::size_t>(idx[i]) * scene.c_lat
                            : nullptr;
            const bool occupied = idx[i] >= 0 && scene.occupancy[static_cast<std::size_t>(idx[i])];
            const double dist = collab::cell_range(r, c, h, w, cell_size);
            const double atten = spec.range_falloff > 0.0 ? std::exp(-spec.range_falloff * dist)
                                                          : 1.0;
            double* cell = out.data.data() + i * spec.channels;
            for (int ch = 0; ch < spec.channels; ++ch) {
                double v = spec.bias[static_cast<std::size_t>(ch)];
                if (z != nullptr) {
                    const double* row = spec.mix.data() + static_cast<std::size_t>(ch) * spec.c_lat;
                    for (int k = 0; k < spec.c_lat; ++k) v += row[k] * z[k];
                }
                v = apply_nonlinearity(spec.nonlinearity, v) * atten;
                if (spec.noise_sigma > 0.0) v += spec.noise_sigma * noise_rng.normal();
                cell[ch] = v;
            }
            if (dist > spec.fov_radius) {
                std::fill(cell, cell + spec.channels, 0.0);
            }
            if (occupied && spec.dropout_rate > 0.0 && drop_rng.uniform() < spec.dropout_rate) {
                std::fill(cell, cell + spec.channels, 0.0);
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dataset planning
// ---------------------------------------------------------------------------

const ModalitySpec& DatasetManifest::modality(const std::string& id) const {
    for (const auto& m : modalities) {
        if (m.modality_id == id) return m;
    }
    throw ConfigError("unknown modality: " + id);
}

const SceneRecord& DatasetManifest::scene(int scene_id) const {
    for (const auto& s : scenes) {
        if (s.scene_id == scene_id) return s;
    }
    throw ConfigError("unknown scene: " + std::to_string(scene_id));
}

std::vector<int> DatasetManifest::train_scene_ids() const {
    std::vector<int> out;
    for (const auto& s : scenes) {
        if (!s.eval_split) out.push_back(s.scene_id);
    }
    return out;
}

std::vector<int> DatasetManifest::eval_scene_ids() const {
    std::vector<int> out;
    for (const auto& s : scenes) {
        if (s.eval_split) out.push_back(s.scene_id);
    }
    return out;
}

std::string DatasetManifest::owner_of(const std::string& modality_id) const {
    for (const auto& [owner, members] : groups) {
        if (std::find(members.begin(), members.end(), modality_id) != members.end()) {
            return owner;
        }
    }
    return modality_id;
}

std::vector<std::string> DatasetManifest::members_of(const std::string& owner) const {
    auto it = groups.find(owner);
    if (it != groups.end()) return it->second;
    return {owner};
}

bool DatasetManifest::isolated(const std::string& a, const std::string& b) const {
    for (const auto& [x, y] : isolation_pairs) {
        if ((x == a && y == b) || (x == b && y == a)) return true;
    }
    return false;
}

namespace {

std::string canonical_config_string(const DatasetConfig& config) {
    json j;
    j["world"] = {{"height", config.world.height},
                  {"width", config.world.width},
                  {"c_lat", config.world.c_lat},
                  {"cell_size", config.world.cell_size},
                  {"object_count", {config.world.object_count_min, config.world.object_count_max}},
                  {"occupancy", {config.world.occupancy_min, config.world.occupancy_max}},
                  {"latent_cone_spread", config.world.latent_cone_spread},
                  {"agent_pose_extent", config.world.agent_pose_extent},
                  {"train_scenes", config.world.train_scenes},
                  {"eval_scenes", config.world.eval_scenes}};
    j["modalities"] = json::array();
    for (const auto& m : config.modalities) {
        j["modalities"].push_back({{"id", m.modality_id},
                                   {"channels", m.channels},
                                   {"nonlinearity", m.nonlinearity},
                                   {"noise_sigma", m.noise_sigma},
                                   {"dropout_rate", m.dropout_rate},
                                   {"range_falloff", m.range_falloff},
                                   {"fov_radius", m.fov_radius}});
    }
    j["isolation_pairs"] = json::array();
    for (const auto& [a, b] : config.isolation_pairs) j["isolation_pairs"].push_back({a, b});
    j["groups"] = config.groups;
    return j.dump();
}

}  // namespace

DatasetManifest plan_dataset(const DatasetConfig& config, core::RngSeed seed) {
    if (config.modalities.empty()) throw ConfigError("make_dataset: no modalities configured");

    std::vector<std::string> ids;
    for (const auto& m : config.modalities) ids.push_back(m.modality_id);
    auto known = [&](const std::string& id) {
        return std::find(ids.begin(), ids.end(), id) != ids.end();
    };
    {
        std::set<std::string> uniq(ids.begin(), ids.end());
        if (uniq.size() != ids.size()) throw ConfigError("make_dataset: duplicate modality ids");
    }
    for (const auto& [a, b] : config.isolation_pairs) {
        if (!known(a) || !known(b)) throw ConfigError("make_dataset: isolation pair names unknown modality");
        if (a == b) throw ConstraintError("make_dataset: modality isolated from itself: " + a);
    }
    std::map<std::string, std::string> owner_of;
    for (const auto& id : ids) owner_of[id] = id;
    for (const auto& [owner, members] : config.groups) {
        if (members.empty()) throw ConfigError("make_dataset: empty group " + owner);
        for (const auto& m : members) {
            if (!known(m)) throw ConfigError("make_dataset: group member unknown: " + m);
            owner_of[m] = owner;
        }
    }
    // A pair cannot be required both co-occurring (same group) and isolated.
    for (const auto& [a, b] : config.isolation_pairs) {
        if (owner_of[a] == owner_of[b]) {
            throw ConstraintError("make_dataset: pair (" + a + ", " + b +
                                  ") is grouped but also required isolated");
        }
    }

    // Color owners so that isolated owners land in different scene blocks.
    std::vector<std::string> owners;
    for (const auto& id : ids) {
        const auto& o = owner_of[id];
        if (std::find(owners.begin(), owners.end(), o) == owners.end()) owners.push_back(o);
    }
    auto owners_isolated = [&](const std::string& oa, const std::string& ob) {
        for (const auto& [a, b] : config.isolation_pairs) {
            if ((owner_of[a] == oa && owner_of[b] == ob) ||
                (owner_of[a] == ob && owner_of[b] == oa)) {
                return true;
            }
        }
        return false;
    };
    std::map<std::string, int> block_of;
    int n_blocks = 0;
    for (const auto& o : owners) {
        int block = 0;
        for (;; ++block) {
            bool ok = true;
            for (const auto& prev : owners) {
                if (!block_of.count(prev)) continue;
                if (block_of[prev] == block && owners_isolated(o, prev)) {
                    ok = false;
                    break;
                }
            }
            if (ok) break;
        }
        block_of[o] = block;
        n_blocks = std::max(n_blocks, block + 1);
    }
    if (config.world.train_scenes < n_blocks) {
        throw ConstraintError("make_dataset: fewer train scenes than isolation blocks");
    }

    DatasetManifest manifest;
    manifest.height = config.world.height;
    manifest.width = config.world.width;
    manifest.c_lat = config.world.c_lat;
    manifest.cell_size = config.world.cell_size;
    manifest.seed = seed;
    manifest.config_hash = core::fnv1a64(canonical_config_string(config));
    manifest.world = config.world;
    manifest.isolation_pairs = config.isolation_pairs;
    manifest.groups = config.groups;
    for (const auto& m : config.modalities) {
        manifest.modalities.push_back(realize_modality(m, config.world.c_lat, seed));
    }

    const int total = config.world.train_scenes + config.world.eval_scenes;
    for (int s = 0; s < total; ++s) {
        SceneRecord rec;
        rec.scene_id = s;
        rec.eval_split = s >= config.world.train_scenes;
        const int block = rec.eval_split ? -1 : s % n_blocks;
        Rng rng(derive_seed(seed, "agents", static_cast<std::uint64_t>(s)));
        int agent_id = 0;
        for (const auto& m : config.modalities) {
            if (!rec.eval_split && block_of[owner_of[m.modality_id]] != block) continue;
            AgentConfig agent;
            agent.agent_id = agent_id++;
            agent.modality_id = m.modality_id;
            const double e = config.world.agent_pose_extent;
            agent.pose.x = rng.uniform(-e, e);
            agent.pose.y = rng.uniform(-e, e);
            agent.pose.heading = Pose::normalize_heading(
                rng.uniform(-std::numbers::pi, std::numbers::pi));
            rec.agents.push_back(agent);
        }
        if (!rec.eval_split) {
            for (const auto& a : rec.agents) manifest.coverage[a.modality_id].push_back(s);
        }
        manifest.scenes.push_back(std::move(rec));
    }

    // Verify the isolation condition holds, exhaustively.
    for (const auto& [a, b] : config.isolation_pairs) {
        const auto& ca = manifest.coverage[a];
        const auto& cb = manifest.coverage[b];
        std::vector<int> inter;
        std::set_intersection(ca.begin(), ca.end(), cb.begin(), cb.end(),
                              std::back_inserter(inter));
        if (!inter.empty()) {
            throw ConstraintError("make_dataset: isolation violated for (" + a + ", " + b + ")");
        }
    }
    return manifest;
}

// ---------------------------------------------------------------------------
// Storage
// ---------------------------------------------------------------------------

std::string observation_relpath(int scene_id, int agent_id) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "obs/s%05d_a%03d.bin", scene_id, agent_id);
    return buf;
}

void save_observation(const FeatureMap& f, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write observation file: " + path);
    auto put_u32 = [&](std::uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                              static_cast<unsigned char>((v >> 8) & 0xff),
                              static_cast<unsigned char>((v >> 16) & 0xff),
                              static_cast<unsigned char>((v >> 24) & 0xff)};
        out.write(reinterpret_cast<const char*>(b), 4);
    };
    put_u32(static_cast<std::uint32_t>(f.height));
    put_u32(static_cast<std::uint32_t>(f.width));
    put_u32(static_cast<std::uint32_t>(f.channels));
    put_u32(0);
    std::vector<float> vals(f.data.size());
    for (std::size_t i = 0; i < f.data.size(); ++i) vals[i] = static_cast<float>(f.data[i]);
    out.write(reinterpret_cast<const char*>(vals.data()),
              static_cast<std::streamsize>(vals.size() * sizeof(float)));
    if (!out) throw DataError("short write on observation file: " + path);
}

FeatureMap load_observation_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read observation file: " + path);
    unsigned char header[16];
    in.read(reinterpret_cast<char*>(header), 16);
    if (in.gcount() != 16) throw CorruptionError("observation header truncated: " + path);
    auto get_u32 = [&](int off) {
        return static_cast<std::uint32_t>(header[off]) |
               (static_cast<std::uint32_t>(header[off + 1]) << 8) |
               (static_cast<std::uint32_t>(header[off + 2]) << 16) |
               (static_cast<std::uint32_t>(header[off + 3]) << 24);
    };
    const auto h = get_u32(0), w = get_u32(4), c = get_u32(8);
    if (h < 1 || w < 1 || c < 1 || h > 65535 || w > 65535 || c > 65535) {
        throw CorruptionError("observation header has bad dims: " + path);
    }
    FeatureMap f(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c));
    std::vector<float> vals(f.data.size());
    in.read(reinterpret_cast<char*>(vals.data()),
            static_cast<std::streamsize>(vals.size() * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(vals.size() * sizeof(float))) {
        throw CorruptionError("observation payload truncated: " + path);
    }
    for (std::size_t i = 0; i < vals.size(); ++i) f.data[i] = static_cast<double>(vals[i]);
    return f;
}

namespace {

json pose_to_json(const Pose& p) { return {{"x", p.x}, {"y", p.y}, {"heading", p.heading}}; }

Pose pose_from_json(const json& j) {
    return {j.at("x").get<double>(), j.at("y").get<double>(), j.at("heading").get<double>()};
}

json modality_to_json(const ModalitySpec& m) {
    return {{"id", m.modality_id},
            {"channels", m.channels},
            {"c_lat", m.c_lat},
            {"mix", m.mix},
            {"bias", m.bias},
            {"nonlinearity", to_string(m.nonlinearity)},
            {"noise_sigma", m.noise_sigma},
            {"dropout_rate", m.dropout_rate},
            {"range_falloff", m.range_falloff},
            {"fov_radius", m.fov_radius}};
}

ModalitySpec modality_from_json(const json& j) {
    ModalitySpec m;
    m.modality_id = j.at("id").get<std::string>();
    m.channels = j.at("channels").get<int>();
    m.c_lat = j.at("c_lat").get<int>();
    m.mix = j.at("mix").get<std::vector<double>>();
    m.bias = j.at("bias").get<std::vector<double>>();
    m.nonlinearity = nonlinearity_from_string(j.at("nonlinearity").get<std::string>());
    m.noise_sigma = j.at("noise_sigma").get<double>();
    m.dropout_rate = j.at("dropout_rate").get<double>();
    m.range_falloff = j.at("range_falloff").get<double>();
    m.fov_radius = j.at("fov_radius").get<double>();
    return m;
}

json world_to_json(const WorldConfig& w) {
    return {{"height", w.height},
            {"width", w.width},
            {"c_lat", w.c_lat},
            {"cell_size", w.cell_size},
            {"object_count_min", w.object_count_min},
            {"object_count_max", w.object_count_max},
            {"occupancy_min", w.occupancy_min},
            {"occupancy_max", w.occupancy_max},
            {"latent_cone_spread", w.latent_cone_spread},
            {"agent_pose_extent", w.agent_pose_extent},
            {"train_scenes", w.train_scenes},
            {"eval_scenes", w.eval_scenes}};
}

WorldConfig world_from_json(const json& j) {
    WorldConfig w;
    w.height = j.at("height").get<int>();
    w.width = j.at("width").get<int>();
    w.c_lat = j.at("c_lat").get<int>();
    w.cell_size = j.at("cell_size").get<double>();
    w.object_count_min = j.at("object_count_min").get<int>();
    w.object_count_max = j.at("object_count_max").get<int>();
    w.occupancy_min = j.at("occupancy_min").get<double>();
    w.occupancy_max = j.at("occupancy_max").get<double>();
    w.latent_cone_spread = j.at("latent_cone_spread").get<double>();
    w.agent_pose_extent = j.at("agent_pose_extent").get<double>();
    w.train_scenes = j.at("train_scenes").get<int>();
    w.eval_scenes = j.at("eval_scenes").get<int>();
    return w;
}

}  // namespace

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
    json j;
    j["height"] = manifest.height;
    j["width"] = manifest.width;
    j["c_lat"] = manifest.c_lat;
    j["cell_size"] = manifest.cell_size;
    j["seed"] = manifest.seed.value;
    j["config_hash"] = manifest.config_hash;
    j["world"] = world_to_json(manifest.world);
    j["modalities"] = json::array();
    for (const auto& m : manifest.modalities) j["modalities"].push_back(modality_to_json(m));
    j["scenes"] = json::array();
    for (const auto& s : manifest.scenes) {
        json agents = json::array();
        for (const auto& a : s.agents) {
            agents.push_back({{"agent_id", a.agent_id},
                              {"modality", a.modality_id},
                              {"pose", pose_to_json(a.pose)}});
        }
        j["scenes"].push_back(
            {{"scene_id", s.scene_id}, {"eval", s.eval_split}, {"agents", agents}});
    }
    j["coverage"] = manifest.coverage;
    j["isolation_pairs"] = json::array();
    for (const auto& [a, b] : manifest.isolation_pairs) j["isolation_pairs"].push_back({a, b});
    j["groups"] = manifest.groups;

    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write manifest: " + path);
    out << j.dump(2) << "\n";
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw core::MissingArtifactError("manifest not found: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw CorruptionError("manifest parse error: " + std::string(e.what()));
    }
    DatasetManifest m;
    m.height = j.at("height").get<int>();
    m.width = j.at("width").get<int>();
    m.c_lat = j.at("c_lat").get<int>();
    m.cell_size = j.at("cell_size").get<double>();
    m.seed.value = j.at("seed").get<std::uint64_t>();
    m.config_hash = j.at("config_hash").get<std::uint64_t>();
    m.world = world_from_json(j.at("world"));
    for (const auto& mj : j.at("modalities")) m.modalities.push_back(modality_from_json(mj));
    for (const auto& sj : j.at("scenes")) {
        SceneRecord rec;
        rec.scene_id = sj.at("scene_id").get<int>();
        rec.eval_split = sj.at("eval").get<bool>();
        for (const auto& aj : sj.at("agents")) {
            AgentConfig a;
            a.agent_id = aj.at("agent_id").get<int>();
            a.modality_id = aj.at("modality").get<std::string>();
            a.pose = pose_from_json(aj.at("pose"));
            rec.agents.push_back(a);
        }
        m.scenes.push_back(std::move(rec));
    }
    m.coverage = j.at("coverage").get<std::map<std::string, std::vector<int>>>();
    for (const auto& pj : j.at("isolation_pairs")) {
        m.isolation_pairs.emplace_back(pj.at(0).get<std::string>(), pj.at(1).get<std::string>());
    }
    m.groups = j.at("groups").get<std::map<std::string, std::vector<std::string>>>();
    return m;
}

DatasetManifest make_dataset(const DatasetConfig& config, core::RngSeed seed,
                             const std::string& out_dir) {
    DatasetManifest manifest = plan_dataset(config, seed);
    fs::create_directories(fs::path(out_dir) / "obs");
    for (const auto& rec : manifest.scenes) {
        const LatentScene scene = gen_scene(seed, rec.scene_id, config.world);
        for (const auto& agent : rec.agents) {
            const auto& spec = manifest.modality(agent.modality_id);
            const FeatureMap obs =
                observe(scene, spec, agent,
                        derive_seed(seed, "obs", static_cast<std::uint64_t>(rec.scene_id),
                                    static_cast<std::uint64_t>(agent.agent_id)),
                        config.world.cell_size);
            save_observation(obs, (fs::path(out_dir) /
                                   observation_relpath(rec.scene_id, agent.agent_id))
                                      .string());
        }
    }
    save_manifest(manifest, (fs::path(out_dir) / "manifest.json").string());
    return manifest;
}

// ---------------------------------------------------------------------------
// Readers
// ---------------------------------------------------------------------------

DatasetReader::DatasetReader(std::string dir)
    : dir_(std::move(dir)), manifest_(load_manifest((fs::path(dir_) / "manifest.json").string())) {}

FeatureMap DatasetReader::load_observation(int scene_id, int agent_id) const {
    const std::string rel = observation_relpath(scene_id, agent_id);
    {
        std::lock_guard<std::mutex> lock(mutex_);
        accessed_.push_back(rel);
    }
    return load_observation_file((fs::path(dir_) / rel).string());
}

LatentScene DatasetReader::scene(int scene_id) const {
    return gen_scene(manifest_.seed, scene_id, manifest_.world);
}

std::vector<double> DatasetReader::truth_in_frame(int scene_id, const Pose& pose) const {
    const LatentScene s = scene(scene_id);
    return collab::warp_scalar(s.occupancy_as_doubles(), s.height, s.width, Pose{}, pose, 0.0,
                               manifest_.cell_size);
}

std::vector<std::string> DatasetReader::accessed_files() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return accessed_;
}

void DatasetReader::clear_access_log() const {
    std::lock_guard<std::mutex> lock(mutex_);
    accessed_.clear();
}

LocalDataView::LocalDataView(const DatasetReader& reader, std::string source_modality)
    : reader_(reader), source_(std::move(source_modality)) {
    const auto& manifest = reader_.manifest();
    manifest.modality(source_);  // existence check
    auto it = manifest.coverage.find(source_);
    if (it == manifest.coverage.end() || it->second.empty()) {
        throw DataError("no train coverage for modality " + source_);
    }
    scene_ids_ = it->second;
    scene_set_.insert(scene_ids_.begin(), scene_ids_.end());
    for (int sid : scene_ids_) {
        const auto& rec = manifest.scene(sid);
        for (const auto& a : rec.agents) {
            if (a.modality_id == source_) {
                agent_by_scene_[sid] = a;
                break;
            }
        }
        if (!agent_by_scene_.count(sid)) {
            throw DataError("coverage lists scene without source agent: " + std::to_string(sid));
        }
    }
}

void LocalDataView::check_scene(int scene_id) const {
    if (!scene_set_.count(scene_id)) {
        throw ConstraintError("isolation guard: scene " + std::to_string(scene_id) +
                              " is outside the local data of " + source_);
    }
}

FeatureMap LocalDataView::load(int scene_id) const {
    check_scene(scene_id);
    return reader_.load_observation(scene_id, agent_by_scene_.at(scene_id).agent_id);
}

const AgentConfig& LocalDataView::agent(int scene_id) const {
    check_scene(scene_id);
    return agent_by_scene_.at(scene_id);
}

LatentScene LocalDataView::scene(int scene_id) const {
    check_scene(scene_id);
    return reader_.scene(scene_id);
}

std::vector<double> LocalDataView::truth_in_frame(int scene_id, const Pose& pose) const {
    check_scene(scene_id);
    return reader_.truth_in_frame(scene_id, pose);
}

double LocalDataView::cell_size() const { return reader_.manifest().cell_size; }

const ModalitySpec& LocalDataView::modality_spec() const {
    return reader_.manifest().modality(source_);
}

}  // namespace codealign::worldgen
