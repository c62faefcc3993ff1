#include "codealign/codespace.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <unordered_set>

#include "json.hpp"

namespace codealign::codespace {

using core::ConfigError;
using core::CorruptionError;
using core::DataError;
using core::ShapeError;
using json = nlohmann::json;

double Codebook::min_pairwise_distance() const {
    double best = std::numeric_limits<double>::infinity();
    for (std::uint32_t i = 0; i < d; ++i) {
        for (std::uint32_t j = i + 1; j < d; ++j) {
            double s = 0.0;
            const double* a = codes.data() + static_cast<std::size_t>(i) * c_z;
            const double* b = codes.data() + static_cast<std::size_t>(j) * c_z;
            for (int k = 0; k < c_z; ++k) {
                const double delta = a[k] - b[k];
                s += delta * delta;
            }
            best = std::min(best, std::sqrt(s));
        }
    }
    return best;
}

void Codebook::validate() const {
    if (d < 2) throw ConfigError("codebook size D must be >= 2");
    if (c_z < 1) throw ConfigError("codebook dim must be >= 1");
    if (codes.size() != static_cast<std::size_t>(d) * c_z) {
        throw ShapeError("codebook payload does not match dims");
    }
    for (double v : codes) {
        if (!std::isfinite(v)) throw core::NumericError("codebook contains non-finite entry");
    }
    if (min_pairwise_distance() <= 1e-9) {
        throw core::NumericError("codebook has (near-)identical codes");
    }
}

Adapter Adapter::identity(const std::string& owner, int dim) {
    Adapter a;
    a.owner = owner;
    a.in_dim = dim;
    a.out_dim = dim;
    a.weight.assign(static_cast<std::size_t>(dim) * dim, 0.0);
    for (int i = 0; i < dim; ++i) a.weight[static_cast<std::size_t>(i) * dim + i] = 1.0;
    a.bias.assign(static_cast<std::size_t>(dim), 0.0);
    return a;
}

void Adapter::apply(std::span<const double> in, std::span<double> out) const {
    for (int o = 0; o < out_dim; ++o) {
        double v = bias[static_cast<std::size_t>(o)];
        const double* row = weight.data() + static_cast<std::size_t>(o) * in_dim;
        for (int i = 0; i < in_dim; ++i) v += row[i] * in[static_cast<std::size_t>(i)];
        out[static_cast<std::size_t>(o)] = v;
    }
}

FeatureMap Adapter::apply(const FeatureMap& f) const {
    if (f.channels != in_dim) throw ShapeError("adapter input dim mismatch");
    FeatureMap out(f.height, f.width, out_dim);
    for (std::size_t cell = 0; cell < f.cell_count(); ++cell) {
        apply(f.cell(cell), {out.data.data() + cell * out_dim, static_cast<std::size_t>(out_dim)});
    }
    return out;
}

void CodeMap::validate() const {
    if (height < 1 || width < 1) throw ShapeError("CodeMap dims must be >= 1");
    if (indices.size() != static_cast<std::size_t>(height) * width) {
        throw ShapeError("CodeMap payload does not match dims");
    }
    for (auto idx : indices) {
        if (idx >= codebook_ref.d) throw CorruptionError("CodeMap index out of range");
    }
}

double DetectionHead::logit(std::span<const double> features) const {
    if (features.size() != weight.size()) throw ShapeError("detection head dim mismatch");
    double v = bias;
    for (std::size_t i = 0; i < weight.size(); ++i) v += weight[i] * features[i];
    return v;
}

double DetectionHead::score(std::span<const double> features) const {
    return core::sigmoid(logit(features));
}

core::DetectionMap DetectionHead::score_map(const FeatureMap& f) const {
    core::DetectionMap out(f.height, f.width);
    for (std::size_t cell = 0; cell < f.cell_count(); ++cell) {
        out.scores[cell] = score(f.cell(cell));
    }
    return out;
}

std::uint32_t nearest_code(std::span<const double> adapted, const Codebook& book) {
    std::uint32_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::uint32_t l = 0; l < book.d; ++l) {
        const double* code = book.codes.data() + static_cast<std::size_t>(l) * book.c_z;
        double s = 0.0;
        for (int k = 0; k < book.c_z; ++k) {
            const double delta = adapted[static_cast<std::size_t>(k)] - code[k];
            s += delta * delta;
        }
        if (s < best_d) {  // strict: ties keep the lowest index
            best_d = s;
            best = l;
        }
    }
    return best;
}

CodeMap quantize(const FeatureMap& f, const Adapter& adapter, const Codebook& book) {
    if (f.channels != adapter.in_dim) throw ShapeError("quantize: feature channels != adapter input");
    if (adapter.out_dim != book.c_z) throw ShapeError("quantize: adapter output != codebook dim");

    CodeMap map;
    map.height = f.height;
    map.width = f.width;
    map.codebook_ref = {book.owner, book.d};
    map.indices.resize(f.cell_count());
    std::vector<double> adapted(static_cast<std::size_t>(book.c_z));
    for (std::size_t cell = 0; cell < f.cell_count(); ++cell) {
        adapter.apply(f.cell(cell), adapted);
        map.indices[cell] = nearest_code(adapted, book);
    }
    return map;
}

FeatureMap decode(const CodeMap& map, const Codebook& book) {
    if (map.codebook_ref.owner != book.owner || map.codebook_ref.d != book.d) {
        throw ConfigError("decode: code map references a different codebook");
    }
    FeatureMap out(map.height, map.width, book.c_z);
    for (std::size_t cell = 0; cell < map.indices.size(); ++cell) {
        const std::uint32_t idx = map.indices[cell];
        if (idx >= book.d) throw CorruptionError("decode: index out of range");
        const double* code = book.codes.data() + static_cast<std::size_t>(idx) * book.c_z;
        std::copy(code, code + book.c_z, out.data.begin() + cell * book.c_z);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Codebook fitting
// ---------------------------------------------------------------------------

namespace {

double sq_dist(const double* a, const double* b, int n) {
    double s = 0.0;
    for (int k = 0; k < n; ++k) {
        const double d = a[k] - b[k];
        s += d * d;
    }
    return s;
}

std::size_t count_distinct(const std::vector<double>& features, std::size_t count, int c_z,
                           std::size_t stop_at) {
    std::unordered_set<std::string> seen;
    for (std::size_t i = 0; i < count && seen.size() < stop_at; ++i) {
        std::string key;
        key.reserve(static_cast<std::size_t>(c_z) * sizeof(double));
        for (int k = 0; k < c_z; ++k) {
            double v = features[i * c_z + k];
            if (v == 0.0) v = 0.0;  // collapse -0.0
            key.append(reinterpret_cast<const char*>(&v), sizeof(double));
        }
        seen.insert(std::move(key));
    }
    return seen.size();
}

}  // namespace

double distortion(const std::vector<double>& features, std::size_t count, const Codebook& book) {
    double total = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
        const double* f = features.data() + i * book.c_z;
        double best = std::numeric_limits<double>::infinity();
        for (std::uint32_t l = 0; l < book.d; ++l) {
            best = std::min(best, sq_dist(f, book.codes.data() +
                                                 static_cast<std::size_t>(l) * book.c_z,
                                          book.c_z));
        }
        total += best;
    }
    return total;
}

LloydResult lloyd_update(const std::vector<double>& features, std::size_t count,
                         const Codebook& book) {
    const int c_z = book.c_z;
    if (features.size() < count * static_cast<std::size_t>(c_z)) {
        throw ShapeError("lloyd_update: feature buffer too small");
    }
    if (count_distinct(features, count, c_z, book.d) < book.d) {
        throw DataError("lloyd_update: fewer distinct features than codes");
    }

    LloydResult out;
    out.book = book;

    std::vector<std::uint32_t> assign(count);
    std::vector<double> dist(count);
    std::vector<double> sums(static_cast<std::size_t>(book.d) * c_z, 0.0);
    std::vector<std::size_t> sizes(book.d, 0);
    double before = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
        const double* f = features.data() + i * c_z;
        std::uint32_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::uint32_t l = 0; l < book.d; ++l) {
            const double s = sq_dist(f, book.codes.data() + static_cast<std::size_t>(l) * c_z, c_z);
            if (s < best_d) {
                best_d = s;
                best = l;
            }
        }
        assign[i] = best;
        dist[i] = best_d;
        before += best_d;
        sizes[best]++;
        double* sum = sums.data() + static_cast<std::size_t>(best) * c_z;
        for (int k = 0; k < c_z; ++k) sum[k] += f[k];
    }
    out.distortion_before = before;

    for (std::uint32_t l = 0; l < book.d; ++l) {
        if (sizes[l] == 0) continue;
        double* code = out.book.codes.data() + static_cast<std::size_t>(l) * c_z;
        const double* sum = sums.data() + static_cast<std::size_t>(l) * c_z;
        for (int k = 0; k < c_z; ++k) code[k] = sum[k] / static_cast<double>(sizes[l]);
    }

    // Empty clusters: re-seed with the features farthest from their codes,
    // skipping duplicates so re-seeded codes stay distinct.
    std::vector<std::size_t> order(count);
    for (std::size_t i = 0; i < count; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return dist[a] > dist[b]; });
    std::size_t cursor = 0;
    for (std::uint32_t l = 0; l < book.d; ++l) {
        if (sizes[l] != 0) continue;
        while (cursor < count) {
            const double* f = features.data() + order[cursor] * c_z;
            ++cursor;
            bool dup = false;
            for (std::uint32_t m = 0; m < book.d && !dup; ++m) {
                if (m == l || sizes[m] == 0) continue;
                dup = sq_dist(f, out.book.codes.data() + static_cast<std::size_t>(m) * c_z, c_z) ==
                      0.0;
            }
            if (dup) continue;
            std::copy(f, f + c_z, out.book.codes.begin() + static_cast<std::size_t>(l) * c_z);
            out.reseeded++;
            break;
        }
        if (cursor > count) break;
    }

    out.distortion_after = distortion(features, count, out.book);
    return out;
}

Codebook kmeanspp_init(const std::vector<double>& features, std::size_t count, int c_z,
                       std::uint32_t d, const std::string& owner, core::RngSeed seed) {
    if (d < 2) throw ConfigError("kmeanspp_init: D must be >= 2");
    if (count < d) throw DataError("kmeanspp_init: fewer features than codes");
    if (count_distinct(features, count, c_z, d) < d) {
        throw DataError("kmeanspp_init: fewer distinct features than codes");
    }

    Codebook book;
    book.owner = owner;
    book.d = d;
    book.c_z = c_z;
    book.codes.resize(static_cast<std::size_t>(d) * c_z);

    core::Rng rng(seed);
    std::size_t first = static_cast<std::size_t>(rng.uniform_int(count));
    std::copy(features.begin() + first * c_z, features.begin() + (first + 1) * c_z,
              book.codes.begin());

    std::vector<double> min_d(count, std::numeric_limits<double>::infinity());
    for (std::uint32_t chosen = 1; chosen < d; ++chosen) {
        const double* last = book.codes.data() + static_cast<std::size_t>(chosen - 1) * c_z;
        std::size_t far = 0;
        double far_d = -1.0;
        for (std::size_t i = 0; i < count; ++i) {
            min_d[i] = std::min(min_d[i], sq_dist(features.data() + i * c_z, last, c_z));
            if (min_d[i] > far_d) {
                far_d = min_d[i];
                far = i;
            }
        }
        if (far_d <= 0.0) throw DataError("kmeanspp_init: ran out of distinct features");
        std::copy(features.begin() + far * c_z, features.begin() + (far + 1) * c_z,
                  book.codes.begin() + static_cast<std::size_t>(chosen) * c_z);
    }
    return book;
}

// ---------------------------------------------------------------------------
// Artifact IO
// ---------------------------------------------------------------------------

const Adapter& CodespaceArtifact::adapter(const std::string& modality) const {
    auto it = adapters.find(modality);
    if (it == adapters.end()) {
        throw core::MissingArtifactError("no adapter for modality " + modality + " in codespace " +
                                         owner);
    }
    return it->second;
}

void save_codespace(const CodespaceArtifact& artifact, const std::string& path) {
    json j;
    j["owner"] = artifact.owner;
    j["d"] = artifact.book.d;
    j["c_z"] = artifact.book.c_z;
    j["codes"] = artifact.book.codes;
    json adapters = json::object();
    for (const auto& [mod, a] : artifact.adapters) {
        adapters[mod] = {{"in_dim", a.in_dim},
                         {"out_dim", a.out_dim},
                         {"weight", a.weight},
                         {"bias", a.bias}};
    }
    j["adapters"] = adapters;
    j["head"] = {{"weight", artifact.head.weight},
                 {"bias", artifact.head.bias},
                 {"frozen", artifact.head.frozen}};
    j["config_hash"] = artifact.config_hash;
    j["seed"] = artifact.seed;
    json log = json::array();
    for (const auto& e : artifact.log) {
        log.push_back({{"epoch", e.epoch},
                       {"detection_loss", e.detection_loss},
                       {"reconstruction_mse", e.reconstruction_mse},
                       {"eval_ap", e.eval_ap},
                       {"lloyd_reseeds", e.lloyd_reseeds}});
    }
    j["log"] = log;

    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write codespace artifact: " + path);
    out << j.dump(2) << "\n";
}

CodespaceArtifact load_codespace(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw core::MissingArtifactError("codespace artifact not found: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw CorruptionError("codespace artifact parse error: " + std::string(e.what()));
    }
    CodespaceArtifact a;
    a.owner = j.at("owner").get<std::string>();
    a.book.owner = a.owner;
    a.book.d = j.at("d").get<std::uint32_t>();
    a.book.c_z = j.at("c_z").get<int>();
    a.book.codes = j.at("codes").get<std::vector<double>>();
    for (const auto& [mod, aj] : j.at("adapters").items()) {
        Adapter adapter;
        adapter.owner = mod;
        adapter.in_dim = aj.at("in_dim").get<int>();
        adapter.out_dim = aj.at("out_dim").get<int>();
        adapter.weight = aj.at("weight").get<std::vector<double>>();
        adapter.bias = aj.at("bias").get<std::vector<double>>();
        a.adapters[mod] = std::move(adapter);
    }
    a.head.owner = a.owner;
    a.head.weight = j.at("head").at("weight").get<std::vector<double>>();
    a.head.bias = j.at("head").at("bias").get<double>();
    a.head.frozen = j.at("head").at("frozen").get<bool>();
    a.config_hash = j.at("config_hash").get<std::uint64_t>();
    a.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& ej : j.at("log")) {
        EpochStats e;
        e.epoch = ej.at("epoch").get<int>();
        e.detection_loss = ej.at("detection_loss").get<double>();
        e.reconstruction_mse = ej.at("reconstruction_mse").get<double>();
        e.eval_ap = ej.at("eval_ap").get<double>();
        e.lloyd_reseeds = ej.at("lloyd_reseeds").get<std::size_t>();
        a.log.push_back(e);
    }
    return a;
}

}  // namespace codealign::codespace
