#include "codealign/training.hpp"

#include <algorithm>
#include <cmath>

#include "codealign/metrics.hpp"
#include "codealign/warp.hpp"

namespace codealign::codespace {

using core::DataError;
using core::FeatureMap;
using core::Rng;
using core::RngSeed;
using core::derive_seed;
using worldgen::DatasetReader;

namespace {

/// Solves the square system A x = b by Gaussian elimination with partial
/// pivoting; A is n x n row-major and clobbered.
std::vector<double> solve_linear(std::vector<double> a, std::vector<double> b, int n) {
    for (int col = 0; col < n; ++col) {
        int pivot = col;
        for (int r = col + 1; r < n; ++r) {
            if (std::abs(a[static_cast<std::size_t>(r) * n + col]) >
                std::abs(a[static_cast<std::size_t>(pivot) * n + col])) {
                pivot = r;
            }
        }
        if (std::abs(a[static_cast<std::size_t>(pivot) * n + col]) < 1e-12) {
            throw core::NumericError("solve_linear: singular system");
        }
        if (pivot != col) {
            for (int c = 0; c < n; ++c) {
                std::swap(a[static_cast<std::size_t>(col) * n + c],
                          a[static_cast<std::size_t>(pivot) * n + c]);
            }
            std::swap(b[static_cast<std::size_t>(col)], b[static_cast<std::size_t>(pivot)]);
        }
        const double head = a[static_cast<std::size_t>(col) * n + col];
        for (int r = col + 1; r < n; ++r) {
            const double f = a[static_cast<std::size_t>(r) * n + col] / head;
            if (f == 0.0) continue;
            for (int c = col; c < n; ++c) {
                a[static_cast<std::size_t>(r) * n + c] -=
                    f * a[static_cast<std::size_t>(col) * n + c];
            }
            b[static_cast<std::size_t>(r)] -= f * b[static_cast<std::size_t>(col)];
        }
    }
    std::vector<double> x(static_cast<std::size_t>(n));
    for (int r = n - 1; r >= 0; --r) {
        double v = b[static_cast<std::size_t>(r)];
        for (int c = r + 1; c < n; ++c) {
            v -= a[static_cast<std::size_t>(r) * n + c] * x[static_cast<std::size_t>(c)];
        }
        x[static_cast<std::size_t>(r)] = v / a[static_cast<std::size_t>(r) * n + r];
    }
    return x;
}

struct SceneData {
    int scene_id = 0;
    worldgen::AgentConfig agent;
    FeatureMap obs;
    std::vector<double> truth;  // in the agent frame
};

std::vector<SceneData> preload(const std::string& modality, const DatasetReader& reader,
                               const std::vector<int>& scene_ids) {
    std::vector<SceneData> out;
    out.reserve(scene_ids.size());
    for (int sid : scene_ids) {
        const auto& rec = reader.manifest().scene(sid);
        const worldgen::AgentConfig* agent = nullptr;
        for (const auto& a : rec.agents) {
            if (a.modality_id == modality) {
                agent = &a;
                break;
            }
        }
        if (agent == nullptr) continue;
        SceneData d;
        d.scene_id = sid;
        d.agent = *agent;
        d.obs = reader.load_observation(sid, agent->agent_id);
        d.truth = reader.truth_in_frame(sid, agent->pose);
        out.push_back(std::move(d));
    }
    if (out.empty()) throw DataError("no data for modality " + modality);
    return out;
}

Adapter init_adapter(const std::string& modality, int in_dim, int out_dim, RngSeed seed) {
    Adapter a;
    a.owner = modality;
    a.in_dim = in_dim;
    a.out_dim = out_dim;
    a.weight.resize(static_cast<std::size_t>(out_dim) * in_dim);
    a.bias.assign(static_cast<std::size_t>(out_dim), 0.0);
    Rng rng(derive_seed(seed, "adapter", core::fnv1a64(modality)));
    const double scale = 1.0 / std::sqrt(static_cast<double>(in_dim));
    for (auto& v : a.weight) v = scale * rng.normal();
    return a;
}

/// Adapted features of every cell of every scene, stride-subsampled to the cap.
std::vector<double> gather_adapted(const std::vector<const std::vector<SceneData>*>& datasets,
                                   const std::map<std::string, Adapter>& adapters,
                                   std::size_t max_cells, std::size_t& count_out) {
    std::size_t total = 0;
    for (const auto* ds : datasets) {
        for (const auto& d : *ds) total += d.obs.cell_count();
    }
    const std::size_t stride = total > max_cells ? (total + max_cells - 1) / max_cells : 1;
    std::vector<double> feats;
    int c_z = 0;
    std::size_t cursor = 0, kept = 0;
    for (const auto* ds : datasets) {
        for (const auto& d : *ds) {
            const auto& adapter = adapters.at(d.agent.modality_id);
            c_z = adapter.out_dim;
            std::vector<double> a(static_cast<std::size_t>(c_z));
            for (std::size_t cell = 0; cell < d.obs.cell_count(); ++cell, ++cursor) {
                if (cursor % stride != 0) continue;
                adapter.apply(d.obs.cell(cell), a);
                feats.insert(feats.end(), a.begin(), a.end());
                ++kept;
            }
        }
    }
    count_out = kept;
    return feats;
}

/// Replaces near-duplicate codes with far-away features so the trained book
/// always satisfies the distinct-codes invariant.
std::size_t separate_duplicate_codes(Codebook& book, const std::vector<double>& feats,
                                     std::size_t count) {
    std::size_t fixed = 0;
    for (std::uint32_t i = 0; i < book.d; ++i) {
        for (std::uint32_t j = i + 1; j < book.d; ++j) {
            double s = 0.0;
            for (int k = 0; k < book.c_z; ++k) {
                const double d = book.code(i)[static_cast<std::size_t>(k)] -
                                 book.code(j)[static_cast<std::size_t>(k)];
                s += d * d;
            }
            if (std::sqrt(s) > 1e-9) continue;
            // farthest feature from its nearest code takes over code j
            std::size_t far = 0;
            double far_d = -1.0;
            for (std::size_t f = 0; f < count; ++f) {
                double best = std::numeric_limits<double>::infinity();
                for (std::uint32_t l = 0; l < book.d; ++l) {
                    double ss = 0.0;
                    for (int k = 0; k < book.c_z; ++k) {
                        const double d = feats[f * book.c_z + static_cast<std::size_t>(k)] -
                                         book.code(l)[static_cast<std::size_t>(k)];
                        ss += d * d;
                    }
                    best = std::min(best, ss);
                }
                if (best > far_d) {
                    far_d = best;
                    far = f;
                }
            }
            std::copy(feats.begin() + static_cast<std::ptrdiff_t>(far * book.c_z),
                      feats.begin() + static_cast<std::ptrdiff_t>((far + 1) * book.c_z),
                      book.code(j).begin());
            ++fixed;
        }
    }
    return fixed;
}

core::DetectionMap quantized_scores(const FeatureMap& obs, const Adapter& adapter,
                                    const Codebook& book, const DetectionHead& head) {
    return head.score_map(decode(quantize(obs, adapter, book), book));
}

}  // namespace

PretrainResult pretrain_pipeline(const std::string& modality, const DatasetReader& reader,
                                 int epochs, double lr, RngSeed seed) {
    if (epochs < 0) throw core::ConfigError("pretrain: epochs must be >= 0");
    const auto& manifest = reader.manifest();
    auto it = manifest.coverage.find(modality);
    if (it == manifest.coverage.end() || it->second.empty()) {
        throw DataError("no data for modality " + modality);
    }
    const auto data = preload(modality, reader, it->second);
    const int c = data.front().obs.channels;

    PretrainResult out;
    out.head.owner = modality;
    out.head.weight.resize(static_cast<std::size_t>(c));
    Rng rng(derive_seed(seed, "head", core::fnv1a64(modality)));
    for (auto& w : out.head.weight) w = 0.1 * rng.normal();
    out.head.bias = 0.0;

    std::vector<double> dw(static_cast<std::size_t>(c));
    for (int epoch = 0; epoch < epochs; ++epoch) {
        double epoch_loss = 0.0;
        for (const auto& d : data) {
            std::fill(dw.begin(), dw.end(), 0.0);
            double db = 0.0, loss = 0.0;
            const double inv_n = 1.0 / static_cast<double>(d.obs.cell_count());
            for (std::size_t cell = 0; cell < d.obs.cell_count(); ++cell) {
                const auto f = d.obs.cell(cell);
                const auto r = core::logistic_xent(out.head.logit(f), d.truth[cell]);
                loss += r.loss * inv_n;
                const double g = r.grad * inv_n;
                for (int k = 0; k < c; ++k) dw[static_cast<std::size_t>(k)] += g * f[static_cast<std::size_t>(k)];
                db += g;
            }
            core::sgd_step_inplace(out.head.weight, dw, lr);
            out.head.bias -= lr * db;
            epoch_loss += loss / static_cast<double>(data.size());
        }
        out.loss_curve.push_back(epoch_loss);
    }
    out.head.frozen = true;

    // single-agent AP on the evaluation split, cells pooled across frames
    std::vector<core::DetectionMap> scores;
    std::vector<std::vector<double>> truths;
    for (int sid : manifest.eval_scene_ids()) {
        const auto& rec = manifest.scene(sid);
        for (const auto& a : rec.agents) {
            if (a.modality_id != modality) continue;
            const auto obs = reader.load_observation(sid, a.agent_id);
            scores.push_back(out.head.score_map(obs));
            truths.push_back(reader.truth_in_frame(sid, a.pose));
            break;
        }
    }
    if (!scores.empty()) out.eval_ap = eval::cell_ap(scores, truths);
    return out;
}

AdapterGrad codespace_grad(const FeatureMap& obs, const std::vector<double>& truth,
                           const Adapter& adapter, const Codebook* book,
                           const DetectionHead& head, double beta_commit) {
    if (truth.size() != obs.cell_count()) throw core::ShapeError("codespace_grad: truth size");
    const int c_in = adapter.in_dim;
    const int c_z = adapter.out_dim;

    AdapterGrad out;
    out.d_weight.assign(adapter.weight.size(), 0.0);
    out.d_bias.assign(adapter.bias.size(), 0.0);

    std::vector<double> a(static_cast<std::size_t>(c_z));
    std::vector<double> da(static_cast<std::size_t>(c_z));
    const double inv_n = 1.0 / static_cast<double>(obs.cell_count());
    for (std::size_t cell = 0; cell < obs.cell_count(); ++cell) {
        const auto f = obs.cell(cell);
        adapter.apply(f, a);

        std::span<const double> q(a.data(), a.size());
        if (book != nullptr) {
            q = book->code(nearest_code(a, *book));
        }
        const auto det = core::logistic_xent(head.logit(q), truth[cell]);
        out.det_loss += det.loss * inv_n;
        const double g = det.grad * inv_n;

        double cell_sq = 0.0;
        for (int k = 0; k < c_z; ++k) {
            const double resid = a[static_cast<std::size_t>(k)] - q[static_cast<std::size_t>(k)];
            cell_sq += resid * resid;
            // straight-through detection gradient + commitment pull
            da[static_cast<std::size_t>(k)] =
                g * head.weight[static_cast<std::size_t>(k)] +
                2.0 * beta_commit * resid * inv_n;
        }
        out.recon_mse += cell_sq / static_cast<double>(c_z) * inv_n;

        for (int k = 0; k < c_z; ++k) {
            const double gk = da[static_cast<std::size_t>(k)];
            if (gk == 0.0) continue;
            double* row = out.d_weight.data() + static_cast<std::size_t>(k) * c_in;
            for (int i = 0; i < c_in; ++i) row[i] += gk * f[static_cast<std::size_t>(i)];
            out.d_bias[static_cast<std::size_t>(k)] += gk;
        }
    }
    return out;
}

DetectionHead refit_head(const DetectionHead& pretrained_head,
                         const std::vector<FeatureMap>& observations, const Adapter& adapter) {
    const int c_z = adapter.out_dim;
    const int n = c_z + 1;
    std::vector<double> ata(static_cast<std::size_t>(n) * n, 0.0);
    std::vector<double> atb(static_cast<std::size_t>(n), 0.0);
    std::vector<double> a(static_cast<std::size_t>(c_z));
    std::vector<double> row(static_cast<std::size_t>(n));

    for (const auto& obs : observations) {
        for (std::size_t cell = 0; cell < obs.cell_count(); ++cell) {
            const auto f = obs.cell(cell);
            adapter.apply(f, a);
            const double target = pretrained_head.logit(f);
            for (int k = 0; k < c_z; ++k) row[static_cast<std::size_t>(k)] = a[static_cast<std::size_t>(k)];
            row[static_cast<std::size_t>(c_z)] = 1.0;
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < n; ++j) {
                    ata[static_cast<std::size_t>(i) * n + j] +=
                        row[static_cast<std::size_t>(i)] * row[static_cast<std::size_t>(j)];
                }
                atb[static_cast<std::size_t>(i)] += row[static_cast<std::size_t>(i)] * target;
            }
        }
    }
    for (int i = 0; i < n; ++i) ata[static_cast<std::size_t>(i) * n + i] += 1e-8;  // ridge

    const auto x = solve_linear(std::move(ata), std::move(atb), n);
    DetectionHead head;
    head.owner = adapter.owner;
    head.weight.assign(x.begin(), x.begin() + c_z);
    head.bias = x[static_cast<std::size_t>(c_z)];
    head.frozen = true;
    return head;
}

CodespaceArtifact train_codespace_engine(const std::string& owner,
                                         const std::vector<std::string>& members,
                                         const DatasetReader& reader,
                                         const std::map<std::string, PretrainResult>& pretrained,
                                         const CodespaceTrainConfig& cfg, RngSeed seed,
                                         bool head_trainable) {
    if (cfg.d < 2) throw core::ConfigError("train_codespace: D must be >= 2");
    if (members.empty()) throw core::ConfigError("train_codespace: no members");
    const auto& manifest = reader.manifest();

    // Group members must be pairwise non-isolated.
    for (std::size_t i = 0; i < members.size(); ++i) {
        for (std::size_t j = i + 1; j < members.size(); ++j) {
            if (manifest.isolated(members[i], members[j])) {
                throw core::ConstraintError("group code space requires co-occurrence, but (" +
                                            members[i] + ", " + members[j] + ") are isolated");
            }
        }
    }
    for (const auto& m : members) {
        if (!pretrained.count(m)) {
            throw core::MissingArtifactError("pretrained pipeline missing for " + m);
        }
    }

    // Scenes where every member is present.
    std::vector<int> scene_ids;
    {
        auto it = manifest.coverage.find(members.front());
        if (it == manifest.coverage.end()) throw DataError("no data for modality " + members.front());
        scene_ids = it->second;
        for (std::size_t m = 1; m < members.size(); ++m) {
            auto jt = manifest.coverage.find(members[m]);
            if (jt == manifest.coverage.end()) throw DataError("no data for modality " + members[m]);
            std::vector<int> inter;
            std::set_intersection(scene_ids.begin(), scene_ids.end(), jt->second.begin(),
                                  jt->second.end(), std::back_inserter(inter));
            scene_ids = std::move(inter);
        }
        if (scene_ids.empty()) {
            throw DataError("no co-occurring scenes for group " + owner);
        }
    }

    std::map<std::string, std::vector<SceneData>> data;
    std::map<std::string, Adapter> adapters;
    for (const auto& m : members) {
        data[m] = preload(m, reader, scene_ids);
        adapters[m] = init_adapter(m, data[m].front().obs.channels, cfg.c_z, seed);
    }

    CodespaceArtifact art;
    art.owner = owner;
    art.seed = seed.value;
    art.config_hash = manifest.config_hash;

    // Codebook init over the first epoch's adapted features.
    std::vector<const std::vector<SceneData>*> datasets;
    for (const auto& m : members) datasets.push_back(&data.at(m));
    std::size_t count = 0;
    auto feats = gather_adapted(datasets, adapters, cfg.max_lloyd_cells, count);
    art.book = kmeanspp_init(feats, count, cfg.c_z, cfg.d, owner, derive_seed(seed, "bookinit"));

    // Frozen-backend realization: one least-squares re-fit of the first
    // member's pretrained head onto C_z, then frozen (or trained, for groups).
    {
        std::vector<FeatureMap> obs;
        for (const auto& d : data.at(members.front())) obs.push_back(d.obs);
        art.head = refit_head(pretrained.at(members.front()).head, obs, adapters.at(members.front()));
        art.head.owner = owner;
        art.head.frozen = !head_trainable;
    }

    const double cell_size = manifest.cell_size;
    std::vector<double> head_dw(static_cast<std::size_t>(cfg.c_z));

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        // (a) Lloyd step on the current adapted features
        feats = gather_adapted(datasets, adapters, cfg.max_lloyd_cells, count);
        const auto lr_result = lloyd_update(feats, count, art.book);
        art.book = lr_result.book;

        EpochStats stats;
        stats.epoch = epoch;
        stats.lloyd_reseeds = lr_result.reseeded;

        // (b) gradient pass, one update per scene
        double det_acc = 0.0, mse_acc = 0.0;
        for (std::size_t s = 0; s < scene_ids.size(); ++s) {
            if (members.size() == 1) {
                const auto& d = data.at(members.front())[s];
                auto g = codespace_grad(d.obs, d.truth, adapters.at(members.front()), &art.book,
                                        art.head, cfg.beta_commit);
                det_acc += g.det_loss;
                mse_acc += g.recon_mse;
                auto& adapter = adapters.at(members.front());
                core::sgd_step_inplace(adapter.weight, g.d_weight, cfg.lr);
                core::sgd_step_inplace(adapter.bias, g.d_bias, cfg.lr);
                if (head_trainable) {
                    // head gradient through the decoded (quantized) features
                    const auto dec =
                        decode(quantize(d.obs, adapter, art.book), art.book);
                    std::fill(head_dw.begin(), head_dw.end(), 0.0);
                    double head_db = 0.0;
                    const double inv_n = 1.0 / static_cast<double>(dec.cell_count());
                    for (std::size_t cell = 0; cell < dec.cell_count(); ++cell) {
                        const auto q = dec.cell(cell);
                        const auto r = core::logistic_xent(art.head.logit(q), d.truth[cell]);
                        const double g1 = r.grad * inv_n;
                        for (int k = 0; k < cfg.c_z; ++k) {
                            head_dw[static_cast<std::size_t>(k)] += g1 * q[static_cast<std::size_t>(k)];
                        }
                        head_db += g1;
                    }
                    core::sgd_step_inplace(art.head.weight, head_dw, cfg.lr);
                    art.head.bias -= cfg.lr * head_db;
                }
                continue;
            }

            // Group path: fuse all members in the ego frame; detection loss on
            // the fused map, pairwise similarity between warped decodings.
            const int sid = scene_ids[s];
            struct MemberState {
                const SceneData* d = nullptr;
                FeatureMap adapted;
                CodeMap codes;
                FeatureMap warped;              // decoded, in ego frame
                std::vector<std::int32_t> idx;  // ego cell -> member cell
                FeatureMap d_warped;            // gradient wrt warped features
            };
            std::vector<MemberState> states(members.size());

            const SceneData* ego = nullptr;
            for (const auto& m : members) {
                const auto& d = data.at(m)[s];
                if (ego == nullptr || d.agent.agent_id < ego->agent.agent_id) ego = &d;
            }
            const auto& truth = ego->truth;

            for (std::size_t m = 0; m < members.size(); ++m) {
                auto& st = states[m];
                st.d = &data.at(members[m])[s];
                const auto& adapter = adapters.at(members[m]);
                st.adapted = adapter.apply(st.d->obs);
                st.codes = quantize(st.d->obs, adapter, art.book);
                const auto dec = decode(st.codes, art.book);
                st.idx = collab::warp_indices(dec.height, dec.width, st.d->agent.pose,
                                              ego->agent.pose, cell_size);
                st.warped = collab::warp(dec, st.d->agent.pose, ego->agent.pose, 0.0, cell_size);
                st.d_warped = FeatureMap(dec.height, dec.width, cfg.c_z);
            }

            // element-wise max fusion with provenance
            const auto& first = states[0].warped;
            FeatureMap fused = first;
            std::vector<std::uint16_t> winner(fused.data.size(), 0);
            for (std::size_t m = 1; m < states.size(); ++m) {
                for (std::size_t i = 0; i < fused.data.size(); ++i) {
                    if (states[m].warped.data[i] > fused.data[i]) {
                        fused.data[i] = states[m].warped.data[i];
                        winner[i] = static_cast<std::uint16_t>(m);
                    }
                }
            }

            std::fill(head_dw.begin(), head_dw.end(), 0.0);
            double head_db = 0.0;
            const double inv_n = 1.0 / static_cast<double>(fused.cell_count());
            double det_loss = 0.0;
            for (std::size_t cell = 0; cell < fused.cell_count(); ++cell) {
                const auto q = fused.cell(cell);
                const auto r = core::logistic_xent(art.head.logit(q), truth[cell]);
                det_loss += r.loss * inv_n;
                const double g = r.grad * inv_n;
                for (int k = 0; k < cfg.c_z; ++k) {
                    const std::size_t flat = cell * static_cast<std::size_t>(cfg.c_z) +
                                             static_cast<std::size_t>(k);
                    states[winner[flat]].d_warped.data[flat] += g * art.head.weight[static_cast<std::size_t>(k)];
                    head_dw[static_cast<std::size_t>(k)] += g * q[static_cast<std::size_t>(k)];
                }
                head_db += r.grad * inv_n;
            }
            det_acc += det_loss;

            // pairwise similarity on warped decoded features
            if (cfg.lambda_sim > 0.0) {
                for (std::size_t i = 0; i < states.size(); ++i) {
                    for (std::size_t j = i + 1; j < states.size(); ++j) {
                        const auto sl = core::smooth_l1(states[i].warped, states[j].warped,
                                                        cfg.smooth_l1_beta);
                        for (std::size_t k = 0; k < sl.grad.data.size(); ++k) {
                            states[i].d_warped.data[k] += cfg.lambda_sim * sl.grad.data[k];
                            states[j].d_warped.data[k] -= cfg.lambda_sim * sl.grad.data[k];
                        }
                    }
                }
            }

            // scatter ego-frame gradients back through the warp, then
            // straight-through to each adapter, plus the commitment pull
            for (std::size_t m = 0; m < states.size(); ++m) {
                auto& st = states[m];
                const auto& adapter = adapters.at(members[m]);
                FeatureMap d_source(st.adapted.height, st.adapted.width, cfg.c_z);
                for (std::size_t cell = 0; cell < st.idx.size(); ++cell) {
                    if (st.idx[cell] < 0) continue;
                    const std::size_t src = static_cast<std::size_t>(st.idx[cell]);
                    for (int k = 0; k < cfg.c_z; ++k) {
                        d_source.data[src * static_cast<std::size_t>(cfg.c_z) + static_cast<std::size_t>(k)] +=
                            st.d_warped.data[cell * static_cast<std::size_t>(cfg.c_z) + static_cast<std::size_t>(k)];
                    }
                }
                std::vector<double> dw(adapter.weight.size(), 0.0);
                std::vector<double> db(adapter.bias.size(), 0.0);
                const double inv_cells = 1.0 / static_cast<double>(st.adapted.cell_count());
                double mse = 0.0;
                for (std::size_t cell = 0; cell < st.adapted.cell_count(); ++cell) {
                    const auto f = st.d->obs.cell(cell);
                    const auto a = st.adapted.cell(cell);
                    const auto q = art.book.code(st.codes.indices[cell]);
                    double cell_sq = 0.0;
                    for (int k = 0; k < cfg.c_z; ++k) {
                        const double resid = a[static_cast<std::size_t>(k)] - q[static_cast<std::size_t>(k)];
                        cell_sq += resid * resid;
                        const double gk =
                            d_source.data[cell * static_cast<std::size_t>(cfg.c_z) + static_cast<std::size_t>(k)] +
                            2.0 * cfg.beta_commit * resid * inv_cells;
                        if (gk == 0.0) continue;
                        double* row = dw.data() + static_cast<std::size_t>(k) * adapter.in_dim;
                        for (int in = 0; in < adapter.in_dim; ++in) {
                            row[in] += gk * f[static_cast<std::size_t>(in)];
                        }
                        db[static_cast<std::size_t>(k)] += gk;
                    }
                    mse += cell_sq / static_cast<double>(cfg.c_z) * inv_cells;
                }
                mse_acc += mse / static_cast<double>(members.size());
                auto& mutable_adapter = adapters.at(members[m]);
                core::sgd_step_inplace(mutable_adapter.weight, dw, cfg.lr);
                core::sgd_step_inplace(mutable_adapter.bias, db, cfg.lr);
            }
            if (head_trainable) {
                core::sgd_step_inplace(art.head.weight, head_dw, cfg.lr);
                art.head.bias -= cfg.lr * head_db;
            }
        }

        stats.detection_loss = det_acc / static_cast<double>(scene_ids.size());
        stats.reconstruction_mse = mse_acc / static_cast<double>(scene_ids.size());

        if (cfg.eval_ap_each_epoch) {
            std::vector<core::DetectionMap> scores;
            std::vector<std::vector<double>> truths;
            for (int sid : manifest.eval_scene_ids()) {
                const auto& rec = manifest.scene(sid);
                for (const auto& a : rec.agents) {
                    if (a.modality_id != members.front()) continue;
                    const auto obs = reader.load_observation(sid, a.agent_id);
                    scores.push_back(
                        quantized_scores(obs, adapters.at(members.front()), art.book, art.head));
                    truths.push_back(reader.truth_in_frame(sid, a.pose));
                    break;
                }
            }
            if (!scores.empty()) stats.eval_ap = eval::cell_ap(scores, truths);
        }
        art.log.push_back(stats);
    }

    // final hygiene: the distinct-codes invariant must hold on the artifact
    feats = gather_adapted(datasets, adapters, cfg.max_lloyd_cells, count);
    separate_duplicate_codes(art.book, feats, count);
    art.book.validate();
    art.adapters = std::move(adapters);
    return art;
}

CodespaceArtifact train_codespace(const std::string& modality, const DatasetReader& reader,
                                  const PretrainResult& pretrained,
                                  const CodespaceTrainConfig& cfg, RngSeed seed) {
    std::map<std::string, PretrainResult> p{{modality, pretrained}};
    return train_codespace_engine(modality, {modality}, reader, p, cfg, seed, false);
}

CodespaceArtifact train_group_codespace(const std::string& owner,
                                        const std::vector<std::string>& members,
                                        const DatasetReader& reader,
                                        const std::map<std::string, PretrainResult>& pretrained,
                                        const CodespaceTrainConfig& cfg, RngSeed seed) {
    return train_codespace_engine(owner, members, reader, pretrained, cfg, seed, true);
}

}  // namespace codealign::codespace
