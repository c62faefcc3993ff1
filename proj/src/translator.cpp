#include "codealign/translator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"

namespace codealign::translator {

using codespace::DetectionHead;
using core::ConfigError;
using core::DataError;
using core::MissingArtifactError;
using core::Rng;
using core::RngSeed;
using core::derive_seed;
using json = nlohmann::json;

InputSource input_source_from_string(const std::string& s) {
    if (s == "encoded") return InputSource::encoded;
    if (s == "adapted") return InputSource::adapted;
    if (s == "codemap") return InputSource::codemap;
    throw ConfigError("unknown translator input source: " + s);
}

std::string to_string(InputSource s) {
    switch (s) {
        case InputSource::encoded: return "encoded";
        case InputSource::adapted: return "adapted";
        case InputSource::codemap: return "codemap";
    }
    throw ConfigError("bad input source enum");
}

const TranslatorMultiHead::Head& TranslatorMultiHead::head(const std::string& target) const {
    for (const auto& h : heads) {
        if (h.target == target) return h;
    }
    throw ConfigError("translator has no head for target " + target);
}

std::size_t TranslatorMultiHead::param_count() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < layer_w.size(); ++i) n += layer_w[i].size() + layer_b[i].size();
    for (const auto& h : heads) n += h.weight.size() + h.bias.size();
    return n;
}

TranslatorOneToOne make_one_to_one(const std::string& source, const std::string& target,
                                   int in_dim, std::uint32_t target_d, InputSource input_source,
                                   RngSeed seed) {
    TranslatorOneToOne t;
    t.source = source;
    t.target = target;
    t.input_source = input_source;
    t.in_dim = in_dim;
    t.out_dim = static_cast<int>(target_d);
    t.weight.resize(static_cast<std::size_t>(t.out_dim) * in_dim);
    t.bias.assign(static_cast<std::size_t>(t.out_dim), 0.0);
    Rng rng(derive_seed(seed, "translator", core::fnv1a64(source + "->" + target)));
    const double scale = 1.0 / std::sqrt(static_cast<double>(in_dim));
    for (auto& v : t.weight) v = scale * rng.normal();
    return t;
}

TranslatorMultiHead make_multihead(const std::string& source, int in_dim, int hidden, int depth,
                                   const std::vector<std::pair<std::string, std::uint32_t>>& targets,
                                   InputSource input_source, RngSeed seed) {
    if (depth < 1) throw ConfigError("multihead depth must be >= 1");
    if (targets.empty()) throw ConfigError("multihead needs at least one target");
    TranslatorMultiHead t;
    t.source = source;
    t.input_source = input_source;
    t.in_dim = in_dim;
    t.hidden = hidden;
    t.depth = depth;
    Rng rng(derive_seed(seed, "backbone", core::fnv1a64(source)));
    for (int layer = 0; layer < depth; ++layer) {
        const int fan_in = layer == 0 ? in_dim : hidden;
        std::vector<double> w(static_cast<std::size_t>(hidden) * fan_in);
        const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (auto& v : w) v = scale * rng.normal();
        t.layer_w.push_back(std::move(w));
        t.layer_b.emplace_back(static_cast<std::size_t>(hidden), 0.0);
    }
    for (const auto& [name, d] : targets) {
        TranslatorMultiHead::Head h;
        h.target = name;
        h.out_dim = static_cast<int>(d);
        h.weight.resize(static_cast<std::size_t>(h.out_dim) * hidden);
        h.bias.assign(static_cast<std::size_t>(h.out_dim), 0.0);
        Rng hrng(derive_seed(seed, "head", core::fnv1a64(source + "->" + name)));
        const double scale = 1.0 / std::sqrt(static_cast<double>(hidden));
        for (auto& v : h.weight) v = scale * hrng.normal();
        t.heads.push_back(std::move(h));
        t.balance_ema[name] = 1.0;
    }
    return t;
}

TranslatorOneToOne factored_to_flat(const TranslatorMultiHead& t, const std::string& target) {
    if (t.depth != 1) throw ConfigError("factored_to_flat requires a depth-1 backbone");
    const auto& h = t.head(target);
    TranslatorOneToOne flat;
    flat.source = t.source;
    flat.target = target;
    flat.input_source = t.input_source;
    flat.in_dim = t.in_dim;
    flat.out_dim = h.out_dim;
    flat.weight.assign(static_cast<std::size_t>(h.out_dim) * t.in_dim, 0.0);
    flat.bias.assign(static_cast<std::size_t>(h.out_dim), 0.0);
    for (int o = 0; o < h.out_dim; ++o) {
        for (int i = 0; i < t.in_dim; ++i) {
            double v = 0.0;
            for (int k = 0; k < t.hidden; ++k) {
                v += h.weight[static_cast<std::size_t>(o) * t.hidden + k] *
                     t.layer_w[0][static_cast<std::size_t>(k) * t.in_dim + i];
            }
            flat.weight[static_cast<std::size_t>(o) * t.in_dim + i] = v;
        }
        double b = h.bias[static_cast<std::size_t>(o)];
        for (int k = 0; k < t.hidden; ++k) {
            b += h.weight[static_cast<std::size_t>(o) * t.hidden + k] *
                 t.layer_b[0][static_cast<std::size_t>(k)];
        }
        flat.bias[static_cast<std::size_t>(o)] = b;
    }
    return flat;
}

FeatureMap prepare_input(const FeatureMap& encoded, InputSource input_source,
                         const CodespaceArtifact* source_space, const std::string& modality) {
    switch (input_source) {
        case InputSource::encoded: return encoded;
        case InputSource::adapted:
            if (source_space == nullptr) {
                throw MissingArtifactError("adapted input needs the source code space");
            }
            return source_space->adapter(modality).apply(encoded);
        case InputSource::codemap: {
            if (source_space == nullptr) {
                throw MissingArtifactError("codemap input needs the source code space");
            }
            const auto& adapter = source_space->adapter(modality);
            return codespace::decode(codespace::quantize(encoded, adapter, source_space->book),
                                     source_space->book);
        }
    }
    throw ConfigError("bad input source enum");
}

FeatureMap translate_logits(const FeatureMap& f, const TranslatorOneToOne& t) {
    if (f.channels != t.in_dim) throw core::ShapeError("translate_logits: input dim mismatch");
    FeatureMap out(f.height, f.width, t.out_dim);
    for (std::size_t cell = 0; cell < f.cell_count(); ++cell) {
        const auto in = f.cell(cell);
        double* logits = out.data.data() + cell * static_cast<std::size_t>(t.out_dim);
        for (int o = 0; o < t.out_dim; ++o) {
            double v = t.bias[static_cast<std::size_t>(o)];
            const double* row = t.weight.data() + static_cast<std::size_t>(o) * t.in_dim;
            for (int i = 0; i < t.in_dim; ++i) v += row[i] * in[static_cast<std::size_t>(i)];
            logits[o] = v;
        }
    }
    return out;
}

namespace {

/// Backbone forward for one cell; activations[i] holds the post-affine
/// (pre-tanh) output of layer i, hidden_out the final backbone output.
void backbone_forward(const TranslatorMultiHead& t, std::span<const double> in,
                      std::vector<std::vector<double>>& activations) {
    activations.resize(static_cast<std::size_t>(t.depth));
    for (int layer = 0; layer < t.depth; ++layer) {
        auto& out = activations[static_cast<std::size_t>(layer)];
        out.assign(static_cast<std::size_t>(t.hidden), 0.0);
        const int fan_in = layer == 0 ? t.in_dim : t.hidden;
        const std::vector<double>* src = nullptr;
        std::vector<double> prev_act;
        if (layer > 0) {
            prev_act.resize(static_cast<std::size_t>(t.hidden));
            for (int k = 0; k < t.hidden; ++k) {
                prev_act[static_cast<std::size_t>(k)] =
                    std::tanh(activations[static_cast<std::size_t>(layer - 1)][static_cast<std::size_t>(k)]);
            }
            src = &prev_act;
        }
        for (int o = 0; o < t.hidden; ++o) {
            double v = t.layer_b[static_cast<std::size_t>(layer)][static_cast<std::size_t>(o)];
            const double* row =
                t.layer_w[static_cast<std::size_t>(layer)].data() + static_cast<std::size_t>(o) * fan_in;
            for (int i = 0; i < fan_in; ++i) {
                v += row[i] * (layer == 0 ? in[static_cast<std::size_t>(i)]
                                          : (*src)[static_cast<std::size_t>(i)]);
            }
            out[static_cast<std::size_t>(o)] = v;
        }
    }
}

}  // namespace

FeatureMap translate_logits(const FeatureMap& f, const TranslatorMultiHead& t,
                            const std::string& target) {
    if (f.channels != t.in_dim) throw core::ShapeError("translate_logits: input dim mismatch");
    const auto& h = t.head(target);
    FeatureMap out(f.height, f.width, h.out_dim);
    std::vector<std::vector<double>> acts;
    for (std::size_t cell = 0; cell < f.cell_count(); ++cell) {
        backbone_forward(t, f.cell(cell), acts);
        const auto& hid = acts.back();
        double* logits = out.data.data() + cell * static_cast<std::size_t>(h.out_dim);
        for (int o = 0; o < h.out_dim; ++o) {
            double v = h.bias[static_cast<std::size_t>(o)];
            const double* row = h.weight.data() + static_cast<std::size_t>(o) * t.hidden;
            for (int k = 0; k < t.hidden; ++k) v += row[k] * hid[static_cast<std::size_t>(k)];
            logits[o] = v;
        }
    }
    return out;
}

CodeMap hard_assign(const FeatureMap& logits, const std::string& target_owner,
                    std::uint32_t target_d) {
    if (static_cast<std::uint32_t>(logits.channels) != target_d) {
        throw core::ShapeError("hard_assign: logit width != codebook size");
    }
    CodeMap out;
    out.height = logits.height;
    out.width = logits.width;
    out.codebook_ref = {target_owner, target_d};
    out.indices.resize(logits.cell_count());
    for (std::size_t cell = 0; cell < logits.cell_count(); ++cell) {
        const auto l = logits.cell(cell);
        std::uint32_t best = 0;
        for (std::uint32_t i = 1; i < target_d; ++i) {
            if (l[i] > l[best]) best = i;  // strict: ties keep the lowest index
        }
        out.indices[cell] = best;
    }
    return out;
}

CodeMap translate_hard(const FeatureMap& f, const TranslatorOneToOne& t) {
    return hard_assign(translate_logits(f, t), t.target, static_cast<std::uint32_t>(t.out_dim));
}

CodeMap translate_hard(const FeatureMap& f, const TranslatorMultiHead& t,
                       const std::string& target) {
    const auto& h = t.head(target);
    return hard_assign(translate_logits(f, t, target), target,
                       static_cast<std::uint32_t>(h.out_dim));
}

FeatureMap decode_soft(const FeatureMap& logits, const Codebook& book, double tau) {
    if (!(tau > 0.0)) throw ConfigError("decode_soft: tau must be positive");
    if (static_cast<std::uint32_t>(logits.channels) != book.d) {
        throw core::ShapeError("decode_soft: logit width != codebook size");
    }
    FeatureMap out(logits.height, logits.width, book.c_z);
    std::vector<double> p(static_cast<std::size_t>(book.d));
    for (std::size_t cell = 0; cell < logits.cell_count(); ++cell) {
        const auto l = logits.cell(cell);
        double m = l[0];
        for (std::uint32_t i = 1; i < book.d; ++i) m = std::max(m, l[i]);
        double z = 0.0;
        for (std::uint32_t i = 0; i < book.d; ++i) {
            p[i] = std::exp((l[i] - m) / tau);
            z += p[i];
        }
        double* o = out.data.data() + cell * static_cast<std::size_t>(book.c_z);
        for (std::uint32_t i = 0; i < book.d; ++i) {
            const double w = p[i] / z;
            const auto code = book.code(i);
            for (int k = 0; k < book.c_z; ++k) o[k] += w * code[static_cast<std::size_t>(k)];
        }
    }
    return out;
}

double TauSchedule::at(int epoch, int total_epochs) const {
    if (total_epochs <= 1) return end;
    const double r = std::pow(end / start, 1.0 / static_cast<double>(total_epochs - 1));
    return start * std::pow(r, static_cast<double>(epoch));
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace {

struct PreparedScene {
    FeatureMap input;           // after the input-source transform
    std::vector<double> truth;  // in the source agent frame
};

std::vector<PreparedScene> prepare_scenes(const worldgen::LocalDataView& data,
                                          InputSource input_source,
                                          const CodespaceArtifact* source_space) {
    std::vector<PreparedScene> out;
    out.reserve(data.scene_ids().size());
    for (int sid : data.scene_ids()) {
        PreparedScene p;
        const auto obs = data.load(sid);
        p.input = prepare_input(obs, input_source, source_space, data.source_modality());
        p.truth = data.truth_in_frame(sid, data.agent(sid).pose);
        out.push_back(std::move(p));
    }
    return out;
}

/// dL/dlogits for one cell of the soft-decode + frozen-head detection loss.
/// Returns the detection loss; g_logits must have D entries.
double soft_cell_backward(std::span<const double> logits, const Codebook& book,
                          const DetectionHead& head, double tau, double truth, double inv_n,
                          std::span<double> g_logits) {
    const std::uint32_t d = book.d;
    thread_local std::vector<double> p;
    p.assign(d, 0.0);
    double m = logits[0];
    for (std::uint32_t i = 1; i < d; ++i) m = std::max(m, logits[i]);
    double z = 0.0;
    for (std::uint32_t i = 0; i < d; ++i) {
        p[i] = std::exp((logits[i] - m) / tau);
        z += p[i];
    }
    for (auto& v : p) v /= z;

    // soft feature and head logit
    double head_logit = head.bias;
    thread_local std::vector<double> code_scores;  // c_l . g where g = grad wrt soft feature
    code_scores.assign(d, 0.0);
    for (std::uint32_t i = 0; i < d; ++i) {
        const auto code = book.code(i);
        double hw = 0.0;
        for (int k = 0; k < book.c_z; ++k) {
            hw += head.weight[static_cast<std::size_t>(k)] * code[static_cast<std::size_t>(k)];
        }
        code_scores[i] = hw;  // (c_i . head.w); grad wrt soft feature is det_grad * head.w
        head_logit += p[i] * hw;
    }
    const auto det = core::logistic_xent(head_logit, truth);
    const double gdet = det.grad * inv_n;

    double mean_s = 0.0;
    for (std::uint32_t i = 0; i < d; ++i) mean_s += p[i] * code_scores[i];
    for (std::uint32_t i = 0; i < d; ++i) {
        g_logits[i] = gdet * p[i] * (code_scores[i] - mean_s) / tau;
    }
    return det.loss * inv_n;
}

double step_one_to_one(TranslatorOneToOne& t, const PreparedScene& scene, const Codebook& book,
                       const DetectionHead& head, double tau, double lr) {
    const auto logits = translate_logits(scene.input, t);
    std::vector<double> dw(t.weight.size(), 0.0);
    std::vector<double> db(t.bias.size(), 0.0);
    std::vector<double> g(static_cast<std::size_t>(t.out_dim));
    const double inv_n = 1.0 / static_cast<double>(scene.input.cell_count());
    double loss = 0.0;
    for (std::size_t cell = 0; cell < scene.input.cell_count(); ++cell) {
        loss += soft_cell_backward(logits.cell(cell), book, head, tau, scene.truth[cell], inv_n, g);
        const auto in = scene.input.cell(cell);
        for (int o = 0; o < t.out_dim; ++o) {
            const double go = g[static_cast<std::size_t>(o)];
            if (go == 0.0) continue;
            double* row = dw.data() + static_cast<std::size_t>(o) * t.in_dim;
            for (int i = 0; i < t.in_dim; ++i) row[i] += go * in[static_cast<std::size_t>(i)];
            db[static_cast<std::size_t>(o)] += go;
        }
    }
    core::sgd_step_inplace(t.weight, dw, lr);
    core::sgd_step_inplace(t.bias, db, lr);
    return loss;
}

double step_multihead(TranslatorMultiHead& t, const std::string& target,
                      const PreparedScene& scene, const Codebook& book, const DetectionHead& head,
                      double tau, double lr) {
    auto& h = const_cast<TranslatorMultiHead::Head&>(t.head(target));

    std::vector<std::vector<double>> dlw(t.layer_w.size());
    std::vector<std::vector<double>> dlb(t.layer_b.size());
    for (std::size_t i = 0; i < dlw.size(); ++i) {
        dlw[i].assign(t.layer_w[i].size(), 0.0);
        dlb[i].assign(t.layer_b[i].size(), 0.0);
    }
    std::vector<double> dhw(h.weight.size(), 0.0);
    std::vector<double> dhb(h.bias.size(), 0.0);

    std::vector<std::vector<double>> acts;
    std::vector<double> logits(static_cast<std::size_t>(h.out_dim));
    std::vector<double> g(static_cast<std::size_t>(h.out_dim));
    std::vector<double> dhid(static_cast<std::size_t>(t.hidden));
    std::vector<double> dprev(static_cast<std::size_t>(t.hidden));
    const double inv_n = 1.0 / static_cast<double>(scene.input.cell_count());
    double loss = 0.0;

    for (std::size_t cell = 0; cell < scene.input.cell_count(); ++cell) {
        const auto in = scene.input.cell(cell);
        backbone_forward(t, in, acts);
        const auto& hid = acts.back();
        for (int o = 0; o < h.out_dim; ++o) {
            double v = h.bias[static_cast<std::size_t>(o)];
            const double* row = h.weight.data() + static_cast<std::size_t>(o) * t.hidden;
            for (int k = 0; k < t.hidden; ++k) v += row[k] * hid[static_cast<std::size_t>(k)];
            logits[static_cast<std::size_t>(o)] = v;
        }
        loss += soft_cell_backward(logits, book, head, tau, scene.truth[cell], inv_n, g);

        std::fill(dhid.begin(), dhid.end(), 0.0);
        for (int o = 0; o < h.out_dim; ++o) {
            const double go = g[static_cast<std::size_t>(o)];
            if (go == 0.0) continue;
            double* row = dhw.data() + static_cast<std::size_t>(o) * t.hidden;
            const double* w = h.weight.data() + static_cast<std::size_t>(o) * t.hidden;
            for (int k = 0; k < t.hidden; ++k) {
                row[k] += go * hid[static_cast<std::size_t>(k)];
                dhid[static_cast<std::size_t>(k)] += go * w[k];
            }
            dhb[static_cast<std::size_t>(o)] += go;
        }

        for (int layer = t.depth - 1; layer >= 0; --layer) {
            const int fan_in = layer == 0 ? t.in_dim : t.hidden;
            // input to this layer
            std::vector<double> layer_in;
            if (layer > 0) {
                layer_in.resize(static_cast<std::size_t>(t.hidden));
                for (int k = 0; k < t.hidden; ++k) {
                    layer_in[static_cast<std::size_t>(k)] = std::tanh(
                        acts[static_cast<std::size_t>(layer - 1)][static_cast<std::size_t>(k)]);
                }
            }
            std::fill(dprev.begin(), dprev.end(), 0.0);
            for (int o = 0; o < t.hidden; ++o) {
                const double go = dhid[static_cast<std::size_t>(o)];
                if (go == 0.0) continue;
                double* row = dlw[static_cast<std::size_t>(layer)].data() +
                              static_cast<std::size_t>(o) * fan_in;
                const double* w = t.layer_w[static_cast<std::size_t>(layer)].data() +
                                  static_cast<std::size_t>(o) * fan_in;
                for (int i = 0; i < fan_in; ++i) {
                    row[i] += go * (layer == 0 ? in[static_cast<std::size_t>(i)]
                                               : layer_in[static_cast<std::size_t>(i)]);
                    if (layer > 0) dprev[static_cast<std::size_t>(i)] += go * w[i];
                }
                dlb[static_cast<std::size_t>(layer)][static_cast<std::size_t>(o)] += go;
            }
            if (layer > 0) {
                // through the tanh
                for (int k = 0; k < t.hidden; ++k) {
                    const double a = layer_in[static_cast<std::size_t>(k)];
                    dhid[static_cast<std::size_t>(k)] = dprev[static_cast<std::size_t>(k)] * (1.0 - a * a);
                }
            }
        }
    }

    for (std::size_t i = 0; i < t.layer_w.size(); ++i) {
        core::sgd_step_inplace(t.layer_w[i], dlw[i], lr);
        core::sgd_step_inplace(t.layer_b[i], dlb[i], lr);
    }
    core::sgd_step_inplace(h.weight, dhw, lr);
    core::sgd_step_inplace(h.bias, dhb, lr);
    return loss;
}

void check_target_space(const CodespaceArtifact& target_space, int out_dim) {
    if (static_cast<std::uint32_t>(out_dim) != target_space.book.d) {
        throw ConfigError("translator head width does not match target codebook size");
    }
    if (!target_space.head.frozen) {
        throw ConfigError("translator training requires a frozen target head");
    }
}

}  // namespace

TrainLog train_translator(TranslatorOneToOne& t, const worldgen::LocalDataView& data,
                          const CodespaceArtifact& target_space, const TranslatorTrainConfig& cfg,
                          RngSeed seed, const CodespaceArtifact* source_space) {
    check_target_space(target_space, t.out_dim);
    const auto scenes = prepare_scenes(data, t.input_source, source_space);
    const std::size_t n = scenes.size();
    Rng stream(derive_seed(seed, "scenes", core::fnv1a64(t.target)));

    TrainLog log;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double tau = cfg.tau.at(epoch, cfg.epochs);
        double acc = 0.0;
        for (std::size_t s = 0; s < n; ++s) {
            const auto& scene = scenes[stream.uniform_int(n)];
            const double loss =
                step_one_to_one(t, scene, target_space.book, target_space.head, tau, cfg.lr);
            log.step_loss.push_back(loss);
            acc += loss;
        }
        log.epoch_loss.push_back(acc / static_cast<double>(n));
    }
    return log;
}

TrainLog train_translator(TranslatorMultiHead& t, const std::string& target,
                          const worldgen::LocalDataView& data,
                          const CodespaceArtifact& target_space, const TranslatorTrainConfig& cfg,
                          RngSeed seed, const CodespaceArtifact* source_space) {
    check_target_space(target_space, t.head(target).out_dim);
    const auto scenes = prepare_scenes(data, t.input_source, source_space);
    const std::size_t n = scenes.size();
    Rng stream(derive_seed(seed, "scenes", core::fnv1a64(target)));

    TrainLog log;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double tau = cfg.tau.at(epoch, cfg.epochs);
        double acc = 0.0;
        for (std::size_t s = 0; s < n; ++s) {
            const auto& scene = scenes[stream.uniform_int(n)];
            const double loss =
                step_multihead(t, target, scene, target_space.book, target_space.head, tau, cfg.lr);
            log.step_loss.push_back(loss);
            acc += loss;
        }
        log.epoch_loss.push_back(acc / static_cast<double>(n));
    }
    return log;
}

MultiheadTrainLog train_multihead(TranslatorMultiHead& t, const worldgen::LocalDataView& data,
                                  const std::vector<const CodespaceArtifact*>& targets,
                                  const MultiheadTrainConfig& cfg, RngSeed seed,
                                  const CodespaceArtifact* source_space) {
    if (targets.empty()) throw ConfigError("train_multihead: no targets");
    for (const auto* space : targets) {
        check_target_space(*space, t.head(space->owner).out_dim);
    }
    const auto scenes = prepare_scenes(data, t.input_source, source_space);
    const std::size_t n = scenes.size();
    const std::size_t k = targets.size();

    std::vector<Rng> streams;
    streams.reserve(k);
    for (const auto* space : targets) {
        streams.emplace_back(derive_seed(seed, "scenes", core::fnv1a64(space->owner)));
    }
    Rng sampler(derive_seed(seed, "balance"));
    for (const auto* space : targets) {
        if (!t.balance_ema.count(space->owner)) t.balance_ema[space->owner] = 1.0;
    }

    MultiheadTrainLog out;
    const std::size_t steps_per_epoch = n * k;
    const std::size_t total_steps = static_cast<std::size_t>(cfg.base.epochs) * steps_per_epoch;
    double acc = 0.0;
    for (std::size_t step = 0; step < total_steps; ++step) {
        const int epoch = static_cast<int>(step / steps_per_epoch);
        const double tau = cfg.base.tau.at(epoch, cfg.base.epochs);

        std::size_t pick = 0;
        if (cfg.balancing && k > 1) {
            // probability ~ loss EMA, floored so no target starves
            double total = 0.0;
            for (const auto* space : targets) total += t.balance_ema.at(space->owner);
            std::vector<double> probs(k);
            const double floor_total = cfg.floor_prob * static_cast<double>(k);
            const double scale = floor_total < 1.0 ? 1.0 - floor_total : 0.0;
            for (std::size_t i = 0; i < k; ++i) {
                const double base = total > 0.0 ? t.balance_ema.at(targets[i]->owner) / total
                                                : 1.0 / static_cast<double>(k);
                probs[i] = scale * base + (floor_total < 1.0 ? cfg.floor_prob
                                                             : 1.0 / static_cast<double>(k));
            }
            double u = sampler.uniform();
            for (std::size_t i = 0; i < k; ++i) {
                if (u < probs[i] || i + 1 == k) {
                    pick = i;
                    break;
                }
                u -= probs[i];
            }
        } else {
            pick = static_cast<std::size_t>(sampler.uniform_int(k));
        }

        const auto* space = targets[pick];
        const auto& scene = scenes[streams[pick].uniform_int(n)];
        const double loss =
            step_multihead(t, space->owner, scene, space->book, space->head, tau, cfg.base.lr);
        out.log.step_loss.push_back(loss);
        out.steps_per_target[space->owner]++;
        t.balance_ema[space->owner] =
            cfg.ema_decay * t.balance_ema[space->owner] + (1.0 - cfg.ema_decay) * loss;
        acc += loss;
        if ((step + 1) % steps_per_epoch == 0) {
            out.log.epoch_loss.push_back(acc / static_cast<double>(steps_per_epoch));
            acc = 0.0;
        }
    }
    return out;
}

FeatureMap DenseMap::apply(const FeatureMap& f) const {
    if (f.channels != in_dim) throw core::ShapeError("dense map input dim mismatch");
    FeatureMap out(f.height, f.width, out_dim);
    for (std::size_t cell = 0; cell < f.cell_count(); ++cell) {
        const auto in = f.cell(cell);
        double* o = out.data.data() + cell * static_cast<std::size_t>(out_dim);
        for (int r = 0; r < out_dim; ++r) {
            double v = bias[static_cast<std::size_t>(r)];
            const double* row = weight.data() + static_cast<std::size_t>(r) * in_dim;
            for (int i = 0; i < in_dim; ++i) v += row[i] * in[static_cast<std::size_t>(i)];
            o[r] = v;
        }
    }
    return out;
}

DenseMap make_dense_map(const std::string& source, const std::string& target, int in_dim,
                        int out_dim, RngSeed seed) {
    DenseMap m;
    m.source = source;
    m.target = target;
    m.in_dim = in_dim;
    m.out_dim = out_dim;
    m.weight.resize(static_cast<std::size_t>(out_dim) * in_dim);
    m.bias.assign(static_cast<std::size_t>(out_dim), 0.0);
    Rng rng(derive_seed(seed, "densemap", core::fnv1a64(source + "->" + target)));
    const double scale = 1.0 / std::sqrt(static_cast<double>(in_dim));
    for (auto& v : m.weight) v = scale * rng.normal();
    return m;
}

TrainLog train_dense_map(DenseMap& m, const worldgen::LocalDataView& data,
                         const CodespaceArtifact& target_space, const TranslatorTrainConfig& cfg,
                         RngSeed seed) {
    if (m.out_dim != target_space.book.c_z) {
        throw ConfigError("dense map output dim must match the target code space");
    }
    const auto scenes = prepare_scenes(data, InputSource::encoded, nullptr);
    const std::size_t n = scenes.size();
    Rng stream(derive_seed(seed, "scenes", core::fnv1a64(m.target)));
    const auto& head = target_space.head;

    TrainLog log;
    std::vector<double> dw(m.weight.size());
    std::vector<double> db(m.bias.size());
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double acc = 0.0;
        for (std::size_t s = 0; s < n; ++s) {
            const auto& scene = scenes[stream.uniform_int(n)];
            std::fill(dw.begin(), dw.end(), 0.0);
            std::fill(db.begin(), db.end(), 0.0);
            const double inv_n = 1.0 / static_cast<double>(scene.input.cell_count());
            double loss = 0.0;
            const auto mapped = m.apply(scene.input);
            for (std::size_t cell = 0; cell < mapped.cell_count(); ++cell) {
                const auto q = mapped.cell(cell);
                const auto det = core::logistic_xent(head.logit(q), scene.truth[cell]);
                loss += det.loss * inv_n;
                const double g = det.grad * inv_n;
                const auto in = scene.input.cell(cell);
                for (int r = 0; r < m.out_dim; ++r) {
                    const double gr = g * head.weight[static_cast<std::size_t>(r)];
                    if (gr == 0.0) continue;
                    double* row = dw.data() + static_cast<std::size_t>(r) * m.in_dim;
                    for (int i = 0; i < m.in_dim; ++i) row[i] += gr * in[static_cast<std::size_t>(i)];
                    db[static_cast<std::size_t>(r)] += gr;
                }
            }
            core::sgd_step_inplace(m.weight, dw, cfg.lr);
            core::sgd_step_inplace(m.bias, db, cfg.lr);
            log.step_loss.push_back(loss);
            acc += loss;
        }
        log.epoch_loss.push_back(acc / static_cast<double>(n));
    }
    return log;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

std::string translator_filename(const std::string& source,
                                const std::vector<std::string>& targets) {
    std::string name = "translator_" + source + "_to";
    for (const auto& t : targets) name += "_" + t;
    return name + ".json";
}

void save_translator(const Translator& t, const TauSchedule& tau, std::uint64_t seed,
                     const std::string& path) {
    json j;
    j["tau"] = {{"start", tau.start}, {"end", tau.end}};
    j["seed"] = seed;
    if (std::holds_alternative<TranslatorOneToOne>(t)) {
        const auto& o = std::get<TranslatorOneToOne>(t);
        j["structure"] = "one_to_one";
        j["source"] = o.source;
        j["target"] = o.target;
        j["input_source"] = to_string(o.input_source);
        j["in_dim"] = o.in_dim;
        j["out_dim"] = o.out_dim;
        j["weight"] = o.weight;
        j["bias"] = o.bias;
    } else {
        const auto& m = std::get<TranslatorMultiHead>(t);
        j["structure"] = "multi_head";
        j["source"] = m.source;
        j["input_source"] = to_string(m.input_source);
        j["in_dim"] = m.in_dim;
        j["hidden"] = m.hidden;
        j["depth"] = m.depth;
        j["layer_w"] = m.layer_w;
        j["layer_b"] = m.layer_b;
        json heads = json::array();
        for (const auto& h : m.heads) {
            heads.push_back({{"target", h.target},
                             {"out_dim", h.out_dim},
                             {"weight", h.weight},
                             {"bias", h.bias}});
        }
        j["heads"] = heads;
        j["balance_ema"] = m.balance_ema;
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write translator artifact: " + path);
    out << j.dump(2) << "\n";
}

Translator load_translator(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifactError("translator artifact not found: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw core::CorruptionError("translator artifact parse error: " + std::string(e.what()));
    }
    const auto structure = j.at("structure").get<std::string>();
    if (structure == "one_to_one") {
        TranslatorOneToOne t;
        t.source = j.at("source").get<std::string>();
        t.target = j.at("target").get<std::string>();
        t.input_source = input_source_from_string(j.at("input_source").get<std::string>());
        t.in_dim = j.at("in_dim").get<int>();
        t.out_dim = j.at("out_dim").get<int>();
        t.weight = j.at("weight").get<std::vector<double>>();
        t.bias = j.at("bias").get<std::vector<double>>();
        return t;
    }
    if (structure == "multi_head") {
        TranslatorMultiHead t;
        t.source = j.at("source").get<std::string>();
        t.input_source = input_source_from_string(j.at("input_source").get<std::string>());
        t.in_dim = j.at("in_dim").get<int>();
        t.hidden = j.at("hidden").get<int>();
        t.depth = j.at("depth").get<int>();
        t.layer_w = j.at("layer_w").get<std::vector<std::vector<double>>>();
        t.layer_b = j.at("layer_b").get<std::vector<std::vector<double>>>();
        for (const auto& hj : j.at("heads")) {
            TranslatorMultiHead::Head h;
            h.target = hj.at("target").get<std::string>();
            h.out_dim = hj.at("out_dim").get<int>();
            h.weight = hj.at("weight").get<std::vector<double>>();
            h.bias = hj.at("bias").get<std::vector<double>>();
            t.heads.push_back(std::move(h));
        }
        t.balance_ema = j.at("balance_ema").get<std::map<std::string, double>>();
        return t;
    }
    throw core::CorruptionError("unknown translator structure tag: " + structure);
}

}  // namespace codealign::translator
