#include "rearlab/experiments.hpp"

#include <cmath>
#include <sstream>

#include <json.hpp>

#include "rearlab/regularizers.hpp"

using nlohmann::json;

namespace rear {

void DiagnosticsReport::finalize_summary() {
    std::map<std::string, std::map<std::string, std::vector<double>>> grouped;
    for (const auto& r : records) {
        for (const auto& [k, v] : r.metrics) grouped[r.condition][k].push_back(v);
    }
    summary.clear();
    for (const auto& [cond, metrics] : grouped) {
        for (const auto& [metric, vals] : metrics) {
            double mean = 0.0;
            for (double v : vals) mean += v;
            mean /= static_cast<double>(vals.size());
            double var = 0.0;
            for (double v : vals) var += (v - mean) * (v - mean);
            var /= static_cast<double>(vals.size());
            summary[cond + "." + metric + ".mean"] = mean;
            summary[cond + "." + metric + ".std"] = std::sqrt(var);
        }
    }
}

double DiagnosticsReport::summary_mean(const std::string& condition,
                                       const std::string& metric) const {
    return summary.at(condition + "." + metric + ".mean");
}

std::string DiagnosticsReport::to_json() const {
    json j;
    j["experiment"] = experiment;
    j["conditions"] = conditions;
    j["records"] = json::array();
    for (const auto& r : records) {
        json rec;
        rec["condition"] = r.condition;
        rec["seed"] = r.seed;
        rec["images"] = r.images;
        rec["metrics"] = r.metrics;
        j["records"].push_back(rec);
    }
    j["summary"] = summary;
    j["info"] = info;
    return j.dump(2);
}

DiagnosticsReport DiagnosticsReport::from_json(const std::string& text) {
    const json j = json::parse(text);
    DiagnosticsReport rep;
    rep.experiment = j.at("experiment").get<std::string>();
    rep.conditions = j.at("conditions").get<std::vector<std::string>>();
    for (const auto& rec : j.at("records")) {
        Record r;
        r.condition = rec.at("condition").get<std::string>();
        r.seed = rec.at("seed").get<int64_t>();
        r.images = rec.at("images").get<int64_t>();
        r.metrics = rec.at("metrics").get<std::map<std::string, double>>();
        rep.records.push_back(std::move(r));
    }
    rep.summary = j.at("summary").get<std::map<std::string, double>>();
    if (j.contains("info")) rep.info = j.at("info").get<std::map<std::string, std::string>>();
    return rep;
}

std::string DiagnosticsReport::to_csv() const {
    // union of metric names, stable order
    std::vector<std::string> cols;
    for (const auto& r : records) {
        for (const auto& [k, v] : r.metrics) {
            (void)v;
            if (std::find(cols.begin(), cols.end(), k) == cols.end()) cols.push_back(k);
        }
    }
    std::ostringstream out;
    out << "experiment,condition,seed,images";
    for (const auto& c : cols) out << "," << c;
    out << "\n";
    for (const auto& r : records) {
        out << experiment << "," << r.condition << "," << r.seed << "," << r.images;
        for (const auto& c : cols) {
            out << ",";
            auto it = r.metrics.find(c);
            if (it != r.metrics.end()) out << it->second;
        }
        out << "\n";
    }
    return out.str();
}

EvalSet build_eval_set(const VQTokenizer& tok, const Dataset& ds,
                       const std::vector<int64_t>& idx) {
    EvalSet ev;
    ev.images = ds.gather(idx);
    ev.labels = ds.gather_labels(idx);
    const TokenGrid grid = tok.tokenize(ev.images, ev.labels);
    ev.seqs.assign(grid.indices.begin(), grid.indices.end());
    ev.recon = tok.decode_tokens(grid);
    return ev;
}

TokenGrid seqs_to_grid(const std::vector<uint16_t>& seqs, int64_t B, int64_t h, int64_t w,
                       const std::vector<int64_t>& labels) {
    TokenGrid g(B, h, w);
    g.indices.assign(seqs.begin(), seqs.end());
    g.labels = labels;
    return g;
}

std::vector<bool> random_subset_mask(int64_t n, int64_t m, Rng& rng) {
    std::vector<int64_t> pos(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) pos[static_cast<size_t>(i)] = i;
    // partial Fisher-Yates: the first m entries form a uniform subset
    for (int64_t i = 0; i < m; ++i) {
        const int64_t j = i + static_cast<int64_t>(rng.below(static_cast<uint64_t>(n - i)));
        std::swap(pos[static_cast<size_t>(i)], pos[static_cast<size_t>(j)]);
    }
    std::vector<bool> mask(static_cast<size_t>(n), false);
    for (int64_t i = 0; i < m; ++i) mask[static_cast<size_t>(pos[static_cast<size_t>(i)])] = true;
    return mask;
}

namespace {

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

}  // namespace

DiagnosticsReport exposure_bias_experiment(const ARModel<float>& model, const VQTokenizer& tok,
                                           const EvalSet& eval,
                                           const std::vector<double>& r_grid, int64_t num_seeds,
                                           const SampleConfig& base_sc) {
    DiagnosticsReport rep;
    rep.experiment = "exposure_bias";
    const int64_t B = eval.count();
    const int64_t N = model.cfg.seq_len;
    const int64_t g = tok.config().grid();
    TokenizerPerceptualExtractor extractor(tok);

    for (double r : r_grid) {
        const int64_t m = static_cast<int64_t>(std::floor(r * static_cast<double>(N)));
        for (const char* protocol : {"front", "interleaved"}) {
            std::ostringstream cond;
            cond << protocol << "_r" << r;
            rep.conditions.push_back(cond.str());
            for (int64_t s = 0; s < num_seeds; ++s) {
                SampleConfig sc = base_sc;
                sc.seed = mix_seed(base_sc.seed, RngStream::Experiment,
                                   static_cast<uint64_t>(s),
                                   protocol[0] == 'f' ? 1 : 2) ^
                          static_cast<uint64_t>(std::llround(r * 1000.0));
                std::vector<std::vector<bool>> masks;
                for (int64_t b = 0; b < B; ++b) {
                    if (protocol[0] == 'f') {
                        std::vector<bool> mask(static_cast<size_t>(N), false);
                        for (int64_t i = 0; i < m; ++i) mask[static_cast<size_t>(i)] = true;
                        masks.push_back(std::move(mask));
                    } else {
                        Rng mrng(sc.seed, RngStream::MaskChoice, static_cast<uint64_t>(b));
                        masks.push_back(random_subset_mask(N, m, mrng));
                    }
                }
                const auto out =
                    decode_with_context_mask_batch(model, eval.seqs, masks, eval.labels, sc);
                const ImageBatch decoded =
                    tok.decode_tokens(seqs_to_grid(out, B, g, g, eval.labels));

                DiagnosticsReport::Record rec;
                rec.condition = cond.str();
                rec.seed = s;
                rec.images = B;
                rec.metrics["r"] = r;
                rec.metrics["ctr"] = ctr(out, eval.seqs);
                const auto nll = sequence_nll(model, out, eval.labels);
                std::vector<double> ppl(nll.size());
                for (size_t i = 0; i < nll.size(); ++i) ppl[i] = std::exp(nll[i]);
                rec.metrics["ppl"] = mean_of(ppl);
                rec.metrics["psnr"] = mean_of(psnr_per_image(decoded, eval.recon));
                rec.metrics["pdist"] =
                    mean_of(perceptual_distance_per_image(decoded, eval.recon, extractor));
                rep.records.push_back(std::move(rec));
            }
        }
    }
    rep.finalize_summary();
    return rep;
}

std::vector<int64_t> nearest_incorrect_table(const Codebook& cb) {
    std::vector<int64_t> table(static_cast<size_t>(cb.K));
    for (int64_t k = 0; k < cb.K; ++k) table[static_cast<size_t>(k)] = nearest_incorrect(k, cb);
    return table;
}

DiagnosticsReport embedding_replacement_experiment(const ARModel<float>& model,
                                                   const VQTokenizer& tok, const EvalSet& eval,
                                                   const std::vector<double>& rprime_grid,
                                                   int64_t num_seeds, uint64_t seed) {
    DiagnosticsReport rep;
    rep.experiment = "embedding_replacement";
    const int64_t B = eval.count();
    const int64_t N = model.cfg.seq_len;
    const int64_t g = tok.config().grid();
    const Codebook& cb = tok.codebook();
    TokenizerPerceptualExtractor extractor(tok);

    const auto preds = teacher_forced_predictions(model, eval.seqs, eval.labels);
    const auto nearest = nearest_incorrect_table(cb);

    for (double rp : rprime_grid) {
        std::ostringstream cond;
        cond << "rprime" << rp;
        rep.conditions.push_back(cond.str());
        for (int64_t s = 0; s < num_seeds; ++s) {
            std::vector<uint16_t> replaced = preds;
            for (int64_t b = 0; b < B; ++b) {
                Rng rng(seed, RngStream::Experiment, static_cast<uint64_t>(s) * 1000 + 7,
                        static_cast<uint64_t>(b));
                for (int64_t p = 0; p < N; ++p) {
                    const int64_t i = b * N + p;
                    if (preds[i] != eval.seqs[i] && rng.bernoulli(rp)) {
                        replaced[static_cast<size_t>(i)] =
                            static_cast<uint16_t>(nearest[eval.seqs[i]]);
                    }
                }
            }
            double cos_sum = 0.0;
            for (int64_t i = 0; i < B * N; ++i) {
                cos_sum += cosine_similarity(cb.entry(replaced[static_cast<size_t>(i)]),
                                             cb.entry(eval.seqs[static_cast<size_t>(i)]), cb.c);
            }
            const ImageBatch decoded =
                tok.decode_tokens(seqs_to_grid(replaced, B, g, g, eval.labels));

            DiagnosticsReport::Record rec;
            rec.condition = cond.str();
            rec.seed = s;
            rec.images = B;
            rec.metrics["rprime"] = rp;
            rec.metrics["ctr"] = ctr(replaced, eval.seqs);
            rec.metrics["emb_cos"] = cos_sum / static_cast<double>(B * N);
            rec.metrics["psnr"] = mean_of(psnr_per_image(decoded, eval.recon));
            rec.metrics["pdist"] =
                mean_of(perceptual_distance_per_image(decoded, eval.recon, extractor));
            const auto nll = sequence_nll(model, replaced, eval.labels);
            std::vector<double> ppl(nll.size());
            for (size_t i = 0; i < nll.size(); ++i) ppl[i] = std::exp(nll[i]);
            rec.metrics["ppl"] = mean_of(ppl);
            rep.records.push_back(std::move(rec));
        }
    }
    rep.finalize_summary();
    return rep;
}

CKAProfile layer_similarity_profile(const ARModel<float>& model, const Codebook& cb,
                                    const std::vector<uint16_t>& seqs,
                                    const std::vector<int64_t>& labels, int64_t max_positions,
                                    const std::string& tag) {
    CKAProfile profile;
    profile.model_tag = tag;
    const int64_t B = static_cast<int64_t>(labels.size());
    const int64_t N = model.cfg.seq_len;
    const int64_t H = model.cfg.hidden_dim;
    const int64_t L = model.cfg.num_layers;

    // positions 1..N-1 have both a current and a next token
    const int64_t per_seq = N - 1;
    const int64_t want = std::min<int64_t>(max_positions, B * per_seq);
    const int64_t use_seqs = (want + per_seq - 1) / per_seq;

    std::vector<Tensor<float>> layer_feats(static_cast<size_t>(L));
    for (auto& t : layer_feats) t = Tensor<float>({use_seqs * per_seq, H});
    Tensor<float> enc_targets({use_seqs * per_seq, cb.c});
    Tensor<float> dec_targets({use_seqs * per_seq, cb.c});

    const int64_t chunk = 16;
    for (int64_t lo = 0; lo < use_seqs; lo += chunk) {
        const int64_t hi = std::min(lo + chunk, use_seqs);
        const int64_t nb = hi - lo;
        std::vector<uint16_t> sub(seqs.begin() + lo * N, seqs.begin() + hi * N);
        std::vector<int64_t> lab(labels.begin() + lo, labels.begin() + hi);
        ForwardCache<float> cache;
        model.forward(to_model_inputs(sub, nb, N), lab, false, cache);
        const auto hidden = model.all_layer_hidden(cache);
        for (int64_t l = 0; l < L; ++l) {
            for (int64_t b = 0; b < nb; ++b) {
                for (int64_t p = 1; p < N; ++p) {
                    const float* src = hidden[static_cast<size_t>(l)]->ptr() + (b * N + p) * H;
                    std::copy(src, src + H,
                              layer_feats[static_cast<size_t>(l)].ptr() +
                                  ((lo + b) * per_seq + (p - 1)) * H);
                }
            }
        }
        for (int64_t b = 0; b < nb; ++b) {
            for (int64_t p = 1; p < N; ++p) {
                const int64_t row = (lo + b) * per_seq + (p - 1);
                const uint16_t cur = sub[b * N + p - 1];
                const uint16_t nxt = sub[b * N + p];
                std::copy(cb.entry(cur), cb.entry(cur) + cb.c, enc_targets.ptr() + row * cb.c);
                std::copy(cb.entry(nxt), cb.entry(nxt) + cb.c, dec_targets.ptr() + row * cb.c);
            }
        }
    }

    for (int64_t l = 0; l < L; ++l) {
        profile.enc_cka.push_back(cka(layer_feats[static_cast<size_t>(l)], enc_targets).value);
        profile.dec_cka.push_back(cka(layer_feats[static_cast<size_t>(l)], dec_targets).value);
    }
    return profile;
}

DiagnosticsReport cka_profile_report(const CKAProfile& profile) {
    DiagnosticsReport rep;
    rep.experiment = "cka";
    rep.info["model_tag"] = profile.model_tag;
    for (size_t l = 0; l < profile.enc_cka.size(); ++l) {
        const std::string cond = "layer" + std::to_string(l);
        rep.conditions.push_back(cond);
        DiagnosticsReport::Record rec;
        rec.condition = cond;
        rec.seed = 0;
        rec.images = 0;
        rec.metrics["layer"] = static_cast<double>(l);
        rec.metrics["enc_cka"] = profile.enc_cka[l];
        rec.metrics["dec_cka"] = profile.dec_cka[l];
        rep.records.push_back(std::move(rec));
    }
    rep.finalize_summary();
    return rep;
}

namespace {

double noisy_ctr(const ARModel<float>& model, const std::vector<uint16_t>& seqs,
                 const std::vector<int64_t>& labels, double noise_level, uint64_t seed,
                 uint64_t salt) {
    const int64_t B = static_cast<int64_t>(labels.size());
    const int64_t N = model.cfg.seq_len;
    std::vector<uint16_t> noisy = seqs;
    if (noise_level > 0.0) {
        for (int64_t b = 0; b < B; ++b) {
            Rng rng(seed, RngStream::Experiment, salt, static_cast<uint64_t>(b));
            std::vector<uint16_t> one(seqs.begin() + b * N, seqs.begin() + (b + 1) * N);
            const auto rec = corrupt(one, noise_level, model.cfg.vocab_size, rng);
            std::copy(rec.noisy.begin(), rec.noisy.end(), noisy.begin() + b * N);
        }
    }
    const auto preds = teacher_forced_predictions_noisy(model, noisy, labels);
    return ctr(preds, seqs);
}

}  // namespace

DiagnosticsReport robustness_report(const ARModel<float>& model, const TokenCache& cache,
                                    const std::vector<int64_t>& train_idx,
                                    const std::vector<int64_t>& val_idx, double noise_level,
                                    int64_t num_seeds, int64_t max_seqs, uint64_t seed) {
    DiagnosticsReport rep;
    rep.experiment = "robustness";
    const int64_t N = cache.seq_len();

    struct Cell {
        const char* name;
        const std::vector<int64_t>* idx;
        bool noisy;
    };
    const Cell cells[4] = {{"train_clean", &train_idx, false},
                           {"train_noisy", &train_idx, true},
                           {"val_clean", &val_idx, false},
                           {"val_noisy", &val_idx, true}};
    for (const Cell& cell : cells) rep.conditions.push_back(cell.name);

    for (const Cell& cell : cells) {
        const int64_t n = std::min<int64_t>(max_seqs, static_cast<int64_t>(cell.idx->size()));
        std::vector<int64_t> idx(cell.idx->begin(), cell.idx->begin() + n);
        std::vector<uint16_t> seqs(static_cast<size_t>(n * N));
        std::vector<int64_t> labels(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) {
            const uint16_t* src = cache.seq(idx[static_cast<size_t>(i)]);
            std::copy(src, src + N, seqs.begin() + i * N);
            labels[static_cast<size_t>(i)] = cache.labels[idx[static_cast<size_t>(i)]];
        }
        for (int64_t s = 0; s < num_seeds; ++s) {
            DiagnosticsReport::Record rec;
            rec.condition = cell.name;
            rec.seed = s;
            rec.images = n;
            rec.metrics["ctr"] = noisy_ctr(model, seqs, labels, cell.noisy ? noise_level : 0.0,
                                           seed, static_cast<uint64_t>(s));
            rep.records.push_back(std::move(rec));
        }
    }
    rep.info["noise_level"] = std::to_string(noise_level);
    rep.finalize_summary();
    return rep;
}

DiagnosticsReport ctr_report(const ARModel<float>& model, const TokenCache& cache,
                             const std::vector<int64_t>& idx, int64_t max_seqs) {
    DiagnosticsReport rep;
    rep.experiment = "ctr";
    rep.conditions.push_back("teacher_forced");
    const int64_t N = cache.seq_len();
    const int64_t n = std::min<int64_t>(max_seqs, static_cast<int64_t>(idx.size()));
    double ctr_sum = 0.0, nll_sum = 0.0, ppl_sum = 0.0;
    int64_t done = 0;
    const int64_t chunk = 32;
    while (done < n) {
        const int64_t take = std::min(chunk, n - done);
        std::vector<uint16_t> seqs(static_cast<size_t>(take * N));
        std::vector<int64_t> labels(static_cast<size_t>(take));
        for (int64_t i = 0; i < take; ++i) {
            const uint16_t* src = cache.seq(idx[static_cast<size_t>(done + i)]);
            std::copy(src, src + N, seqs.begin() + i * N);
            labels[static_cast<size_t>(i)] = cache.labels[idx[static_cast<size_t>(done + i)]];
        }
        const auto preds = teacher_forced_predictions(model, seqs, labels);
        ctr_sum += ctr(preds, seqs) * static_cast<double>(take);
        const auto nll = sequence_nll(model, seqs, labels);
        for (double v : nll) {
            nll_sum += v;
            ppl_sum += std::exp(v);
        }
        done += take;
    }
    DiagnosticsReport::Record rec;
    rec.condition = "teacher_forced";
    rec.seed = 0;
    rec.images = n;
    rec.metrics["ctr"] = ctr_sum / static_cast<double>(n);
    rec.metrics["nll"] = nll_sum / static_cast<double>(n);
    rec.metrics["ppl"] = ppl_sum / static_cast<double>(n);
    rep.records.push_back(std::move(rec));
    rep.finalize_summary();
    return rep;
}

DiagnosticsReport throughput_diagnostics(const ARModel<float>& model, int64_t batch,
                                         const SampleConfig& sc) {
    const ThroughputReport tr = throughput_report(model, batch, sc);
    DiagnosticsReport rep;
    rep.experiment = "throughput";
    rep.conditions = {"cached", "nocache"};
    for (const char* cond : {"cached", "nocache"}) {
        DiagnosticsReport::Record rec;
        rec.condition = cond;
        rec.seed = static_cast<int64_t>(sc.seed);
        rec.images = batch;
        const bool cached = std::string(cond) == "cached";
        rec.metrics["images_per_sec"] =
            cached ? tr.images_per_sec_cached : tr.images_per_sec_nocache;
        rec.metrics["tokens_per_sec"] =
            cached ? tr.tokens_per_sec_cached : tr.tokens_per_sec_nocache;
        rec.metrics["batch"] = static_cast<double>(tr.batch);
        rec.metrics["seq_len"] = static_cast<double>(tr.seq_len);
        rep.records.push_back(std::move(rec));
    }
    rep.info["hardware"] = tr.hardware;
    rep.info["runs"] = std::to_string(tr.runs);
    rep.finalize_summary();
    return rep;
}

}  // namespace rear
