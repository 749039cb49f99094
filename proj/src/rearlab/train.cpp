#include "rearlab/train.hpp"

#include <cmath>
#include <filesystem>
#include <sstream>

#include <json.hpp>

#include "rearlab/errors.hpp"
#include "rearlab/metrics.hpp"
#include "rearlab/objective.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace rear {

TrainMode train_mode_from_string(const std::string& s) {
    if (s == "vanilla") return TrainMode::Vanilla;
    if (s == "noise_only") return TrainMode::NoiseOnly;
    if (s == "embed_only") return TrainMode::EmbedOnly;
    if (s == "rear") return TrainMode::Rear;
    throw std::invalid_argument("unknown train mode: " + s);
}

const char* train_mode_to_string(TrainMode m) {
    switch (m) {
        case TrainMode::Vanilla: return "vanilla";
        case TrainMode::NoiseOnly: return "noise_only";
        case TrainMode::EmbedOnly: return "embed_only";
        case TrainMode::Rear: return "rear";
    }
    return "?";
}

void TrainConfig::validate() const {
    if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
    if (batch < 1) throw std::invalid_argument("train: batch must be >= 1");
    if (!(warmup_frac > 0.0 && warmup_frac < 1.0))
        throw std::invalid_argument("train: warmup_frac must be in (0,1)");
    if (!(peak_lr > 0.0 && final_lr > 0.0))
        throw std::invalid_argument("train: learning rates must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
        throw std::invalid_argument("train: betas must be in [0,1)");
    if (!(weight_decay >= 0.0)) throw std::invalid_argument("train: weight_decay >= 0");
    if (!(grad_clip_norm > 0.0)) throw std::invalid_argument("train: grad_clip_norm > 0");
    if (!(label_dropout >= 0.0 && label_dropout < 1.0))
        throw std::invalid_argument("train: label_dropout in [0,1)");
    if (!(lambda >= 0.0) || !std::isfinite(lambda))
        throw std::invalid_argument("train: lambda must be finite and >= 0");
    if (reg_active() && lambda == 0.0)
        throw std::invalid_argument("train: mode requires lambda > 0");
    schedule.validate();
}

double lr_at(int64_t step, int64_t total_steps, const TrainConfig& cfg) {
    if (step < 0 || step > total_steps) throw std::invalid_argument("lr_at: step out of range");
    const int64_t warmup = std::max<int64_t>(
        1, static_cast<int64_t>(std::llround(cfg.warmup_frac * static_cast<double>(total_steps))));
    if (step <= warmup) {
        return cfg.peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
    }
    const double progress =
        static_cast<double>(step - warmup) / static_cast<double>(total_steps - warmup);
    return cfg.final_lr +
           (cfg.peak_lr - cfg.final_lr) * (1.0 + std::cos(M_PI * progress)) / 2.0;
}

AdamW::AdamW(ARModel<float>& model, const TrainConfig& cfg)
    : model_(model), beta1_(cfg.beta1), beta2_(cfg.beta2), weight_decay_(cfg.weight_decay) {
    for (Param<float>* p : model.all_params()) {
        m_.emplace_back(p->w.shape);
        v_.emplace_back(p->w.shape);
    }
}

void AdamW::step(double lr) {
    t_ += 1;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    const auto& params = model_.all_params();
    for (size_t i = 0; i < params.size(); ++i) {
        Param<float>* p = params[i];
        float* w = p->w.ptr();
        float* g = p->g.ptr();
        float* m = m_[i].ptr();
        float* v = v_[i].ptr();
        const int64_t n = p->w.numel();
        for (int64_t j = 0; j < n; ++j) {
            m[j] = static_cast<float>(beta1_ * m[j] + (1.0 - beta1_) * g[j]);
            v[j] = static_cast<float>(beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j]);
            const double mhat = m[j] / c1;
            const double vhat = v[j] / c2;
            w[j] -= static_cast<float>(lr * (mhat / (std::sqrt(vhat) + 1e-8) +
                                             weight_decay_ * w[j]));
        }
    }
}

void AdamW::save_state(CheckpointContainer& c) const {
    const auto& params = model_.all_params();
    for (size_t i = 0; i < params.size(); ++i) {
        c.add_f32("opt.m." + params[i]->name, m_[i].data);
        c.add_f32("opt.v." + params[i]->name, v_[i].data);
    }
    c.add_i64("opt.t", {t_});
}

void AdamW::load_state(const CheckpointContainer& c) {
    const auto& params = model_.all_params();
    for (size_t i = 0; i < params.size(); ++i) {
        m_[i].data = c.get_f32("opt.m." + params[i]->name);
        v_[i].data = c.get_f32("opt.v." + params[i]->name);
        if (static_cast<int64_t>(m_[i].data.size()) != params[i]->w.numel())
            throw IntegrityError("optimizer state shape mismatch: " + params[i]->name);
    }
    t_ = c.get_i64("opt.t")[0];
}

double clip_gradients(ARModel<float>& model, double max_norm) {
    double sq = 0.0;
    for (Param<float>* p : model.all_params()) {
        for (int64_t j = 0; j < p->g.numel(); ++j) {
            const double g = p->g.at(j);
            sq += g * g;
        }
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const float scale = static_cast<float>(max_norm / norm);
        for (Param<float>* p : model.all_params()) {
            for (int64_t j = 0; j < p->g.numel(); ++j) p->g.at(j) *= scale;
        }
        return max_norm;
    }
    return norm;
}

StepStats train_step(ARModel<float>& model, AdamW& opt, const std::vector<uint16_t>& seqs,
                     const std::vector<int64_t>& labels, const Codebook& codebook,
                     const TrainConfig& cfg, double t, int64_t global_step, double lr) {
    const int64_t B = static_cast<int64_t>(labels.size());
    const int64_t N = model.cfg.seq_len;
    const int64_t K = model.cfg.vocab_size;

    // per-sequence noise level and corruption, from stateless streams
    std::vector<uint16_t> noisy = seqs;
    double eps_sum = 0.0;
    for (int64_t b = 0; b < B; ++b) {
        double eps = 0.0;
        if (cfg.noise_active()) {
            Rng erng(cfg.seed, RngStream::NoiseLevel, static_cast<uint64_t>(global_step),
                     static_cast<uint64_t>(b));
            eps = sample_epsilon(cfg.schedule, t, erng);
        }
        eps_sum += eps;
        if (eps > 0.0) {
            Rng crng(cfg.seed, RngStream::Corruption, static_cast<uint64_t>(global_step),
                     static_cast<uint64_t>(b));
            std::vector<uint16_t> one(seqs.begin() + b * N, seqs.begin() + (b + 1) * N);
            const auto rec = corrupt(one, eps, K, crng);
            std::copy(rec.noisy.begin(), rec.noisy.end(), noisy.begin() + b * N);
        }
    }

    // label dropout to the null class
    std::vector<int64_t> used_labels = labels;
    for (int64_t b = 0; b < B; ++b) {
        Rng lrng(cfg.seed, RngStream::LabelDropout, static_cast<uint64_t>(global_step),
                 static_cast<uint64_t>(b));
        if (lrng.bernoulli(cfg.label_dropout)) used_labels[static_cast<size_t>(b)] =
            model.cfg.null_class();
    }

    model.zero_grad();
    const uint64_t dropout_seed = mix_seed(cfg.seed, RngStream::Dropout,
                                           static_cast<uint64_t>(global_step));
    CodebookT<float> cbf = codebook;
    const auto obj = compute_objective(model, seqs, noisy, used_labels, cbf,
                                       cfg.effective_lambda(), true, dropout_seed, true);
    if (!std::isfinite(obj.total)) throw std::runtime_error("train_step: non-finite loss");

    StepStats stats;
    stats.ar_loss = obj.ar;
    stats.reg_loss = obj.reg;
    stats.total = obj.total;
    stats.grad_norm = clip_gradients(model, cfg.grad_clip_norm);
    stats.eps_mean = eps_sum / static_cast<double>(B);
    stats.lr = lr;
    opt.step(lr);
    return stats;
}

void split_indices(int64_t count, uint64_t split_seed, double split_frac,
                   std::vector<int64_t>& train_idx, std::vector<int64_t>& val_idx) {
    std::vector<int64_t> order(static_cast<size_t>(count));
    for (int64_t i = 0; i < count; ++i) order[static_cast<size_t>(i)] = i;
    Rng rng(split_seed, RngStream::DataOrder, 0x5b117);
    rng.shuffle(order.begin(), order.end());
    const int64_t n_train =
        static_cast<int64_t>(std::floor(split_frac * static_cast<double>(count)));
    train_idx.assign(order.begin(), order.begin() + n_train);
    val_idx.assign(order.begin() + n_train, order.end());
}

namespace {

std::vector<uint16_t> gather_seqs(const TokenCache& cache, const std::vector<int64_t>& idx) {
    const int64_t n = cache.seq_len();
    std::vector<uint16_t> out(idx.size() * static_cast<size_t>(n));
    for (size_t i = 0; i < idx.size(); ++i) {
        const uint16_t* src = cache.seq(idx[i]);
        std::copy(src, src + n, out.begin() + static_cast<int64_t>(i) * n);
    }
    return out;
}

std::vector<int64_t> gather_labels(const TokenCache& cache, const std::vector<int64_t>& idx) {
    std::vector<int64_t> out(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) out[i] = cache.labels[idx[i]];
    return out;
}

EpochEval eval_model(const ARModel<float>& model, const TokenCache& cache,
                     const std::vector<int64_t>& val_idx, int64_t batch) {
    EpochEval ev;
    const int64_t n_eval = std::min<int64_t>(static_cast<int64_t>(val_idx.size()), 256);
    double nll_sum = 0.0;
    double ctr_sum = 0.0;
    int64_t done = 0;
    while (done < n_eval) {
        const int64_t take = std::min<int64_t>(batch, n_eval - done);
        std::vector<int64_t> idx(val_idx.begin() + done, val_idx.begin() + done + take);
        const auto seqs = gather_seqs(cache, idx);
        const auto labels = gather_labels(cache, idx);
        const auto nll = sequence_nll(model, seqs, labels);
        for (double v : nll) nll_sum += v;
        const auto preds = teacher_forced_predictions(model, seqs, labels);
        ctr_sum += ctr(preds, seqs) * static_cast<double>(take);
        done += take;
    }
    ev.val_nll = nll_sum / static_cast<double>(n_eval);
    ev.val_ctr = ctr_sum / static_cast<double>(n_eval);
    return ev;
}

json model_meta(const ARModel<float>& model, const TrainConfig& cfg, int64_t epoch,
                int64_t global_step, uint64_t tok_checksum) {
    const ARConfig& a = model.cfg;
    json j;
    j["arch"] = {{"num_layers", a.num_layers},
                 {"hidden_dim", a.hidden_dim},
                 {"num_heads", a.num_heads},
                 {"vocab_size", a.vocab_size},
                 {"seq_len", a.seq_len},
                 {"num_classes", a.num_classes},
                 {"dropout_rate", a.dropout_rate},
                 {"mlp_ratio", a.mlp_ratio},
                 {"tap_shallow", a.tap_shallow},
                 {"tap_deep", a.tap_deep},
                 {"tap_pre_block", a.tap_pre_block},
                 {"head_hidden", a.head_hidden},
                 {"codebook_dim", a.codebook_dim},
                 {"tied_codebook", a.tied_codebook}};
    j["train"] = {{"mode", train_mode_to_string(cfg.mode)},
                  {"epochs", cfg.epochs},
                  {"batch", cfg.batch},
                  {"seed", cfg.seed},
                  {"lambda", cfg.lambda},
                  {"noise_kind", noise_kind_to_string(cfg.schedule.kind)},
                  {"noise_level", cfg.schedule.level},
                  {"noise_truncation", cfg.schedule.truncation}};
    j["progress"] = {{"epoch", epoch}, {"global_step", global_step}};
    j["tokenizer_checksum"] = tok_checksum;
    return j;
}

}  // namespace

void save_ar_checkpoint(const ARModel<float>& model, const AdamW* opt,
                        const std::string& meta_json, const std::string& path) {
    CheckpointContainer c;
    c.meta_json = meta_json;
    for (const Param<float>* p : model.all_params()) {
        c.add_f32(p->name, p->w.data.data(), p->w.shape);
    }
    if (opt != nullptr) opt->save_state(c);
    save_checkpoint(c, path);
}

std::string load_ar_checkpoint_meta(const std::string& path) {
    return load_checkpoint(path).meta_json;
}

void load_ar_params(ARModel<float>& model, const CheckpointContainer& c) {
    for (Param<float>* p : model.all_params()) {
        auto v = c.get_f32(p->name);
        if (static_cast<int64_t>(v.size()) != p->w.numel())
            throw IntegrityError("checkpoint: shape mismatch for " + p->name);
        p->w.data = std::move(v);
    }
}

TrainResult train_loop(ARModel<float>& model, const TokenCache& cache,
                       const std::vector<int64_t>& train_idx,
                       const std::vector<int64_t>& val_idx, const Codebook& codebook,
                       const TrainConfig& cfg, const std::string& out_dir,
                       const MetricsSink& sink, const std::string& resume_from) {
    cfg.validate();
    fs::create_directories(out_dir);
    const int64_t steps_per_epoch =
        (static_cast<int64_t>(train_idx.size()) + cfg.batch - 1) / cfg.batch;
    const int64_t total_steps = steps_per_epoch * cfg.epochs;

    int64_t start_epoch = 0;
    int64_t global_step = 0;
    std::unique_ptr<AdamW> opt(new AdamW(model, cfg));

    if (!resume_from.empty()) {
        const CheckpointContainer c = load_checkpoint(resume_from);
        load_ar_params(model, c);
        opt->load_state(c);
        const json meta = json::parse(c.meta_json);
        start_epoch = meta["progress"]["epoch"].get<int64_t>();
        global_step = meta["progress"]["global_step"].get<int64_t>();
    }

    TrainResult res;
    std::string last_good = resume_from;
    for (int64_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        // noise draws use the epoch's normalized progress
        const double t = static_cast<double>(epoch) / static_cast<double>(cfg.epochs);
        std::vector<int64_t> order = train_idx;
        Rng srng(cfg.seed, RngStream::DataOrder, static_cast<uint64_t>(epoch) + 1);
        srng.shuffle(order.begin(), order.end());

        for (int64_t s = 0; s < steps_per_epoch; ++s) {
            const int64_t lo = s * cfg.batch;
            const int64_t hi = std::min<int64_t>(lo + cfg.batch,
                                                 static_cast<int64_t>(order.size()));
            std::vector<int64_t> idx(order.begin() + lo, order.begin() + hi);
            const auto seqs = gather_seqs(cache, idx);
            const auto labels = gather_labels(cache, idx);
            const double lr = lr_at(global_step + 1, total_steps, cfg);
            StepStats st;
            try {
                st = train_step(model, *opt, seqs, labels, codebook, cfg, t, global_step, lr);
            } catch (const std::runtime_error& e) {
                throw std::runtime_error(std::string(e.what()) + "; last good checkpoint: " +
                                         (last_good.empty() ? "<none>" : last_good));
            }
            global_step += 1;
            if (sink) {
                std::ostringstream line;
                line << "{\"step\":" << global_step << ",\"epoch\":" << epoch << ",\"t\":" << t
                     << ",\"lr\":" << st.lr << ",\"ar_loss\":" << st.ar_loss
                     << ",\"reg_loss\":" << st.reg_loss << ",\"total\":" << st.total
                     << ",\"grad_norm\":" << st.grad_norm << ",\"eps_mean\":" << st.eps_mean
                     << "}";
                sink(line.str());
            }
        }

        const EpochEval ev = eval_model(model, cache, val_idx, cfg.batch);
        res.evals.push_back(ev);
        if (sink) {
            std::ostringstream line;
            line << "{\"epoch_end\":" << epoch << ",\"val_nll\":" << ev.val_nll
                 << ",\"val_ctr\":" << ev.val_ctr << "}";
            sink(line.str());
        }

        const bool last = epoch + 1 == cfg.epochs;
        if (last || (cfg.ckpt_every > 0 && (epoch + 1) % cfg.ckpt_every == 0)) {
            const std::string path =
                out_dir + "/" + (last ? "model_final.ckpt"
                                      : "model_epoch" + std::to_string(epoch + 1) + ".ckpt");
            const json meta = model_meta(model, cfg, epoch + 1, global_step,
                                         cache.tokenizer_checksum);
            save_ar_checkpoint(model, opt.get(), meta.dump(), path);
            last_good = path;
            if (last) res.final_ckpt = path;
        }
    }
    res.epochs_run = cfg.epochs - start_epoch;
    res.global_step = global_step;
    return res;
}

TokenizerTrainResult train_tokenizer(VQTokenizer& tok, const Dataset& ds, int64_t epochs,
                                     int64_t batch, uint64_t seed, const MetricsSink& sink) {
    if (ds.train_idx.empty()) throw std::invalid_argument("train_tokenizer: empty dataset");
    TokenizerTrainResult res;

    auto val_psnr = [&]() {
        const int64_t n = std::min<int64_t>(static_cast<int64_t>(ds.val_idx.size()), 128);
        std::vector<int64_t> idx(ds.val_idx.begin(), ds.val_idx.begin() + n);
        const ImageBatch val = ds.gather(idx);
        return psnr(val, tok.reconstruct(val));
    };
    res.init_val_psnr = val_psnr();

    uint64_t step = 0;
    for (int64_t epoch = 0; epoch < epochs; ++epoch) {
        std::vector<int64_t> order = ds.train_idx;
        Rng srng(seed, RngStream::DataOrder, 0x70c + static_cast<uint64_t>(epoch));
        srng.shuffle(order.begin(), order.end());
        double loss_sum = 0.0;
        int64_t steps = 0;
        for (int64_t lo = 0; lo < static_cast<int64_t>(order.size()); lo += batch) {
            const int64_t hi = std::min<int64_t>(lo + batch, static_cast<int64_t>(order.size()));
            std::vector<int64_t> idx(order.begin() + lo, order.begin() + hi);
            const auto stats = tok.train_step(ds.gather(idx), step++);
            loss_sum += stats.total;
            ++steps;
        }
        res.epoch_loss.push_back(loss_sum / static_cast<double>(steps));
        res.val_psnr.push_back(val_psnr());
        if (sink) {
            std::ostringstream line;
            line << "{\"tok_epoch\":" << epoch << ",\"loss\":" << res.epoch_loss.back()
                 << ",\"val_psnr\":" << res.val_psnr.back() << "}";
            sink(line.str());
        }
    }

    // codebook usage over the validation split
    {
        std::vector<bool> used(static_cast<size_t>(tok.config().codebook_size), false);
        const int64_t n = std::min<int64_t>(static_cast<int64_t>(ds.val_idx.size()), 512);
        for (int64_t lo = 0; lo < n; lo += 64) {
            const int64_t hi = std::min<int64_t>(lo + 64, n);
            std::vector<int64_t> idx(ds.val_idx.begin() + lo, ds.val_idx.begin() + hi);
            const TokenGrid t = tok.tokenize(ds.gather(idx), {});
            for (uint16_t v : t.indices) used[v] = true;
        }
        int64_t count = 0;
        for (bool u : used) count += u ? 1 : 0;
        res.codebook_usage =
            static_cast<double>(count) / static_cast<double>(tok.config().codebook_size);
    }
    return res;
}

void save_tokenizer_checkpoint(VQTokenizer& tok, const std::string& path) {
    CheckpointContainer c;
    const TokenizerConfig& t = tok.config();
    json meta;
    meta["tokenizer"] = {{"image_size", t.image_size},   {"downsample", t.downsample},
                         {"codebook_size", t.codebook_size}, {"embed_dim", t.embed_dim},
                         {"base_channels", t.base_channels}, {"commitment", t.commitment},
                         {"ema_decay", t.ema_decay},     {"lr", t.lr},
                         {"seed", t.seed}};
    meta["codebook_checksum"] = tok.codebook_checksum();
    c.meta_json = meta.dump();
    for (const auto& nb : tok.named_buffers()) {
        c.add_f32(nb.name, *nb.data);
    }
    save_checkpoint(c, path);
}

std::unique_ptr<VQTokenizer> load_tokenizer_checkpoint(const std::string& path) {
    const CheckpointContainer c = load_checkpoint(path);
    const json meta = json::parse(c.meta_json);
    const json& t = meta["tokenizer"];
    TokenizerConfig cfg;
    cfg.image_size = t["image_size"].get<int64_t>();
    cfg.downsample = t["downsample"].get<int64_t>();
    cfg.codebook_size = t["codebook_size"].get<int64_t>();
    cfg.embed_dim = t["embed_dim"].get<int64_t>();
    cfg.base_channels = t["base_channels"].get<int64_t>();
    cfg.commitment = t["commitment"].get<double>();
    cfg.ema_decay = t["ema_decay"].get<double>();
    cfg.lr = t["lr"].get<double>();
    cfg.seed = t["seed"].get<uint64_t>();
    auto tok = std::make_unique<VQTokenizer>(cfg);
    for (const auto& nb : tok->named_buffers()) {
        auto v = c.get_f32(nb.name);
        if (v.size() != nb.data->size())
            throw IntegrityError("tokenizer checkpoint: shape mismatch for " + nb.name);
        *nb.data = std::move(v);
    }
    const uint64_t want = meta["codebook_checksum"].get<uint64_t>();
    if (tok->codebook_checksum() != want)
        throw IntegrityError("tokenizer checkpoint: codebook checksum mismatch");
    return tok;
}

}  // namespace rear
