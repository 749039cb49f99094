#include "rearlab/runner.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "rearlab/dataset.hpp"
#include "rearlab/errors.hpp"
#include "rearlab/experiments.hpp"
#include "rearlab/image_io.hpp"
#include "rearlab/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace rear {

namespace {

std::string prepare_out_dir(const RunConfig& cfg) {
    const std::string out = cfg.get_str("out_dir");
    fs::create_directories(out);
    cfg.write_snapshot(out + "/config.effective");
    return out;
}

DatasetConfig dataset_config_from(const RunConfig& cfg) {
    DatasetConfig dc;
    dc.source = dataset_source_from_string(cfg.get_str("dataset_source"));
    dc.path = cfg.get_str("dataset_path");
    dc.image_size = cfg.get_int("dataset_image_size");
    dc.num_classes = cfg.get_int("dataset_classes");
    dc.per_class = cfg.get_int("dataset_per_class");
    dc.gen_seed = static_cast<uint64_t>(cfg.get_int("dataset_gen_seed"));
    dc.split_seed = static_cast<uint64_t>(cfg.get_int("dataset_split_seed"));
    dc.split_frac = cfg.get_real("dataset_split_frac");
    return dc;
}

TokenizerConfig tokenizer_config_from(const RunConfig& cfg) {
    TokenizerConfig tc;
    tc.image_size = cfg.get_int("dataset_image_size");
    tc.downsample = cfg.get_int("tok_downsample");
    tc.codebook_size = cfg.get_int("tok_codebook_size");
    tc.embed_dim = cfg.get_int("tok_embed_dim");
    tc.base_channels = cfg.get_int("tok_base_channels");
    tc.commitment = cfg.get_real("tok_commitment");
    tc.ema_decay = cfg.get_real("tok_ema_decay");
    tc.lr = cfg.get_real("tok_lr");
    tc.seed = static_cast<uint64_t>(cfg.get_int("seed"));
    return tc;
}

TrainConfig train_config_from(const RunConfig& cfg) {
    TrainConfig tc;
    tc.mode = train_mode_from_string(cfg.get_str("train_mode"));
    tc.epochs = cfg.get_int("train_epochs");
    tc.batch = cfg.get_int("train_batch");
    tc.peak_lr = cfg.get_real("train_peak_lr");
    tc.final_lr = cfg.get_real("train_final_lr");
    tc.warmup_frac = cfg.get_real("train_warmup_frac");
    tc.beta1 = cfg.get_real("train_beta1");
    tc.beta2 = cfg.get_real("train_beta2");
    tc.weight_decay = cfg.get_real("train_weight_decay");
    tc.grad_clip_norm = cfg.get_real("train_grad_clip");
    tc.label_dropout = cfg.get_real("train_label_dropout");
    tc.lambda = cfg.get_real("reg_lambda");
    tc.schedule.kind = noise_kind_from_string(cfg.get_str("noise_kind"));
    tc.schedule.level = cfg.get_real("noise_level");
    tc.schedule.truncation = cfg.get_real("noise_truncation");
    tc.ckpt_every = cfg.get_int("train_ckpt_every");
    tc.seed = static_cast<uint64_t>(cfg.get_int("seed"));
    return tc;
}

SampleConfig sample_config_from(const RunConfig& cfg) {
    SampleConfig sc;
    sc.guidance_scale = cfg.get_real("sample_guidance_scale");
    sc.guidance_power = cfg.get_real("sample_guidance_power");
    sc.constant_scale = cfg.get_bool("sample_constant_scale");
    sc.seed = static_cast<uint64_t>(cfg.get_int("seed"));
    return sc;
}

ARConfig ar_config_from(const RunConfig& cfg, const TokenizerConfig& tok, int64_t num_classes) {
    ARConfig a;
    a.num_layers = cfg.get_int("ar_layers");
    a.hidden_dim = cfg.get_int("ar_hidden");
    a.num_heads = cfg.get_int("ar_heads");
    a.mlp_ratio = cfg.get_real("ar_mlp_ratio");
    a.dropout_rate = cfg.get_real("ar_dropout");
    a.vocab_size = tok.codebook_size;
    a.codebook_dim = tok.embed_dim;
    a.seq_len = tok.grid() * tok.grid();
    a.num_classes = num_classes;
    a.tap_shallow = cfg.get_int("ar_tap_shallow");
    a.tap_deep = cfg.get_int("ar_tap_deep");
    if (a.tap_deep < 0) a.tap_deep = ARConfig::default_tap_deep(a.num_layers);
    a.tap_pre_block = cfg.get_bool("ar_tap_pre_block");
    a.head_hidden = cfg.get_int("ar_head_hidden");
    a.tied_codebook = cfg.get_bool("ar_tied_codebook");
    return a;
}

std::string require_path(const RunConfig& cfg, const std::string& key,
                         const std::string& producer) {
    const std::string p = cfg.get_str(key);
    if (p.empty())
        throw std::invalid_argument("config key " + key + " is required (produce it with `" +
                                    producer + "`)");
    if (!fs::exists(p))
        throw std::invalid_argument("missing artifact " + p + " for key " + key +
                                    " (produce it with `" + producer + "`)");
    return p;
}

ARConfig ar_config_from_meta(const json& meta) {
    const json& a = meta.at("arch");
    ARConfig cfg;
    cfg.num_layers = a.at("num_layers").get<int64_t>();
    cfg.hidden_dim = a.at("hidden_dim").get<int64_t>();
    cfg.num_heads = a.at("num_heads").get<int64_t>();
    cfg.vocab_size = a.at("vocab_size").get<int64_t>();
    cfg.seq_len = a.at("seq_len").get<int64_t>();
    cfg.num_classes = a.at("num_classes").get<int64_t>();
    cfg.dropout_rate = a.at("dropout_rate").get<double>();
    cfg.mlp_ratio = a.at("mlp_ratio").get<double>();
    cfg.tap_shallow = a.at("tap_shallow").get<int64_t>();
    cfg.tap_deep = a.at("tap_deep").get<int64_t>();
    cfg.tap_pre_block = a.at("tap_pre_block").get<bool>();
    cfg.head_hidden = a.at("head_hidden").get<int64_t>();
    cfg.codebook_dim = a.at("codebook_dim").get<int64_t>();
    cfg.tied_codebook = a.at("tied_codebook").get<bool>();
    return cfg;
}

struct LoadedModel {
    std::unique_ptr<ARModel<float>> model;
    json meta;
};

LoadedModel load_model(const std::string& path, const Codebook* cb) {
    const CheckpointContainer c = load_checkpoint(path);
    LoadedModel lm;
    lm.meta = json::parse(c.meta_json);
    const ARConfig arch = ar_config_from_meta(lm.meta);
    CodebookT<float> cbf;
    const CodebookT<float>* cbp = nullptr;
    if (arch.tied_codebook) {
        if (cb == nullptr)
            throw std::invalid_argument(
                "tied-codebook model needs tokenizer_ckpt for its codebook");
        cbf = *cb;
        cbp = &cbf;
    }
    lm.model = std::make_unique<ARModel<float>>(arch, cbp);
    load_ar_params(*lm.model, c);
    return lm;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out << text;
}

MetricsSink jsonl_sink(const std::string& path, std::ofstream& stream) {
    stream.open(path, std::ios::trunc);
    if (!stream) throw IoError("cannot write metrics log " + path);
    return [&stream](const std::string& line) { stream << line << "\n"; };
}

}  // namespace

void cmd_tokenizer_train(const RunConfig& cfg) {
    const std::string out = prepare_out_dir(cfg);
    const Dataset ds = ingest_dataset(dataset_config_from(cfg));
    VQTokenizer tok(tokenizer_config_from(cfg));

    std::ofstream log_stream;
    const auto sink = jsonl_sink(out + "/tokenizer_metrics.jsonl", log_stream);
    const auto res = train_tokenizer(tok, ds, cfg.get_int("tok_epochs"),
                                     cfg.get_int("tok_batch"),
                                     static_cast<uint64_t>(cfg.get_int("seed")), sink);
    save_tokenizer_checkpoint(tok, out + "/tokenizer.ckpt");

    json summary;
    summary["init_val_psnr"] = res.init_val_psnr;
    summary["final_val_psnr"] = res.val_psnr.back();
    summary["codebook_usage"] = res.codebook_usage;
    summary["epochs"] = res.epoch_loss.size();
    write_text(out + "/tokenizer_summary.json", summary.dump(2));
    std::cout << "tokenizer: val PSNR " << res.init_val_psnr << " -> " << res.val_psnr.back()
              << " dB, codebook usage " << res.codebook_usage << "\n";
}

void cmd_tokenize(const RunConfig& cfg) {
    const std::string out = prepare_out_dir(cfg);
    const auto tok =
        load_tokenizer_checkpoint(require_path(cfg, "tokenizer_ckpt", "tokenizer-train"));
    const Dataset ds = ingest_dataset(dataset_config_from(cfg));

    TokenCache cache;
    cache.K = static_cast<uint32_t>(tok->config().codebook_size);
    cache.h = static_cast<uint32_t>(tok->config().grid());
    cache.w = static_cast<uint32_t>(tok->config().grid());
    cache.num_classes = static_cast<uint32_t>(ds.num_classes);
    cache.tokenizer_checksum = tok->codebook_checksum();
    const int64_t n = cache.seq_len();
    cache.labels.resize(static_cast<size_t>(ds.count()));
    cache.indices.resize(static_cast<size_t>(ds.count() * n));
    const int64_t chunk = 64;
    for (int64_t lo = 0; lo < ds.count(); lo += chunk) {
        const int64_t hi = std::min(lo + chunk, ds.count());
        std::vector<int64_t> idx;
        for (int64_t i = lo; i < hi; ++i) idx.push_back(i);
        const TokenGrid grid = tok->tokenize(ds.gather(idx), ds.gather_labels(idx));
        for (int64_t i = 0; i < hi - lo; ++i) {
            cache.labels[static_cast<size_t>(lo + i)] =
                static_cast<uint16_t>(grid.labels[static_cast<size_t>(i)]);
            std::copy(grid.seq(i), grid.seq(i) + n, cache.indices.begin() + (lo + i) * n);
        }
    }
    save_token_cache(cache, out + "/tokens.cache");
    std::cout << "tokenized " << ds.count() << " images -> " << out << "/tokens.cache\n";
}

void cmd_ar_train(const RunConfig& cfg) {
    const std::string out = prepare_out_dir(cfg);
    const auto tok =
        load_tokenizer_checkpoint(require_path(cfg, "tokenizer_ckpt", "tokenizer-train"));
    const TokenCache cache = load_token_cache(require_path(cfg, "token_cache", "tokenize"),
                                              tok->codebook_checksum());

    std::vector<int64_t> train_idx, val_idx;
    split_indices(cache.count(), static_cast<uint64_t>(cfg.get_int("dataset_split_seed")),
                  cfg.get_real("dataset_split_frac"), train_idx, val_idx);

    const ARConfig arch = ar_config_from(cfg, tok->config(), cache.num_classes);
    CodebookT<float> cb = tok->codebook();
    auto model = std::make_unique<ARModel<float>>(arch, arch.tied_codebook ? &cb : nullptr);
    model->init_params(static_cast<uint64_t>(cfg.get_int("seed")));

    const TrainConfig tc = train_config_from(cfg);
    std::ofstream log_stream;
    const auto sink = jsonl_sink(out + "/metrics.jsonl", log_stream);
    const TrainResult res = train_loop(*model, cache, train_idx, val_idx, tok->codebook(), tc,
                                       out, sink, cfg.get_str("resume_from"));

    json eval;
    eval["mode"] = train_mode_to_string(tc.mode);
    eval["val_nll"] = res.evals.back().val_nll;
    eval["val_ctr"] = res.evals.back().val_ctr;
    eval["epochs"] = tc.epochs;
    eval["global_step"] = res.global_step;
    eval["params"] = model->count_parameters().total;
    eval["final_ckpt"] = res.final_ckpt;
    write_text(out + "/final_eval.json", eval.dump(2));
    std::cout << "ar-train [" << train_mode_to_string(tc.mode) << "]: val NLL "
              << res.evals.back().val_nll << ", val CTR " << res.evals.back().val_ctr << "\n";
}

void cmd_sample(const RunConfig& cfg) {
    const std::string out = prepare_out_dir(cfg);
    const auto tok =
        load_tokenizer_checkpoint(require_path(cfg, "tokenizer_ckpt", "tokenizer-train"));
    const Codebook cb = tok->codebook();
    const LoadedModel lm = load_model(require_path(cfg, "model_ckpt", "ar-train"), &cb);

    const int64_t count = cfg.get_int("sample_count");
    const int64_t fixed_label = cfg.get_int("sample_label");
    const int64_t num_classes = lm.model->cfg.num_classes;
    std::vector<int64_t> labels(static_cast<size_t>(count));
    for (int64_t i = 0; i < count; ++i) {
        labels[static_cast<size_t>(i)] = fixed_label >= 0 ? fixed_label : i % num_classes;
    }
    const SampleConfig sc = sample_config_from(cfg);
    const auto seqs = sample(*lm.model, labels, sc);

    const int64_t g = tok->config().grid();
    const TokenGrid grid =
        seqs_to_grid(seqs, count, g, g, labels);
    const ImageBatch images = tok->decode_tokens(grid);
    write_image_grid(images, out + "/samples.png", cfg.get_int("sample_grid_cols"),
                     cfg.get_int("sample_grid_pad"));

    TokenCache sample_cache;
    sample_cache.K = static_cast<uint32_t>(lm.model->cfg.vocab_size);
    sample_cache.h = static_cast<uint32_t>(g);
    sample_cache.w = static_cast<uint32_t>(g);
    sample_cache.num_classes = static_cast<uint32_t>(num_classes);
    sample_cache.tokenizer_checksum = tok->codebook_checksum();
    sample_cache.labels.assign(labels.begin(), labels.end());
    sample_cache.indices = seqs;
    save_token_cache(sample_cache, out + "/samples.cache");
    std::cout << "sampled " << count << " sequences -> " << out << "/samples.png\n";
}

void cmd_diagnose(const RunConfig& cfg) {
    const std::string out = prepare_out_dir(cfg);
    const std::string experiment = cfg.get_str("diag_experiment");
    const uint64_t seed = static_cast<uint64_t>(cfg.get_int("seed"));

    const auto tok =
        load_tokenizer_checkpoint(require_path(cfg, "tokenizer_ckpt", "tokenizer-train"));
    const Codebook cb = tok->codebook();
    const LoadedModel lm = load_model(require_path(cfg, "model_ckpt", "ar-train"), &cb);
    const ARModel<float>& model = *lm.model;

    DiagnosticsReport rep;
    std::string fig_csv_name;
    std::string fig_csv;

    if (experiment == "throughput") {
        SampleConfig sc = sample_config_from(cfg);
        rep = throughput_diagnostics(model, cfg.get_int("diag_throughput_batch"), sc);
    } else if (experiment == "exposure_bias" || experiment == "embedding_replacement" ||
               experiment == "cka" || experiment == "ctr" || experiment == "robustness") {
        const TokenCache cache = load_token_cache(require_path(cfg, "token_cache", "tokenize"),
                                                  tok->codebook_checksum());
        std::vector<int64_t> train_idx, val_idx;
        split_indices(cache.count(), static_cast<uint64_t>(cfg.get_int("dataset_split_seed")),
                      cfg.get_real("dataset_split_frac"), train_idx, val_idx);
        const std::vector<int64_t>& split_idx =
            cfg.get_str("diag_split") == "train" ? train_idx : val_idx;

        if (experiment == "ctr") {
            rep = ctr_report(model, cache, split_idx, cfg.get_int("diag_images"));
        } else if (experiment == "robustness") {
            rep = robustness_report(model, cache, train_idx, val_idx,
                                    cfg.get_real("diag_noise_level"), cfg.get_int("diag_seeds"),
                                    cfg.get_int("diag_images"), seed);
            fig_csv_name = "fig7a.csv";
        } else if (experiment == "cka") {
            const int64_t N = cache.seq_len();
            const int64_t need =
                (cfg.get_int("diag_positions") + (N - 1) - 1) / (N - 1) + 1;
            const int64_t n = std::min<int64_t>(need, static_cast<int64_t>(split_idx.size()));
            std::vector<uint16_t> seqs(static_cast<size_t>(n * N));
            std::vector<int64_t> labels(static_cast<size_t>(n));
            for (int64_t i = 0; i < n; ++i) {
                const uint16_t* src = cache.seq(split_idx[static_cast<size_t>(i)]);
                std::copy(src, src + N, seqs.begin() + i * N);
                labels[static_cast<size_t>(i)] = cache.labels[split_idx[static_cast<size_t>(i)]];
            }
            const auto profile =
                layer_similarity_profile(model, tok->codebook(), seqs, labels,
                                         cfg.get_int("diag_positions"),
                                         lm.meta.at("train").at("mode").get<std::string>());
            rep = cka_profile_report(profile);
            fig_csv_name = "fig7bc.csv";
        } else {
            // image-space protocol experiments need the dataset itself
            const Dataset ds = ingest_dataset(dataset_config_from(cfg));
            if (ds.count() != cache.count())
                throw IntegrityError(
                    "diagnose: dataset and token cache sizes differ; re-run tokenize");
            const int64_t n =
                std::min<int64_t>(cfg.get_int("diag_images"),
                                  static_cast<int64_t>(split_idx.size()));
            std::vector<int64_t> idx(split_idx.begin(), split_idx.begin() + n);
            const EvalSet eval = build_eval_set(*tok, ds, idx);
            if (experiment == "exposure_bias") {
                SampleConfig sc = sample_config_from(cfg);
                rep = exposure_bias_experiment(model, *tok, eval,
                                               parse_real_list(cfg.get_str("diag_r_grid")),
                                               cfg.get_int("diag_seeds"), sc);
                fig_csv_name = "fig3a.csv";
            } else {
                rep = embedding_replacement_experiment(
                    model, *tok, eval, parse_real_list(cfg.get_str("diag_rprime_grid")),
                    cfg.get_int("diag_seeds"), seed);
                fig_csv_name = "fig3b.csv";
            }
        }
    } else {
        throw std::invalid_argument("unknown diag_experiment: " + experiment);
    }

    write_text(out + "/" + rep.experiment + ".json", rep.to_json());
    write_text(out + "/" + rep.experiment + ".csv", rep.to_csv());
    if (!fig_csv_name.empty()) {
        fig_csv = rep.to_csv();
        write_text(out + "/" + fig_csv_name, fig_csv);
    }
    std::cout << "diagnose " << rep.experiment << ": " << rep.records.size() << " records -> "
              << out << "/" << rep.experiment << ".json\n";
}

void cmd_report(const RunConfig& cfg) {
    const std::string out = prepare_out_dir(cfg);
    const auto runs = split_csv(cfg.get_str("report_runs"));
    if (runs.empty())
        throw std::invalid_argument("report: report_runs must list at least one run directory");

    json table = json::array();
    std::ostringstream text;
    text << "run                              mode        val_nll    val_ctr    params\n";
    for (const auto& run : runs) {
        const std::string eval_path = run + "/final_eval.json";
        if (!fs::exists(eval_path))
            throw std::invalid_argument("report: missing " + eval_path +
                                        " (produce it with `ar-train`)");
        std::ifstream in(eval_path);
        json eval = json::parse(in);
        eval["run"] = run;
        table.push_back(eval);
        std::ostringstream row;
        row.width(33);
        row << std::left << run;
        text << row.str() << eval["mode"].get<std::string>() << "\t"
             << eval["val_nll"].get<double>() << "\t" << eval["val_ctr"].get<double>() << "\t"
             << eval["params"].get<int64_t>() << "\n";
    }
    write_text(out + "/report.json", json{{"runs", table}}.dump(2));

    std::ostringstream csv;
    csv << "run,mode,val_nll,val_ctr,params\n";
    for (const auto& eval : table) {
        csv << eval["run"].get<std::string>() << "," << eval["mode"].get<std::string>() << ","
            << eval["val_nll"].get<double>() << "," << eval["val_ctr"].get<double>() << ","
            << eval["params"].get<int64_t>() << "\n";
    }
    write_text(out + "/report.csv", csv.str());
    std::cout << text.str();
}

}  // namespace rear
