#include "rearlab/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "rearlab/errors.hpp"

namespace rear {

RunConfig::RunConfig() {
    // run
    declare("seed", Type::Int, "0", "root seed for every derived RNG stream");
    declare("out_dir", Type::Str, "runs/default", "output directory for this run");

    // dataset
    declare("dataset_source", Type::Str, "synthetic_shapes",
            "synthetic_shapes | image_folder | standard_32x32");
    declare("dataset_path", Type::Str, "", "folder for image_folder / standard_32x32");
    declare("dataset_image_size", Type::Int, "32", "square image size");
    declare("dataset_classes", Type::Int, "10", "synthetic class count (max 10)");
    declare("dataset_per_class", Type::Int, "300", "synthetic images per class");
    declare("dataset_gen_seed", Type::Int, "0", "synthetic generator seed");
    declare("dataset_split_seed", Type::Int, "0", "train/val split seed");
    declare("dataset_split_frac", Type::Real, "0.9", "train fraction");

    // tokenizer
    declare("tok_codebook_size", Type::Int, "256", "codebook entries K");
    declare("tok_embed_dim", Type::Int, "16", "codebook dimension c");
    declare("tok_downsample", Type::Int, "4", "spatial downsample factor (power of two)");
    declare("tok_base_channels", Type::Int, "32", "encoder/decoder width");
    declare("tok_commitment", Type::Real, "0.25", "commitment coefficient");
    declare("tok_ema_decay", Type::Real, "0.99", "codebook EMA decay");
    declare("tok_lr", Type::Real, "0.001", "tokenizer Adam learning rate");
    declare("tok_epochs", Type::Int, "8", "tokenizer training epochs");
    declare("tok_batch", Type::Int, "32", "tokenizer batch size");
    declare("tokenizer_ckpt", Type::Str, "", "tokenizer checkpoint path (consumer commands)");

    // token cache
    declare("token_cache", Type::Str, "", "token cache path (consumer commands)");

    // AR model
    declare("ar_layers", Type::Int, "8", "transformer blocks");
    declare("ar_hidden", Type::Int, "256", "hidden width");
    declare("ar_heads", Type::Int, "8", "attention heads");
    declare("ar_mlp_ratio", Type::Real, "4.0", "feed-forward expansion");
    declare("ar_dropout", Type::Real, "0.1", "attention/FFN dropout");
    declare("ar_tap_shallow", Type::Int, "0", "shallow tap layer l");
    declare("ar_tap_deep", Type::Int, "-1", "deep tap layer l' (-1 = 3/4 depth rule)");
    declare("ar_tap_pre_block", Type::Bool, "false", "tap block inputs instead of outputs");
    declare("ar_head_hidden", Type::Int, "2048", "projection head width");
    declare("ar_tied_codebook", Type::Bool, "false", "tie embeddings/head to the codebook");

    // AR training
    declare("train_mode", Type::Str, "rear", "vanilla | noise_only | embed_only | rear");
    declare("train_epochs", Type::Int, "100", "AR training epochs");
    declare("train_batch", Type::Int, "64", "AR batch size");
    declare("train_peak_lr", Type::Real, "0.0003", "peak learning rate");
    declare("train_final_lr", Type::Real, "0.00001", "final learning rate");
    declare("train_warmup_frac", Type::Real, "0.25", "warmup fraction of total steps");
    declare("train_beta1", Type::Real, "0.9", "AdamW beta1");
    declare("train_beta2", Type::Real, "0.96", "AdamW beta2");
    declare("train_weight_decay", Type::Real, "0.03", "decoupled weight decay");
    declare("train_grad_clip", Type::Real, "1.0", "max gradient norm");
    declare("train_label_dropout", Type::Real, "0.1", "null-class label dropout");
    declare("train_ckpt_every", Type::Int, "0", "checkpoint every n epochs (0 = final only)");
    declare("reg_lambda", Type::Real, "1.0", "embedding regularization weight");
    declare("noise_kind", Type::Str, "annealed_truncated",
            "fixed | uniform_range | annealed_linear | annealed_truncated");
    declare("noise_level", Type::Real, "1.0", "max noise level (or the fixed epsilon)");
    declare("noise_truncation", Type::Real, "0.75", "progress at which the cap reaches zero");
    declare("model_ckpt", Type::Str, "", "AR checkpoint path (consumer commands)");
    declare("resume_from", Type::Str, "", "resume AR training from this checkpoint");

    // sampling
    declare("sample_guidance_scale", Type::Real, "1.0", "CFG scale s >= 1");
    declare("sample_guidance_power", Type::Real, "1.0", "power-cosine exponent p");
    declare("sample_constant_scale", Type::Bool, "false", "constant scale instead of schedule");
    declare("sample_count", Type::Int, "16", "sequences to sample");
    declare("sample_label", Type::Int, "-1", "class label (-1 cycles all classes)");
    declare("sample_grid_cols", Type::Int, "4", "image grid columns");
    declare("sample_grid_pad", Type::Int, "0", "image grid padding pixels");

    // diagnostics
    declare("diag_experiment", Type::Str, "ctr",
            "ctr | exposure_bias | embedding_replacement | cka | robustness | throughput");
    declare("diag_r_grid", Type::Str, "0.25,0.5,0.75", "ground-truth ratios r");
    declare("diag_rprime_grid", Type::Str, "0,0.2,0.4,0.6", "replacement ratios r'");
    declare("diag_seeds", Type::Int, "3", "seeds per condition");
    declare("diag_images", Type::Int, "100", "images per condition");
    declare("diag_noise_level", Type::Real, "0.1", "context noise for robustness");
    declare("diag_positions", Type::Int, "1024", "positions for CKA profiles");
    declare("diag_throughput_batch", Type::Int, "16", "batch for throughput runs");
    declare("diag_split", Type::Str, "val", "train | val subset for diagnostics");

    // report
    declare("report_runs", Type::Str, "", "comma-separated run directories to compare");
}

void RunConfig::declare(const std::string& key, Type type, const std::string& def,
                        const std::string& help) {
    values_[key] = Entry{type, def, help};
}

const RunConfig::Entry& RunConfig::entry(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end())
        throw std::invalid_argument("unknown config key: " + key);
    return it->second;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw std::invalid_argument("unknown config key: " + key);
    // validate against the declared type
    switch (it->second.type) {
        case Type::Int: {
            size_t pos = 0;
            try {
                (void)std::stoll(value, &pos);
            } catch (...) {
                throw std::invalid_argument("config key " + key + ": not an integer: " + value);
            }
            if (pos != value.size())
                throw std::invalid_argument("config key " + key + ": not an integer: " + value);
            break;
        }
        case Type::Real: {
            size_t pos = 0;
            try {
                (void)std::stod(value, &pos);
            } catch (...) {
                throw std::invalid_argument("config key " + key + ": not a real: " + value);
            }
            if (pos != value.size())
                throw std::invalid_argument("config key " + key + ": not a real: " + value);
            break;
        }
        case Type::Bool:
            if (value != "true" && value != "false" && value != "0" && value != "1")
                throw std::invalid_argument("config key " + key + ": not a bool: " + value);
            break;
        case Type::Str:
            break;
    }
    it->second.value = value;
}

void RunConfig::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        // trim
        const auto b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos) continue;
        const auto e = line.find_last_not_of(" \t\r");
        line = line.substr(b, e - b + 1);
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                        ": expected key=value");
        std::string key = line.substr(0, eq);
        std::string value = line.substr(eq + 1);
        const auto ke = key.find_last_not_of(" \t");
        key = key.substr(0, ke + 1);
        const auto vb = value.find_first_not_of(" \t");
        value = vb == std::string::npos ? "" : value.substr(vb);
        set(key, value);
    }
}

int64_t RunConfig::get_int(const std::string& key) const {
    const Entry& e = entry(key);
    if (e.type != Type::Int) throw std::invalid_argument("config key is not int: " + key);
    return std::stoll(e.value);
}

double RunConfig::get_real(const std::string& key) const {
    const Entry& e = entry(key);
    if (e.type != Type::Real) throw std::invalid_argument("config key is not real: " + key);
    return std::stod(e.value);
}

bool RunConfig::get_bool(const std::string& key) const {
    const Entry& e = entry(key);
    if (e.type != Type::Bool) throw std::invalid_argument("config key is not bool: " + key);
    return e.value == "true" || e.value == "1";
}

const std::string& RunConfig::get_str(const std::string& key) const {
    const Entry& e = entry(key);
    if (e.type != Type::Str) throw std::invalid_argument("config key is not string: " + key);
    return e.value;
}

std::string RunConfig::snapshot() const {
    std::ostringstream out;
    for (const auto& [k, e] : values_) {
        out << k << "=" << e.value << "\n";
    }
    return out.str();
}

void RunConfig::write_snapshot(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write config snapshot: " + path);
    out << snapshot();
}

std::vector<std::string> RunConfig::keys() const {
    std::vector<std::string> out;
    for (const auto& [k, e] : values_) {
        (void)e;
        out.push_back(k);
    }
    return out;
}

RunConfig::Type RunConfig::type_of(const std::string& key) const { return entry(key).type; }
const std::string& RunConfig::help_of(const std::string& key) const { return entry(key).help; }

std::vector<std::string> split_csv(const std::string& csv) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : csv) {
        if (c == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else if (!std::isspace(static_cast<unsigned char>(c))) {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

std::vector<double> parse_real_list(const std::string& csv) {
    std::vector<double> out;
    for (const auto& s : split_csv(csv)) out.push_back(std::stod(s));
    return out;
}

}  // namespace rear
