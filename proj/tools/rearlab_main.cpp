// Command-line front end. Links only the C API.

#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rearlab/rearlab.h"

namespace {

struct ConfigHandle {
    rearlab_config* cfg = rearlab_config_create();
    ~ConfigHandle() { rearlab_config_destroy(cfg); }
};

int apply(rearlab_config* cfg, const std::string& key, const std::string& value) {
    if (rearlab_config_set(cfg, key.c_str(), value.c_str()) != REARLAB_OK) {
        std::fprintf(stderr, "error: %s\n", rearlab_last_error());
        return 1;
    }
    return 0;
}

int apply_kv(rearlab_config* cfg, const std::vector<std::string>& pairs) {
    for (const auto& kv : pairs) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
            std::fprintf(stderr, "error: --set expects key=value, got '%s'\n", kv.c_str());
            return 1;
        }
        if (apply(cfg, kv.substr(0, eq), kv.substr(eq + 1)) != 0) return 1;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{std::string("rearlab ") + rearlab_version() +
                 " — train, sample, and diagnose a toy visual autoregressive lab"};
    app.require_subcommand(1);

    std::string config_file;
    std::vector<std::string> sets;
    std::string out_dir, seed;
    app.add_option("--config", config_file, "key=value config file")->check(CLI::ExistingFile);
    app.add_option("--set", sets, "override any config key (key=value, repeatable)");
    app.add_option("--out", out_dir, "output directory (config key out_dir)");
    app.add_option("--seed", seed, "root seed (config key seed)");

    struct Sub {
        CLI::App* cmd;
        rearlab_status (*run)(const rearlab_config*);
        std::vector<std::pair<std::string, std::string*>> opts;
    };
    std::vector<std::unique_ptr<std::string>> storage;
    auto opt = [&storage](CLI::App* cmd, const char* flag, const char* key, const char* help) {
        storage.push_back(std::make_unique<std::string>());
        cmd->add_option(flag, *storage.back(), help);
        return std::make_pair(std::string(key), storage.back().get());
    };

    std::vector<Sub> subs;

    {
        CLI::App* c = app.add_subcommand("tokenizer-train",
                                         "train the VQ tokenizer on the configured dataset");
        Sub s{c, &rearlab_run_tokenizer_train, {}};
        s.opts.push_back(opt(c, "--epochs", "tok_epochs", "tokenizer training epochs"));
        s.opts.push_back(opt(c, "--dataset", "dataset_source", "dataset source"));
        subs.push_back(std::move(s));
    }
    {
        CLI::App* c = app.add_subcommand("tokenize", "build the token cache for a dataset");
        Sub s{c, &rearlab_run_tokenize, {}};
        s.opts.push_back(opt(c, "--tokenizer", "tokenizer_ckpt", "tokenizer checkpoint"));
        s.opts.push_back(opt(c, "--dataset", "dataset_source", "dataset source"));
        subs.push_back(std::move(s));
    }
    {
        CLI::App* c = app.add_subcommand("ar-train", "train the AR transformer on a token cache");
        Sub s{c, &rearlab_run_ar_train, {}};
        s.opts.push_back(opt(c, "--mode", "train_mode",
                             "vanilla | noise_only | embed_only | rear"));
        s.opts.push_back(opt(c, "--epochs", "train_epochs", "AR training epochs"));
        s.opts.push_back(opt(c, "--tokenizer", "tokenizer_ckpt", "tokenizer checkpoint"));
        s.opts.push_back(opt(c, "--cache", "token_cache", "token cache path"));
        s.opts.push_back(opt(c, "--resume", "resume_from", "resume from checkpoint"));
        subs.push_back(std::move(s));
    }
    {
        CLI::App* c = app.add_subcommand("sample",
                                         "free-running sampling to a token cache and PNG grid");
        Sub s{c, &rearlab_run_sample, {}};
        s.opts.push_back(opt(c, "--model", "model_ckpt", "AR checkpoint"));
        s.opts.push_back(opt(c, "--tokenizer", "tokenizer_ckpt", "tokenizer checkpoint"));
        s.opts.push_back(opt(c, "--guidance-scale", "sample_guidance_scale", "CFG scale"));
        s.opts.push_back(opt(c, "--guidance-power", "sample_guidance_power", "CFG power"));
        s.opts.push_back(
            opt(c, "--constant-scale", "sample_constant_scale", "true for constant CFG scale"));
        s.opts.push_back(opt(c, "--count", "sample_count", "sequences to sample"));
        s.opts.push_back(opt(c, "--label", "sample_label", "class label (-1 cycles)"));
        subs.push_back(std::move(s));
    }
    {
        CLI::App* c = app.add_subcommand("diagnose", "run one diagnostics experiment");
        Sub s{c, &rearlab_run_diagnose, {}};
        s.opts.push_back(
            opt(c, "--experiment", "diag_experiment",
                "ctr | exposure_bias | embedding_replacement | cka | robustness | throughput"));
        s.opts.push_back(opt(c, "--model", "model_ckpt", "AR checkpoint"));
        s.opts.push_back(opt(c, "--tokenizer", "tokenizer_ckpt", "tokenizer checkpoint"));
        s.opts.push_back(opt(c, "--cache", "token_cache", "token cache path"));
        s.opts.push_back(opt(c, "--r", "diag_r_grid", "comma-separated r grid"));
        s.opts.push_back(opt(c, "--rprime", "diag_rprime_grid", "comma-separated r' grid"));
        s.opts.push_back(opt(c, "--seeds", "diag_seeds", "seeds per condition"));
        s.opts.push_back(opt(c, "--images", "diag_images", "images per condition"));
        subs.push_back(std::move(s));
    }
    {
        CLI::App* c =
            app.add_subcommand("report", "aggregate final_eval.json files across run dirs");
        Sub s{c, &rearlab_run_report, {}};
        s.opts.push_back(opt(c, "--runs", "report_runs", "comma-separated run directories"));
        subs.push_back(std::move(s));
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;  // usage error
    }

    ConfigHandle handle;
    if (!config_file.empty() &&
        rearlab_config_load_file(handle.cfg, config_file.c_str()) != REARLAB_OK) {
        std::fprintf(stderr, "error: %s\n", rearlab_last_error());
        return 1;
    }
    if (apply_kv(handle.cfg, sets) != 0) return 1;
    if (!out_dir.empty() && apply(handle.cfg, "out_dir", out_dir) != 0) return 1;
    if (!seed.empty() && apply(handle.cfg, "seed", seed) != 0) return 1;

    for (const Sub& s : subs) {
        if (!s.cmd->parsed()) continue;
        for (const auto& [key, value] : s.opts) {
            if (!value->empty() && apply(handle.cfg, key, *value) != 0) return 1;
        }
        const rearlab_status st = s.run(handle.cfg);
        if (st != REARLAB_OK) {
            std::fprintf(stderr, "error: %s\n", rearlab_last_error());
        }
        return static_cast<int>(st);
    }
    return 1;
}
