// mmreg command-line front end over the C API.

#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mmreg/mmreg.h"

namespace {

struct Common {
    std::string config;
    std::vector<std::string> overrides;
    bool dump = false;
};

int exit_code(mmreg_status s) {
    switch (s) {
        case MMREG_OK: return 0;
        case MMREG_ERR_IO:
        case MMREG_ERR_INPUT: return 2;
        case MMREG_ERR_CONFIG: return 3;
        case MMREG_WARN_NOT_CONVERGED: return 4;
        default: return 1;
    }
}

int report(mmreg_status s, const char* what) {
    if (s == MMREG_OK) return 0;
    const char* msg = mmreg_last_error();
    std::fprintf(stderr, "mmreg %s: %s%s%s\n", what, s == MMREG_WARN_NOT_CONVERGED ? "warning: " : "error: ",
                 mmreg_status_name(s), *msg ? (std::string(": ") + msg).c_str() : "");
    return exit_code(s);
}

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "key=value run configuration file");
    cmd->add_option("--set", c.overrides, "override one config key (key=value); repeatable");
    cmd->add_flag("--dump-config", c.dump, "write resolved_config.txt into every output directory");
}

// Owns a resolved config; status carries the first failure.
struct ResolvedConfig {
    mmreg_config* handle = nullptr;
    mmreg_status status = MMREG_OK;

    explicit ResolvedConfig(const Common& c) {
        status = mmreg_config_new(&handle);
        if (status == MMREG_OK && !c.config.empty()) status = mmreg_config_load(handle, c.config.c_str());
        for (const auto& o : c.overrides) {
            if (status != MMREG_OK) break;
            status = mmreg_config_override(handle, o.c_str());
        }
        if (status == MMREG_OK) status = mmreg_config_validate(handle);
    }
    ~ResolvedConfig() { mmreg_config_free(handle); }
    ResolvedConfig(const ResolvedConfig&) = delete;
    ResolvedConfig& operator=(const ResolvedConfig&) = delete;
};

std::string parent_dir(const std::string& path) {
    const auto p = std::filesystem::path(path).parent_path();
    return p.empty() ? "." : p.string();
}

mmreg_status dump_into(const ResolvedConfig& cfg, const Common& c, const std::vector<std::string>& dirs) {
    if (!c.dump) return MMREG_OK;
    for (const auto& d : dirs) {
        const mmreg_status s = mmreg_config_dump_to(cfg.handle, d.c_str());
        if (s != MMREG_OK) return s;
    }
    return MMREG_OK;
}

// The first error wins; a convergence warning survives later successes.
mmreg_status combine(mmreg_status a, mmreg_status b) {
    if (a != MMREG_OK && a != MMREG_WARN_NOT_CONVERGED) return a;
    if (b != MMREG_OK) return b;
    return a;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-metric deformable registration with learned metric weights"};
    app.require_subcommand(1);

    Common reg_common, train_common, eval_common, synth_common;

    std::string source, target, source_mask, target_mask, weights, out_field, out_warped, out_diag, out_overlays;
    auto* reg = app.add_subcommand("register", "register a source volume onto a target volume");
    reg->add_option("--source", source, "source volume header")->required();
    reg->add_option("--target", target, "target volume header")->required();
    reg->add_option("--source-mask", source_mask, "source segmentation (required for multi-column weights)");
    reg->add_option("--target-mask", target_mask, "target segmentation, used by overlays");
    reg->add_option("--weights", weights, "weight/model file")->required();
    reg->add_option("--out-field", out_field, "dense displacement field header to write")->required();
    reg->add_option("--out-warped", out_warped, "warped source volume header to write")->required();
    reg->add_option("--out-diagnostics", out_diag, "per-step diagnostics (default: next to the field)");
    reg->add_option("--out-overlays", out_overlays, "directory for overlay and difference images");
    add_common(reg, reg_common);

    std::string dataset, out_model;
    auto* train = app.add_subcommand("train", "learn per-class metric weights from a dataset");
    train->add_option("--dataset", dataset, "dataset manifest CSV")->required();
    train->add_option("--out-model", out_model, "model file to write (training log at <model>.log)")->required();
    add_common(train, train_common);

    std::string eval_dataset, model, out_report;
    auto* evaluate = app.add_subcommand("evaluate", "benchmark MW against the single-metric baselines");
    evaluate->add_option("--dataset", eval_dataset, "dataset manifest CSV")->required();
    evaluate->add_option("--model", model, "trained model file")->required();
    evaluate->add_option("--out-report", out_report, "report CSV to write")->required();
    add_common(evaluate, eval_common);

    std::string spec, out_dir;
    std::uint64_t seed = 0;
    bool seed_given = false;
    auto* synth = app.add_subcommand("synth", "generate a synthetic two-region dataset");
    synth->add_option("--spec", spec, "generator spec (key=value); defaults when omitted");
    synth->add_option("--seed", seed, "random seed (default: the config's seed)");
    synth->add_option("--out-dir", out_dir, "output directory")->required();
    add_common(synth, synth_common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 3;
    }
    seed_given = synth->count("--seed") > 0;

    if (*reg) {
        ResolvedConfig cfg(reg_common);
        if (cfg.status != MMREG_OK) return report(cfg.status, "register");
        mmreg_status s = mmreg_register(cfg.handle, source.c_str(), target.c_str(),
                                        source_mask.empty() ? nullptr : source_mask.c_str(), weights.c_str(),
                                        out_field.c_str(), out_warped.c_str(),
                                        out_diag.empty() ? nullptr : out_diag.c_str(),
                                        out_overlays.empty() ? nullptr : out_overlays.c_str(),
                                        target_mask.empty() ? nullptr : target_mask.c_str());
        if (s == MMREG_OK || s == MMREG_WARN_NOT_CONVERGED) {
            std::vector<std::string> dirs{parent_dir(out_field), parent_dir(out_warped)};
            if (!out_overlays.empty()) dirs.push_back(out_overlays);
            s = combine(s, dump_into(cfg, reg_common, dirs));
        }
        return report(s, "register");
    }
    if (*train) {
        ResolvedConfig cfg(train_common);
        if (cfg.status != MMREG_OK) return report(cfg.status, "train");
        mmreg_status s = mmreg_train(cfg.handle, dataset.c_str(), out_model.c_str());
        if (s == MMREG_OK || s == MMREG_WARN_NOT_CONVERGED) s = combine(s, dump_into(cfg, train_common, {parent_dir(out_model)}));
        return report(s, "train");
    }
    if (*evaluate) {
        ResolvedConfig cfg(eval_common);
        if (cfg.status != MMREG_OK) return report(cfg.status, "evaluate");
        mmreg_status s = mmreg_evaluate(cfg.handle, eval_dataset.c_str(), model.c_str(), out_report.c_str());
        if (s == MMREG_OK || s == MMREG_WARN_NOT_CONVERGED) {
            s = combine(s, dump_into(cfg, eval_common, {parent_dir(out_report)}));
        }
        return report(s, "evaluate");
    }
    ResolvedConfig cfg(synth_common);
    if (cfg.status != MMREG_OK) return report(cfg.status, "synth");
    if (!seed_given) {
        char buf[32];
        const mmreg_status s = mmreg_config_get(cfg.handle, "seed", buf, sizeof(buf), nullptr);
        if (s != MMREG_OK) return report(s, "synth");
        seed = std::stoull(buf);
    }
    mmreg_status s = mmreg_synth(spec.empty() ? nullptr : spec.c_str(), seed, out_dir.c_str());
    if (s == MMREG_OK) s = dump_into(cfg, synth_common, {out_dir});
    return report(s, "synth");
}
